// Command-line front end: synth | run | eval | adapt | pseudolabel | selftrain.
// Relative output paths resolve against $CASP_OUT_ROOT when set. Exit codes:
// 0 success, 2 config/usage error, 1 anything else; stderr lines are tagged
// with the failing subcommand.

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "casp/adapt.hpp"
#include "casp/backbones.hpp"
#include "casp/errors.hpp"
#include "casp/ingest.hpp"
#include "casp/jsonio.hpp"
#include "casp/metrics.hpp"
#include "casp/pipeline.hpp"
#include "casp/pseudo_labeling.hpp"
#include "casp/self_training.hpp"
#include "casp/synth.hpp"
#include "casp/train.hpp"

namespace fs = std::filesystem;

namespace {

template <typename F>
int guarded(const char* tag, F&& body) {
  try {
    return body();
  } catch (const casp::ConfigError& e) {
    std::fprintf(stderr, "[%s] error: %s\n", tag, e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "[%s] error: %s\n", tag, e.what());
    return 1;
  }
}

void print_metrics(const casp::Metrics& m) {
  std::printf("acc %.6g  f1 %.6g  mae %.6g  n %lld\n", m.acc, m.f1, m.mae,
              static_cast<long long>(m.n));
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"CASP: contrastive test-time adaptation with stability-selected self-training"};
  app.require_subcommand(1);

  // synth
  auto* synth = app.add_subcommand("synth", "Generate a paired source/target dataset");
  std::string synth_config, synth_out;
  bool synth_defaults = false;
  uint64_t synth_seed = 0;
  std::vector<double> synth_rotation, synth_corruption;
  double synth_rescale = 1.0, synth_noise_t = 0.0;
  synth->add_flag("--print-defaults", synth_defaults, "Print the default config JSON and exit");
  synth->add_option("--config", synth_config, "Config JSON path (defaults used when absent)");
  synth->add_option("--out", synth_out, "Output directory; writes source/ and target/");
  auto* s_seed = synth->add_option("--seed", synth_seed, "Override seed");
  auto* s_rot = synth->add_option("--rotation", synth_rotation,
                                  "Override per-modality rotation angles (3 radians)")
                    ->expected(3);
  auto* s_cor = synth->add_option("--corruption", synth_corruption,
                                  "Override per-modality corruption scales (3 values)")
                    ->expected(3);
  auto* s_res = synth->add_option("--label-rescale", synth_rescale, "Override label_rescale");
  auto* s_noise =
      synth->add_option("--noise-sigma-target", synth_noise_t, "Override target noise sigma");

  // run
  auto* run = app.add_subcommand("run", "Run the full multi-seed experiment");
  std::string run_config, run_out;
  bool run_defaults = false, run_resume = false;
  std::vector<uint64_t> run_seeds;
  double run_lambda = 95.0;
  run->add_flag("--print-defaults", run_defaults, "Print the default config JSON and exit");
  run->add_option("--config", run_config, "RunConfig JSON path");
  auto* r_out = run->add_option("--out", run_out, "Override out_dir");
  run->add_flag("--resume", run_resume, "Reuse existing stage artifacts");
  auto* r_seeds = run->add_option("--seeds", run_seeds, "Override seeds list");
  auto* r_lambda = run->add_option("--lambda", run_lambda, "Override selection percentile");

  // eval
  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset split");
  std::string eval_ckpt, eval_dataset, eval_split = "test", eval_out;
  eval->add_option("--checkpoint", eval_ckpt, "Checkpoint manifest path")->required();
  eval->add_option("--dataset", eval_dataset, "Dataset directory")->required();
  eval->add_option("--split", eval_split, "Split name (default test)");
  eval->add_option("--out", eval_out, "Write metrics.json here as well");

  // adapt
  auto* adapt_cmd = app.add_subcommand("adapt", "Stage 1: contrastive adaptation");
  std::string ad_config, ad_ckpt, ad_target, ad_out;
  uint64_t ad_seed = 0;
  adapt_cmd->add_option("--config", ad_config, "RunConfig JSON; its adapt section is used");
  adapt_cmd->add_option("--checkpoint", ad_ckpt, "Source checkpoint")->required();
  adapt_cmd->add_option("--target", ad_target, "Target dataset directory")->required();
  adapt_cmd->add_option("--out", ad_out, "Output directory")->required();
  auto* a_seed = adapt_cmd->add_option("--seed", ad_seed, "Override adapt seed");

  // pseudolabel
  auto* pl = app.add_subcommand("pseudolabel", "Stability selection over a snapshot matrix");
  std::string pl_snaps, pl_out;
  double pl_lambda = 95.0, pl_threshold = 0.0;
  pl->add_option("--snapshots", pl_snaps, "snapshots.json path")->required();
  pl->add_option("--out", pl_out, "Report output path")->required();
  auto* p_lambda = pl->add_option("--lambda", pl_lambda, "Selection percentile (default 95)");
  auto* p_thresh =
      pl->add_option("--threshold", pl_threshold, "Fixed stability threshold instead of lambda");
  p_thresh->excludes(p_lambda);

  // selftrain
  auto* st = app.add_subcommand("selftrain", "Stage 2: self-training on selected pseudo labels");
  std::string st_config, st_ckpt, st_target, st_report, st_out;
  uint64_t st_seed = 0;
  st->add_option("--config", st_config, "RunConfig JSON; its selftrain section is used");
  st->add_option("--checkpoint", st_ckpt, "Adapted checkpoint")->required();
  st->add_option("--target", st_target, "Target dataset directory")->required();
  st->add_option("--report", st_report, "Stability report path")->required();
  st->add_option("--out", st_out, "Output directory")->required();
  auto* t_seed = st->add_option("--seed", st_seed, "Override selftrain seed");

  CLI11_PARSE(app, argc, argv);

  if (synth->parsed()) {
    return guarded("synth", [&] {
      if (synth_defaults) {
        std::fputs(casp::shift_config_to_json(casp::ShiftConfig{}).c_str(), stdout);
        return 0;
      }
      casp::ShiftConfig cfg;
      if (!synth_config.empty()) {
        cfg = casp::shift_config_from_json(casp::io::read_text_file(synth_config));
      }
      if (s_seed->count()) cfg.seed = synth_seed;
      if (s_rot->count()) cfg.rotation = {synth_rotation[0], synth_rotation[1], synth_rotation[2]};
      if (s_cor->count()) {
        cfg.corruption = {synth_corruption[0], synth_corruption[1], synth_corruption[2]};
      }
      if (s_res->count()) cfg.label_rescale = synth_rescale;
      if (s_noise->count()) cfg.noise_sigma_target = synth_noise_t;
      if (synth_out.empty()) throw casp::ConfigError("--out is required");
      const fs::path out = casp::resolve_out_path(synth_out);
      auto [source, target] = casp::generate_task(cfg);
      casp::save_dataset(source, out / "source");
      casp::save_dataset(target, out / "target");
      std::printf("wrote %s and %s\n", (out / "source").string().c_str(),
                  (out / "target").string().c_str());
      return 0;
    });
  }

  if (run->parsed()) {
    return guarded("run", [&] {
      if (run_defaults) {
        std::fputs(casp::run_config_to_json(casp::RunConfig{}).c_str(), stdout);
        return 0;
      }
      if (run_config.empty()) throw casp::ConfigError("--config is required");
      casp::RunConfig cfg = casp::run_config_from_json(casp::io::read_text_file(run_config));
      if (run_resume) cfg.resume = true;
      if (r_out->count()) cfg.out_dir = run_out;
      if (r_seeds->count()) cfg.seeds = run_seeds;
      if (r_lambda->count()) cfg.lambda = run_lambda;
      casp::run_experiment(cfg);
      const fs::path out = casp::resolve_out_path(cfg.out_dir);
      std::fputs(casp::io::read_text_file(out / "aggregate.txt").c_str(), stdout);
      return 0;
    });
  }

  if (eval->parsed()) {
    return guarded("eval", [&] {
      casp::Metrics m = casp::eval_checkpoint(casp::resolve_out_path(eval_ckpt),
                                              casp::resolve_out_path(eval_dataset), eval_split);
      if (!eval_out.empty()) casp::save_metrics(m, casp::resolve_out_path(eval_out));
      print_metrics(m);
      return 0;
    });
  }

  if (adapt_cmd->parsed()) {
    return guarded("adapt", [&] {
      casp::RunConfig cfg;
      if (!ad_config.empty()) {
        cfg = casp::run_config_from_json(casp::io::read_text_file(ad_config));
      }
      if (a_seed->count()) cfg.adapt.seed = ad_seed;
      const casp::FusionModel source = casp::load_checkpoint(casp::resolve_out_path(ad_ckpt));
      const casp::DomainDataset target = casp::load_dataset(casp::resolve_out_path(ad_target));
      casp::AdaptResult res = casp::adapt(source, target, cfg.adapt);
      const fs::path out = casp::resolve_out_path(ad_out);
      fs::create_directories(out);
      casp::save_checkpoint(res.model, out / "checkpoint.json");
      casp::save_snapshots(res.snapshots, out / "snapshots.json");
      std::printf("wrote %s (snapshots: %lld rows)\n", (out / "checkpoint.json").string().c_str(),
                  static_cast<long long>(res.snapshots.epochs.size()));
      return 0;
    });
  }

  if (pl->parsed()) {
    return guarded("pseudolabel", [&] {
      const casp::SnapshotMatrix snaps = casp::load_snapshots(casp::resolve_out_path(pl_snaps));
      const casp::StabilityReport report =
          p_thresh->count() ? casp::build_report_with_threshold(snaps, pl_threshold, pl_lambda)
                            : casp::build_report(snaps, pl_lambda);
      const fs::path out = casp::resolve_out_path(pl_out);
      if (out.has_parent_path()) fs::create_directories(out.parent_path());
      casp::save_report(report, out);
      size_t n_sel = 0;
      for (uint8_t v : report.selected) n_sel += v;
      std::printf("selected %zu of %zu (threshold %.6g)\n", n_sel, report.ids.size(),
                  report.threshold);
      return 0;
    });
  }

  if (st->parsed()) {
    return guarded("selftrain", [&] {
      casp::RunConfig cfg;
      if (!st_config.empty()) {
        cfg = casp::run_config_from_json(casp::io::read_text_file(st_config));
      }
      casp::TrainConfig tc = cfg.selftrain;
      if (t_seed->count()) tc.seed = st_seed;
      const casp::FusionModel adapted = casp::load_checkpoint(casp::resolve_out_path(st_ckpt));
      const casp::DomainDataset target = casp::load_dataset(casp::resolve_out_path(st_target));
      const casp::StabilityReport report = casp::load_report(casp::resolve_out_path(st_report));
      casp::PseudoLabeledSet set = casp::build_selftrain_set(target, report);
      casp::TrainResult hist;
      casp::FusionModel model = casp::self_train(adapted, set, tc, &hist);
      const fs::path out = casp::resolve_out_path(st_out);
      fs::create_directories(out);
      casp::save_checkpoint(model, out / "checkpoint.json");
      casp::save_history(hist, out / "history.json");
      std::printf("wrote %s (%zu pseudo-labeled samples)\n",
                  (out / "checkpoint.json").string().c_str(), set.samples.size());
      return 0;
    });
  }

  return 0;
}
