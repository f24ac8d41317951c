#include "casp/pipeline.hpp"

#include <cstdlib>
#include <iomanip>
#include <sstream>
#include <utility>

#include <json.hpp>

#include "casp/batch.hpp"
#include "casp/errors.hpp"
#include "casp/ingest.hpp"
#include "casp/jsonio.hpp"
#include "casp/pseudo_labeling.hpp"
#include "casp/self_training.hpp"
#include "config_json.hpp"

namespace casp {

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;
using cfgjson::check_keys;
using cfgjson::dotted;
using cfgjson::get_if;

namespace {

void parse_schedule(const json& j, const std::string& prefix, LrSchedule& out) {
  check_keys(j, prefix, {"step_size", "gamma"});
  get_if(j, prefix, "step_size", out.step_size);
  get_if(j, prefix, "gamma", out.gamma);
}

void parse_train(const json& j, const std::string& prefix, TrainConfig& out) {
  check_keys(j, prefix,
             {"learning_rate", "epochs", "batch_size", "grad_clip_norm", "lr_schedule",
              "weight_decay", "parameter_scope", "seed"});
  get_if(j, prefix, "learning_rate", out.learning_rate);
  get_if(j, prefix, "epochs", out.epochs);
  get_if(j, prefix, "batch_size", out.batch_size);
  get_if(j, prefix, "grad_clip_norm", out.grad_clip_norm);
  if (j.contains("lr_schedule")) {
    parse_schedule(j.at("lr_schedule"), dotted(prefix, "lr_schedule"), out.lr_schedule);
  }
  get_if(j, prefix, "weight_decay", out.weight_decay);
  if (j.contains("parameter_scope")) {
    std::string s;
    get_if(j, prefix, "parameter_scope", s);
    out.parameter_scope = param_scope_from_string(s);
  }
  get_if(j, prefix, "seed", out.seed);
}

void parse_backbone(const json& j, const std::string& prefix, EncoderConfig& out) {
  check_keys(j, prefix,
             {"fusion", "model_dim", "n_layers", "n_heads", "feedforward_dim", "dropout"});
  if (j.contains("fusion")) {
    std::string s;
    get_if(j, prefix, "fusion", s);
    out.fusion = fusion_from_string(s);
  }
  get_if(j, prefix, "model_dim", out.model_dim);
  get_if(j, prefix, "n_layers", out.n_layers);
  get_if(j, prefix, "n_heads", out.n_heads);
  get_if(j, prefix, "feedforward_dim", out.feedforward_dim);
  get_if(j, prefix, "dropout", out.dropout);
}

void parse_adapt(const json& j, const std::string& prefix, AdaptConfig& out) {
  check_keys(j, prefix,
             {"epochs", "snapshot_interval", "n_drop", "fill", "tau", "learning_rate",
              "batch_size", "grad_clip_norm", "lr_schedule", "weight_decay", "ntxent_variant",
              "seed"});
  get_if(j, prefix, "epochs", out.epochs);
  get_if(j, prefix, "snapshot_interval", out.snapshot_interval);
  get_if(j, prefix, "n_drop", out.n_drop);
  get_if(j, prefix, "fill", out.fill);
  get_if(j, prefix, "tau", out.tau);
  get_if(j, prefix, "learning_rate", out.learning_rate);
  get_if(j, prefix, "batch_size", out.batch_size);
  get_if(j, prefix, "grad_clip_norm", out.grad_clip_norm);
  if (j.contains("lr_schedule")) {
    parse_schedule(j.at("lr_schedule"), dotted(prefix, "lr_schedule"), out.lr_schedule);
  }
  get_if(j, prefix, "weight_decay", out.weight_decay);
  if (j.contains("ntxent_variant")) {
    std::string s;
    get_if(j, prefix, "ntxent_variant", s);
    out.ntxent_variant = ntxent_variant_from_string(s);
  }
  get_if(j, prefix, "seed", out.seed);
}

ordered_json schedule_to_json(const LrSchedule& s) {
  ordered_json j;
  j["step_size"] = s.step_size;
  j["gamma"] = s.gamma;
  return j;
}

ordered_json train_to_json(const TrainConfig& c) {
  ordered_json j;
  j["learning_rate"] = c.learning_rate;
  j["epochs"] = c.epochs;
  j["batch_size"] = c.batch_size;
  j["grad_clip_norm"] = c.grad_clip_norm;
  j["lr_schedule"] = schedule_to_json(c.lr_schedule);
  j["weight_decay"] = c.weight_decay;
  j["parameter_scope"] = to_string(c.parameter_scope);
  j["seed"] = c.seed;
  return j;
}

ordered_json backbone_to_json(const EncoderConfig& c) {
  ordered_json j;
  j["fusion"] = to_string(c.fusion);
  j["model_dim"] = c.model_dim;
  j["n_layers"] = c.n_layers;
  j["n_heads"] = c.n_heads;
  j["feedforward_dim"] = c.feedforward_dim;
  j["dropout"] = c.dropout;
  return j;
}

ordered_json adapt_to_json(const AdaptConfig& c) {
  ordered_json j;
  j["epochs"] = c.epochs;
  j["snapshot_interval"] = c.snapshot_interval;
  j["n_drop"] = c.n_drop;
  j["fill"] = c.fill;
  j["tau"] = c.tau;
  j["learning_rate"] = c.learning_rate;
  j["batch_size"] = c.batch_size;
  j["grad_clip_norm"] = c.grad_clip_norm;
  j["lr_schedule"] = schedule_to_json(c.lr_schedule);
  j["weight_decay"] = c.weight_decay;
  j["ntxent_variant"] = to_string(c.ntxent_variant);
  j["seed"] = c.seed;
  return j;
}

ordered_json metrics_to_json(const Metrics& m) {
  ordered_json j;
  j["acc"] = io::round_sig6(m.acc);
  j["f1"] = io::round_sig6(m.f1);
  j["mae"] = io::round_sig6(m.mae);
  j["n"] = m.n;
  return j;
}

template <typename F>
auto stage(const char* name, const fs::path& dir, F&& f) {
  try {
    return f();
  } catch (const GuardViolation&) {
    throw;
  } catch (const std::exception& e) {
    throw PipelineError(std::string("stage ") + name + " failed (artifacts under " +
                        dir.string() + "): " + e.what());
  }
}

void save_adapt_log(const AdaptResult& ar, const fs::path& path) {
  ordered_json j;
  j["epoch_mean_loss"] = io::round_sig6(ar.epoch_mean_loss);
  j["n_steps"] = static_cast<int64_t>(ar.step_grad_norms.size());
  io::write_text_file(path, j.dump(2) + "\n");
}

Metrics eval_to_file(const FusionModel& model,
                     const std::vector<const MultimodalSample*>& samples,
                     const std::vector<double>& labels, int64_t batch_size,
                     const fs::path& path, bool resume) {
  if (!(resume && fs::exists(path))) {
    std::vector<double> pred = predict_all(model, samples, batch_size);
    save_metrics(compute_metrics(pred, labels), path);
  }
  return load_metrics(path);
}

SeedResult run_seed(const RunConfig& cfg, const DomainDataset& source,
                    const DomainDataset& target, uint64_t seed, const fs::path& dir) {
  SeedResult sr;
  sr.seed = seed;

  const fs::path pre_dir = dir / "pretrain";
  const fs::path adapt_dir = dir / "adapt";
  const fs::path pseudo_dir = dir / "pseudo";
  const fs::path casp_dir = dir / "casp";
  const fs::path base_dir = dir / "baselines";
  for (const auto& d : {pre_dir, adapt_dir, pseudo_dir, casp_dir, base_dir}) {
    fs::create_directories(d);
  }

  const auto& test = target.split("test");
  auto test_ptrs = sample_ptrs(test);
  std::vector<double> test_labels;
  test_labels.reserve(test.size());
  for (const auto& s : test) test_labels.push_back(s.label());

  const fs::path pre_ckpt = pre_dir / "checkpoint.json";
  const FusionModel source_model = stage("pretrain", pre_dir, [&] {
    if (!(cfg.resume && fs::exists(pre_ckpt))) {
      FusionModel model = init_model(cfg.backbone, source.feat_dims, seed);
      TrainConfig tc = cfg.pretrain;
      tc.seed = seed;
      TrainResult hist = pretrain(model, source, tc);
      save_history(hist, pre_dir / "history.json");
      save_checkpoint(model, pre_ckpt);
    }
    return load_checkpoint(pre_ckpt);
  });
  sr.methods["Source"] = stage("eval_source", pre_dir, [&] {
    return eval_to_file(source_model, test_ptrs, test_labels, cfg.pretrain.batch_size,
                        pre_dir / "metrics.json", cfg.resume);
  });

  const fs::path adapt_ckpt = adapt_dir / "checkpoint.json";
  const fs::path snaps_path = adapt_dir / "snapshots.json";
  const FusionModel adapted = stage("adapt", adapt_dir, [&] {
    if (!(cfg.resume && fs::exists(adapt_ckpt) && fs::exists(snaps_path))) {
      AdaptConfig ac = cfg.adapt;
      ac.seed = seed;
      AdaptResult ar = adapt(source_model, target, ac);
      save_checkpoint(ar.model, adapt_ckpt);
      save_snapshots(ar.snapshots, snaps_path);
      save_adapt_log(ar, adapt_dir / "log.json");
    }
    return load_checkpoint(adapt_ckpt);
  });

  const fs::path report_path = pseudo_dir / "report.json";
  const StabilityReport report = stage("pseudolabel", pseudo_dir, [&] {
    if (!(cfg.resume && fs::exists(report_path))) {
      SnapshotMatrix snaps = load_snapshots(snaps_path);
      save_report(build_report(snaps, cfg.lambda), report_path);
    }
    return load_report(report_path);
  });

  const fs::path casp_ckpt = casp_dir / "checkpoint.json";
  const FusionModel casp_model = stage("selftrain", casp_dir, [&] {
    if (!(cfg.resume && fs::exists(casp_ckpt))) {
      PseudoLabeledSet set = build_selftrain_set(target, report);
      TrainConfig tc = cfg.selftrain;
      tc.seed = seed;
      TrainResult hist;
      FusionModel model = self_train(adapted, set, tc, &hist);
      save_history(hist, casp_dir / "history.json");
      save_checkpoint(model, casp_ckpt);
    }
    return load_checkpoint(casp_ckpt);
  });
  sr.methods["CASP"] = stage("eval_casp", casp_dir, [&] {
    return eval_to_file(casp_model, test_ptrs, test_labels, cfg.selftrain.batch_size,
                        casp_dir / "metrics.json", cfg.resume);
  });

  // Baselines share the CASP stage-2 budget so the comparison isolates the
  // adaptation and selection mechanism, not the training length.
  auto run_one = [&](BaselineKind kind, const char* label) {
    const fs::path bdir = base_dir / to_string(kind);
    fs::create_directories(bdir);
    const fs::path ckpt = bdir / "checkpoint.json";
    return stage(label, bdir, [&] {
      if (!(cfg.resume && fs::exists(ckpt))) {
        TrainConfig tc = cfg.selftrain;
        tc.seed = seed;
        TrainResult hist;
        FusionModel model = run_baseline(kind, source_model, target, tc, &hist);
        save_history(hist, bdir / "history.json");
        save_checkpoint(model, ckpt);
      }
      return eval_to_file(load_checkpoint(ckpt), test_ptrs, test_labels,
                          cfg.selftrain.batch_size, bdir / "metrics.json", cfg.resume);
    });
  };
  if (cfg.baseline_st) sr.methods["ST"] = run_one(BaselineKind::st, "baseline_st");
  if (cfg.baseline_norm) sr.methods["Norm"] = run_one(BaselineKind::norm, "baseline_norm");

  return sr;
}

}  // namespace

void validate_config(const RunConfig& cfg) {
  if (cfg.source_dir.empty()) throw ConfigError("source_dir is empty");
  if (cfg.target_dir.empty()) throw ConfigError("target_dir is empty");
  if (cfg.out_dir.empty()) throw ConfigError("out_dir is empty");
  validate_config(cfg.backbone);
  validate_config(cfg.pretrain);
  validate_config(cfg.adapt);
  validate_config(cfg.selftrain);
  if (!(cfg.lambda > 0.0 && cfg.lambda < 100.0)) {
    throw ConfigError("lambda must lie in (0, 100), got " + std::to_string(cfg.lambda));
  }
  if (cfg.seeds.empty()) throw ConfigError("seeds list is empty");
}

RunConfig run_config_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  RunConfig cfg;
  check_keys(j, "",
             {"source_dir", "target_dir", "out_dir", "backbone", "pretrain", "adapt", "lambda",
              "selftrain", "seeds", "baseline_st", "baseline_norm", "resume"});
  get_if(j, "", "source_dir", cfg.source_dir);
  get_if(j, "", "target_dir", cfg.target_dir);
  get_if(j, "", "out_dir", cfg.out_dir);
  if (j.contains("backbone")) parse_backbone(j.at("backbone"), "backbone", cfg.backbone);
  if (j.contains("pretrain")) parse_train(j.at("pretrain"), "pretrain", cfg.pretrain);
  if (j.contains("adapt")) parse_adapt(j.at("adapt"), "adapt", cfg.adapt);
  get_if(j, "", "lambda", cfg.lambda);
  if (j.contains("selftrain")) parse_train(j.at("selftrain"), "selftrain", cfg.selftrain);
  get_if(j, "", "seeds", cfg.seeds);
  get_if(j, "", "baseline_st", cfg.baseline_st);
  get_if(j, "", "baseline_norm", cfg.baseline_norm);
  get_if(j, "", "resume", cfg.resume);
  return cfg;
}

std::string run_config_to_json(const RunConfig& cfg) {
  ordered_json j;
  j["source_dir"] = cfg.source_dir;
  j["target_dir"] = cfg.target_dir;
  j["out_dir"] = cfg.out_dir;
  j["backbone"] = backbone_to_json(cfg.backbone);
  j["pretrain"] = train_to_json(cfg.pretrain);
  j["adapt"] = adapt_to_json(cfg.adapt);
  j["lambda"] = cfg.lambda;
  j["selftrain"] = train_to_json(cfg.selftrain);
  j["seeds"] = cfg.seeds;
  j["baseline_st"] = cfg.baseline_st;
  j["baseline_norm"] = cfg.baseline_norm;
  j["resume"] = cfg.resume;
  return j.dump(2) + "\n";
}

std::filesystem::path resolve_out_path(const std::filesystem::path& p) {
  if (p.is_absolute()) return p;
  const char* root = std::getenv("CASP_OUT_ROOT");
  if (root == nullptr || *root == '\0') return p;
  return fs::path(root) / p;
}

ExperimentResult run_experiment(const RunConfig& cfg) {
  validate_config(cfg);
  const fs::path out = resolve_out_path(cfg.out_dir);
  fs::create_directories(out);
  io::write_text_file(out / "config.json", run_config_to_json(cfg));

  DomainDataset source, target;
  stage("load_data", out, [&] {
    source = load_dataset(resolve_out_path(cfg.source_dir));
    target = load_dataset(resolve_out_path(cfg.target_dir));
  });
  if (source.feat_dims != target.feat_dims) {
    throw PipelineError("stage load_data failed: source/target feat_dims differ");
  }

  ExperimentResult result;
  result.method_order.push_back("Source");
  if (cfg.baseline_st) result.method_order.push_back("ST");
  if (cfg.baseline_norm) result.method_order.push_back("Norm");
  result.method_order.push_back("CASP");

  for (uint64_t seed : cfg.seeds) {
    result.per_seed.push_back(
        run_seed(cfg, source, target, seed, out / ("seed_" + std::to_string(seed))));
  }

  for (const auto& name : result.method_order) {
    Metrics agg;
    for (const auto& sr : result.per_seed) {
      const Metrics& m = sr.methods.at(name);
      agg.acc += m.acc;
      agg.f1 += m.f1;
      agg.mae += m.mae;
      agg.n = m.n;
    }
    const double k = static_cast<double>(result.per_seed.size());
    agg.acc /= k;
    agg.f1 /= k;
    agg.mae /= k;
    result.mean[name] = agg;
  }
  save_aggregate(result, out);
  return result;
}

Metrics eval_checkpoint(const std::filesystem::path& checkpoint,
                        const std::filesystem::path& dataset_dir, const std::string& split) {
  const FusionModel model = load_checkpoint(checkpoint);
  const DomainDataset ds = load_dataset(dataset_dir);
  if (ds.feat_dims != model.feat_dims) {
    throw ValidationError("eval: dataset feat_dims do not match the checkpoint");
  }
  const auto& samples = ds.split(split);
  if (samples.empty()) throw ValidationError("eval: split '" + split + "' is empty");
  std::vector<double> labels;
  labels.reserve(samples.size());
  for (const auto& s : samples) {
    if (!s.has_label()) throw ValidationError("eval: sample " + s.id + " has no label");
    labels.push_back(s.label());
  }
  return compute_metrics(predict_all(model, sample_ptrs(samples), 24), labels);
}

void save_aggregate(const ExperimentResult& result, const std::filesystem::path& dir) {
  ordered_json doc;
  doc["format_version"] = 1;
  std::vector<uint64_t> seeds;
  seeds.reserve(result.per_seed.size());
  for (const auto& sr : result.per_seed) seeds.push_back(sr.seed);
  doc["seeds"] = seeds;
  ordered_json methods;
  for (const auto& name : result.method_order) {
    methods[name] = metrics_to_json(result.mean.at(name));
  }
  doc["methods"] = methods;
  ordered_json per_seed = ordered_json::array();
  for (const auto& sr : result.per_seed) {
    ordered_json row;
    row["seed"] = sr.seed;
    for (const auto& name : result.method_order) {
      row[name] = metrics_to_json(sr.methods.at(name));
    }
    per_seed.push_back(row);
  }
  doc["per_seed"] = per_seed;
  io::write_text_file(dir / "aggregate.json", doc.dump(2) + "\n");

  std::ostringstream os;
  os << std::left << std::setw(8) << "method" << std::right << std::setw(10) << "ACC"
     << std::setw(10) << "F1" << std::setw(10) << "MAE" << "\n";
  for (const auto& name : result.method_order) {
    const Metrics& m = result.mean.at(name);
    os << std::left << std::setw(8) << name << std::right << std::setw(10)
       << io::format_fixed(m.acc, 4) << std::setw(10) << io::format_fixed(m.f1, 4)
       << std::setw(10) << io::format_fixed(m.mae, 4) << "\n";
  }
  io::write_text_file(dir / "aggregate.txt", os.str());
}

}  // namespace casp
