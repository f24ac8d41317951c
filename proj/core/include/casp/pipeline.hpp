#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "casp/adapt.hpp"
#include "casp/backbones.hpp"
#include "casp/metrics.hpp"
#include "casp/train.hpp"

namespace casp {

// Full experiment description. Stage seeds inside pretrain/adapt/selftrain are
// honored by the single-stage entry points; run_experiment overrides them with
// each element of `seeds` so CASP and the baselines share initialization.
struct RunConfig {
  std::string source_dir;
  std::string target_dir;
  std::string out_dir = "runs/experiment";
  EncoderConfig backbone;
  TrainConfig pretrain;
  AdaptConfig adapt;
  double lambda = 95.0;
  TrainConfig selftrain = selftrain_defaults();
  std::vector<uint64_t> seeds = {1, 2, 3, 4, 5};
  bool baseline_st = true;
  bool baseline_norm = true;
  bool resume = false;

  static TrainConfig selftrain_defaults() {
    TrainConfig c;
    c.learning_rate = 5e-4;
    c.epochs = 5;
    c.parameter_scope = ParamScope::all;
    return c;
  }
};

void validate_config(const RunConfig& cfg);

// Strict parse: any key not in the schema raises ConfigError naming the field
// by dotted path. Absent keys keep their defaults, so ablation configs stay
// small diffs.
RunConfig run_config_from_json(const std::string& text);
std::string run_config_to_json(const RunConfig& cfg);

// Relative paths are resolved against $CASP_OUT_ROOT when it is set; absolute
// paths and unset env pass through.
std::filesystem::path resolve_out_path(const std::filesystem::path& p);

struct SeedResult {
  uint64_t seed = 0;
  std::map<std::string, Metrics> methods;  // keys: Source, ST, Norm, CASP
};

struct ExperimentResult {
  std::vector<SeedResult> per_seed;
  std::vector<std::string> method_order;   // table row order
  std::map<std::string, Metrics> mean;     // mean over seeds per method
};

// pretrain -> adapt -> stability selection -> self-train -> evaluate, per seed,
// plus the enabled baselines from the same source checkpoint. Every stage
// writes its artifact and continues from the reloaded copy, so a resumed run
// is byte-identical to a fresh one.
ExperimentResult run_experiment(const RunConfig& cfg);

Metrics eval_checkpoint(const std::filesystem::path& checkpoint,
                        const std::filesystem::path& dataset_dir, const std::string& split);

void save_aggregate(const ExperimentResult& result, const std::filesystem::path& dir);

}  // namespace casp
