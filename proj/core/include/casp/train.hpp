#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "casp/backbones.hpp"
#include "casp/data_model.hpp"

namespace casp {

struct LrSchedule {
  int64_t step_size = 10;
  double gamma = 0.1;
};

enum class ParamScope { all, norm_only };

const char* to_string(ParamScope s);
ParamScope param_scope_from_string(const std::string& s);

struct TrainConfig {
  double learning_rate = 1e-3;  // 0 is allowed and means a recorded no-op run
  int64_t epochs = 30;
  int64_t batch_size = 24;
  double grad_clip_norm = 0.8;  // <= 0 disables clipping
  LrSchedule lr_schedule;
  double weight_decay = 1e-4;
  ParamScope parameter_scope = ParamScope::all;
  uint64_t seed = 0;
};

void validate_config(const TrainConfig& cfg);

// lr * gamma^floor(epoch / step_size), epochs 0-based
double effective_lr(double base_lr, const LrSchedule& sched, int64_t epoch);

struct EpochStats {
  int64_t epoch = 0;
  double train_loss = 0.0;
  double valid_mae = 0.0;
  bool has_valid = false;
  double lr = 0.0;
};

struct TrainResult {
  std::vector<EpochStats> history;
  std::vector<double> step_grad_norms;  // post-clip global norm per optimizer step
  int64_t best_epoch = -1;              // -1 when no validation set drove selection
};

// Decoupled weight decay; only indices in scope_idx are stepped or decayed,
// everything else stays bit-identical.
class AdamW {
 public:
  explicit AdamW(const std::vector<Parameter>& params, double beta1 = 0.9, double beta2 = 0.999,
                 double eps = 1e-8);
  void step(std::vector<Parameter>& params, const std::vector<Tensor>& grads,
            const std::vector<int>& scope_idx, double lr, double weight_decay);

 private:
  std::vector<Tensor> m_, v_;
  int64_t t_ = 0;
  double beta1_, beta2_, eps_;
};

// Scales scope grads so their joint global norm is <= max_norm; returns the
// post-clip norm. max_norm <= 0 leaves grads alone.
double clip_global_norm(std::vector<Tensor>& grads, const std::vector<int>& scope_idx,
                        double max_norm);

// Mini-batch L1 training. labels run parallel to train so pseudo-labeled sets
// never touch sample labels. With a validation set the best-valid-MAE
// parameters are restored at the end; without one the final parameters stand.
TrainResult train_l1(FusionModel& model, const std::vector<const MultimodalSample*>& train,
                     const std::vector<double>& labels,
                     const std::vector<const MultimodalSample*>* valid,
                     const std::vector<double>* valid_labels, const TrainConfig& cfg);

// Source pretraining on the train/valid splits; every train sample must be labeled.
TrainResult pretrain(FusionModel& model, const DomainDataset& source, const TrainConfig& cfg);

// Evaluation-mode predictions over an arbitrarily large sample list, batched.
std::vector<double> predict_all(const FusionModel& model,
                                const std::vector<const MultimodalSample*>& samples,
                                int64_t batch_size);

void save_history(const TrainResult& result, const std::filesystem::path& path);

}  // namespace casp
