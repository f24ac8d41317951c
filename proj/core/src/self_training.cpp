#include "casp/self_training.hpp"

#include "casp/batch.hpp"
#include "casp/data_model.hpp"
#include "casp/errors.hpp"

namespace casp {

const char* to_string(BaselineKind k) {
  return k == BaselineKind::st ? "st" : "norm";
}

FusionModel self_train(const FusionModel& adapted, const PseudoLabeledSet& t_train,
                       const TrainConfig& cfg, TrainResult* history_out) {
  if (t_train.samples.empty()) {
    throw ValidationError("self_train: pseudo-labeled set is empty");
  }
  if (t_train.samples.size() != t_train.labels.size()) {
    throw ValidationError("self_train: samples/labels size mismatch");
  }
  HiddenLabelGuard guard;
  FusionModel model = adapted;
  TrainResult res = train_l1(model, t_train.samples, t_train.labels,
                             nullptr, nullptr, cfg);
  if (history_out) *history_out = std::move(res);
  return model;
}

FusionModel run_baseline(BaselineKind kind, const FusionModel& source_model,
                         const DomainDataset& target, TrainConfig cfg,
                         TrainResult* history_out) {
  const auto& train = target.split("train");
  if (train.empty()) {
    throw ValidationError("run_baseline: target train split is empty");
  }
  HiddenLabelGuard guard;
  auto ptrs = sample_ptrs(train);
  std::vector<double> pseudo = predict_all(source_model, ptrs, cfg.batch_size);

  cfg.parameter_scope =
      kind == BaselineKind::st ? ParamScope::all : ParamScope::norm_only;
  FusionModel model = source_model;
  TrainResult res = train_l1(model, ptrs, pseudo, nullptr, nullptr, cfg);
  if (history_out) *history_out = std::move(res);
  return model;
}

}  // namespace casp
