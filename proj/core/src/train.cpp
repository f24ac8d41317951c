#include "casp/train.hpp"

#include <cmath>
#include <limits>

#include <json.hpp>

#include "casp/errors.hpp"
#include "casp/jsonio.hpp"
#include "casp/losses.hpp"

namespace casp {

using nlohmann::json;

const char* to_string(ParamScope s) { return s == ParamScope::all ? "all" : "norm_only"; }

ParamScope param_scope_from_string(const std::string& s) {
  if (s == "all") return ParamScope::all;
  if (s == "norm_only") return ParamScope::norm_only;
  throw ConfigError("unknown parameter_scope: " + s);
}

void validate_config(const TrainConfig& cfg) {
  auto fail = [](const std::string& msg) { throw ConfigError("train config: " + msg); };
  if (cfg.learning_rate < 0.0) fail("learning_rate must be >= 0");
  if (cfg.epochs < 1) fail("epochs must be >= 1");
  if (cfg.batch_size < 1) fail("batch_size must be >= 1");
  if (cfg.lr_schedule.step_size < 1) fail("lr step_size must be >= 1");
  if (cfg.lr_schedule.gamma <= 0.0) fail("lr gamma must be > 0");
  if (cfg.weight_decay < 0.0) fail("weight_decay must be >= 0");
}

double effective_lr(double base_lr, const LrSchedule& sched, int64_t epoch) {
  return base_lr * std::pow(sched.gamma, static_cast<double>(epoch / sched.step_size));
}

AdamW::AdamW(const std::vector<Parameter>& params, double beta1, double beta2, double eps)
    : beta1_(beta1), beta2_(beta2), eps_(eps) {
  m_.reserve(params.size());
  v_.reserve(params.size());
  for (const auto& p : params) {
    m_.push_back(Tensor::zeros(p.value.shape()));
    v_.push_back(Tensor::zeros(p.value.shape()));
  }
}

void AdamW::step(std::vector<Parameter>& params, const std::vector<Tensor>& grads,
                 const std::vector<int>& scope_idx, double lr, double weight_decay) {
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (int idx : scope_idx) {
    const size_t i = static_cast<size_t>(idx);
    Tensor& p = params[i].value;
    const Tensor& g = grads[i];
    Tensor& m = m_[i];
    Tensor& v = v_[i];
    for (int64_t j = 0; j < p.numel(); ++j) {
      m[j] = beta1_ * m[j] + (1.0 - beta1_) * g[j];
      v[j] = beta2_ * v[j] + (1.0 - beta2_) * g[j] * g[j];
      const double mhat = m[j] / bc1;
      const double vhat = v[j] / bc2;
      p[j] -= lr * (mhat / (std::sqrt(vhat) + eps_) + weight_decay * p[j]);
    }
  }
}

double clip_global_norm(std::vector<Tensor>& grads, const std::vector<int>& scope_idx,
                        double max_norm) {
  double sq = 0.0;
  for (int idx : scope_idx) {
    const Tensor& g = grads[static_cast<size_t>(idx)];
    for (int64_t j = 0; j < g.numel(); ++j) sq += g[j] * g[j];
  }
  double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const double s = max_norm / norm;
    for (int idx : scope_idx) {
      Tensor& g = grads[static_cast<size_t>(idx)];
      for (int64_t j = 0; j < g.numel(); ++j) g[j] *= s;
    }
    norm = max_norm;
  }
  return norm;
}

std::vector<double> predict_all(const FusionModel& model,
                                const std::vector<const MultimodalSample*>& samples,
                                int64_t batch_size) {
  std::vector<double> preds;
  preds.reserve(samples.size());
  const auto batches =
      make_batch_indices(static_cast<int64_t>(samples.size()), batch_size, nullptr);
  for (const auto& idxs : batches) {
    std::vector<const MultimodalSample*> ptrs;
    ptrs.reserve(idxs.size());
    for (int64_t i : idxs) ptrs.push_back(samples[static_cast<size_t>(i)]);
    for (double p : predict(model, build_batch(ptrs))) preds.push_back(p);
  }
  return preds;
}

TrainResult train_l1(FusionModel& model, const std::vector<const MultimodalSample*>& train,
                     const std::vector<double>& labels,
                     const std::vector<const MultimodalSample*>* valid,
                     const std::vector<double>* valid_labels, const TrainConfig& cfg) {
  validate_config(cfg);
  if (train.empty()) throw ValidationError("train_l1: empty training set");
  if (labels.size() != train.size()) throw ValidationError("train_l1: labels/samples mismatch");
  if ((valid == nullptr) != (valid_labels == nullptr))
    throw ValidationError("train_l1: valid set and labels must come together");
  if (valid && valid->size() != valid_labels->size())
    throw ValidationError("train_l1: valid labels/samples mismatch");

  Rng root(cfg.seed);
  Rng shuffle_rng = root.fork(0);
  Rng dropout_rng = root.fork(1);
  AdamW opt(model.params);

  std::vector<int> scope_idx;
  if (cfg.parameter_scope == ParamScope::all) {
    for (size_t i = 0; i < model.params.size(); ++i) scope_idx.push_back(static_cast<int>(i));
  } else {
    scope_idx = partition_parameters(model).first;
  }
  const GradScope gscope =
      cfg.parameter_scope == ParamScope::all ? GradScope::all : GradScope::norm_only;

  TrainResult result;
  double best_valid = std::numeric_limits<double>::infinity();
  std::vector<Parameter> best_params;

  const int64_t n = static_cast<int64_t>(train.size());
  for (int64_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = effective_lr(cfg.learning_rate, cfg.lr_schedule, epoch);
    double loss_sum = 0.0;

    for (const auto& idxs : make_batch_indices(n, cfg.batch_size, &shuffle_rng)) {
      std::vector<const MultimodalSample*> ptrs;
      std::vector<double> targets;
      ptrs.reserve(idxs.size());
      targets.reserve(idxs.size());
      for (int64_t i : idxs) {
        ptrs.push_back(train[static_cast<size_t>(i)]);
        targets.push_back(labels[static_cast<size_t>(i)]);
      }
      Forward fw = forward_graph(model, build_batch(ptrs), gscope, true, &dropout_rng);
      const int loss_id = ad::l1_loss(fw.tape, fw.yhat,
                                      Tensor({static_cast<int64_t>(targets.size())}, targets));
      const double loss = fw.tape.value(loss_id)[0];
      if (!std::isfinite(loss))
        throw ValidationError("train_l1: non-finite loss at epoch " + std::to_string(epoch) +
                              " (divergence)");
      loss_sum += loss * static_cast<double>(idxs.size());

      fw.tape.backward(loss_id);
      std::vector<Tensor> grads(model.params.size());
      for (size_t i = 0; i < model.params.size(); ++i) {
        const Tensor& g = fw.tape.grad(fw.param_ids[i]);
        grads[i] = g.empty() ? Tensor::zeros(model.params[i].value.shape()) : g;
      }
      result.step_grad_norms.push_back(clip_global_norm(grads, scope_idx, cfg.grad_clip_norm));
      opt.step(model.params, grads, scope_idx, lr, cfg.weight_decay);
    }

    EpochStats st;
    st.epoch = epoch;
    st.train_loss = loss_sum / static_cast<double>(n);
    st.lr = lr;
    if (valid) {
      st.valid_mae = l1_loss(predict_all(model, *valid, cfg.batch_size), *valid_labels);
      st.has_valid = true;
      if (st.valid_mae < best_valid) {
        best_valid = st.valid_mae;
        best_params = model.params;
        result.best_epoch = epoch;
      }
    }
    result.history.push_back(st);
  }

  if (valid && !best_params.empty()) model.params = std::move(best_params);
  return result;
}

TrainResult pretrain(FusionModel& model, const DomainDataset& source, const TrainConfig& cfg) {
  const auto& train_split = source.split("train");
  const auto& valid_split = source.split("valid");
  if (train_split.empty()) throw ValidationError("pretrain: empty source train split");

  std::vector<double> labels;
  labels.reserve(train_split.size());
  for (const auto& s : train_split) {
    if (!s.has_label()) throw ValidationError("pretrain: unlabeled train sample " + s.id);
    labels.push_back(s.label());
  }
  const auto train = sample_ptrs(train_split);

  if (valid_split.empty()) return train_l1(model, train, labels, nullptr, nullptr, cfg);

  std::vector<double> valid_labels;
  valid_labels.reserve(valid_split.size());
  for (const auto& s : valid_split) {
    if (!s.has_label()) throw ValidationError("pretrain: unlabeled valid sample " + s.id);
    valid_labels.push_back(s.label());
  }
  const auto valid = sample_ptrs(valid_split);
  return train_l1(model, train, labels, &valid, &valid_labels, cfg);
}

void save_history(const TrainResult& result, const std::filesystem::path& path) {
  json doc;
  json epochs = json::array();
  for (const auto& st : result.history) {
    json e;
    e["epoch"] = st.epoch;
    e["train_mae"] = io::round_sig6(st.train_loss);
    if (st.has_valid)
      e["valid_mae"] = io::round_sig6(st.valid_mae);
    else
      e["valid_mae"] = nullptr;
    e["lr"] = io::round_sig6(st.lr);
    epochs.push_back(std::move(e));
  }
  doc["epochs"] = std::move(epochs);
  doc["best_epoch"] = result.best_epoch;
  io::write_text_file(path, doc.dump(2) + "\n");
}

}  // namespace casp
