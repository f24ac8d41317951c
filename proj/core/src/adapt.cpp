#include "casp/adapt.hpp"

#include <cmath>

#include <json.hpp>

#include "casp/errors.hpp"
#include "casp/jsonio.hpp"

namespace casp {

namespace fs = std::filesystem;
using nlohmann::json;

void validate_config(const AdaptConfig& cfg) {
  auto fail = [](const std::string& msg) { throw ConfigError("adapt config: " + msg); };
  if (cfg.snapshot_interval < 1) fail("snapshot interval M must be >= 1");
  if (cfg.epochs < cfg.snapshot_interval) fail("epochs E must be >= snapshot interval M");
  if (cfg.n_drop < 1 || cfg.n_drop > 2)
    fail("n_drop must be 1 or 2 (dropping all three modalities destroys the sample)");
  if (!(cfg.tau > 0.0)) fail("tau must be > 0");
  if (cfg.learning_rate < 0.0) fail("learning_rate must be >= 0");
  if (cfg.batch_size < 1) fail("batch_size must be >= 1");
  if (cfg.lr_schedule.step_size < 1) fail("lr step_size must be >= 1");
  if (cfg.lr_schedule.gamma <= 0.0) fail("lr gamma must be > 0");
  if (cfg.weight_decay < 0.0) fail("weight_decay must be >= 0");
  if (!std::isfinite(cfg.fill)) fail("fill must be finite");
}

Batch drop_modality(const Batch& batch, int64_t n_drop, double fill, Rng& rng) {
  if (n_drop < 1 || n_drop > 2)
    throw ValidationError("drop_modality: n_drop must be 1 or 2");
  Batch out = batch;
  for (int64_t i = 0; i < batch.size; ++i) {
    // one uniform draw per sample: the dropped modality, or the survivor
    const int64_t pick = static_cast<int64_t>(rng.uniform_int(3));
    for (int64_t m = 0; m < kNumModalities; ++m) {
      const bool dropped = n_drop == 1 ? (m == pick) : (m != pick);
      if (!dropped) continue;
      Tensor& feat = out.features[static_cast<size_t>(m)];
      const Tensor& mask = out.masks[static_cast<size_t>(m)];
      for (int64_t t = 0; t < feat.dim(1); ++t) {
        if (mask.at(i, t) == 0.0) continue;
        for (int64_t j = 0; j < feat.dim(2); ++j) feat.at(i, t, j) = fill;
      }
    }
  }
  return out;
}

std::vector<double> snapshot_predictions(const FusionModel& model,
                                         const std::vector<const MultimodalSample*>& samples,
                                         int64_t batch_size) {
  return predict_all(model, samples, batch_size);
}

AdaptResult adapt(const FusionModel& source_model, const DomainDataset& target,
                  const AdaptConfig& cfg) {
  validate_config(cfg);
  const auto& split = target.split("train");
  if (split.size() < 2)
    throw ValidationError("adapt: need at least 2 adaptation samples for the contrastive loss");

  HiddenLabelGuard guard;  // no code below may read a hidden label

  AdaptResult result;
  result.model = source_model;
  FusionModel& model = result.model;

  Rng root(cfg.seed);
  Rng shuffle_rng = root.fork(0);
  Rng drop_rng = root.fork(1);
  Rng dropout_rng = root.fork(2);
  AdamW opt(model.params);
  const std::vector<int> scope_idx = partition_parameters(model).first;

  const auto samples = sample_ptrs(split);
  const int64_t n = static_cast<int64_t>(samples.size());

  auto& snap = result.snapshots;
  for (const auto* s : samples) snap.ids.push_back(s->id);
  const int64_t n_checkpoints = cfg.epochs / cfg.snapshot_interval + 1;
  snap.preds = Tensor({n_checkpoints, n});
  auto record = [&](int64_t row, int64_t epoch) {
    snap.epochs.push_back(epoch);
    const auto preds = snapshot_predictions(model, samples, cfg.batch_size);
    for (int64_t i = 0; i < n; ++i) snap.preds.at(row, i) = preds[static_cast<size_t>(i)];
  };
  record(0, 0);  // pristine source model

  for (int64_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = effective_lr(cfg.learning_rate, cfg.lr_schedule, epoch);
    double loss_sum = 0.0;
    int64_t n_seen = 0;

    for (const auto& idxs : make_batch_indices(n, cfg.batch_size, &shuffle_rng, 2)) {
      std::vector<const MultimodalSample*> ptrs;
      ptrs.reserve(idxs.size());
      for (int64_t i : idxs) ptrs.push_back(samples[static_cast<size_t>(i)]);
      const Batch batch = build_batch(ptrs);
      const Batch aug = drop_modality(batch, cfg.n_drop, cfg.fill, drop_rng);

      Forward fw = make_forward(model, GradScope::norm_only);
      const int h = encode_on(fw, model, batch, true, &dropout_rng);
      const int h_aug = encode_on(fw, model, aug, true, &dropout_rng);
      const int loss_id = ntxent_batch_loss(fw.tape, h, h_aug, cfg.tau, cfg.ntxent_variant);
      const double loss = fw.tape.value(loss_id)[0];
      if (!std::isfinite(loss))
        throw ValidationError("adapt: non-finite contrastive loss at epoch " +
                              std::to_string(epoch));
      loss_sum += loss * static_cast<double>(idxs.size());
      n_seen += static_cast<int64_t>(idxs.size());

      fw.tape.backward(loss_id);
      std::vector<Tensor> grads(model.params.size());
      for (size_t i = 0; i < model.params.size(); ++i) {
        const Tensor& g = fw.tape.grad(fw.param_ids[i]);
        grads[i] = g.empty() ? Tensor::zeros(model.params[i].value.shape()) : g;
      }
      result.step_grad_norms.push_back(clip_global_norm(grads, scope_idx, cfg.grad_clip_norm));
      opt.step(model.params, grads, scope_idx, lr, cfg.weight_decay);
    }
    result.epoch_mean_loss.push_back(loss_sum / static_cast<double>(n_seen));

    if ((epoch + 1) % cfg.snapshot_interval == 0)
      record((epoch + 1) / cfg.snapshot_interval, epoch + 1);
  }
  return result;
}

void save_snapshots(const SnapshotMatrix& snap, const fs::path& json_path) {
  fs::path blob_path = json_path;
  blob_path.replace_extension(".f32");

  json doc;
  doc["format_version"] = 1;
  doc["epochs"] = snap.epochs;
  doc["ids"] = snap.ids;
  doc["n_checkpoints"] = snap.preds.dim(0);
  doc["n_samples"] = snap.preds.dim(1);
  doc["blob"] = blob_path.filename().string();

  std::vector<float> blob;
  blob.reserve(static_cast<size_t>(snap.preds.numel()));
  for (int64_t i = 0; i < snap.preds.numel(); ++i)
    blob.push_back(static_cast<float>(snap.preds[i]));
  io::write_f32_blob(blob_path, blob);
  io::write_text_file(json_path, doc.dump(2) + "\n");
}

SnapshotMatrix load_snapshots(const fs::path& json_path) {
  json doc;
  try {
    doc = json::parse(io::read_text_file(json_path));
  } catch (const json::exception& e) {
    throw IoError("corrupt snapshot manifest " + json_path.string() + ": " + e.what());
  }
  try {
    SnapshotMatrix snap;
    snap.epochs = doc.at("epochs").get<std::vector<int64_t>>();
    snap.ids = doc.at("ids").get<std::vector<std::string>>();
    const int64_t rows = doc.at("n_checkpoints").get<int64_t>();
    const int64_t cols = doc.at("n_samples").get<int64_t>();
    const auto blob =
        io::read_f32_blob(json_path.parent_path() / doc.at("blob").get<std::string>());
    if (static_cast<int64_t>(blob.size()) != rows * cols)
      throw ValidationError("snapshot blob size does not match manifest");
    if (static_cast<int64_t>(snap.epochs.size()) != rows ||
        static_cast<int64_t>(snap.ids.size()) != cols)
      throw ValidationError("snapshot manifest is internally inconsistent");
    snap.preds = Tensor({rows, cols});
    for (int64_t i = 0; i < rows * cols; ++i)
      snap.preds[i] = static_cast<double>(blob[static_cast<size_t>(i)]);
    return snap;
  } catch (const json::exception& e) {
    throw ValidationError("snapshot schema error " + json_path.string() + ": " + e.what());
  }
}

}  // namespace casp
