#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "casp/autodiff.hpp"
#include "casp/batch.hpp"
#include "casp/rng.hpp"
#include "casp/tensor.hpp"

namespace casp {

enum class Fusion { early, late };

const char* to_string(Fusion f);
Fusion fusion_from_string(const std::string& s);

struct EncoderConfig {
  Fusion fusion = Fusion::early;
  int64_t model_dim = 32;
  int64_t n_layers = 2;
  int64_t n_heads = 4;
  int64_t feedforward_dim = 64;
  double dropout = 0.0;
};

void validate_config(const EncoderConfig& cfg);

struct Parameter {
  std::string name;
  Tensor value;
  bool norm_affine = false;
};

// Which parameters get requires_grad on the tape.
enum class GradScope { none, all, norm_only };

// Pre-LN transformer encoder(s) plus a two-layer head. Early fusion projects
// each modality to model_dim, concatenates along time with modality-type
// embeddings, and runs one encoder (d_h = model_dim). Late fusion runs one
// encoder per modality and concatenates the pooled outputs (d_h = 3*model_dim).
// No positional embeddings: pooling is order-invariant and padding invariance
// stays exact.
struct FusionModel {
  EncoderConfig cfg;
  std::array<int64_t, 3> feat_dims = {0, 0, 0};
  std::vector<Parameter> params;  // fixed creation order

  int64_t d_h() const { return cfg.fusion == Fusion::early ? cfg.model_dim : 3 * cfg.model_dim; }
  int param_index(const std::string& name) const;  // -1 if absent
  const Parameter& param(const std::string& name) const;
};

FusionModel init_model(const EncoderConfig& cfg, const std::array<int64_t, 3>& feat_dims,
                       uint64_t seed);

// One tape per forward pass; training loops read h/yhat ids and param_ids to
// collect gradients after backward().
struct Forward {
  ad::Tape tape;
  std::vector<int> param_ids;  // parallel to model.params
  int h = -1;                  // (B, d_h)
  int yhat = -1;               // (B,)
};

// Leafs every parameter once; encode_on can then run several batches (e.g. an
// original and an augmented view) against the same leaves on one tape.
Forward make_forward(const FusionModel& model, GradScope scope);
int encode_on(Forward& fw, const FusionModel& model, const Batch& batch, bool training = false,
              Rng* dropout_rng = nullptr);
int head_on(Forward& fw, const FusionModel& model, int h_id);

Forward forward_graph(const FusionModel& model, const Batch& batch, GradScope scope,
                      bool training = false, Rng* dropout_rng = nullptr);

// Evaluation-mode conveniences (no grad, stochastic layers off).
Tensor encode(const FusionModel& model, const Batch& batch);
std::vector<double> predict(const FusionModel& model, const Batch& batch);

// (norm_affine indices, other indices) into model.params; disjoint, exhaustive.
std::pair<std::vector<int>, std::vector<int>> partition_parameters(const FusionModel& model);

// json_path names the manifest; the f32 blob lands next to it with the same
// stem. Values are stored f32, so save -> load quantizes; pipeline stages
// always reload from disk to make that rounding canonical.
void save_checkpoint(const FusionModel& model, const std::filesystem::path& json_path);
FusionModel load_checkpoint(const std::filesystem::path& json_path);

}  // namespace casp
