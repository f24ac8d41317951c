#include "casp/backbones.hpp"

#include <cmath>

#include <json.hpp>

#include "casp/errors.hpp"
#include "casp/jsonio.hpp"

namespace casp {

namespace fs = std::filesystem;
using nlohmann::json;

const char* to_string(Fusion f) { return f == Fusion::early ? "early" : "late"; }

Fusion fusion_from_string(const std::string& s) {
  if (s == "early") return Fusion::early;
  if (s == "late") return Fusion::late;
  throw ConfigError("unknown fusion kind: " + s);
}

void validate_config(const EncoderConfig& cfg) {
  auto fail = [](const std::string& msg) { throw ConfigError("encoder config: " + msg); };
  if (cfg.model_dim < 1) fail("model_dim must be >= 1");
  if (cfg.n_layers < 1) fail("n_layers must be >= 1");
  if (cfg.n_heads < 1) fail("n_heads must be >= 1");
  if (cfg.model_dim % cfg.n_heads != 0) fail("model_dim must be divisible by n_heads");
  if (cfg.feedforward_dim < 1) fail("feedforward_dim must be >= 1");
  if (cfg.dropout < 0.0 || cfg.dropout >= 1.0) fail("dropout must be in [0, 1)");
}

int FusionModel::param_index(const std::string& name) const {
  for (size_t i = 0; i < params.size(); ++i)
    if (params[i].name == name) return static_cast<int>(i);
  return -1;
}

const Parameter& FusionModel::param(const std::string& name) const {
  const int i = param_index(name);
  if (i < 0) throw ValidationError("no parameter named " + name);
  return params[static_cast<size_t>(i)];
}

namespace {

struct Builder {
  std::vector<Parameter>& params;
  Rng& rng;

  void weight(const std::string& name, int64_t in, int64_t out) {
    Tensor w({in, out});
    const double s = std::sqrt(2.0 / static_cast<double>(in + out));
    for (int64_t i = 0; i < w.numel(); ++i) w[i] = s * rng.normal();
    params.push_back({name, std::move(w), false});
  }
  void bias(const std::string& name, int64_t n) {
    params.push_back({name, Tensor::zeros({n}), false});
  }
  void norm(const std::string& prefix, int64_t n) {
    params.push_back({prefix + ".g", Tensor::full({n}, 1.0), true});
    params.push_back({prefix + ".b", Tensor::zeros({n}), true});
  }
  void embed(const std::string& name, int64_t rows, int64_t cols) {
    Tensor e({rows, cols});
    for (int64_t i = 0; i < e.numel(); ++i) e[i] = 0.02 * rng.normal();
    params.push_back({name, std::move(e), false});
  }
  void linear(const std::string& prefix, int64_t in, int64_t out) {
    weight(prefix + ".w", in, out);
    bias(prefix + ".b", out);
  }
  void encoder_stack(const std::string& prefix, const EncoderConfig& cfg) {
    const int64_t d = cfg.model_dim;
    for (int64_t l = 0; l < cfg.n_layers; ++l) {
      const std::string lp = prefix + ".l" + std::to_string(l);
      norm(lp + ".ln1", d);
      linear(lp + ".attn.q", d, d);
      linear(lp + ".attn.k", d, d);
      linear(lp + ".attn.v", d, d);
      linear(lp + ".attn.o", d, d);
      norm(lp + ".ln2", d);
      linear(lp + ".ff.fc1", d, cfg.feedforward_dim);
      linear(lp + ".ff.fc2", cfg.feedforward_dim, d);
    }
    norm(prefix + ".final_ln", d);
  }
};

}  // namespace

FusionModel init_model(const EncoderConfig& cfg, const std::array<int64_t, 3>& feat_dims,
                       uint64_t seed) {
  validate_config(cfg);
  for (Modality m : kModalities)
    if (feat_dims[static_cast<size_t>(m)] < 1)
      throw ConfigError(std::string("feat_dim for ") + to_string(m) + " must be >= 1");

  FusionModel model;
  model.cfg = cfg;
  model.feat_dims = feat_dims;
  Rng rng(seed);
  Builder b{model.params, rng};

  const int64_t d = cfg.model_dim;
  for (Modality m : kModalities)
    b.linear(std::string("proj.") + to_string(m), feat_dims[static_cast<size_t>(m)], d);

  if (cfg.fusion == Fusion::early) {
    b.embed("embed.modality", kNumModalities, d);
    b.encoder_stack("enc", cfg);
  } else {
    for (Modality m : kModalities) b.encoder_stack(std::string("enc.") + to_string(m), cfg);
  }

  b.linear("head.fc1", model.d_h(), d);
  b.linear("head.fc2", d, 1);
  return model;
}

namespace {

// tape helpers bound to one forward pass
struct Graph {
  const FusionModel& model;
  Forward& fw;

  int p(const std::string& name) const {
    const int i = model.param_index(name);
    if (i < 0) throw ValidationError("no parameter named " + name);
    return fw.param_ids[static_cast<size_t>(i)];
  }
  int lin2d(int x, const std::string& prefix) const {
    return ad::linear(fw.tape, x, p(prefix + ".w"), p(prefix + ".b"));
  }
  int ln2d(int x, const std::string& prefix) const {
    return ad::layer_norm(fw.tape, x, p(prefix + ".g"), p(prefix + ".b"));
  }

  // x2 is (B*T, d); mask (B, T). Returns (B*T, d) after the full stack.
  int encoder(int x2, const std::string& prefix, const Tensor& mask, int64_t bsz, int64_t t_len,
              bool training, Rng* rng) const {
    const auto& cfg = model.cfg;
    auto& tape = fw.tape;
    const int64_t d = cfg.model_dim;
    for (int64_t l = 0; l < cfg.n_layers; ++l) {
      const std::string lp = prefix + ".l" + std::to_string(l);
      int a = ln2d(x2, lp + ".ln1");
      int q = ad::reshape(tape, lin2d(a, lp + ".attn.q"), {bsz, t_len, d});
      int k = ad::reshape(tape, lin2d(a, lp + ".attn.k"), {bsz, t_len, d});
      int v = ad::reshape(tape, lin2d(a, lp + ".attn.v"), {bsz, t_len, d});
      int att = ad::multihead_attention(tape, q, k, v, mask, static_cast<int>(cfg.n_heads));
      int att2 = ad::reshape(tape, att, {bsz * t_len, d});
      att2 = lin2d(att2, lp + ".attn.o");
      if (training && cfg.dropout > 0.0)
        att2 = ad::dropout(tape, att2, cfg.dropout, *rng, true);
      x2 = ad::add(tape, x2, att2);
      int f = ln2d(x2, lp + ".ln2");
      f = lin2d(f, lp + ".ff.fc1");
      f = ad::gelu(tape, f);
      f = lin2d(f, lp + ".ff.fc2");
      if (training && cfg.dropout > 0.0) f = ad::dropout(tape, f, cfg.dropout, *rng, true);
      x2 = ad::add(tape, x2, f);
    }
    return ln2d(x2, prefix + ".final_ln");
  }
};

Tensor concat_masks(const Batch& batch) {
  const int64_t bsz = batch.size;
  int64_t total = 0;
  for (const auto& m : batch.masks) total += m.dim(1);
  Tensor out({bsz, total});
  int64_t off = 0;
  for (const auto& m : batch.masks) {
    for (int64_t i = 0; i < bsz; ++i)
      for (int64_t t = 0; t < m.dim(1); ++t) out.at(i, off + t) = m.at(i, t);
    off += m.dim(1);
  }
  return out;
}

}  // namespace

Forward make_forward(const FusionModel& model, GradScope scope) {
  validate_config(model.cfg);
  Forward fw;
  fw.param_ids.reserve(model.params.size());
  for (const auto& par : model.params) {
    const bool rg = scope == GradScope::all || (scope == GradScope::norm_only && par.norm_affine);
    fw.param_ids.push_back(fw.tape.leaf(par.value, rg));
  }
  return fw;
}

int encode_on(Forward& fw, const FusionModel& model, const Batch& batch, bool training,
              Rng* dropout_rng) {
  for (Modality m : kModalities) {
    const size_t mi = static_cast<size_t>(m);
    if (batch.features[mi].dim(2) != model.feat_dims[mi])
      throw ValidationError(std::string("batch feat_dim for ") + to_string(m) + " is " +
                            std::to_string(batch.features[mi].dim(2)) + ", model expects " +
                            std::to_string(model.feat_dims[mi]));
  }
  if (training && model.cfg.dropout > 0.0 && dropout_rng == nullptr)
    throw ValidationError("training forward with dropout needs an rng");

  auto& tape = fw.tape;
  Graph g{model, fw};
  const int64_t bsz = batch.size;
  const int64_t d = model.cfg.model_dim;

  std::array<int, 3> proj3;  // per-modality (B, T_m, d)
  for (Modality m : kModalities) {
    const size_t mi = static_cast<size_t>(m);
    const int64_t t_m = batch.features[mi].dim(1);
    const int64_t d_m = batch.features[mi].dim(2);
    int x = tape.leaf(Tensor({bsz * t_m, d_m}, batch.features[mi].vec()));
    x = g.lin2d(x, std::string("proj.") + to_string(m));
    proj3[mi] = ad::reshape(tape, x, {bsz, t_m, d});
  }

  if (model.cfg.fusion == Fusion::early) {
    int x3 = ad::concat_time(tape, {proj3[0], proj3[1], proj3[2]});
    std::vector<int> seg;
    for (Modality m : kModalities)
      seg.insert(seg.end(), static_cast<size_t>(batch.features[static_cast<size_t>(m)].dim(1)),
                 static_cast<int>(m));
    x3 = ad::add_segment_embed(tape, x3, g.p("embed.modality"), seg);
    const Tensor mask = concat_masks(batch);
    const int64_t t_len = mask.dim(1);
    int x2 = ad::reshape(tape, x3, {bsz * t_len, d});
    x2 = g.encoder(x2, "enc", mask, bsz, t_len, training, dropout_rng);
    return ad::masked_mean_pool(tape, ad::reshape(tape, x2, {bsz, t_len, d}), mask);
  }

  std::array<int, 3> pooled;
  for (Modality m : kModalities) {
    const size_t mi = static_cast<size_t>(m);
    const int64_t t_m = batch.features[mi].dim(1);
    int x2 = ad::reshape(tape, proj3[mi], {bsz * t_m, d});
    x2 = g.encoder(x2, std::string("enc.") + to_string(m), batch.masks[mi], bsz, t_m, training,
                   dropout_rng);
    pooled[mi] =
        ad::masked_mean_pool(tape, ad::reshape(tape, x2, {bsz, t_m, d}), batch.masks[mi]);
  }
  return ad::concat_cols(fw.tape, {pooled[0], pooled[1], pooled[2]});
}

int head_on(Forward& fw, const FusionModel& model, int h_id) {
  Graph g{model, fw};
  int y = g.lin2d(h_id, "head.fc1");
  y = ad::gelu(fw.tape, y);
  y = g.lin2d(y, "head.fc2");
  return ad::reshape(fw.tape, y, {fw.tape.value(h_id).dim(0)});
}

Forward forward_graph(const FusionModel& model, const Batch& batch, GradScope scope,
                      bool training, Rng* dropout_rng) {
  Forward fw = make_forward(model, scope);
  fw.h = encode_on(fw, model, batch, training, dropout_rng);
  fw.yhat = head_on(fw, model, fw.h);
  return fw;
}

Tensor encode(const FusionModel& model, const Batch& batch) {
  Forward fw = forward_graph(model, batch, GradScope::none);
  return fw.tape.value(fw.h);
}

std::vector<double> predict(const FusionModel& model, const Batch& batch) {
  Forward fw = forward_graph(model, batch, GradScope::none);
  return fw.tape.value(fw.yhat).vec();
}

std::pair<std::vector<int>, std::vector<int>> partition_parameters(const FusionModel& model) {
  std::vector<int> norm, other;
  for (size_t i = 0; i < model.params.size(); ++i)
    (model.params[i].norm_affine ? norm : other).push_back(static_cast<int>(i));
  return {std::move(norm), std::move(other)};
}

void save_checkpoint(const FusionModel& model, const fs::path& json_path) {
  fs::path blob_path = json_path;
  blob_path.replace_extension(".f32");

  json manifest;
  manifest["format_version"] = 1;
  manifest["encoder"] = {{"fusion", to_string(model.cfg.fusion)},
                         {"model_dim", model.cfg.model_dim},
                         {"n_layers", model.cfg.n_layers},
                         {"n_heads", model.cfg.n_heads},
                         {"feedforward_dim", model.cfg.feedforward_dim},
                         {"dropout", model.cfg.dropout}};
  for (Modality m : kModalities)
    manifest["feat_dims"][to_string(m)] = model.feat_dims[static_cast<size_t>(m)];
  manifest["blob"] = blob_path.filename().string();

  std::vector<float> blob;
  json plist = json::array();
  for (const auto& par : model.params) {
    json e;
    e["name"] = par.name;
    e["shape"] = par.value.shape();
    e["norm_affine"] = par.norm_affine;
    e["offset"] = blob.size();
    plist.push_back(std::move(e));
    for (int64_t i = 0; i < par.value.numel(); ++i)
      blob.push_back(static_cast<float>(par.value[i]));
  }
  manifest["params"] = std::move(plist);

  io::write_f32_blob(blob_path, blob);
  io::write_text_file(json_path, manifest.dump(2) + "\n");
}

FusionModel load_checkpoint(const fs::path& json_path) {
  json manifest;
  try {
    manifest = json::parse(io::read_text_file(json_path));
  } catch (const json::exception& e) {
    throw IoError("corrupt checkpoint manifest " + json_path.string() + ": " + e.what());
  }
  try {
    FusionModel model;
    const auto& enc = manifest.at("encoder");
    model.cfg.fusion = fusion_from_string(enc.at("fusion").get<std::string>());
    model.cfg.model_dim = enc.at("model_dim").get<int64_t>();
    model.cfg.n_layers = enc.at("n_layers").get<int64_t>();
    model.cfg.n_heads = enc.at("n_heads").get<int64_t>();
    model.cfg.feedforward_dim = enc.at("feedforward_dim").get<int64_t>();
    model.cfg.dropout = enc.at("dropout").get<double>();
    for (Modality m : kModalities)
      model.feat_dims[static_cast<size_t>(m)] =
          manifest.at("feat_dims").at(to_string(m)).get<int64_t>();

    const auto blob =
        io::read_f32_blob(json_path.parent_path() / manifest.at("blob").get<std::string>());
    for (const auto& e : manifest.at("params")) {
      Parameter par;
      par.name = e.at("name").get<std::string>();
      par.norm_affine = e.at("norm_affine").get<bool>();
      const auto shape = e.at("shape").get<std::vector<int64_t>>();
      const int64_t offset = e.at("offset").get<int64_t>();
      const int64_t n = Tensor::numel_of(shape);
      if (offset < 0 || offset + n > static_cast<int64_t>(blob.size()))
        throw ValidationError("checkpoint blob reference out of bounds for " + par.name);
      std::vector<double> vals(static_cast<size_t>(n));
      for (int64_t i = 0; i < n; ++i)
        vals[static_cast<size_t>(i)] = static_cast<double>(blob[static_cast<size_t>(offset + i)]);
      par.value = Tensor(shape, std::move(vals));
      model.params.push_back(std::move(par));
    }
    validate_config(model.cfg);
    return model;
  } catch (const json::exception& e) {
    throw ValidationError("checkpoint schema error " + json_path.string() + ": " + e.what());
  }
}

}  // namespace casp
