#include "casp/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <vector>

#include <json.hpp>

#include "casp/errors.hpp"
#include "casp/rng.hpp"
#include "config_json.hpp"

namespace casp {

namespace {

constexpr int kNuisance = 3;  // latent dims beside z

// column-major not needed; small row-major (rows x cols) double matrices
struct Mat {
  int64_t rows = 0, cols = 0;
  std::vector<double> v;
  Mat(int64_t r, int64_t c) : rows(r), cols(c), v(static_cast<size_t>(r * c), 0.0) {}
  double& at(int64_t i, int64_t j) { return v[static_cast<size_t>(i * cols + j)]; }
  double at(int64_t i, int64_t j) const { return v[static_cast<size_t>(i * cols + j)]; }
};

Mat random_orthogonal(int64_t d, Rng& rng) {
  // modified Gram-Schmidt on a Gaussian matrix
  Mat q(d, d);
  for (auto& x : q.v) x = rng.normal();
  for (int64_t j = 0; j < d; ++j) {
    for (int64_t k = 0; k < j; ++k) {
      double dot = 0.0;
      for (int64_t i = 0; i < d; ++i) dot += q.at(i, k) * q.at(i, j);
      for (int64_t i = 0; i < d; ++i) q.at(i, j) -= dot * q.at(i, k);
    }
    double nrm = 0.0;
    for (int64_t i = 0; i < d; ++i) nrm += q.at(i, j) * q.at(i, j);
    nrm = std::sqrt(nrm);
    if (nrm < 1e-12) throw ValidationError("degenerate random orthogonal draw");
    for (int64_t i = 0; i < d; ++i) q.at(i, j) /= nrm;
  }
  return q;
}

// R = Q * G(theta) * Q^T with G block-diagonal Givens rotations on coordinate
// pairs (0,1), (2,3), ...; theta = pi flips every paired coordinate.
Mat rotation_matrix(int64_t d, double theta, Rng& rng) {
  const Mat q = random_orthogonal(d, rng);
  const double c = std::cos(theta), s = std::sin(theta);
  Mat g(d, d);
  for (int64_t i = 0; i < d; ++i) g.at(i, i) = 1.0;
  for (int64_t p = 0; p + 1 < d; p += 2) {
    g.at(p, p) = c;
    g.at(p, p + 1) = -s;
    g.at(p + 1, p) = s;
    g.at(p + 1, p + 1) = c;
  }
  Mat qg(d, d);
  for (int64_t i = 0; i < d; ++i)
    for (int64_t k = 0; k < d; ++k) {
      const double a = q.at(i, k);
      if (a == 0.0) continue;
      for (int64_t j = 0; j < d; ++j) qg.at(i, j) += a * g.at(k, j);
    }
  Mat r(d, d);
  for (int64_t i = 0; i < d; ++i)
    for (int64_t k = 0; k < d; ++k) {
      const double a = qg.at(i, k);
      for (int64_t j = 0; j < d; ++j) r.at(i, j) += a * q.at(j, k);  // times Q^T
    }
  return r;
}

struct Maps {
  std::array<Mat, 3> w = {Mat(0, 0), Mat(0, 0), Mat(0, 0)};  // D_m x (1 + kNuisance)
  std::array<Mat, 3> rot = {Mat(0, 0), Mat(0, 0), Mat(0, 0)};
};

Maps build_maps(const ShiftConfig& cfg, Rng& rng) {
  Maps maps;
  for (Modality m : kModalities) {
    const size_t mi = static_cast<size_t>(m);
    const int64_t d = cfg.feat_dims[mi];
    Mat w(d, 1 + kNuisance);
    for (int64_t i = 0; i < d; ++i) {
      w.at(i, 0) = rng.normal();  // sentiment direction, unit-scale
      for (int64_t j = 1; j <= kNuisance; ++j) w.at(i, j) = 0.5 * rng.normal();
    }
    maps.w[mi] = std::move(w);
    maps.rot[mi] = rotation_matrix(d, cfg.rotation[mi], rng);
  }
  return maps;
}

std::vector<MultimodalSample> make_split(const ShiftConfig& cfg, const Maps& maps, bool target,
                                         int64_t count, const std::string& id_prefix,
                                         bool hide_labels, Rng& rng) {
  const double sigma = target ? cfg.noise_sigma_target : cfg.noise_sigma_source;
  std::vector<MultimodalSample> out;
  out.reserve(static_cast<size_t>(count));
  for (int64_t i = 0; i < count; ++i) {
    MultimodalSample s;
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%s%05lld", id_prefix.c_str(),
                  static_cast<long long>(i));
    s.id = buf;
    const double z = rng.uniform(cfg.label_range[0], cfg.label_range[1]);
    double latent[1 + kNuisance];
    latent[0] = z;
    for (int j = 1; j <= kNuisance; ++j) latent[j] = rng.normal();

    for (Modality m : kModalities) {
      const size_t mi = static_cast<size_t>(m);
      const int64_t d = cfg.feat_dims[mi];
      const int64_t min_len = std::max<int64_t>(1, cfg.seq_len / 2);
      const int64_t len =
          min_len + static_cast<int64_t>(rng.uniform_int(
                        static_cast<uint64_t>(cfg.seq_len - min_len + 1)));
      std::vector<double> clean(static_cast<size_t>(d), 0.0);
      const Mat& w = maps.w[mi];
      for (int64_t r = 0; r < d; ++r)
        for (int j = 0; j <= kNuisance; ++j) clean[static_cast<size_t>(r)] += w.at(r, j) * latent[j];
      if (target) {
        const Mat& rot = maps.rot[mi];
        std::vector<double> rotated(static_cast<size_t>(d), 0.0);
        for (int64_t r = 0; r < d; ++r)
          for (int64_t jj = 0; jj < d; ++jj)
            rotated[static_cast<size_t>(r)] += rot.at(r, jj) * clean[static_cast<size_t>(jj)];
        clean = std::move(rotated);
      }
      ModalityFeatures f;
      f.seq_len = len;
      f.feat_dim = d;
      f.values.resize(static_cast<size_t>(len * d));
      const double corrupt = target ? cfg.corruption[mi] : 0.0;
      for (int64_t t = 0; t < len; ++t)
        for (int64_t r = 0; r < d; ++r) {
          double v = clean[static_cast<size_t>(r)] + sigma * rng.normal();
          if (corrupt > 0.0) v += corrupt * rng.normal();
          f.values[static_cast<size_t>(t * d + r)] = static_cast<float>(v);
        }
      s.feat(m) = std::move(f);
    }
    const double y = target ? z * cfg.label_rescale : z;
    s.set_label(y, hide_labels);
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace

void validate_config(const ShiftConfig& cfg) {
  auto fail = [](const std::string& msg) { throw ConfigError("synth config: " + msg); };
  if (cfg.n_source < 1 || cfg.n_target < 1 || cfg.n_valid < 1 || cfg.n_test < 1)
    fail("sample counts must be >= 1");
  if (cfg.seq_len < 1) fail("seq_len must be >= 1");
  for (Modality m : kModalities)
    if (cfg.feat_dims[static_cast<size_t>(m)] < 1) fail("feat_dims must be >= 1");
  if (!(cfg.label_range[0] < cfg.label_range[1])) fail("label_range must be increasing");
  if (cfg.noise_sigma_source < 0.0 || cfg.noise_sigma_target < 0.0) fail("noise sigma must be >= 0");
  for (double c : cfg.corruption)
    if (c < 0.0) fail("corruption scale must be >= 0");
  for (double r : cfg.rotation)
    if (!std::isfinite(r)) fail("rotation must be finite");
  if (!(cfg.label_rescale > 0.0)) fail("label_rescale must be > 0");
  if (cfg.name.empty()) fail("name must be nonempty");
}

std::pair<DomainDataset, DomainDataset> generate_task(const ShiftConfig& cfg) {
  validate_config(cfg);

  Rng root(cfg.seed);
  Rng maps_rng = root.fork(0);
  Rng src_rng = root.fork(1);
  Rng tgt_rng = root.fork(2);
  const Maps maps = build_maps(cfg, maps_rng);

  DomainDataset source;
  source.name = cfg.name + "_source";
  source.label_range = cfg.label_range;
  source.feat_dims = cfg.feat_dims;
  source.splits["train"] = make_split(cfg, maps, false, cfg.n_source, "src_train_", false, src_rng);
  source.splits["valid"] = make_split(cfg, maps, false, cfg.n_valid, "src_valid_", false, src_rng);
  source.splits["test"] = make_split(cfg, maps, false, cfg.n_test, "src_test_", false, src_rng);

  DomainDataset target;
  target.name = cfg.name + "_target";
  target.label_range = {cfg.label_range[0] * cfg.label_rescale,
                        cfg.label_range[1] * cfg.label_rescale};
  target.feat_dims = cfg.feat_dims;
  // adaptation split labels are ground truth for audits only, flagged hidden
  target.splits["train"] = make_split(cfg, maps, true, cfg.n_target, "tgt_train_", true, tgt_rng);
  target.splits["valid"] = make_split(cfg, maps, true, cfg.n_valid, "tgt_valid_", false, tgt_rng);
  target.splits["test"] = make_split(cfg, maps, true, cfg.n_test, "tgt_test_", false, tgt_rng);

  return {std::move(source), std::move(target)};
}

ShiftConfig shift_config_from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  cfgjson::check_keys(j, "",
                      {"name", "n_source", "n_target", "n_valid", "n_test", "seq_len",
                       "feat_dims", "label_range", "rotation", "noise_sigma_source",
                       "noise_sigma_target", "corruption", "label_rescale", "seed"});
  ShiftConfig cfg;
  cfgjson::get_if(j, "", "name", cfg.name);
  cfgjson::get_if(j, "", "n_source", cfg.n_source);
  cfgjson::get_if(j, "", "n_target", cfg.n_target);
  cfgjson::get_if(j, "", "n_valid", cfg.n_valid);
  cfgjson::get_if(j, "", "n_test", cfg.n_test);
  cfgjson::get_if(j, "", "seq_len", cfg.seq_len);
  cfgjson::get_if(j, "", "feat_dims", cfg.feat_dims);
  cfgjson::get_if(j, "", "label_range", cfg.label_range);
  cfgjson::get_if(j, "", "rotation", cfg.rotation);
  cfgjson::get_if(j, "", "noise_sigma_source", cfg.noise_sigma_source);
  cfgjson::get_if(j, "", "noise_sigma_target", cfg.noise_sigma_target);
  cfgjson::get_if(j, "", "corruption", cfg.corruption);
  cfgjson::get_if(j, "", "label_rescale", cfg.label_rescale);
  cfgjson::get_if(j, "", "seed", cfg.seed);
  return cfg;
}

std::string shift_config_to_json(const ShiftConfig& cfg) {
  nlohmann::ordered_json j;
  j["name"] = cfg.name;
  j["n_source"] = cfg.n_source;
  j["n_target"] = cfg.n_target;
  j["n_valid"] = cfg.n_valid;
  j["n_test"] = cfg.n_test;
  j["seq_len"] = cfg.seq_len;
  j["feat_dims"] = cfg.feat_dims;
  j["label_range"] = cfg.label_range;
  j["rotation"] = cfg.rotation;
  j["noise_sigma_source"] = cfg.noise_sigma_source;
  j["noise_sigma_target"] = cfg.noise_sigma_target;
  j["corruption"] = cfg.corruption;
  j["label_rescale"] = cfg.label_rescale;
  j["seed"] = cfg.seed;
  return j.dump(2) + "\n";
}

}  // namespace casp
