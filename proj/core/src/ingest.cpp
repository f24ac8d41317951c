#include "casp/ingest.hpp"

#include <algorithm>
#include <set>
#include <utility>

#include <json.hpp>

#include "casp/errors.hpp"
#include "casp/jsonio.hpp"

namespace casp {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {
std::string blob_name(const std::string& split, Modality m) {
  return split + "_" + to_string(m) + ".f32";
}
}  // namespace

void save_dataset(const DomainDataset& ds, const fs::path& dir) {
  const auto violations = validate_dataset(ds);
  if (!violations.empty()) {
    std::string msg = "refusing to save invalid dataset " + ds.name + ":";
    for (const auto& v : violations) msg += "\n  " + v;
    throw ValidationError(msg);
  }

  fs::create_directories(dir);

  json manifest;
  manifest["format_version"] = 1;
  manifest["name"] = ds.name;
  manifest["label_range"] = {ds.label_range[0], ds.label_range[1]};
  for (Modality m : kModalities)
    manifest["feat_dims"][to_string(m)] = ds.feat_dims[static_cast<size_t>(m)];

  for (const auto& split_name : kSplitNames) {
    const auto& samples = ds.split(split_name);
    std::array<std::vector<float>, 3> blobs;
    json entries = json::array();
    for (const auto& s : samples) {
      json e;
      e["id"] = s.id;
      for (Modality m : kModalities) {
        const auto& f = s.feat(m);
        auto& blob = blobs[static_cast<size_t>(m)];
        e[to_string(m)] = {{"offset", blob.size()}, {"seq_len", f.seq_len}};
        blob.insert(blob.end(), f.values.begin(), f.values.end());
      }
      if (s.has_label()) {
        e["label"] = s.label();
        if (s.label_hidden()) e["label_hidden"] = true;
      }
      entries.push_back(std::move(e));
    }
    manifest["splits"][split_name] = std::move(entries);
    for (Modality m : kModalities)
      io::write_f32_blob(dir / blob_name(split_name, m), blobs[static_cast<size_t>(m)]);
  }

  io::write_text_file(dir / "manifest.json", manifest.dump(2) + "\n");
}

DomainDataset load_dataset(const fs::path& dir) {
  json manifest;
  try {
    manifest = json::parse(io::read_text_file(dir / "manifest.json"));
  } catch (const json::exception& e) {
    throw IoError("corrupt manifest in " + dir.string() + ": " + e.what());
  }

  DomainDataset ds;
  try {
    ds.name = manifest.at("name").get<std::string>();
    ds.label_range = {manifest.at("label_range").at(0).get<double>(),
                      manifest.at("label_range").at(1).get<double>()};
    for (Modality m : kModalities)
      ds.feat_dims[static_cast<size_t>(m)] =
          manifest.at("feat_dims").at(to_string(m)).get<int64_t>();

    std::set<std::string> seen_ids;
    for (const auto& split_name : kSplitNames) {
      std::array<std::vector<float>, 3> blobs;
      std::array<std::vector<std::pair<int64_t, int64_t>>, 3> extents;  // (offset, len)
      for (Modality m : kModalities)
        blobs[static_cast<size_t>(m)] = io::read_f32_blob(dir / blob_name(split_name, m));

      std::vector<MultimodalSample> samples;
      for (const auto& e : manifest.at("splits").at(split_name)) {
        MultimodalSample s;
        s.id = e.at("id").get<std::string>();
        if (!seen_ids.insert(s.id).second)
          throw ValidationError("duplicate sample id in manifest: " + s.id);
        for (Modality m : kModalities) {
          const auto& ref = e.at(to_string(m));
          const int64_t offset = ref.at("offset").get<int64_t>();
          const int64_t seq_len = ref.at("seq_len").get<int64_t>();
          const int64_t d = ds.feat_dims[static_cast<size_t>(m)];
          const auto& blob = blobs[static_cast<size_t>(m)];
          if (offset < 0 || seq_len < 1 ||
              offset + seq_len * d > static_cast<int64_t>(blob.size()))
            throw ValidationError("sample " + s.id + " (" + split_name + ") " + to_string(m) +
                                  ": blob reference out of bounds");
          extents[static_cast<size_t>(m)].emplace_back(offset, seq_len * d);
          ModalityFeatures f;
          f.seq_len = seq_len;
          f.feat_dim = d;
          f.values.assign(blob.begin() + offset, blob.begin() + offset + seq_len * d);
          s.feat(m) = std::move(f);
        }
        if (e.contains("label"))
          s.set_label(e.at("label").get<double>(), e.value("label_hidden", false));
        samples.push_back(std::move(s));
      }
      for (Modality m : kModalities) {
        auto& ex = extents[static_cast<size_t>(m)];
        std::sort(ex.begin(), ex.end());
        for (size_t i = 1; i < ex.size(); ++i)
          if (ex[i - 1].first + ex[i - 1].second > ex[i].first)
            throw ValidationError("overlapping blob references in " + split_name + " " +
                                  to_string(m));
      }
      ds.splits[split_name] = std::move(samples);
    }
  } catch (const json::exception& e) {
    throw ValidationError("manifest schema error in " + dir.string() + ": " + e.what());
  }

  const auto violations = validate_dataset(ds);
  if (!violations.empty()) {
    std::string msg = "loaded dataset fails validation:";
    for (const auto& v : violations) msg += "\n  " + v;
    throw ValidationError(msg);
  }
  return ds;
}

}  // namespace casp
