#pragma once

#include <filesystem>

#include "casp/data_model.hpp"

namespace casp {

// On-disk layout: dir/manifest.json plus one little-endian f32 blob per split
// per modality named <split>_<modality>.f32. Offsets in the manifest count
// float elements, not bytes; all structure lives in the manifest.
void save_dataset(const DomainDataset& ds, const std::filesystem::path& dir);

DomainDataset load_dataset(const std::filesystem::path& dir);

}  // namespace casp
