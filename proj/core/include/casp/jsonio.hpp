#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace casp::io {

// Little-endian float32 blobs; all structure lives in the accompanying JSON.
void write_f32_blob(const std::filesystem::path& path, const std::vector<float>& values);
std::vector<float> read_f32_blob(const std::filesystem::path& path);

void write_text_file(const std::filesystem::path& path, const std::string& content);
std::string read_text_file(const std::filesystem::path& path);

// Round to 6 significant digits. Result JSONs use this so reruns diff cleanly;
// dataset manifests and blobs keep full precision.
double round_sig6(double v);
std::vector<double> round_sig6(const std::vector<double>& v);

std::string format_fixed(double v, int decimals);

}  // namespace casp::io
