#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "ipart/tensor.hpp"

namespace ipart {

using NamedTensors = std::vector<std::pair<std::string, Tensor>>;

// Tensor dump, little-endian:
//   "RGT1", u32 count, then per entry:
//   u16 name length, UTF-8 name, u8 rank, rank × u32 extents, f64 values (row-major).
std::string encode_tensor_dump(const NamedTensors& tensors);
NamedTensors decode_tensor_dump(const std::string& bytes);
void write_tensor_dump(const std::filesystem::path& path, const NamedTensors& tensors);
NamedTensors read_tensor_dump(const std::filesystem::path& path);

/// Binary PPM (P6) from a 3×H×W tensor in [0,1]; values are clamped and
/// rounded to 8 bits.
void write_ppm(const std::filesystem::path& path, const Tensor& image);
Tensor read_ppm(const std::filesystem::path& path);

/// Writes `text` to `path`, throwing IoError on failure.
void write_text(const std::filesystem::path& path, const std::string& text);
std::string read_text(const std::filesystem::path& path);

}  // namespace ipart
