#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <utility>

#include "patchspn/tensor.hpp"

namespace patchspn {

// Binary tensor container:
//   magic "AETN" | version 0x01 | dtype | rank | reserved 0x00
//   | rank x u32 little-endian dims | row-major little-endian payload.
// dtype 0x01 = float32 (bulk data: patches, latents, heatmaps),
// dtype 0x02 = float64 (model and circuit parameters, lossless round-trip).
enum class DType : std::uint8_t { f32 = 0x01, f64 = 0x02 };

void write_tensor(std::ostream& os, const Tensor& t, DType dtype);
Tensor read_tensor(std::istream& is);

void save_tensor(const std::filesystem::path& path, const Tensor& t, DType dtype = DType::f32);
Tensor load_tensor(const std::filesystem::path& path);

// Named record: u32 little-endian name length | UTF-8 name | tensor block.
void write_named_tensor(std::ostream& os, const std::string& name, const Tensor& t, DType dtype);
std::pair<std::string, Tensor> read_named_tensor(std::istream& is);

}  // namespace patchspn
