#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "divseg/tensor.hpp"

namespace divseg {

// DSTN tensor file layout, all integers little-endian, no padding:
//   "DSTN" | version u8 = 1 | dtype u8 = 1 (f32) | ndim u8 in [1, 4]
//   | ndim x u32 dims | row-major f32 payload
inline constexpr char kTensorMagic[4] = {'D', 'S', 'T', 'N'};
inline constexpr uint8_t kTensorVersion = 1;
inline constexpr uint8_t kTensorDtypeF32 = 1;

struct Tensor {
  std::vector<uint32_t> dims;
  std::vector<float> data;

  bool operator==(const Tensor&) const = default;
};

std::vector<uint8_t> encode_tensor(const Tensor& t);
Tensor decode_tensor(std::span<const uint8_t> bytes);

void save_raw_tensor(const Tensor& t, const std::filesystem::path& path);
Tensor load_raw_tensor(const std::filesystem::path& path);

/// Grids are written as 3-d tensors (height, width, depth). Loading accepts
/// 3-d tensors and 2-d tensors (depth 1).
Tensor grid_to_tensor(const Grid& g);
Grid tensor_to_grid(const Tensor& t);

void save_tensor(const Grid& g, const std::filesystem::path& path);
Grid load_tensor(const std::filesystem::path& path);

std::vector<uint8_t> read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path,
                      std::span<const uint8_t> bytes);

// 64-bit FNV-1a; used for artifact content hashes and checkpoint checksums.
uint64_t fnv1a64(std::span<const uint8_t> bytes, uint64_t h = 0xcbf29ce484222325ULL);
std::string hex64(uint64_t v);

}  // namespace divseg
