#include "divseg/tensor_io.hpp"

#include <bit>
#include <cstdio>
#include <fstream>
#include <iterator>

namespace divseg {
namespace {

void put_u32(std::vector<uint8_t>& out, uint32_t v) {
  for (int s = 0; s < 32; s += 8) out.push_back(static_cast<uint8_t>(v >> s));
}

uint32_t get_u32(std::span<const uint8_t> b, size_t off) {
  return static_cast<uint32_t>(b[off]) | static_cast<uint32_t>(b[off + 1]) << 8 |
         static_cast<uint32_t>(b[off + 2]) << 16 |
         static_cast<uint32_t>(b[off + 3]) << 24;
}

}  // namespace

std::vector<uint8_t> encode_tensor(const Tensor& t) {
  if (t.dims.empty() || t.dims.size() > 4) {
    throw FormatError("tensor ndim must be in [1, 4], got " +
                      std::to_string(t.dims.size()));
  }
  uint64_t count = 1;
  for (uint32_t d : t.dims) {
    if (d == 0) throw FormatError("tensor dimensions must be positive");
    count *= d;
  }
  if (count != t.data.size()) {
    throw ShapeError("tensor payload length does not match dims");
  }
  std::vector<uint8_t> out;
  out.reserve(7 + 4 * t.dims.size() + 4 * t.data.size());
  out.insert(out.end(), std::begin(kTensorMagic), std::end(kTensorMagic));
  out.push_back(kTensorVersion);
  out.push_back(kTensorDtypeF32);
  out.push_back(static_cast<uint8_t>(t.dims.size()));
  for (uint32_t d : t.dims) put_u32(out, d);
  for (float v : t.data) {
    if (!std::isfinite(v)) throw NumericError("refusing to encode non-finite value");
    put_u32(out, std::bit_cast<uint32_t>(v));
  }
  return out;
}

Tensor decode_tensor(std::span<const uint8_t> bytes) {
  if (bytes.size() < 7) throw FormatError("tensor file truncated in header");
  for (size_t i = 0; i < 4; ++i) {
    if (bytes[i] != static_cast<uint8_t>(kTensorMagic[i])) {
      throw FormatError("bad magic: not a DSTN tensor");
    }
  }
  if (bytes[4] != kTensorVersion) {
    throw FormatError("unsupported tensor format version " +
                      std::to_string(bytes[4]));
  }
  if (bytes[5] != kTensorDtypeF32) {
    throw FormatError("unsupported dtype code " + std::to_string(bytes[5]));
  }
  const size_t ndim = bytes[6];
  if (ndim < 1 || ndim > 4) {
    throw FormatError("tensor ndim must be in [1, 4], got " + std::to_string(ndim));
  }
  const size_t header = 7 + 4 * ndim;
  if (bytes.size() < header) throw FormatError("tensor file truncated in dims");

  Tensor t;
  uint64_t count = 1;
  for (size_t i = 0; i < ndim; ++i) {
    const uint32_t d = get_u32(bytes, 7 + 4 * i);
    if (d == 0) throw FormatError("tensor dimension is zero");
    // Element count must stay addressable as a byte length.
    if (count > (UINT64_MAX / 4) / d) throw FormatError("tensor dimension overflow");
    count *= d;
    t.dims.push_back(d);
  }
  const uint64_t payload = bytes.size() - header;
  if (payload < count * 4) throw FormatError("tensor payload truncated");
  if (payload > count * 4) throw FormatError("trailing bytes after tensor payload");

  t.data.resize(count);
  for (size_t i = 0; i < count; ++i) {
    const float v = std::bit_cast<float>(get_u32(bytes, header + 4 * i));
    if (!std::isfinite(v)) throw FormatError("non-finite value in tensor payload");
    t.data[i] = v;
  }
  return t;
}

std::vector<uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                             std::istreambuf_iterator<char>());
  if (in.bad()) throw IoError("read failed: " + path.string());
  return bytes;
}

void write_file_bytes(const std::filesystem::path& path,
                      std::span<const uint8_t> bytes) {
  if (path.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(path.parent_path(), ec);
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open for writing: " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed: " + path.string());
}

void save_raw_tensor(const Tensor& t, const std::filesystem::path& path) {
  write_file_bytes(path, encode_tensor(t));
}

Tensor load_raw_tensor(const std::filesystem::path& path) {
  const auto bytes = read_file_bytes(path);
  return decode_tensor(bytes);
}

Tensor grid_to_tensor(const Grid& g) {
  Tensor t;
  t.dims = {static_cast<uint32_t>(g.height()), static_cast<uint32_t>(g.width()),
            static_cast<uint32_t>(g.depth())};
  t.data = g.storage();
  return t;
}

Grid tensor_to_grid(const Tensor& t) {
  if (t.dims.size() == 3) return Grid(t.dims[0], t.dims[1], t.dims[2], t.data);
  if (t.dims.size() == 2) return Grid(t.dims[0], t.dims[1], 1, t.data);
  throw FormatError("expected a 2-d or 3-d tensor for a grid, got ndim " +
                    std::to_string(t.dims.size()));
}

void save_tensor(const Grid& g, const std::filesystem::path& path) {
  save_raw_tensor(grid_to_tensor(g), path);
}

Grid load_tensor(const std::filesystem::path& path) {
  return tensor_to_grid(load_raw_tensor(path));
}

uint64_t fnv1a64(std::span<const uint8_t> bytes, uint64_t h) {
  for (uint8_t b : bytes) {
    h ^= b;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex64(uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

}  // namespace divseg
