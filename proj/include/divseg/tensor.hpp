#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "divseg/error.hpp"

namespace divseg {

/// Dense H x W x D grid, stored location-major: the D values of location
/// i = row * width + col are contiguous.
template <typename T>
class BasicGrid {
 public:
  BasicGrid() = default;

  BasicGrid(size_t height, size_t width, size_t depth, T fill = T(0))
      : height_(height), width_(width), depth_(depth) {
    check_dims();
    data_.assign(height * width * depth, fill);
  }

  BasicGrid(size_t height, size_t width, size_t depth, std::vector<T> data)
      : height_(height), width_(width), depth_(depth), data_(std::move(data)) {
    check_dims();
    if (data_.size() != height * width * depth) {
      throw ShapeError("grid data length " + std::to_string(data_.size()) +
                       " does not match " + std::to_string(height) + "x" +
                       std::to_string(width) + "x" + std::to_string(depth));
    }
  }

  size_t height() const { return height_; }
  size_t width() const { return width_; }
  size_t depth() const { return depth_; }
  size_t locations() const { return height_ * width_; }
  size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::span<T> at(size_t loc) { return {data_.data() + loc * depth_, depth_}; }
  std::span<const T> at(size_t loc) const {
    return {data_.data() + loc * depth_, depth_};
  }

  T& operator()(size_t loc, size_t ch) { return data_[loc * depth_ + ch]; }
  T operator()(size_t loc, size_t ch) const { return data_[loc * depth_ + ch]; }
  T& operator()(size_t row, size_t col, size_t ch) {
    return data_[(row * width_ + col) * depth_ + ch];
  }
  T operator()(size_t row, size_t col, size_t ch) const {
    return data_[(row * width_ + col) * depth_ + ch];
  }

  std::span<T> values() { return data_; }
  std::span<const T> values() const { return data_; }
  const std::vector<T>& storage() const { return data_; }

  bool same_shape(const BasicGrid& other) const {
    return height_ == other.height_ && width_ == other.width_ &&
           depth_ == other.depth_;
  }

  template <typename U>
  BasicGrid<U> cast() const {
    std::vector<U> out(data_.begin(), data_.end());
    return BasicGrid<U>(height_, width_, depth_, std::move(out));
  }

  bool operator==(const BasicGrid&) const = default;

 private:
  void check_dims() const {
    if (height_ == 0 || width_ == 0 || depth_ == 0) {
      throw ShapeError("grid dimensions must be positive");
    }
  }

  size_t height_ = 0;
  size_t width_ = 0;
  size_t depth_ = 0;
  std::vector<T> data_;
};

using Grid = BasicGrid<float>;

template <typename T>
bool all_finite(const BasicGrid<T>& g) {
  for (T v : g.values()) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

enum class NormState { kRaw, kStandardized, kUnit };

std::string to_string(NormState state);

struct FeatureGrid {
  Grid grid;
  NormState state = NormState::kRaw;
  // Locations whose vector was exactly zero after standardization.
  size_t zero_vectors = 0;

  size_t depth() const { return grid.depth(); }
  size_t locations() const { return grid.locations(); }
};

struct NormStats {
  std::vector<float> mean;
  std::vector<float> stddev;  // population convention
  float epsilon = 1e-8f;

  size_t depth() const { return mean.size(); }
  bool operator==(const NormStats&) const = default;
  bool clamped(size_t dim) const { return stddev[dim] < epsilon; }
  size_t clamped_count() const;
};

/// Per-dimension mean and population standard deviation over every location
/// of every grid.
NormStats compute_norm_stats(std::span<const FeatureGrid> features);

/// Z-scores each dimension with `stats`, then scales each location to unit
/// L2 norm. Vectors that are exactly zero after the first stage stay zero.
FeatureGrid normalize_features(const FeatureGrid& f, const NormStats& stats);

/// Second normalization stage alone (per-location L2). Returns the number of
/// zero vectors encountered.
size_t l2_normalize_locations(Grid& g);

}  // namespace divseg
