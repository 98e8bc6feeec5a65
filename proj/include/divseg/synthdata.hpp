#pragma once

#include <cstdint>
#include <vector>

#include "divseg/localization.hpp"
#include "divseg/nn.hpp"
#include "divseg/tensor.hpp"

namespace divseg {

inline constexpr size_t kMaxSyntheticClasses = 8;

/// Scene with known ground truth. `mask` holds a class id per pixel, with
/// background encoded as num_classes.
struct SyntheticScene {
  int id = 0;
  Grid image;  // H x W x 3, values in [0, 1]
  Grid mask;   // H x W x 1
  TagSet tags;
  uint64_t seed = 0;
};

struct SceneConfig {
  size_t height = 64;
  size_t width = 64;
  size_t num_classes = 4;
  // Per-class probability of appearing in a scene; empty means 0.4 each.
  std::vector<double> priors;
  size_t max_objects = 3;
  // Object radius range in pixels, for a 64-pixel scene (scaled with size).
  double min_radius = 16.0;
  double max_radius = 26.0;
  // Radius of the muted core relative to the object radius.
  double core_scale = 0.7;
  // Amplitude of the per-object color texture.
  double texture = 0.2;
  // Per-channel range of the background base color.
  double background_lo = 0.35;
  double background_hi = 0.5;

  double prior(size_t cls) const { return priors.empty() ? 0.4 : priors.at(cls); }
};

/// Scene `index` depends only on (seed, index).
SyntheticScene generate_scene(int index, const SceneConfig& config, uint64_t seed);

std::vector<SyntheticScene> generate_dataset(size_t n, const SceneConfig& config,
                                             uint64_t seed, int first_id = 0);

/// Fixed random multi-scale extractor. Scale s average-pools the image over
/// (cell * s)-pixel blocks, applies a per-location random projection and
/// ReLU, and is nearest-upsampled onto the common (H/cell) x (W/cell) grid.
/// Output channels are the concatenation over scales.
struct ExtractorSpec {
  size_t cell = 4;
  std::vector<size_t> scales = {1, 2, 4};
  size_t dims_per_scale = 16;
  std::vector<Linear<float>> projections;  // one 3 -> dims_per_scale map per scale
  uint64_t seed = 0;

  size_t depth() const { return scales.size() * dims_per_scale; }
};

ExtractorSpec make_extractor(uint64_t seed, size_t dims_per_scale = 16,
                             std::vector<size_t> scales = {1, 2, 4});

FeatureGrid extract_features(const Grid& image, const ExtractorSpec& spec);

/// Majority vote per cell x cell block; ties go to the smaller label.
Grid downsample_mask(const Grid& mask, size_t cell, size_t num_labels);

}  // namespace divseg
