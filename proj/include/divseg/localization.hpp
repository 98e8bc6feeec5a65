#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "divseg/nn.hpp"
#include "divseg/tensor.hpp"

namespace divseg {

/// Foreground classes present in one image. Sorted, unique; may be empty.
struct TagSet {
  int image_id = 0;
  std::vector<int> present;

  bool contains(int cls) const;
};

/// A training image as seen by every learning stage: features and tags only.
/// Ground-truth masks are deliberately not reachable from here.
struct TrainingImage {
  int id = 0;
  FeatureGrid features;
  TagSet tags;
};

/// Per-location foreground score S and background score Sbar for one class
/// on one image.
struct ScoreMap {
  int class_id = 0;
  int image_id = 0;
  Grid fg;
  Grid bg;

  size_t locations() const { return fg.locations(); }
};

struct LocalizationModel {
  int class_id = 0;
  // Output channel 0 is S, channel 1 is Sbar.
  TwoLayerNet<float> net;
  PoolingMode pooling = PoolingMode::kGlobal;
  uint64_t seed = 0;

  bool operator==(const LocalizationModel&) const = default;
};

struct LocalizerConfig {
  size_t hidden = 64;
  PoolingMode pooling = PoolingMode::kGlobal;
  double lr = 1e-4;
  size_t epochs = 2;
  double decay_lr = 1e-5;
  size_t decay_epochs = 1;
  uint64_t seed = 0;
};

struct LocalizerTraining {
  LocalizationModel model;
  std::vector<double> epoch_loss;  // mean image loss per epoch
  std::vector<int> negative_ids;   // balanced negative draw, in draw order
  size_t clamp_events = 0;
};

/// Trains the localization network of class `cls` on every positive image
/// and an equal-sized seeded draw of negatives (with replacement when there
/// are fewer negatives than positives). One image per Adam step.
LocalizerTraining train_localizer(int cls, std::span<const TrainingImage> images,
                                  const LocalizerConfig& config);

ScoreMap score_image(const LocalizationModel& model, const FeatureGrid& f,
                     int image_id = 0);

PoolingTrace image_probability(const LocalizationModel& model, const FeatureGrid& f);

/// Fraction of images whose pooled probability lands on the right side of
/// 0.5 for the model's class.
double image_accuracy(const LocalizationModel& model, std::span<const TrainingImage> images);

// FNV-1a over the raw parameter bytes.
uint64_t parameter_checksum(const TwoLayerNet<float>& net);

}  // namespace divseg
