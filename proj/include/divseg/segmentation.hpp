#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <vector>

#include "divseg/localization.hpp"
#include "divseg/sampling.hpp"

namespace divseg {

/// Feature grid with a per-image global descriptor appended at every
/// location: depth = base_depth + global.size().
struct AugmentedFeatureGrid {
  Grid grid;
  std::vector<float> global;
  size_t base_depth = 0;
};

/// Global descriptor = L2-normalized spatial mean of the unit feature
/// vectors (zero if the mean is zero), replicated at every location.
AugmentedFeatureGrid augment_with_global(const FeatureGrid& f);

using FeatureStore = std::map<int, AugmentedFeatureGrid>;

struct SegmentationConfig {
  size_t hidden = 128;
  double lr = 1e-3;
  size_t epochs = 2;
  size_t batch = 100;
  uint64_t seed = 0;
};

struct SegmentationModel {
  // Ordered foreground class ids; output index classes.size() is background.
  std::vector<int> classes;
  TwoLayerNet<float> net;
  size_t base_dim = 0;
  size_t global_dim = 0;
  NormStats stats;
  uint64_t seed = 0;

  size_t num_outputs() const { return classes.size() + 1; }
  size_t background_index() const { return classes.size(); }
  // Output index of a point label (kBackgroundLabel maps to background).
  size_t index_of(int label) const;
  // Inverse of index_of.
  int label_of(size_t index) const;

  bool operator==(const SegmentationModel&) const = default;
};

struct SegmentationTraining {
  SegmentationModel model;
  std::vector<double> epoch_loss;
  double seconds = 0.0;
  size_t points = 0;
};

/// Trains the per-location classifier on pooled sampled points only:
/// seeded shuffle each epoch, fixed-size point batches, Adam at a fixed
/// learning rate. Ground truth never enters.
SegmentationTraining train_segmentation(std::span<const SampledPoint> points,
                                        const FeatureStore& features,
                                        const std::vector<int>& classes,
                                        const NormStats& stats,
                                        const SegmentationConfig& config);

struct Prediction {
  Grid labels;  // output index per location, in [0, C]
  Grid probs;   // C + 1 softmax probabilities per location
};

Prediction predict(const SegmentationModel& model, const AugmentedFeatureGrid& f);

/// Accuracy of the model on its own training points.
double point_accuracy(const SegmentationModel& model, std::span<const SampledPoint> points,
                      const FeatureStore& features);

/// Everything needed to extend the class universe later.
struct SegmentationSystem {
  std::vector<int> classes;
  std::map<int, LocalizationModel> localizers;
  std::vector<SampledPoint> points;
  SegmentationModel segmenter;
  NormStats stats;
};

struct AddClassConfig {
  LocalizerConfig localizer;
  SamplingConfig sampling;
  SegmentationConfig segmentation;
  int jobs = 1;
};

struct AddClassResult {
  SegmentationSystem system;
  LocalizerTraining new_localizer;
  SegmentationTraining segmentation;
  std::vector<SampledPoint> new_points;
  std::map<int, uint64_t> checksums_before;
  std::map<int, uint64_t> checksums_after;
};

/// Adds one foreground class: trains only the new class's localizer (on the
/// new images, with the existing images as additional negatives), samples
/// the new images with every tagged class's localizer, merges the points,
/// and retrains the segmentation head from scratch with one more output.
/// `features` must hold augmented features for every old and new image.
AddClassResult add_class(int new_class, std::span<const TrainingImage> new_images,
                         std::span<const TrainingImage> existing_images,
                         const SegmentationSystem& existing, const FeatureStore& features,
                         const AddClassConfig& config);

}  // namespace divseg
