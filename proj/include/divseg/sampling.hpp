#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "divseg/localization.hpp"

namespace divseg {

inline constexpr int kBackgroundLabel = -1;

enum PointFlag : uint32_t {
  kFlagRandomBackground = 1u << 0,  // image had no foreground picks
  kFlagDense = 1u << 1,             // produced by the dense baseline
};

/// One pseudo-label.
struct SampledPoint {
  int image = 0;
  size_t loc = 0;
  int label = 0;  // class id, or kBackgroundLabel
  int rank = 0;   // 1-based selection order within (image, label)
  double value = 0.0;
  uint32_t flags = 0;

  bool operator==(const SampledPoint&) const = default;
};

enum class Strategy { kDiverse, kTopK, kSpatial, kDense };

std::string to_string(Strategy s);
Strategy parse_strategy(std::string_view name);

struct SamplingConfig {
  size_t k = 20;
  Strategy strategy = Strategy::kDiverse;
  double tau = 0.2;            // dense only
  double spatial_scale = 0.0;  // spatial only; <= 0 selects grid diagonal / 8
  uint64_t seed = 0;           // random background fallback

  void validate() const;
};

/// Greedy feature-diverse foreground picks. The first pick is argmax S; each
/// later pick maximizes max(S,0) * (1 - max_{earlier picks} |z_i . z_pick|)
/// over unpicked locations. Ties go to the lowest location index. The
/// similarity bound is maintained incrementally, so each step is O(N*D).
std::vector<SampledPoint> sample_diverse_fg(const ScoreMap& scores, const FeatureGrid& f,
                                            size_t k);

/// Background picks: each step takes the unpicked location whose largest
/// |dot| with any foreground pick or earlier background pick is smallest.
/// Foreground locations are never eligible. With no foreground picks the
/// image gets k seeded random locations flagged kFlagRandomBackground.
std::vector<SampledPoint> sample_diverse_bg(std::span<const SampledPoint> fg_points,
                                            const FeatureGrid& f, size_t k,
                                            int image_id = 0, uint64_t seed = 0);

/// k highest scores after clamping at 0, ties to the lowest index.
std::vector<SampledPoint> sample_top_k(const ScoreMap& scores, size_t k);

double default_spatial_scale(size_t height, size_t width);

/// Same greedy recursion as the diverse sampler, with similarity
/// exp(-d^2 / (2 scale^2)) over Euclidean grid distance d.
std::vector<SampledPoint> sample_spatial(const ScoreMap& scores, size_t k, double scale);

/// Per-class score normalizer: mean over images containing the class of the
/// per-image maximum of S.
struct Calibration {
  std::map<int, double> max_mean;
};

Calibration calibrate_scores(std::span<const ScoreMap> positive_maps);

/// Per-location argmax over calibrated scores of the given maps, or
/// kBackgroundLabel where the best calibrated score is below tau. Label
/// values are class ids stored as floats.
Grid dense_pseudo_labels(std::span<const ScoreMap> maps, const Calibration& calibration,
                         double tau);

/// Score maps for every tagged class of every image (same order as tags).
std::vector<std::vector<ScoreMap>> score_dataset(
    std::span<const TrainingImage> images, const std::map<int, LocalizationModel>& models,
    int jobs = 1);

/// Sparse supervision from precomputed score maps (`maps[i]` aligned with
/// `images[i].tags.present`).
std::vector<SampledPoint> sample_from_scores(std::span<const TrainingImage> images,
                                             const std::vector<std::vector<ScoreMap>>& maps,
                                             const SamplingConfig& config, int jobs = 1);

std::vector<SampledPoint> build_supervision_set(
    std::span<const TrainingImage> images, const std::map<int, LocalizationModel>& models,
    const SamplingConfig& config, int jobs = 1);

}  // namespace divseg
