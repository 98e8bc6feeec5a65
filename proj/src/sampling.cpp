#include "divseg/sampling.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "divseg/parallel.hpp"

namespace divseg {
namespace {

double abs_dot(std::span<const float> a, std::span<const float> b) {
  double s = 0.0;
  for (size_t d = 0; d < a.size(); ++d) {
    s += static_cast<double>(a[d]) * static_cast<double>(b[d]);
  }
  return std::abs(s);
}

void check_k(size_t k, size_t available, const char* who) {
  if (k == 0) throw ConfigError(std::string(who) + ": k must be >= 1");
  if (k > available) {
    throw DataError(std::string(who) + ": k=" + std::to_string(k) + " exceeds " +
                    std::to_string(available) + " available locations");
  }
}

void check_unit(const FeatureGrid& f, const char* who) {
  if (f.state != NormState::kUnit) {
    throw DataError(std::string(who) + ": features must be unit-normalized");
  }
}

size_t raw_argmax(const Grid& fg) {
  auto v = fg.values();
  return static_cast<size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

// Shared greedy loop for the diverse and spatial foreground samplers.
// `update(pick, maxsim)` raises maxsim[i] to the similarity with `pick`.
template <typename Update>
std::vector<SampledPoint> greedy_penalized(const ScoreMap& scores, size_t k, Update update) {
  const size_t n = scores.locations();
  std::vector<double> score(n);
  for (size_t i = 0; i < n; ++i) score[i] = std::max(0.0, static_cast<double>(scores.fg(i, 0)));
  std::vector<double> maxsim(n, 0.0);
  std::vector<bool> taken(n, false);
  std::vector<SampledPoint> out;
  out.reserve(k);
  for (size_t step = 0; step < k; ++step) {
    size_t best = 0;
    double best_val = 0.0;
    if (step == 0) {
      best = raw_argmax(scores.fg);
      best_val = score[best];
    } else {
      bool found = false;
      for (size_t i = 0; i < n; ++i) {
        if (taken[i]) continue;
        const double v = score[i] * (1.0 - maxsim[i]);
        if (!found || v > best_val) {
          best = i;
          best_val = v;
          found = true;
        }
      }
    }
    taken[best] = true;
    out.push_back({scores.image_id, best, scores.class_id, static_cast<int>(step + 1),
                   best_val, 0});
    update(best, maxsim);
  }
  return out;
}

}  // namespace

std::string to_string(Strategy s) {
  switch (s) {
    case Strategy::kDiverse:
      return "diverse";
    case Strategy::kTopK:
      return "topk";
    case Strategy::kSpatial:
      return "spatial";
    case Strategy::kDense:
      return "dense";
  }
  return "unknown";
}

Strategy parse_strategy(std::string_view name) {
  if (name == "diverse") return Strategy::kDiverse;
  if (name == "topk" || name == "top_k") return Strategy::kTopK;
  if (name == "spatial") return Strategy::kSpatial;
  if (name == "dense") return Strategy::kDense;
  throw ConfigError("unknown sampling strategy '" + std::string(name) + "'");
}

void SamplingConfig::validate() const {
  if (k < 1) throw ConfigError("sampling k must be >= 1");
  if (std::isnan(tau)) throw ConfigError("sampling tau must not be NaN");
  if (!std::isfinite(spatial_scale)) throw ConfigError("spatial scale must be finite");
}

std::vector<SampledPoint> sample_diverse_fg(const ScoreMap& scores, const FeatureGrid& f,
                                            size_t k) {
  check_unit(f, "sample_diverse_fg");
  if (scores.locations() != f.locations() || !scores.fg.same_shape(scores.bg)) {
    throw ShapeError("sample_diverse_fg: score map and features differ in shape");
  }
  check_k(k, f.locations(), "sample_diverse_fg");
  const Grid& z = f.grid;
  return greedy_penalized(scores, k, [&z](size_t pick, std::vector<double>& maxsim) {
    auto zp = z.at(pick);
    for (size_t i = 0; i < maxsim.size(); ++i) {
      maxsim[i] = std::max(maxsim[i], abs_dot(z.at(i), zp));
    }
  });
}

double default_spatial_scale(size_t height, size_t width) {
  return std::hypot(static_cast<double>(height), static_cast<double>(width)) / 8.0;
}

std::vector<SampledPoint> sample_spatial(const ScoreMap& scores, size_t k, double scale) {
  check_k(k, scores.locations(), "sample_spatial");
  const size_t width = scores.fg.width();
  if (!(scale > 0.0)) scale = default_spatial_scale(scores.fg.height(), width);
  const double inv = 1.0 / (2.0 * scale * scale);
  return greedy_penalized(scores, k, [=](size_t pick, std::vector<double>& maxsim) {
    const double pr = static_cast<double>(pick / width);
    const double pc = static_cast<double>(pick % width);
    for (size_t i = 0; i < maxsim.size(); ++i) {
      const double dr = static_cast<double>(i / width) - pr;
      const double dc = static_cast<double>(i % width) - pc;
      maxsim[i] = std::max(maxsim[i], std::exp(-(dr * dr + dc * dc) * inv));
    }
  });
}

std::vector<SampledPoint> sample_top_k(const ScoreMap& scores, size_t k) {
  const size_t n = scores.locations();
  check_k(k, n, "sample_top_k");
  std::vector<size_t> order(n);
  std::iota(order.begin(), order.end(), size_t{0});
  // Clamped like the diverse sampler, so sub-zero scores tie at 0.
  auto clamped = [&scores](size_t i) { return std::max(scores.fg(i, 0), 0.0f); };
  std::stable_sort(order.begin(), order.end(),
                   [&clamped](size_t a, size_t b) { return clamped(a) > clamped(b); });
  std::vector<SampledPoint> out;
  out.reserve(k);
  for (size_t r = 0; r < k; ++r) {
    out.push_back({scores.image_id, order[r], scores.class_id, static_cast<int>(r + 1),
                   static_cast<double>(clamped(order[r])), 0});
  }
  return out;
}

std::vector<SampledPoint> sample_diverse_bg(std::span<const SampledPoint> fg_points,
                                            const FeatureGrid& f, size_t k, int image_id,
                                            uint64_t seed) {
  check_unit(f, "sample_diverse_bg");
  const size_t n = f.locations();
  std::vector<SampledPoint> out;
  out.reserve(k);

  if (fg_points.empty()) {
    check_k(k, n, "sample_diverse_bg");
    Rng rng(derive_seed(seed, static_cast<uint64_t>(image_id)));
    std::vector<size_t> locs(n);
    std::iota(locs.begin(), locs.end(), size_t{0});
    // Partial Fisher-Yates: first k slots become a uniform k-subset.
    for (size_t r = 0; r < k; ++r) {
      const size_t j = r + static_cast<size_t>(rng.below(n - r));
      std::swap(locs[r], locs[j]);
      out.push_back({image_id, locs[r], kBackgroundLabel, static_cast<int>(r + 1), 0.0,
                     kFlagRandomBackground});
    }
    return out;
  }

  image_id = fg_points.front().image;
  std::vector<bool> excluded(n, false);
  std::vector<size_t> fg_locs;
  for (const auto& p : fg_points) {
    if (p.loc >= n) throw DataError("sample_diverse_bg: foreground location out of range");
    if (!excluded[p.loc]) fg_locs.push_back(p.loc);
    excluded[p.loc] = true;
  }
  check_k(k, n - fg_locs.size(), "sample_diverse_bg");

  const Grid& z = f.grid;
  std::vector<double> maxsim(n, 0.0);
  for (size_t i = 0; i < n; ++i) {
    for (size_t loc : fg_locs) maxsim[i] = std::max(maxsim[i], abs_dot(z.at(i), z.at(loc)));
  }
  for (size_t step = 0; step < k; ++step) {
    size_t best = n;
    for (size_t i = 0; i < n; ++i) {
      if (excluded[i]) continue;
      if (best == n || maxsim[i] < maxsim[best]) best = i;
    }
    out.push_back({image_id, best, kBackgroundLabel, static_cast<int>(step + 1),
                   maxsim[best], 0});
    excluded[best] = true;
    auto zb = z.at(best);
    for (size_t i = 0; i < n; ++i) maxsim[i] = std::max(maxsim[i], abs_dot(z.at(i), zb));
  }
  return out;
}

Calibration calibrate_scores(std::span<const ScoreMap> positive_maps) {
  std::map<int, std::pair<double, size_t>> acc;
  for (const auto& m : positive_maps) {
    auto v = m.fg.values();
    auto& [sum, count] = acc[m.class_id];
    sum += *std::max_element(v.begin(), v.end());
    ++count;
  }
  Calibration cal;
  for (const auto& [cls, sc] : acc) {
    const double mean = sc.first / static_cast<double>(sc.second);
    if (!(mean > 0.0)) {
      throw NumericError("calibration: class " + std::to_string(cls) +
                         " has non-positive mean maximum score");
    }
    cal.max_mean[cls] = mean;
  }
  return cal;
}

Grid dense_pseudo_labels(std::span<const ScoreMap> maps, const Calibration& calibration,
                         double tau) {
  if (maps.empty()) throw DataError("dense_pseudo_labels: no score maps");
  std::vector<double> scale;
  for (const auto& m : maps) {
    if (m.locations() != maps.front().locations()) {
      throw ShapeError("dense_pseudo_labels: score maps differ in shape");
    }
    auto it = calibration.max_mean.find(m.class_id);
    if (it == calibration.max_mean.end()) {
      throw DataError("dense_pseudo_labels: missing calibration for class " +
                      std::to_string(m.class_id));
    }
    scale.push_back(it->second);
  }
  Grid labels(maps.front().fg.height(), maps.front().fg.width(), 1);
  for (size_t i = 0; i < labels.locations(); ++i) {
    double best = -std::numeric_limits<double>::infinity();
    int best_cls = kBackgroundLabel;
    for (size_t m = 0; m < maps.size(); ++m) {
      const double s = static_cast<double>(maps[m].fg(i, 0)) / scale[m];
      if (s > best) {
        best = s;
        best_cls = maps[m].class_id;
      }
    }
    labels(i, 0) = static_cast<float>(best < tau ? kBackgroundLabel : best_cls);
  }
  return labels;
}

std::vector<std::vector<ScoreMap>> score_dataset(
    std::span<const TrainingImage> images, const std::map<int, LocalizationModel>& models,
    int jobs) {
  std::vector<std::vector<ScoreMap>> maps(images.size());
  parallel_for(images.size(), jobs, [&](size_t i) {
    for (int cls : images[i].tags.present) {
      auto it = models.find(cls);
      if (it == models.end()) {
        throw DataError("no localization model for class " + std::to_string(cls) +
                        " (image " + std::to_string(images[i].id) + ")");
      }
      maps[i].push_back(score_image(it->second, images[i].features, images[i].id));
    }
  });
  return maps;
}

namespace {

std::vector<SampledPoint> dense_image_points(const TrainingImage& img,
                                             std::span<const ScoreMap> maps,
                                             const Calibration& cal, double tau) {
  const size_t n = img.features.locations();
  Grid labels;
  if (maps.empty()) {
    labels = Grid(img.features.grid.height(), img.features.grid.width(), 1,
                  static_cast<float>(kBackgroundLabel));
  } else {
    labels = dense_pseudo_labels(maps, cal, tau);
  }
  std::map<int, int> ranks;
  std::vector<SampledPoint> out;
  out.reserve(n);
  for (size_t i = 0; i < n; ++i) {
    const int label = static_cast<int>(labels(i, 0));
    double best = 0.0;
    for (const auto& m : maps) {
      best = std::max(best, static_cast<double>(m.fg(i, 0)) / cal.max_mean.at(m.class_id));
    }
    out.push_back({img.id, i, label, ++ranks[label], best, kFlagDense});
  }
  return out;
}

}  // namespace

std::vector<SampledPoint> sample_from_scores(std::span<const TrainingImage> images,
                                             const std::vector<std::vector<ScoreMap>>& maps,
                                             const SamplingConfig& config, int jobs) {
  config.validate();
  if (maps.size() != images.size()) throw DataError("sample_from_scores: maps/images mismatch");

  Calibration cal;
  if (config.strategy == Strategy::kDense) {
    std::vector<ScoreMap> flat;
    for (const auto& per_image : maps) flat.insert(flat.end(), per_image.begin(), per_image.end());
    cal = calibrate_scores(flat);
  }

  std::vector<std::vector<SampledPoint>> per_image(images.size());
  parallel_for(images.size(), jobs, [&](size_t idx) {
    const TrainingImage& img = images[idx];
    if (maps[idx].size() != img.tags.present.size()) {
      throw DataError("image " + std::to_string(img.id) + ": score maps do not match tags");
    }
    auto& out = per_image[idx];
    if (config.strategy == Strategy::kDense) {
      out = dense_image_points(img, maps[idx], cal, config.tau);
      return;
    }
    for (const ScoreMap& m : maps[idx]) {
      std::vector<SampledPoint> fg;
      switch (config.strategy) {
        case Strategy::kDiverse:
          fg = sample_diverse_fg(m, img.features, config.k);
          break;
        case Strategy::kTopK:
          fg = sample_top_k(m, config.k);
          break;
        case Strategy::kSpatial:
          fg = sample_spatial(m, config.k, config.spatial_scale);
          break;
        case Strategy::kDense:
          break;
      }
      out.insert(out.end(), fg.begin(), fg.end());
    }
    const std::vector<SampledPoint> fg_all = out;
    const auto bg = sample_diverse_bg(fg_all, img.features, config.k, img.id, config.seed);
    out.insert(out.end(), bg.begin(), bg.end());
  });

  std::vector<SampledPoint> all;
  for (auto& v : per_image) all.insert(all.end(), v.begin(), v.end());
  return all;
}

std::vector<SampledPoint> build_supervision_set(
    std::span<const TrainingImage> images, const std::map<int, LocalizationModel>& models,
    const SamplingConfig& config, int jobs) {
  config.validate();
  const auto maps = score_dataset(images, models, jobs);
  return sample_from_scores(images, maps, config, jobs);
}

}  // namespace divseg
