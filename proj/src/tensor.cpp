#include "divseg/tensor.hpp"

#include <algorithm>

namespace divseg {

std::string to_string(NormState state) {
  switch (state) {
    case NormState::kRaw:
      return "raw";
    case NormState::kStandardized:
      return "standardized";
    case NormState::kUnit:
      return "unit";
  }
  return "unknown";
}

size_t NormStats::clamped_count() const {
  return static_cast<size_t>(
      std::count_if(stddev.begin(), stddev.end(),
                    [this](float s) { return s < epsilon; }));
}

NormStats compute_norm_stats(std::span<const FeatureGrid> features) {
  if (features.empty()) throw DataError("compute_norm_stats: no feature grids");
  const size_t depth = features.front().depth();
  for (const auto& f : features) {
    if (f.depth() != depth) {
      throw ShapeError("compute_norm_stats: mismatched feature depths " +
                       std::to_string(depth) + " vs " +
                       std::to_string(f.depth()));
    }
  }

  // Two passes in double: mean first, then centered second moment.
  std::vector<double> sum(depth, 0.0);
  double count = 0.0;
  for (const auto& f : features) {
    for (size_t i = 0; i < f.locations(); ++i) {
      auto v = f.grid.at(i);
      for (size_t d = 0; d < depth; ++d) sum[d] += v[d];
    }
    count += static_cast<double>(f.locations());
  }
  std::vector<double> mean(depth);
  for (size_t d = 0; d < depth; ++d) mean[d] = sum[d] / count;

  std::vector<double> sq(depth, 0.0);
  for (const auto& f : features) {
    for (size_t i = 0; i < f.locations(); ++i) {
      auto v = f.grid.at(i);
      for (size_t d = 0; d < depth; ++d) {
        const double c = v[d] - mean[d];
        sq[d] += c * c;
      }
    }
  }

  NormStats stats;
  stats.mean.resize(depth);
  stats.stddev.resize(depth);
  for (size_t d = 0; d < depth; ++d) {
    stats.mean[d] = static_cast<float>(mean[d]);
    stats.stddev[d] = static_cast<float>(std::sqrt(sq[d] / count));
  }
  return stats;
}

size_t l2_normalize_locations(Grid& g) {
  size_t zeros = 0;
  for (size_t i = 0; i < g.locations(); ++i) {
    auto v = g.at(i);
    double ss = 0.0;
    for (float x : v) ss += static_cast<double>(x) * x;
    if (ss == 0.0) {
      ++zeros;
      continue;
    }
    const double inv = 1.0 / std::sqrt(ss);
    for (float& x : v) x = static_cast<float>(x * inv);
  }
  return zeros;
}

FeatureGrid normalize_features(const FeatureGrid& f, const NormStats& stats) {
  if (f.state != NormState::kRaw) {
    throw DataError("normalize_features: input already " + to_string(f.state));
  }
  if (f.depth() != stats.depth()) {
    throw ShapeError("normalize_features: feature depth " +
                     std::to_string(f.depth()) + " but stats depth " +
                     std::to_string(stats.depth()));
  }
  const size_t depth = f.depth();
  FeatureGrid out;
  out.grid = Grid(f.grid.height(), f.grid.width(), depth);
  std::vector<double> z(depth);
  for (size_t i = 0; i < f.locations(); ++i) {
    auto in = f.grid.at(i);
    double ss = 0.0;
    for (size_t d = 0; d < depth; ++d) {
      const double divisor =
          std::max(static_cast<double>(stats.stddev[d]),
                   static_cast<double>(stats.epsilon));
      z[d] = (static_cast<double>(in[d]) - stats.mean[d]) / divisor;
      ss += z[d] * z[d];
    }
    auto o = out.grid.at(i);
    if (ss == 0.0) {
      ++out.zero_vectors;
      continue;
    }
    const double inv = 1.0 / std::sqrt(ss);
    for (size_t d = 0; d < depth; ++d) o[d] = static_cast<float>(z[d] * inv);
  }
  if (!all_finite(out.grid)) {
    throw NumericError("normalize_features: non-finite output");
  }
  out.state = NormState::kUnit;
  return out;
}

}  // namespace divseg
