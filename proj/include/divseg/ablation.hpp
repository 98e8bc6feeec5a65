#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "divseg/pipeline.hpp"

namespace divseg {

struct AblationVariant {
  PoolingMode pooling = PoolingMode::kGlobal;
  Strategy strategy = Strategy::kDiverse;
  size_t k = 20;

  std::string name() const;
  bool operator==(const AblationVariant&) const = default;
};

struct AblationGrid {
  PipelineConfig base;
  std::vector<AblationVariant> variants;
  std::vector<uint64_t> seeds;
  // Relative band for the k-robustness check.
  double k_band = 0.25;
};

/// Pooling comparison, strategy comparison at k = 20 and the k sweep
/// {5, 10, 20, 50} for the diverse sampler, over seeds 1..n_seeds.
AblationGrid default_ablation_grid(const PipelineConfig& base, size_t n_seeds);

/// {"pooling": [...], "strategy": [...], "k": [...], "seeds": n | [..],
///  "base": {config}} expands to the full cross product. A "variants" list
/// of {pooling, strategy, k} objects replaces the cross product.
AblationGrid ablation_grid_from_json(const nlohmann::json& j, const PipelineConfig& base);

struct AblationRow {
  AblationVariant variant;
  std::vector<EvalReport> reports;  // one per seed, in grid.seeds order
  double median_miou = 0.0;
  double train_seg_seconds = 0.0;  // slowest segmentation training
};

struct KBand {
  PoolingMode pooling = PoolingMode::kGlobal;
  size_t best_k = 0;
  double best_miou = 0.0;
  std::vector<size_t> violations;  // k values below (1 - band) * best
};

struct AblationTable {
  std::vector<uint64_t> seeds;
  std::vector<AblationRow> rows;
  std::vector<KBand> k_bands;  // one per pooling mode with >= 2 diverse k values
  double k_band = 0.25;

  const AblationRow* find(const AblationVariant& v) const;
  nlohmann::json to_json() const;
  std::string to_text() const;
};

/// Median of a nonempty list (mean of the two middle values when even).
double median(std::vector<double> values);

/// Runs every variant for every seed. Per seed the benchmark is built once
/// and localizers are trained once per pooling mode; sampling, segmentation
/// training and evaluation run per variant.
AblationTable ablation_run(const AblationGrid& grid);

}  // namespace divseg
