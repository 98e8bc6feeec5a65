#include "divseg/ablation.hpp"

#include <algorithm>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "divseg/parallel.hpp"

namespace divseg {

std::string AblationVariant::name() const {
  return fmt::format("{}/{}/k={}", to_string(pooling), to_string(strategy), k);
}

AblationGrid default_ablation_grid(const PipelineConfig& base, size_t n_seeds) {
  AblationGrid g;
  g.base = base;
  using enum Strategy;
  const auto global = PoolingMode::kGlobal;
  g.variants = {
      {global, kDiverse, 20}, {global, kTopK, 20},    {global, kSpatial, 20},
      {global, kDense, 20},   {PoolingMode::kPerPixel, kDiverse, 20},
      {global, kDiverse, 5},  {global, kDiverse, 10}, {global, kDiverse, 50},
  };
  for (size_t s = 1; s <= n_seeds; ++s) g.seeds.push_back(s);
  return g;
}

AblationGrid ablation_grid_from_json(const nlohmann::json& j, const PipelineConfig& base) {
  if (!j.is_object()) throw ConfigError("ablation grid must be a JSON object");
  AblationGrid g;
  g.base = j.contains("base") ? pipeline_config_from_json(j.at("base")) : base;
  try {
    if (j.contains("variants")) {
      for (const auto& v : j.at("variants")) {
        g.variants.push_back({parse_pooling(v.value("pooling", std::string("global"))),
                              parse_strategy(v.value("strategy", std::string("diverse"))),
                              v.value("k", size_t{20})});
      }
    } else {
      const auto poolings = j.value("pooling", std::vector<std::string>{"global"});
      const auto strategies = j.value("strategy", std::vector<std::string>{"diverse"});
      const auto ks = j.value("k", std::vector<size_t>{20});
      for (const auto& p : poolings) {
        for (const auto& s : strategies) {
          for (size_t k : ks) g.variants.push_back({parse_pooling(p), parse_strategy(s), k});
        }
      }
    }
    if (j.contains("seeds")) {
      const auto& s = j.at("seeds");
      if (s.is_array()) {
        g.seeds = s.get<std::vector<uint64_t>>();
      } else {
        for (uint64_t i = 1; i <= s.get<uint64_t>(); ++i) g.seeds.push_back(i);
      }
    } else {
      g.seeds = {1, 2, 3, 4, 5};
    }
    g.k_band = j.value("k_band", 0.25);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("bad ablation grid: ") + e.what());
  }
  if (g.variants.empty() || g.seeds.empty()) {
    throw ConfigError("ablation grid needs at least one variant and one seed");
  }
  return g;
}

const AblationRow* AblationTable::find(const AblationVariant& v) const {
  for (const auto& r : rows) {
    if (r.variant == v) return &r;
  }
  return nullptr;
}

double median(std::vector<double> values) {
  if (values.empty()) throw DataError("median of an empty list");
  std::sort(values.begin(), values.end());
  const size_t n = values.size();
  return n % 2 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

AblationTable ablation_run(const AblationGrid& grid) {
  if (grid.variants.empty() || grid.seeds.empty()) {
    throw ConfigError("ablation grid needs at least one variant and one seed");
  }
  for (const auto& v : grid.variants) {
    PipelineConfig c = grid.base;
    c.localizer.pooling = v.pooling;
    c.sampling.strategy = v.strategy;
    c.sampling.k = v.k;
    c.validate();
  }
  const int jobs = resolve_jobs(grid.base.jobs);

  AblationTable table;
  table.seeds = grid.seeds;
  table.k_band = grid.k_band;
  for (const auto& v : grid.variants) table.rows.push_back({v, {}, 0.0, 0.0});

  std::vector<PoolingMode> poolings;
  for (const auto& v : grid.variants) {
    if (std::find(poolings.begin(), poolings.end(), v.pooling) == poolings.end()) {
      poolings.push_back(v.pooling);
    }
  }

  for (uint64_t seed : grid.seeds) {
    PipelineConfig seed_config = grid.base;
    seed_config.seed = seed;
    const Benchmark bench = build_benchmark(seed_config);
    for (PoolingMode pooling : poolings) {
      LocalizerConfig lc = grid.base.localizer;
      lc.pooling = pooling;
      const auto trained = train_all_localizers(bench.train, bench.scenes.num_classes, lc,
                                                seed, jobs);
      std::map<int, LocalizationModel> models;
      std::vector<int> classes;
      for (const auto& [cls, t] : trained) {
        models.emplace(cls, t.model);
        classes.push_back(cls);
      }
      const auto maps = score_dataset(bench.train, models, jobs);

      for (auto& row : table.rows) {
        if (row.variant.pooling != pooling) continue;
        SamplingConfig sc = grid.base.sampling;
        sc.strategy = row.variant.strategy;
        sc.k = row.variant.k;
        sc.seed = stage_seed(seed, Stage::kSampling);
        const auto points = sample_from_scores(bench.train, maps, sc, jobs);

        SegmentationConfig seg = grid.base.segmentation;
        seg.seed = stage_seed(seed, Stage::kSegmentation);
        const auto training =
            train_segmentation(points, bench.train_features, classes, bench.stats, seg);
        row.train_seg_seconds = std::max(row.train_seg_seconds, training.seconds);

        EvalReport report = evaluate(training.model, bench.test, bench.test_features,
                                     bench.scenes.num_classes);
        report.config = {{"strategy", to_string(sc.strategy)},
                         {"k", sc.k},
                         {"pooling", to_string(pooling)},
                         {"seed", seed}};
        spdlog::info("ablation seed {} {}: mIoU {:.4f}", seed, row.variant.name(), report.miou);
        row.reports.push_back(std::move(report));
      }
    }
  }

  for (auto& row : table.rows) {
    std::vector<double> m;
    for (const auto& r : row.reports) m.push_back(r.miou);
    row.median_miou = median(m);
  }

  for (PoolingMode pooling : poolings) {
    std::vector<const AblationRow*> sweep;
    for (const auto& row : table.rows) {
      if (row.variant.pooling == pooling && row.variant.strategy == Strategy::kDiverse) {
        sweep.push_back(&row);
      }
    }
    if (sweep.size() < 2) continue;
    KBand band;
    band.pooling = pooling;
    for (const auto* r : sweep) {
      if (r->median_miou > band.best_miou || band.best_k == 0) {
        band.best_miou = r->median_miou;
        band.best_k = r->variant.k;
      }
    }
    for (const auto* r : sweep) {
      if (r->median_miou < (1.0 - grid.k_band) * band.best_miou) {
        band.violations.push_back(r->variant.k);
      }
    }
    table.k_bands.push_back(band);
  }
  return table;
}

nlohmann::json AblationTable::to_json() const {
  nlohmann::json rows_json = nlohmann::json::array();
  for (const auto& r : rows) {
    nlohmann::json per_seed = nlohmann::json::array();
    for (const auto& rep : r.reports) per_seed.push_back(rep.to_json());
    rows_json.push_back({{"pooling", to_string(r.variant.pooling)},
                         {"strategy", to_string(r.variant.strategy)},
                         {"k", r.variant.k},
                         {"median_miou", r.median_miou},
                         {"runs", per_seed}});
  }
  nlohmann::json bands = nlohmann::json::array();
  for (const auto& b : k_bands) {
    bands.push_back({{"pooling", to_string(b.pooling)},
                     {"best_k", b.best_k},
                     {"best_median_miou", b.best_miou},
                     {"relative_band", k_band},
                     {"violations", b.violations},
                     {"band_violated", !b.violations.empty()}});
  }
  return {{"seeds", seeds}, {"rows", rows_json}, {"k_robustness", bands}};
}

std::string AblationTable::to_text() const {
  std::string out = fmt::format("{:<8} {:<8} {:>4} {:>8}", "pooling", "strategy", "k", "median");
  for (uint64_t s : seeds) out += fmt::format(" {:>8}", fmt::format("seed{}", s));
  out += '\n';
  for (const auto& r : rows) {
    out += fmt::format("{:<8} {:<8} {:>4} {:>8.4f}", to_string(r.variant.pooling),
                       to_string(r.variant.strategy), r.variant.k, r.median_miou);
    for (const auto& rep : r.reports) out += fmt::format(" {:>8.4f}", rep.miou);
    out += '\n';
  }
  for (const auto& b : k_bands) {
    out += fmt::format("k sweep ({}): best k={} median {:.4f}; ", to_string(b.pooling), b.best_k,
                       b.best_miou);
    if (b.violations.empty()) {
      out += fmt::format("all k within {:.0f}%\n", k_band * 100);
    } else {
      std::string ks;
      for (size_t k : b.violations) ks += fmt::format("{}{}", ks.empty() ? "" : ",", k);
      out += fmt::format("BAND VIOLATED for k={} (more than {:.0f}% below best)\n", ks,
                         k_band * 100);
    }
  }
  return out;
}

}  // namespace divseg
