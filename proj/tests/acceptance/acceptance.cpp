// Acceptance checks: one PASS/FAIL line per criterion, nonzero exit on any
// failure. Run from the build tree; scratch data goes to the system temp dir.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "divseg/ablation.hpp"
#include "divseg/checkpoint.hpp"
#include "divseg/dataset_io.hpp"
#include "divseg/nn.hpp"
#include "divseg/pipeline.hpp"
#include "divseg/sampling.hpp"
#include "divseg/system.hpp"
#include "support/oracles.hpp"

using namespace divseg;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

int failures = 0;

void report(int id, const std::string& name, bool pass, const std::string& detail) {
  std::printf("[%s] %2d %s: %s\n", pass ? "PASS" : "FAIL", id, name.c_str(), detail.c_str());
  std::fflush(stdout);
  failures += pass ? 0 : 1;
}

// Runs a check, turning an escaped exception into a failure line.
void check(int id, const std::string& name, const std::function<std::pair<bool, std::string>()>& fn) {
  try {
    const auto [pass, detail] = fn();
    report(id, name, pass, detail);
  } catch (const std::exception& e) {
    report(id, name, false, std::string("exception: ") + e.what());
  }
}

std::vector<size_t> locs(const std::vector<SampledPoint>& pts) {
  std::vector<size_t> out;
  for (const auto& p : pts) out.push_back(p.loc);
  return out;
}

template <typename Picks>
bool same_picks(const std::vector<SampledPoint>& got, const Picks& want, double tol) {
  if (got.size() != want.size()) return false;
  for (size_t r = 0; r < got.size(); ++r) {
    if (got[r].loc != want[r].loc || std::abs(got[r].value - want[r].value) > tol) return false;
  }
  return true;
}

ScoreMap row_scores(std::vector<float> s) {
  const size_t n = s.size();
  return {0, 0, Grid(1, n, 1, std::move(s)), Grid(1, n, 1)};
}

FeatureGrid row_features(const std::vector<std::vector<float>>& z) {
  std::vector<float> flat;
  for (const auto& v : z) flat.insert(flat.end(), v.begin(), v.end());
  return {Grid(1, z.size(), z.front().size(), std::move(flat)), NormState::kUnit, 0};
}

std::pair<bool, std::string> oracle_equivalence() {
  Rng rng(2024);
  const auto t0 = Clock::now();
  size_t mismatches = 0, instances = 0, max_n = 0;
  for (; instances < 200; ++instances) {
    // Up to 22 x 22 = 484 locations.
    const auto inst = oracle::random_instance(rng, 22, 32, 32);
    max_n = std::max(max_n, inst.features.locations());
    const auto fg = sample_diverse_fg(inst.scores, inst.features, inst.k);
    mismatches += !same_picks(fg, oracle::diverse_fg(inst.scores.fg, inst.features.grid, inst.k),
                              1e-9);
    const double scale = 0.5 + 3.0 * rng.uniform();
    mismatches += !same_picks(sample_spatial(inst.scores, inst.k, scale),
                              oracle::spatial_fg(inst.scores.fg, inst.k, scale), 1e-9);
    const size_t free = inst.features.locations() - fg.size();
    if (free > 0) {
      const size_t kb = 1 + rng.below(std::min<size_t>(free, 32));
      mismatches += !same_picks(sample_diverse_bg(fg, inst.features, kb),
                                oracle::diverse_bg(locs(fg), inst.features.grid, kb), 1e-6);
    }
  }
  const double secs = seconds_since(t0);
  return {mismatches == 0 && secs < 30.0,
          fmt::format("{} instances (N <= {}), {} mismatches, {:.1f} s", instances, max_n,
                      mismatches, secs)};
}

std::pair<bool, std::string> hand_traces() {
  bool ok = true;
  const auto two = sample_diverse_fg(row_scores({1.0f, 0.9f, 0.5f}),
                                     row_features({{1, 0}, {1, 0}, {0, 1}}), 2);
  ok &= locs(two) == std::vector<size_t>{0, 2};
  const auto three = sample_diverse_fg(row_scores({1.0f, 0.9f, 0.5f}),
                                       row_features({{1, 0}, {0.8f, 0.6f}, {0, 1}}), 3);
  ok &= locs(three) == std::vector<size_t>{0, 2, 1};
  const double want[3] = {1.0, 0.5, 0.18};
  for (size_t r = 0; r < three.size() && r < 3; ++r) ok &= std::abs(three[r].value - want[r]) < 1e-6;
  const float h = std::sqrt(0.5f);
  const std::vector<SampledPoint> fg = {{0, 3, 0, 1, 1.0, 0}};
  const auto bg = sample_diverse_bg(fg, row_features({{1, 0}, {0, 1}, {h, h}, {1, 0}}), 2);
  ok &= locs(bg) == std::vector<size_t>{1, 2};
  if (bg.size() == 2) {
    ok &= std::abs(bg[0].value) < 1e-6 && std::abs(bg[1].value - std::sqrt(0.5)) < 1e-6;
  }
  return {ok, "fg [0,2], fg [0,2,1] with values (1, 0.5, 0.18), bg [1,2] with (0, 0.7071)"};
}

std::pair<bool, std::string> monotonicity() {
  Rng rng(77);
  size_t violations = 0;
  for (int i = 0; i < 500; ++i) {
    const auto inst = oracle::random_instance(rng, 16, 16, 24);
    const auto fg = sample_diverse_fg(inst.scores, inst.features, inst.k);
    for (size_t r = 1; r < fg.size(); ++r) violations += fg[r].value > fg[r - 1].value;
    const size_t free = inst.features.locations() - fg.size();
    if (free == 0) continue;
    const auto bg = sample_diverse_bg(fg, inst.features, std::min<size_t>(free, inst.k));
    for (size_t r = 1; r < bg.size(); ++r) violations += bg[r].value < bg[r - 1].value;
  }
  return {violations == 0, fmt::format("500 instances, {} violations", violations)};
}

// Random two-layer net on a random grid, redrawn until the pooled argmaxes
// are clear and no pooled hidden unit sits at a ReLU kink.
struct PooledCase {
  BasicGrid<double> x;
  TwoLayerNet<double> net;
  int label = 0;
};

double pooled_loss(const PooledCase& c, const TwoLayerNet<double>& net, PoolingMode mode,
                   TwoLayerGrad* grad, bool* well_posed = nullptr) {
  BasicGrid<double> pre;
  const BasicGrid<double> out = net.forward(c.x, &pre);
  std::vector<double> fg, bg, diff;
  for (size_t i = 0; i < out.locations(); ++i) {
    fg.push_back(out(i, 0));
    bg.push_back(out(i, 1));
    diff.push_back(out(i, 0) - out(i, 1));
  }
  const PooledLoss l = bce_loss_and_grad(pool_scores<double>(mode, fg, bg), c.label);
  if (well_posed) {
    auto gap = [](std::vector<double> v) {
      std::sort(v.rbegin(), v.rend());
      return v.size() < 2 ? 1.0 : v[0] - v[1];
    };
    bool ok = (mode == PoolingMode::kGlobal ? std::min(gap(fg), gap(bg)) : gap(diff)) > 1e-2;
    for (size_t loc : {l.fg_loc, l.bg_loc}) {
      for (double v : pre.at(loc)) ok &= std::abs(v) > 1e-3;
    }
    *well_posed = ok && !l.clamped;
  }
  if (grad) {
    const double dfg[2] = {l.d_fg, 0.0};
    const double dbg[2] = {0.0, l.d_bg};
    net.backward(c.x.at(l.fg_loc), pre.at(l.fg_loc), dfg, *grad);
    net.backward(c.x.at(l.bg_loc), pre.at(l.bg_loc), dbg, *grad);
  }
  return l.loss;
}

std::pair<bool, std::string> gradient_checks() {
  const auto t0 = Clock::now();
  Rng rng(4242);
  double worst = 0.0;
  for (int n = 0; n < 20; ++n) {
    for (PoolingMode mode : {PoolingMode::kPerPixel, PoolingMode::kGlobal}) {
      PooledCase c;
      for (bool ok = false; !ok;) {
        const size_t h = 2 + rng.below(3), w = 2 + rng.below(3), d = 3 + rng.below(4);
        c.x = BasicGrid<double>(h, w, d);
        for (double& v : c.x.values()) v = rng.normal();
        c.net = TwoLayerNet<double>(d, 4 + rng.below(5), 2);
        c.net.init(rng);
        c.label = static_cast<int>(rng.below(2));
        pooled_loss(c, c.net, mode, nullptr, &ok);
      }
      TwoLayerGrad g = c.net.make_grad();
      pooled_loss(c, c.net, mode, &g);
      const auto fd = oracle::fd_gradient(
          [&](const std::vector<double>& p) {
            TwoLayerNet<double> net = c.net;
            net.assign(p);
            return pooled_loss(c, net, mode, nullptr);
          },
          c.net.flatten());
      worst = std::max(worst, oracle::max_rel_error(g.flatten(), fd));
    }
    const size_t h = 2 + rng.below(4), w = 2 + rng.below(4), k = 2 + rng.below(4);
    std::vector<double> z(h * w * k);
    for (double& v : z) v = 2.0 * rng.normal();
    std::vector<PointLabel> labels;
    for (size_t i = 0; i < h * w; ++i) {
      if (rng.uniform() < 0.4) labels.push_back({i, rng.below(k)});
    }
    if (labels.empty()) labels.push_back({0, 0});
    const LossValue v = masked_ce_loss_and_grad(BasicGrid<double>(h, w, k, z), labels);
    const auto fd = oracle::fd_gradient(
        [&](const std::vector<double>& p) {
          return masked_ce_loss_and_grad(BasicGrid<double>(h, w, k, p), labels).loss;
        },
        z);
    worst = std::max(worst, oracle::max_rel_error(
                                std::vector<double>(v.grad.values().begin(), v.grad.values().end()),
                                fd));
  }
  const double secs = seconds_since(t0);
  return {worst < 1e-4 && secs < 60.0,
          fmt::format("20 instances x (pixel BCE, global BCE, masked CE), max rel error {:.2e}, "
                      "{:.1f} s",
                      worst, secs)};
}

std::pair<bool, std::string> pooling_identities() {
  Rng rng(5);
  double single = 0.0, shift = 0.0, symmetric = 0.0;
  for (int i = 0; i < 1000; ++i) {
    const std::vector<double> s = {rng.normal() * 4}, sb = {rng.normal() * 4};
    single = std::max(single, std::abs(pool_scores<double>(PoolingMode::kPerPixel, s, sb).prob -
                                       pool_scores<double>(PoolingMode::kGlobal, s, sb).prob));
    const size_t n = 1 + rng.below(30);
    std::vector<double> fg(n), bg(n);
    for (size_t j = 0; j < n; ++j) {
      fg[j] = rng.normal() * 3;
      bg[j] = rng.normal() * 3;
    }
    const double c = rng.normal() * 10;
    for (PoolingMode mode : {PoolingMode::kPerPixel, PoolingMode::kGlobal}) {
      const double base = pool_scores<double>(mode, fg, bg).prob;
      std::vector<double> fs = fg, bs = bg;
      for (double& v : fs) v += c;
      for (double& v : bs) v += c;
      shift = std::max(shift, std::abs(pool_scores<double>(mode, fs, bs).prob - base));
      symmetric =
          std::max(symmetric, std::abs(pool_scores<double>(mode, fg, fg).prob - 0.5));
    }
  }
  return {single <= 1e-12 && shift <= 1e-9 && symmetric == 0.0,
          fmt::format("1x1 max diff {:.1e}, shift max diff {:.1e}, S == Sbar max |p - 0.5| {:.1e}",
                      single, shift, symmetric)};
}

std::pair<bool, std::string> masked_ce_zero_gradient() {
  Rng rng(12);
  size_t nonzero = 0;
  for (int i = 0; i < 50; ++i) {
    const size_t h = 1 + rng.below(8), w = 1 + rng.below(8), k = 2 + rng.below(20);
    BasicGrid<double> z(h, w, k);
    for (double& v : z.values()) v = rng.normal() * 20;
    std::vector<bool> labeled(h * w, false);
    std::vector<PointLabel> labels;
    for (size_t j = 0; j < h * w; ++j) {
      if (rng.uniform() < 0.3) {
        labels.push_back({j, rng.below(k)});
        labeled[j] = true;
      }
    }
    const LossValue v = masked_ce_loss_and_grad(z, labels);
    for (size_t j = 0; j < h * w; ++j) {
      if (labeled[j]) continue;
      for (double g : v.grad.at(j)) {
        uint64_t bits;
        std::memcpy(&bits, &g, sizeof bits);
        nonzero += bits != 0;
      }
    }
  }
  return {nonzero == 0, fmt::format("50 instances, {} nonzero unlabeled gradient entries", nonzero)};
}

// Criteria 6-9 share one ablation run.
struct AblationOutcome {
  AblationTable table;
  double seconds = 0.0;
};

double row_median(const AblationTable& t, PoolingMode p, Strategy s, size_t k) {
  const AblationRow* r = t.find({p, s, k});
  if (!r) throw DataError("ablation row missing: " + AblationVariant{p, s, k}.name());
  return r->median_miou;
}

struct AddClassStudy {
  std::vector<double> degradations;  // per seed: median over original classes
  double max_seg_seconds = 0.0;
  bool hashes_identical = true;
  std::string detail;
};

AddClassStudy add_class_study(const fs::path& root) {
  AddClassStudy s;
  for (uint64_t seed = 1; seed <= 5; ++seed) {
    PipelineConfig c;
    c.seed = seed;
    c.data.classes = 5;
    c.data.priors = {0.4, 0.4, 0.4, 0.4, 0.0};
    const fs::path sys = root / fmt::format("system_{}", seed);
    const fs::path extra = root / fmt::format("extra_{}", seed);
    run_pipeline_to_disk(c, sys);

    PipelineConfig more = c;
    more.seed = seed + 1000;
    more.data.first_id = 100000;
    more.data.priors = {0.25, 0.25, 0.25, 0.25, 0.8};
    write_dataset(build_benchmark(more), extra);

    const AddClassOutcome o = add_class_to_system(sys, 4, extra, root / fmt::format("grown_{}", seed));
    s.hashes_identical &= !o.localizer_hashes_before.empty();
    for (const auto& [path, hash] : o.localizer_hashes_before) {
      const auto it = o.localizer_hashes_after.find(path);
      s.hashes_identical &= it != o.localizer_hashes_after.end() && it->second == hash;
    }
    s.max_seg_seconds = std::max(s.max_seg_seconds, o.result.segmentation.seconds);
    std::vector<double> drops;
    for (size_t cls = 0; cls < 4; ++cls) {
      const auto& b = o.before.per_class_iou[cls];
      const auto& a = o.after.per_class_iou[cls];
      if (b && a) drops.push_back(*b - *a);
    }
    s.degradations.push_back(median(drops));
    spdlog::info("add-class seed {}: mIoU {:.4f} -> {:.4f}, median class drop {:.4f}", seed,
                 o.before.miou, o.after.miou, s.degradations.back());
  }
  return s;
}

}  // namespace

int main() {
  spdlog::set_level(spdlog::level::warn);
  const fs::path scratch = fs::temp_directory_path() / "divseg_acceptance";
  fs::remove_all(scratch);
  fs::create_directories(scratch);

  check(1, "sampler matches naive oracles", oracle_equivalence);
  check(2, "sampler hand traces", hand_traces);
  check(3, "sampler value monotonicity", monotonicity);
  check(4, "finite-difference gradient checks", gradient_checks);
  check(5, "pooling identities", pooling_identities);

  AblationOutcome ab;
  bool ablation_ok = false;
  std::string ablation_error;
  try {
    const auto t0 = Clock::now();
    ab.table = ablation_run(default_ablation_grid(PipelineConfig{}, 5));
    ab.seconds = seconds_since(t0);
    ablation_ok = true;
    std::printf("%s", ab.table.to_text().c_str());
  } catch (const std::exception& e) {
    ablation_error = e.what();
  }
  auto need_ablation = [&] {
    if (!ablation_ok) throw std::runtime_error("ablation failed: " + ablation_error);
  };

  check(6, "diverse sampling beats top-k and dense", [&] {
    need_ablation();
    const auto& t = ab.table;
    const double div = row_median(t, PoolingMode::kGlobal, Strategy::kDiverse, 20);
    const double top = row_median(t, PoolingMode::kGlobal, Strategy::kTopK, 20);
    const double den = row_median(t, PoolingMode::kGlobal, Strategy::kDense, 20);
    return std::pair{div - top >= 0.03 && div - den >= 0.03 && ab.seconds <= 1800.0,
                     fmt::format("median mIoU diverse {:.4f}, top-k {:.4f}, dense {:.4f}; "
                                 "5 seeds in {:.0f} s",
                                 div, top, den, ab.seconds)};
  });
  check(7, "global pooling at least per-pixel", [&] {
    need_ablation();
    const double g = row_median(ab.table, PoolingMode::kGlobal, Strategy::kDiverse, 20);
    const double p = row_median(ab.table, PoolingMode::kPerPixel, Strategy::kDiverse, 20);
    return std::pair{g >= p, fmt::format("global {:.4f}, pixel {:.4f}", g, p)};
  });
  check(8, "k robustness band", [&] {
    need_ablation();
    double best = 0.0;
    std::string vals;
    std::vector<double> m;
    for (size_t k : {5, 10, 20, 50}) {
      m.push_back(row_median(ab.table, PoolingMode::kGlobal, Strategy::kDiverse, k));
      best = std::max(best, m.back());
      vals += fmt::format("{}k={} {:.4f}", vals.empty() ? "" : ", ", k, m.back());
    }
    const bool ok = std::all_of(m.begin(), m.end(), [&](double v) { return v >= 0.75 * best; });
    return std::pair{ok, vals};
  });

  AddClassStudy study;
  bool study_ok = false;
  std::string study_error;
  try {
    study = add_class_study(scratch / "add_class");
    study_ok = true;
  } catch (const std::exception& e) {
    study_error = e.what();
  }

  check(9, "segmentation training time", [&] {
    need_ablation();
    if (!study_ok) throw std::runtime_error("add-class study failed: " + study_error);
    double slowest = 0.0;
    for (const auto& r : ab.table.rows) slowest = std::max(slowest, r.train_seg_seconds);
    return std::pair{slowest < 60.0 && study.max_seg_seconds < 60.0,
                     fmt::format("slowest train-seg {:.1f} s, after add-class {:.1f} s", slowest,
                                 study.max_seg_seconds)};
  });
  check(10, "add-class keeps old localizers and accuracy", [&] {
    if (!study_ok) throw std::runtime_error("add-class study failed: " + study_error);
    const double med = median(study.degradations);
    std::string per;
    for (double d : study.degradations) per += fmt::format("{}{:.4f}", per.empty() ? "" : ", ", d);
    return std::pair{study.hashes_identical && med < 0.05,
                     fmt::format("checkpoints {}; median IoU drop {:.4f} (per seed: {})",
                                 study.hashes_identical ? "byte-identical" : "CHANGED", med, per)};
  });
  check(11, "end-to-end determinism", [&] {
    PipelineConfig c;
    c.seed = 11;
    const RunSummary a = run_pipeline_to_disk(c, scratch / "det_a");
    const RunSummary b = run_pipeline_to_disk(c, scratch / "det_b");
    const bool same_report = read_json_file(scratch / "det_a" / "report.json") ==
                             read_json_file(scratch / "det_b" / "report.json");
    return std::pair{same_report && a.artifact_hashes == b.artifact_hashes,
                     fmt::format("{} artifacts, report {}", a.artifact_hashes.size(),
                                 same_report ? "identical" : "DIFFERS")};
  });
  check(12, "masked cross-entropy ignores unlabeled locations", masked_ce_zero_gradient);

  fs::remove_all(scratch);
  std::printf("%s\n", failures == 0 ? "all criteria passed" : fmt::format("{} criteria failed", failures).c_str());
  return failures == 0 ? 0 : 1;
}
