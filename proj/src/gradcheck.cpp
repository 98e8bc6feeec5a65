#include "divseg/gradcheck.hpp"

#include <algorithm>

namespace divseg {
namespace {

using Grid64 = BasicGrid<double>;

Grid64 random_grid(Rng& rng, size_t h, size_t w, size_t d, double scale) {
  Grid64 g(h, w, d);
  for (double& v : g.values()) v = rng.uniform(-scale, scale);
  return g;
}

// Gap between the best and second-best value.
double top_gap(std::span<const double> v) {
  if (v.size() < 2) return 1.0;
  std::vector<double> s(v.begin(), v.end());
  std::partial_sort(s.begin(), s.begin() + 2, s.end(), std::greater<>());
  return s[0] - s[1];
}

struct PooledProblem {
  Grid64 x;
  TwoLayerNet<double> net;
  int label = 0;
};

// Rejects draws whose argmaxes are near-ties or whose pooled locations sit
// near a ReLU kink, where finite differences are meaningless.
bool well_posed(const PooledProblem& p, PoolingMode mode) {
  Grid64 pre;
  const Grid64 out = p.net.forward(p.x, &pre);
  std::vector<double> fg(out.locations()), bg(out.locations()), diff(out.locations());
  for (size_t i = 0; i < out.locations(); ++i) {
    fg[i] = out(i, 0);
    bg[i] = out(i, 1);
    diff[i] = fg[i] - bg[i];
  }
  const double gap = mode == PoolingMode::kGlobal ? std::min(top_gap(fg), top_gap(bg))
                                                  : top_gap(diff);
  if (gap < 1e-2) return false;
  const PoolingTrace t = pool_scores<double>(mode, fg, bg);
  for (size_t loc : {t.fg_loc, t.bg_loc}) {
    for (double v : pre.at(loc)) {
      if (std::abs(v) < 1e-3) return false;
    }
  }
  return std::abs(t.logit) < 8.0;
}

PooledProblem draw_pooled(Rng& rng, PoolingMode mode) {
  for (;;) {
    const size_t h = 2 + rng.below(3), w = 2 + rng.below(3), d = 3 + rng.below(4);
    PooledProblem p{random_grid(rng, h, w, d, 1.0), TwoLayerNet<double>(d, 4 + rng.below(4), 2),
                    static_cast<int>(rng.below(2))};
    p.net.init(rng);
    for (double& b : p.net.hidden.bias) b = rng.uniform(-0.1, 0.1);
    if (well_posed(p, mode)) return p;
  }
}

LossFunction pooled_loss(const PooledProblem& p, PoolingMode mode) {
  return [p, mode](std::span<const double> params, std::span<double> grad) {
    TwoLayerNet<double> net = p.net;
    net.assign(params);
    Grid64 pre;
    const Grid64 out = net.forward(p.x, &pre);
    std::vector<double> fg(out.locations()), bg(out.locations());
    for (size_t i = 0; i < out.locations(); ++i) {
      fg[i] = out(i, 0);
      bg[i] = out(i, 1);
    }
    const PooledLoss loss = bce_loss_and_grad(pool_scores<double>(mode, fg, bg), p.label);
    if (!grad.empty()) {
      TwoLayerGrad g = net.make_grad();
      const double dfg[2] = {loss.d_fg, 0.0};
      const double dbg[2] = {0.0, loss.d_bg};
      net.backward(p.x.at(loss.fg_loc), pre.at(loss.fg_loc), dfg, g);
      net.backward(p.x.at(loss.bg_loc), pre.at(loss.bg_loc), dbg, g);
      const auto flat = g.flatten();
      std::copy(flat.begin(), flat.end(), grad.begin());
    }
    return loss.loss;
  };
}

}  // namespace

double GradCheckSuite::max_rel_error() const {
  double m = 0.0;
  for (const auto& c : cases) m = std::max(m, c.result.max_rel_error);
  return m;
}

GradCheckSuite run_gradient_checks(uint64_t seed, size_t instances) {
  GradCheckSuite suite;
  for (size_t n = 0; n < instances; ++n) {
    Rng rng(derive_seed(seed, n));
    for (PoolingMode mode : {PoolingMode::kPerPixel, PoolingMode::kGlobal}) {
      const PooledProblem p = draw_pooled(rng, mode);
      const auto params = p.net.flatten();
      Rng pick = rng.derive(1);
      suite.cases.push_back({mode == PoolingMode::kGlobal ? "global_bce" : "pixel_bce", n,
                             grad_check(pooled_loss(p, mode), params, pick, params.size())});
    }

    const size_t h = 2 + rng.below(4), w = 2 + rng.below(4), c = 2 + rng.below(4);
    const Grid64 logits = random_grid(rng, h, w, c, 3.0);
    std::vector<PointLabel> labels;
    for (size_t i = 0; i < logits.locations(); ++i) {
      if (rng.uniform() < 0.4) labels.push_back({i, rng.below(c)});
    }
    if (labels.empty()) labels.push_back({0, 0});
    const LossFunction ce = [&](std::span<const double> params, std::span<double> grad) {
      Grid64 z(h, w, c);
      std::copy(params.begin(), params.end(), z.values().begin());
      const LossValue v = masked_ce_loss_and_grad(z, labels);
      if (!grad.empty()) std::copy(v.grad.values().begin(), v.grad.values().end(), grad.begin());
      return v.loss;
    };
    const std::vector<double> flat(logits.values().begin(), logits.values().end());
    Rng pick = rng.derive(2);
    suite.cases.push_back({"masked_ce", n, grad_check(ce, flat, pick, flat.size())});
  }
  return suite;
}

}  // namespace divseg
