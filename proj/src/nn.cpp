#include "divseg/nn.hpp"

#include <atomic>
#include <numeric>

#include <spdlog/spdlog.h>

namespace divseg {
namespace {

std::atomic<size_t> g_clamp_events{0};

double softplus(double x) {
  return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

}  // namespace

std::string to_string(PoolingMode mode) {
  return mode == PoolingMode::kGlobal ? "global" : "pixel";
}

PoolingMode parse_pooling(std::string_view name) {
  if (name == "global") return PoolingMode::kGlobal;
  if (name == "pixel" || name == "per_pixel") return PoolingMode::kPerPixel;
  throw ConfigError("unknown pooling mode '" + std::string(name) + "'");
}

std::vector<double> TwoLayerGrad::flatten() const {
  std::vector<double> out;
  out.reserve(w1.size() + b1.size() + w2.size() + b2.size());
  for (const auto* v : {&w1, &b1, &w2, &b2}) out.insert(out.end(), v->begin(), v->end());
  return out;
}

double stable_sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

double bce_loss(double p, int label) {
  const double pc = std::clamp(p, kProbClamp, 1.0 - kProbClamp);
  return label ? -std::log(pc) : -std::log1p(-pc);
}

PooledLoss bce_loss_and_grad(const PoolingTrace& trace, int label) {
  if (!std::isfinite(trace.logit)) throw NumericError("pooled logit is not finite");
  // Clamping p to [eps, 1-eps] is clamping the logit to +-log((1-eps)/eps).
  static const double kLogitBound = std::log((1.0 - kProbClamp) / kProbClamp);
  PooledLoss out;
  const double z = std::clamp(trace.logit, -kLogitBound, kLogitBound);
  out.clamped = z != trace.logit;
  if (out.clamped) {
    const size_t n = ++g_clamp_events;
    spdlog::debug("bce: probability clamped (logit {:.3f}), {} events so far",
                  trace.logit, n);
  }
  out.loss = label ? softplus(-z) : softplus(z);
  const double d = trace.prob - (label ? 1.0 : 0.0);
  out.fg_loc = trace.fg_loc;
  out.bg_loc = trace.bg_loc;
  out.d_fg = d;
  out.d_bg = -d;
  return out;
}

size_t clamp_event_count() { return g_clamp_events.load(); }

GradCheckResult grad_check(const LossFunction& loss_fn, std::span<const double> params,
                           Rng& rng, size_t sample, double step) {
  std::vector<double> x(params.begin(), params.end());
  std::vector<double> analytic(x.size(), 0.0);
  const double base = loss_fn(x, analytic);
  if (!std::isfinite(base)) throw NumericError("grad_check: loss is not finite");

  std::vector<size_t> coords(x.size());
  std::iota(coords.begin(), coords.end(), size_t{0});
  if (coords.size() > sample) {
    rng.shuffle(std::span<size_t>(coords));
    coords.resize(sample);
  }

  GradCheckResult result;
  for (size_t c : coords) {
    const double orig = x[c];
    x[c] = orig + step;
    const double up = loss_fn(x, {});
    x[c] = orig - step;
    const double down = loss_fn(x, {});
    x[c] = orig;
    if (!std::isfinite(up) || !std::isfinite(down)) {
      throw NumericError("grad_check: loss is not finite under perturbation");
    }
    const double fd = (up - down) / (2.0 * step);
    const double denom = std::max({std::abs(analytic[c]), std::abs(fd), 1e-8});
    const double rel = std::abs(analytic[c] - fd) / denom;
    if (rel > result.max_rel_error) {
      result.max_rel_error = rel;
      result.worst_coord = c;
    }
    ++result.coords_checked;
  }
  return result;
}

}  // namespace divseg
