#pragma once

// Per-location network machinery with hand-derived gradients. Every layer
// acts on one feature vector at a time (a 1x1 convolution), so a grid of
// H x W locations is just a batch of H*W vectors.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "divseg/error.hpp"
#include "divseg/rng.hpp"
#include "divseg/tensor.hpp"

namespace divseg {

enum class PoolingMode { kPerPixel, kGlobal };

std::string to_string(PoolingMode mode);
// Accepts "pixel" / "per_pixel" and "global".
PoolingMode parse_pooling(std::string_view name);

template <typename T>
struct Linear {
  size_t in_dim = 0;
  size_t out_dim = 0;
  std::vector<T> weight;  // out_dim x in_dim, row-major
  std::vector<T> bias;

  Linear() = default;
  Linear(size_t in, size_t out)
      : in_dim(in), out_dim(out), weight(in * out, T(0)), bias(out, T(0)) {
    if (in == 0 || out == 0) throw ShapeError("linear layer dims must be positive");
  }

  // Glorot-uniform weights, zero bias.
  void init_glorot(Rng& rng) {
    const double a = std::sqrt(6.0 / static_cast<double>(in_dim + out_dim));
    for (T& w : weight) w = static_cast<T>(rng.uniform(-a, a));
    std::fill(bias.begin(), bias.end(), T(0));
  }

  void apply(std::span<const T> x, std::span<T> y) const {
    for (size_t o = 0; o < out_dim; ++o) {
      const T* row = weight.data() + o * in_dim;
      double acc = bias[o];
      for (size_t j = 0; j < in_dim; ++j) {
        acc += static_cast<double>(row[j]) * static_cast<double>(x[j]);
      }
      y[o] = static_cast<T>(acc);
    }
  }

  bool operator==(const Linear&) const = default;
};

template <typename T>
BasicGrid<T> linear_forward(const Linear<T>& layer, const BasicGrid<T>& x) {
  if (x.depth() != layer.in_dim) {
    throw ShapeError("linear_forward: input depth " + std::to_string(x.depth()) +
                     " but layer expects " + std::to_string(layer.in_dim));
  }
  BasicGrid<T> y(x.height(), x.width(), layer.out_dim);
  for (size_t i = 0; i < x.locations(); ++i) layer.apply(x.at(i), y.at(i));
  return y;
}

template <typename T>
void relu_inplace(std::span<T> v) {
  for (T& x : v) x = x > T(0) ? x : T(0);
}

/// Gradient accumulators for a TwoLayerNet, always 64-bit.
struct TwoLayerGrad {
  std::vector<double> w1, b1, w2, b2;

  TwoLayerGrad() = default;
  TwoLayerGrad(size_t in, size_t hidden, size_t out)
      : w1(in * hidden, 0.0), b1(hidden, 0.0), w2(hidden * out, 0.0), b2(out, 0.0) {}

  void zero() {
    for (auto* v : {&w1, &b1, &w2, &b2}) std::fill(v->begin(), v->end(), 0.0);
  }
  std::vector<double> flatten() const;
};

/// Linear -> ReLU -> Linear applied independently at every location.
template <typename T>
struct TwoLayerNet {
  Linear<T> hidden;
  Linear<T> output;

  TwoLayerNet() = default;
  TwoLayerNet(size_t in, size_t hidden_dim, size_t out)
      : hidden(in, hidden_dim), output(hidden_dim, out) {}

  size_t in_dim() const { return hidden.in_dim; }
  size_t hidden_dim() const { return hidden.out_dim; }
  size_t out_dim() const { return output.out_dim; }

  void init(Rng& rng) {
    hidden.init_glorot(rng);
    output.init_glorot(rng);
  }

  TwoLayerGrad make_grad() const {
    return TwoLayerGrad(in_dim(), hidden_dim(), out_dim());
  }

  // `pre` receives hidden pre-activations; `act` the ReLU output.
  void forward(std::span<const T> x, std::span<T> pre, std::span<T> act,
               std::span<T> out) const {
    hidden.apply(x, pre);
    for (size_t j = 0; j < pre.size(); ++j) act[j] = pre[j] > T(0) ? pre[j] : T(0);
    output.apply(act, out);
  }

  /// Forward over a grid. When `pre` is non-null it receives the hidden
  /// pre-activations for later backward calls.
  BasicGrid<T> forward(const BasicGrid<T>& x, BasicGrid<T>* pre = nullptr) const {
    if (x.depth() != in_dim()) {
      throw ShapeError("network input depth " + std::to_string(x.depth()) +
                       " but expected " + std::to_string(in_dim()));
    }
    BasicGrid<T> out(x.height(), x.width(), out_dim());
    BasicGrid<T> local_pre;
    BasicGrid<T>& p = pre ? *pre : local_pre;
    p = BasicGrid<T>(x.height(), x.width(), hidden_dim());
    std::vector<T> act(hidden_dim());
    for (size_t i = 0; i < x.locations(); ++i) forward(x.at(i), p.at(i), act, out.at(i));
    return out;
  }

  /// Accumulates parameter gradients for one location given dL/d(output).
  void backward(std::span<const T> x, std::span<const T> pre,
                std::span<const double> d_out, TwoLayerGrad& g) const {
    const size_t in = in_dim();
    const size_t h = hidden_dim();
    const size_t o = out_dim();
    for (size_t k = 0; k < o; ++k) {
      const double d = d_out[k];
      if (d == 0.0) continue;
      double* gw = g.w2.data() + k * h;
      for (size_t j = 0; j < h; ++j) {
        if (pre[j] > T(0)) gw[j] += d * static_cast<double>(pre[j]);
      }
      g.b2[k] += d;
    }
    for (size_t j = 0; j < h; ++j) {
      if (!(pre[j] > T(0))) continue;
      double d_pre = 0.0;
      for (size_t k = 0; k < o; ++k) {
        d_pre += static_cast<double>(output.weight[k * h + j]) * d_out[k];
      }
      if (d_pre == 0.0) continue;
      double* gw = g.w1.data() + j * in;
      for (size_t m = 0; m < in; ++m) gw[m] += d_pre * static_cast<double>(x[m]);
      g.b1[j] += d_pre;
    }
  }

  // Parameter order: hidden.weight, hidden.bias, output.weight, output.bias.
  std::array<std::span<T>, 4> parameters() {
    return {hidden.weight, hidden.bias, output.weight, output.bias};
  }
  std::array<std::span<const T>, 4> parameters() const {
    return {std::span<const T>(hidden.weight), std::span<const T>(hidden.bias),
            std::span<const T>(output.weight), std::span<const T>(output.bias)};
  }

  size_t parameter_count() const {
    return hidden.weight.size() + hidden.bias.size() + output.weight.size() +
           output.bias.size();
  }

  std::vector<double> flatten() const {
    std::vector<double> out;
    out.reserve(parameter_count());
    for (auto p : parameters()) out.insert(out.end(), p.begin(), p.end());
    return out;
  }

  void assign(std::span<const double> flat) {
    if (flat.size() != parameter_count()) throw ShapeError("assign: wrong parameter count");
    size_t off = 0;
    for (auto p : parameters()) {
      for (T& v : p) v = static_cast<T>(flat[off++]);
    }
  }

  bool operator==(const TwoLayerNet&) const = default;
};

// ---------------------------------------------------------------------------
// MIL pooling of a (foreground, background) score-map pair.

struct PoolingTrace {
  PoolingMode mode = PoolingMode::kGlobal;
  double prob = 0.5;
  // prob == sigmoid(logit); logit = S(fg_loc) - Sbar(bg_loc).
  double logit = 0.0;
  size_t fg_loc = 0;
  size_t bg_loc = 0;
};

double stable_sigmoid(double z);

/// max_i sigmoid(S(i) - Sbar(i)). Gradient is routed through the single
/// argmax location (lowest index on ties).
template <typename T>
PoolingTrace pixel_softmax_prob(std::span<const T> fg, std::span<const T> bg) {
  if (fg.empty() || fg.size() != bg.size()) {
    throw ShapeError("pixel_softmax_prob: empty or mismatched score maps");
  }
  size_t best = 0;
  double best_diff = static_cast<double>(fg[0]) - static_cast<double>(bg[0]);
  for (size_t i = 1; i < fg.size(); ++i) {
    const double d = static_cast<double>(fg[i]) - static_cast<double>(bg[i]);
    if (d > best_diff) {
      best_diff = d;
      best = i;
    }
  }
  return {PoolingMode::kPerPixel, stable_sigmoid(best_diff), best_diff, best, best};
}

/// exp(max S) / (exp(max S) + exp(max Sbar)), with the two maxima taken
/// separately. Gradient flows through both argmax locations.
template <typename T>
PoolingTrace global_softmax_prob(std::span<const T> fg, std::span<const T> bg) {
  if (fg.empty() || fg.size() != bg.size()) {
    throw ShapeError("global_softmax_prob: empty or mismatched score maps");
  }
  const size_t a = static_cast<size_t>(std::max_element(fg.begin(), fg.end()) - fg.begin());
  const size_t b = static_cast<size_t>(std::max_element(bg.begin(), bg.end()) - bg.begin());
  const double s = fg[a];
  const double sbar = bg[b];
  const double m = std::max(s, sbar);
  const double es = std::exp(s - m);
  const double eb = std::exp(sbar - m);
  return {PoolingMode::kGlobal, es / (es + eb), s - sbar, a, b};
}

template <typename T>
PoolingTrace pool_scores(PoolingMode mode, std::span<const T> fg, std::span<const T> bg) {
  return mode == PoolingMode::kGlobal ? global_softmax_prob(fg, bg)
                                      : pixel_softmax_prob(fg, bg);
}

inline constexpr double kProbClamp = 1e-7;

struct PooledLoss {
  double loss = 0.0;
  bool clamped = false;
  // dL/dS at fg_loc and dL/dSbar at bg_loc; zero everywhere else.
  size_t fg_loc = 0;
  size_t bg_loc = 0;
  double d_fg = 0.0;
  double d_bg = 0.0;
};

/// Binary log-loss of a pooled image probability, p clamped to
/// [1e-7, 1 - 1e-7].
double bce_loss(double p, int label);

/// Same loss evaluated from the trace's logit, plus the gradient routed to
/// the pooled locations. The logit gradient is p - label.
PooledLoss bce_loss_and_grad(const PoolingTrace& trace, int label);

// Process-wide count of probability clamp events in bce_loss_and_grad.
size_t clamp_event_count();

// ---------------------------------------------------------------------------

struct PointLabel {
  size_t loc = 0;
  size_t cls = 0;
};

struct LossValue {
  double loss = 0.0;
  BasicGrid<double> grad;
};

/// Mean softmax cross-entropy over the labeled locations only. Unlabeled
/// locations receive a gradient of exactly zero. An empty label set gives
/// zero loss and an all-zero gradient.
template <typename T>
LossValue masked_ce_loss_and_grad(const BasicGrid<T>& logits,
                                  std::span<const PointLabel> labels) {
  LossValue out;
  out.grad = BasicGrid<double>(logits.height(), logits.width(), logits.depth(), 0.0);
  if (labels.empty()) return out;
  const size_t classes = logits.depth();
  const double inv_m = 1.0 / static_cast<double>(labels.size());
  std::vector<double> prob(classes);
  double total = 0.0;
  for (const PointLabel& pl : labels) {
    if (pl.loc >= logits.locations()) throw DataError("label location out of range");
    if (pl.cls >= classes) throw DataError("label class out of range");
    auto z = logits.at(pl.loc);
    double m = z[0];
    for (size_t c = 1; c < classes; ++c) m = std::max<double>(m, z[c]);
    double sum = 0.0;
    for (size_t c = 0; c < classes; ++c) {
      prob[c] = std::exp(static_cast<double>(z[c]) - m);
      sum += prob[c];
    }
    total += std::log(sum) + m - static_cast<double>(z[pl.cls]);
    auto g = out.grad.at(pl.loc);
    for (size_t c = 0; c < classes; ++c) {
      g[c] += (prob[c] / sum - (c == pl.cls ? 1.0 : 0.0)) * inv_m;
    }
  }
  out.loss = total * inv_m;
  if (!std::isfinite(out.loss)) throw NumericError("masked cross-entropy is not finite");
  return out;
}

// ---------------------------------------------------------------------------

struct AdamState {
  size_t t = 0;
  std::vector<double> m;
  std::vector<double> v;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// One bias-corrected Adam update. Moment arrays are created on first use.
template <typename T>
void adam_step(std::span<T> params, std::span<const double> grads, AdamState& s) {
  if (params.size() != grads.size()) throw ShapeError("adam_step: shape mismatch");
  if (s.m.empty() && s.v.empty()) {
    s.m.assign(params.size(), 0.0);
    s.v.assign(params.size(), 0.0);
  }
  if (s.m.size() != params.size() || s.v.size() != params.size()) {
    throw ShapeError("adam_step: moment arrays do not match parameters");
  }
  s.t += 1;
  const double bc1 = 1.0 - std::pow(s.beta1, static_cast<double>(s.t));
  const double bc2 = 1.0 - std::pow(s.beta2, static_cast<double>(s.t));
  for (size_t i = 0; i < params.size(); ++i) {
    const double g = grads[i];
    s.m[i] = s.beta1 * s.m[i] + (1.0 - s.beta1) * g;
    s.v[i] = s.beta2 * s.v[i] + (1.0 - s.beta2) * g * g;
    const double mhat = s.m[i] / bc1;
    const double vhat = s.v[i] / bc2;
    params[i] = static_cast<T>(static_cast<double>(params[i]) -
                               s.lr * mhat / (std::sqrt(vhat) + s.epsilon));
  }
}

/// Adam over the four parameter tensors of a TwoLayerNet.
class AdamOptimizer {
 public:
  explicit AdamOptimizer(double lr) {
    for (auto& s : states_) s.lr = lr;
  }

  void set_lr(double lr) {
    for (auto& s : states_) s.lr = lr;
  }
  size_t steps() const { return states_[0].t; }

  template <typename T>
  void step(TwoLayerNet<T>& net, const TwoLayerGrad& g) {
    auto params = net.parameters();
    const std::array<const std::vector<double>*, 4> grads = {&g.w1, &g.b1, &g.w2, &g.b2};
    for (size_t k = 0; k < 4; ++k) adam_step(params[k], std::span<const double>(*grads[k]), states_[k]);
  }

 private:
  std::array<AdamState, 4> states_;
};

// ---------------------------------------------------------------------------

/// Evaluates the loss at `params`. When `grad` is non-empty it must be
/// filled with the analytic gradient.
using LossFunction =
    std::function<double(std::span<const double> params, std::span<double> grad)>;

struct GradCheckResult {
  double max_rel_error = 0.0;
  size_t coords_checked = 0;
  size_t worst_coord = 0;
};

/// Central finite differences on a random subsample of coordinates (all of
/// them when there are at most `sample` parameters). Relative error per
/// coordinate is |g_a - g_fd| / max(|g_a|, |g_fd|, 1e-8).
GradCheckResult grad_check(const LossFunction& loss_fn, std::span<const double> params,
                           Rng& rng, size_t sample = 100, double step = 1e-5);

}  // namespace divseg
