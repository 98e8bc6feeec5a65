#include "divseg/synthdata.hpp"

#include <algorithm>
#include <array>
#include <cmath>

namespace divseg {
namespace {

enum class Shape { kCircle, kSquare, kTriangle, kDiamond, kCross, kEllipse, kHexagon, kOctagon };

struct ClassLook {
  Shape shape;
  std::array<double, 3> outer;  // saturated, class-specific
  std::array<double, 3> inner;  // muted core, overlaps the background range
};

// clang-format off
constexpr std::array<ClassLook, kMaxSyntheticClasses> kLooks = {{
    {Shape::kCircle,   {0.85, 0.25, 0.20}, {0.55, 0.38, 0.22}},
    {Shape::kSquare,   {0.20, 0.35, 0.85}, {0.22, 0.50, 0.55}},
    {Shape::kTriangle, {0.90, 0.82, 0.25}, {0.58, 0.60, 0.32}},
    {Shape::kDiamond,  {0.75, 0.22, 0.78}, {0.48, 0.32, 0.52}},
    {Shape::kCross,    {0.95, 0.55, 0.12}, {0.62, 0.48, 0.36}},
    {Shape::kEllipse,  {0.22, 0.80, 0.35}, {0.35, 0.55, 0.40}},
    {Shape::kHexagon,  {0.92, 0.92, 0.92}, {0.62, 0.62, 0.58}},
    {Shape::kOctagon,  {0.10, 0.10, 0.12}, {0.30, 0.28, 0.30}},
}};
// clang-format on


bool inside(Shape shape, double dx, double dy, double r) {
  const double ax = std::abs(dx);
  const double ay = std::abs(dy);
  switch (shape) {
    case Shape::kCircle:
      return dx * dx + dy * dy <= r * r;
    case Shape::kSquare:
      return ax <= 0.85 * r && ay <= 0.85 * r;
    case Shape::kTriangle:
      return dy >= -r && dy <= 0.7 * r && ax <= (dy + r) * 0.7;
    case Shape::kDiamond:
      return ax + ay <= 1.1 * r;
    case Shape::kCross:
      return (ax <= 0.35 * r && ay <= r) || (ay <= 0.35 * r && ax <= r);
    case Shape::kEllipse:
      return (dx * dx) / (r * r) + (dy * dy) / (0.36 * r * r) <= 1.0;
    case Shape::kHexagon:
      return ax <= 0.87 * r && ax * 0.577 + ay <= r;
    case Shape::kOctagon:
      return std::max(ax, ay) <= 0.9 * r && ax + ay <= 1.25 * r;
  }
  return false;
}

struct Placement {
  size_t cls;
  double cx, cy, r;
  std::array<double, 3> outer, inner;
};

double clamp01(double v) { return std::clamp(v, 0.0, 1.0); }

constexpr double kTwoPi = 6.283185307179586;

}  // namespace

SyntheticScene generate_scene(int index, const SceneConfig& config, uint64_t seed) {
  if (config.num_classes < 1 || config.num_classes > kMaxSyntheticClasses) {
    throw ConfigError("synthetic scenes support 1 to 8 classes");
  }
  if (!config.priors.empty() && config.priors.size() != config.num_classes) {
    throw ConfigError("class prior count does not match class count");
  }
  if (!(config.min_radius > 0 && config.min_radius <= config.max_radius)) {
    throw ConfigError("object radius range must satisfy 0 < min <= max");
  }
  if (!(config.core_scale > 0 && config.core_scale < 1)) {
    throw ConfigError("core scale must lie in (0, 1)");
  }
  if (!(config.texture >= 0) || !(config.background_lo >= 0 &&
                                  config.background_lo <= config.background_hi &&
                                  config.background_hi <= 1)) {
    throw ConfigError("texture must be >= 0 and the background range within [0, 1]");
  }
  const size_t h = config.height;
  const size_t w = config.width;
  const double unit = static_cast<double>(std::min(h, w)) / 64.0;
  const double r_min = config.min_radius * unit;
  const double r_max = config.max_radius * unit;
  if (h < 24 || w < 24 || 2.0 * r_max >= static_cast<double>(std::min(h, w))) {
    throw DataError("shapes too large for a " + std::to_string(h) + "x" + std::to_string(w) +
                    " scene");
  }

  SyntheticScene scene;
  scene.id = index;
  scene.seed = derive_seed(seed, static_cast<uint64_t>(index));
  Rng rng(scene.seed);

  // Background: base color, smooth low-frequency offsets, pixel noise.
  std::array<double, 3> base;
  for (double& c : base) c = rng.uniform(config.background_lo, config.background_hi);
  constexpr size_t kCtrl = 5;
  std::vector<double> ctrl(kCtrl * kCtrl * 3);
  for (double& v : ctrl) v = 0.08 * rng.normal();
  scene.image = Grid(h, w, 3);
  for (size_t y = 0; y < h; ++y) {
    const double gy = static_cast<double>(y) / static_cast<double>(h - 1) * (kCtrl - 1);
    const size_t y0 = std::min<size_t>(static_cast<size_t>(gy), kCtrl - 2);
    const double fy = gy - static_cast<double>(y0);
    for (size_t x = 0; x < w; ++x) {
      const double gx = static_cast<double>(x) / static_cast<double>(w - 1) * (kCtrl - 1);
      const size_t x0 = std::min<size_t>(static_cast<size_t>(gx), kCtrl - 2);
      const double fx = gx - static_cast<double>(x0);
      for (size_t c = 0; c < 3; ++c) {
        auto at = [&](size_t yy, size_t xx) { return ctrl[(yy * kCtrl + xx) * 3 + c]; };
        const double off = (1 - fy) * ((1 - fx) * at(y0, x0) + fx * at(y0, x0 + 1)) +
                           fy * ((1 - fx) * at(y0 + 1, x0) + fx * at(y0 + 1, x0 + 1));
        scene.image(y, x, c) = static_cast<float>(clamp01(base[c] + off + 0.03 * rng.normal()));
      }
    }
  }

  std::vector<size_t> chosen;
  for (size_t c = 0; c < config.num_classes; ++c) {
    if (rng.uniform() < config.prior(c)) chosen.push_back(c);
  }
  if (chosen.size() > config.max_objects) {
    rng.shuffle(std::span<size_t>(chosen));
    chosen.resize(config.max_objects);
    std::sort(chosen.begin(), chosen.end());
  }
  // Draw order is random; the mask keeps whatever is on top.
  rng.shuffle(std::span<size_t>(chosen));

  const float bg_label = static_cast<float>(config.num_classes);
  std::vector<Placement> layout;
  const double total = static_cast<double>(h * w);
  for (;;) {
    bool ok = false;
    for (int attempt = 0; attempt < 50 && !ok; ++attempt) {
      layout.clear();
      for (size_t cls : chosen) {
        Placement p;
        p.cls = cls;
        p.r = rng.uniform(r_min, r_max);
        p.cx = rng.uniform(p.r, static_cast<double>(w) - p.r);
        p.cy = rng.uniform(p.r, static_cast<double>(h) - p.r);
        const ClassLook& look = kLooks[cls];
        for (size_t c = 0; c < 3; ++c) {
          p.outer[c] = clamp01(look.outer[c] + rng.uniform(-0.07, 0.07));
          p.inner[c] = clamp01(look.inner[c] + rng.uniform(-0.07, 0.07));
        }
        layout.push_back(p);
      }
      scene.mask = Grid(h, w, 1, bg_label);
      for (const Placement& p : layout) {
        for (size_t y = 0; y < h; ++y) {
          for (size_t x = 0; x < w; ++x) {
            const double dx = static_cast<double>(x) + 0.5 - p.cx;
            const double dy = static_cast<double>(y) + 0.5 - p.cy;
            if (inside(kLooks[p.cls].shape, dx, dy, p.r)) {
              scene.mask(y, x, 0) = static_cast<float>(p.cls);
            }
          }
        }
      }
      ok = true;
      for (size_t cls : chosen) {
        const auto count = std::count(scene.mask.values().begin(), scene.mask.values().end(),
                                      static_cast<float>(cls));
        const double frac = static_cast<double>(count) / total;
        if (frac < 0.01 || frac > 0.60) ok = false;
      }
    }
    if (ok) break;
    chosen.pop_back();
  }

  for (const Placement& p : layout) {
    const ClassLook& look = kLooks[p.cls];
    // One plane wave per channel, period 10-20 px, gives each instance
    // internal appearance variation.
    std::array<std::array<double, 3>, 3> wave;
    for (auto& wv : wave) {
      const double angle = rng.uniform(0.0, kTwoPi);
      const double freq = kTwoPi / rng.uniform(10.0, 20.0);
      wv = {freq * std::cos(angle), freq * std::sin(angle), rng.uniform(0.0, kTwoPi)};
    }
    for (size_t y = 0; y < h; ++y) {
      for (size_t x = 0; x < w; ++x) {
        const double dx = static_cast<double>(x) + 0.5 - p.cx;
        const double dy = static_cast<double>(y) + 0.5 - p.cy;
        if (!inside(look.shape, dx, dy, p.r)) continue;
        const bool core = inside(look.shape, dx, dy, config.core_scale * p.r);
        const auto& color = core ? p.inner : p.outer;
        for (size_t c = 0; c < 3; ++c) {
          const double shade = config.texture * std::sin(wave[c][0] * dx + wave[c][1] * dy + wave[c][2]);
          scene.image(y, x, c) = static_cast<float>(clamp01(color[c] + shade + 0.03 * rng.normal()));
        }
      }
    }
  }

  scene.tags.image_id = index;
  for (size_t c = 0; c < config.num_classes; ++c) {
    if (std::find(scene.mask.values().begin(), scene.mask.values().end(),
                  static_cast<float>(c)) != scene.mask.values().end()) {
      scene.tags.present.push_back(static_cast<int>(c));
    }
  }
  return scene;
}

std::vector<SyntheticScene> generate_dataset(size_t n, const SceneConfig& config,
                                             uint64_t seed, int first_id) {
  if (n < 1) throw ConfigError("generate_dataset: need at least one image");
  std::vector<SyntheticScene> out;
  out.reserve(n);
  for (size_t i = 0; i < n; ++i) {
    out.push_back(generate_scene(first_id + static_cast<int>(i), config, seed));
  }
  return out;
}

ExtractorSpec make_extractor(uint64_t seed, size_t dims_per_scale, std::vector<size_t> scales) {
  if (scales.empty() || dims_per_scale == 0) throw ConfigError("extractor needs scales and dims");
  ExtractorSpec spec;
  spec.scales = std::move(scales);
  spec.dims_per_scale = dims_per_scale;
  spec.seed = seed;
  Rng rng(seed);
  for (size_t s = 0; s < spec.scales.size(); ++s) {
    if (spec.scales[s] == 0) throw ConfigError("extractor scale must be positive");
    Linear<float> proj(3, dims_per_scale);
    for (float& v : proj.weight) v = static_cast<float>(2.5 * rng.normal());
    for (float& v : proj.bias) v = static_cast<float>(rng.uniform(-0.6, 0.6));
    spec.projections.push_back(std::move(proj));
  }
  return spec;
}

FeatureGrid extract_features(const Grid& image, const ExtractorSpec& spec) {
  if (image.depth() != 3) throw ShapeError("extract_features expects an RGB image");
  if (image.height() % spec.cell != 0 || image.width() % spec.cell != 0) {
    throw ShapeError("image dimensions must be divisible by " + std::to_string(spec.cell));
  }
  const size_t gh = image.height() / spec.cell;
  const size_t gw = image.width() / spec.cell;
  FeatureGrid out;
  out.grid = Grid(gh, gw, spec.depth());

  std::vector<float> mean(3), proj(spec.dims_per_scale);
  for (size_t s = 0; s < spec.scales.size(); ++s) {
    const size_t factor = spec.scales[s];
    const size_t block = spec.cell * factor;
    const size_t ch = (gh + factor - 1) / factor;
    const size_t cw = (gw + factor - 1) / factor;
    Grid coarse(ch, cw, spec.dims_per_scale);
    for (size_t cy = 0; cy < ch; ++cy) {
      for (size_t cx = 0; cx < cw; ++cx) {
        const size_t y1 = std::min(image.height(), (cy + 1) * block);
        const size_t x1 = std::min(image.width(), (cx + 1) * block);
        double acc[3] = {0, 0, 0};
        for (size_t y = cy * block; y < y1; ++y) {
          for (size_t x = cx * block; x < x1; ++x) {
            for (size_t c = 0; c < 3; ++c) acc[c] += image(y, x, c);
          }
        }
        const double count = static_cast<double>((y1 - cy * block) * (x1 - cx * block));
        for (size_t c = 0; c < 3; ++c) mean[c] = static_cast<float>(acc[c] / count - 0.5);
        spec.projections[s].apply(mean, proj);
        relu_inplace(std::span<float>(proj));
        std::copy(proj.begin(), proj.end(), coarse.at(cy * cw + cx).begin());
      }
    }
    for (size_t y = 0; y < gh; ++y) {
      for (size_t x = 0; x < gw; ++x) {
        auto src = coarse.at((y / factor) * cw + x / factor);
        auto dst = out.grid.at(y * gw + x);
        std::copy(src.begin(), src.end(), dst.begin() + static_cast<long>(s * spec.dims_per_scale));
      }
    }
  }
  return out;
}

Grid downsample_mask(const Grid& mask, size_t cell, size_t num_labels) {
  if (mask.height() % cell != 0 || mask.width() % cell != 0) {
    throw ShapeError("mask dimensions must be divisible by the cell size");
  }
  const size_t gh = mask.height() / cell;
  const size_t gw = mask.width() / cell;
  Grid out(gh, gw, 1);
  std::vector<size_t> votes(num_labels);
  for (size_t gy = 0; gy < gh; ++gy) {
    for (size_t gx = 0; gx < gw; ++gx) {
      std::fill(votes.begin(), votes.end(), 0);
      for (size_t y = gy * cell; y < (gy + 1) * cell; ++y) {
        for (size_t x = gx * cell; x < (gx + 1) * cell; ++x) {
          const auto label = static_cast<size_t>(mask(y, x, 0));
          if (label >= num_labels) throw DataError("mask label out of range");
          ++votes[label];
        }
      }
      out(gy, gx, 0) = static_cast<float>(
          std::max_element(votes.begin(), votes.end()) - votes.begin());
    }
  }
  return out;
}

}  // namespace divseg
