#include "divseg/render.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace divseg {
namespace {

std::vector<uint8_t> header(const char* magic, size_t w, size_t h) {
  const std::string s = std::string(magic) + "\n" + std::to_string(w) + " " +
                        std::to_string(h) + "\n255\n";
  return {s.begin(), s.end()};
}

uint8_t to_byte(float v) {
  const float c = std::clamp(v, 0.0f, 1.0f);
  return static_cast<uint8_t>(std::lround(c * 255.0f));
}

}  // namespace

Rgb palette_color(size_t index) {
  Rgb c{0, 0, 0};
  size_t id = index;
  for (int shift = 7; shift >= 0 && id; --shift) {
    for (int ch = 0; ch < 3; ++ch) c[ch] |= static_cast<uint8_t>(((id >> ch) & 1u) << shift);
    id >>= 3;
  }
  return c;
}

std::vector<uint8_t> encode_heatmap_pgm(const Grid& map) {
  if (map.depth() != 1) throw ShapeError("heatmap must have depth 1");
  if (!all_finite(map)) throw NumericError("heatmap contains non-finite values");
  const auto [lo_it, hi_it] = std::minmax_element(map.values().begin(), map.values().end());
  const double lo = *lo_it, hi = *hi_it;
  auto out = header("P5", map.width(), map.height());
  for (float v : map.values()) {
    if (hi == lo) {
      out.push_back(128);
    } else {
      out.push_back(static_cast<uint8_t>(std::lround((v - lo) / (hi - lo) * 255.0)));
    }
  }
  return out;
}

std::vector<uint8_t> encode_ppm(const Grid& rgb) {
  if (rgb.depth() != 3) throw ShapeError("PPM image must have depth 3");
  auto out = header("P6", rgb.width(), rgb.height());
  for (float v : rgb.values()) out.push_back(to_byte(v));
  return out;
}

Grid colorize_labels(const Grid& labels, size_t num_classes) {
  if (labels.depth() != 1) throw ShapeError("label map must have depth 1");
  Grid out(labels.height(), labels.width(), 3);
  for (size_t i = 0; i < labels.locations(); ++i) {
    const float l = labels(i, 0);
    if (l < 0 || l > static_cast<float>(num_classes)) throw DataError("label out of range");
    const size_t label = static_cast<size_t>(l);
    const Rgb c = label == num_classes ? Rgb{0, 0, 0} : palette_color(label + 1);
    for (size_t ch = 0; ch < 3; ++ch) out(i, ch) = c[ch] / 255.0f;
  }
  return out;
}

Grid overlay_points(const Grid& image, std::span<const SampledPoint> points, size_t grid_width,
                    size_t cell) {
  if (image.depth() != 3) throw ShapeError("overlay base image must have depth 3");
  if (grid_width == 0 || cell == 0) throw ConfigError("overlay needs a positive grid geometry");
  Grid out = image;
  for (const auto& p : points) {
    const size_t row = p.loc / grid_width * cell;
    const size_t col = p.loc % grid_width * cell;
    if (row + cell > image.height() || col + cell > image.width()) {
      throw DataError("point location " + std::to_string(p.loc) + " falls outside the image");
    }
    const Rgb c = p.label == kBackgroundLabel ? Rgb{255, 255, 255}
                                              : palette_color(static_cast<size_t>(p.label) + 1);
    for (size_t r = row; r < row + cell; ++r) {
      for (size_t q = col; q < col + cell; ++q) {
        for (size_t ch = 0; ch < 3; ++ch) out(r, q, ch) = c[ch] / 255.0f;
      }
    }
  }
  return out;
}

}  // namespace divseg
