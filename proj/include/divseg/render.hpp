#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include "divseg/sampling.hpp"
#include "divseg/tensor.hpp"

namespace divseg {

using Rgb = std::array<uint8_t, 3>;

/// PASCAL VOC bit-interleaved color map; index 0 is black.
Rgb palette_color(size_t index);

/// Binary 8-bit PGM ("P5\n<w> <h>\n255\n" + w*h bytes) of a depth-1 map,
/// min-max scaled to [0, 255]. A constant map renders as uniform 128.
std::vector<uint8_t> encode_heatmap_pgm(const Grid& map);

/// Binary PPM ("P6\n<w> <h>\n255\n" + 3*w*h bytes) of an H x W x 3 image
/// with values in [0, 1].
std::vector<uint8_t> encode_ppm(const Grid& rgb);

/// Label map (dataset labels, background = num_classes) as colors:
/// background is black, class j is palette_color(j + 1).
Grid colorize_labels(const Grid& labels, size_t num_classes);

/// Draws each point as a filled cell-sized square onto `image` (H x W x 3),
/// colored by palette_color(label + 1); background points are white.
/// `grid_width` is the width of the feature grid the locations refer to.
Grid overlay_points(const Grid& image, std::span<const SampledPoint> points,
                    size_t grid_width, size_t cell);

}  // namespace divseg
