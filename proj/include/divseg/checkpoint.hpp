#pragma once

#include <filesystem>
#include <span>
#include <vector>

#include <json.hpp>

#include "divseg/localization.hpp"
#include "divseg/sampling.hpp"
#include "divseg/segmentation.hpp"

namespace divseg {

// A checkpoint is a directory holding model.json (layer shapes,
// hyperparameters, seed) and one DSTN tensor per parameter array:
// hidden.weight, hidden.bias, output.weight, output.bias.

void save_localizer(const LocalizationModel& model, const std::filesystem::path& dir,
                    const LocalizerConfig& config);
LocalizationModel load_localizer(const std::filesystem::path& dir);

// Segmentation checkpoints additionally store the normalization statistics
// (norm_stats.dstn).
void save_segmenter(const SegmentationModel& model, const std::filesystem::path& dir,
                    const SegmentationConfig& config);
SegmentationModel load_segmenter(const std::filesystem::path& dir);

// Stats are a 2 x D tensor: row 0 mean, row 1 standard deviation.
void save_norm_stats(const NormStats& stats, const std::filesystem::path& path);
NormStats load_norm_stats(const std::filesystem::path& path);

/// JSON lines, one object per point:
///   {"image":..,"loc":..,"label":..,"rank":..,"value":..,"flags":[..]}
/// Background points carry label -1.
nlohmann::ordered_json point_to_json(const SampledPoint& p);
SampledPoint point_from_json(const nlohmann::json& j);
void write_points(const std::filesystem::path& path, std::span<const SampledPoint> points);
std::vector<SampledPoint> read_points(const std::filesystem::path& path);

nlohmann::json read_json_file(const std::filesystem::path& path);
void write_json_file(const std::filesystem::path& path, const nlohmann::json& j);
void write_json_file(const std::filesystem::path& path, const nlohmann::ordered_json& j);

}  // namespace divseg
