#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "divseg/pipeline.hpp"

namespace divseg {

// On-disk dataset: a directory with manifest.json, norm_stats.dstn (from the
// train split) and per-image DSTN files. Features are stored raw; loading
// normalizes them with the stored statistics.
struct ManifestEntry {
  int id = 0;
  std::string split;  // "train" or "test"
  std::vector<int> tags;
  std::string image;     // H x W x 3, optional
  std::string mask;      // H x W, background = num_classes; required for test
  std::string features;  // h x w x D raw features
};

struct DatasetManifest {
  std::filesystem::path root;
  size_t num_classes = 0;
  size_t cell = 4;
  std::string norm_stats = "norm_stats.dstn";
  nlohmann::json extra = nlohmann::json::object();
  std::vector<ManifestEntry> images;
};

void write_dataset(const Benchmark& bench, const std::filesystem::path& dir);

/// Accepts the manifest file or its directory.
DatasetManifest read_manifest(const std::filesystem::path& path);

struct LoadedDataset {
  size_t num_classes = 0;
  NormStats stats;
  std::vector<TrainingImage> train;
  std::vector<TestImage> test;
  FeatureStore train_features;
  FeatureStore test_features;
};

/// Normalizes with the manifest's own statistics unless `stats` is given
/// (add-class reuses the frozen statistics of the existing system).
LoadedDataset load_dataset(const DatasetManifest& manifest, const NormStats* stats = nullptr);

}  // namespace divseg
