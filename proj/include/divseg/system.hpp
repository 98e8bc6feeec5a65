#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "divseg/dataset_io.hpp"
#include "divseg/pipeline.hpp"

namespace divseg {

// A system directory is what run_pipeline_to_disk writes: config.json,
// data/, localizers/class_<c>/, points.jsonl and segmenter/. Datasets added
// by add-class are listed (absolute manifest paths) in added_data.json.
struct StoredSystem {
  PipelineConfig config;
  SegmentationSystem system;
  size_t num_classes = 0;
  std::vector<TrainingImage> train;
  FeatureStore train_features;
  std::vector<TestImage> test;
  FeatureStore test_features;
  std::vector<std::filesystem::path> added_manifests;
};

/// Every dataset is normalized with the statistics frozen in the segmenter.
StoredSystem load_system(const std::filesystem::path& dir);

/// Hyperparameters from the stored config; seeds derived from its base seed
/// and the new class id.
AddClassConfig add_class_config(const PipelineConfig& config, int new_class);

struct AddClassOutcome {
  AddClassResult result;
  EvalReport before;  // old segmenter, test split of the existing data
  EvalReport after;   // new segmenter, same test images
  std::map<std::string, std::string> localizer_hashes_before;
  std::map<std::string, std::string> localizer_hashes_after;
};

/// Adds `new_class` from the train split of `manifest`. When `out_dir`
/// differs from `system_dir` the system is copied there first; the original
/// is never written. Existing localizer checkpoints are left untouched on
/// disk and their content hashes are compared before and after.
AddClassOutcome add_class_to_system(const std::filesystem::path& system_dir, int new_class,
                                    const std::filesystem::path& manifest,
                                    const std::filesystem::path& out_dir, int jobs = 1);

}  // namespace divseg
