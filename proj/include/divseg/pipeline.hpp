#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "divseg/eval.hpp"
#include "divseg/localization.hpp"
#include "divseg/sampling.hpp"
#include "divseg/segmentation.hpp"
#include "divseg/synthdata.hpp"

namespace divseg {

struct DataConfig {
  size_t n_train = 500;
  size_t n_test = 100;
  // Train ids start here, test ids at kTestIdOffset + first_id. Data added
  // to an existing system needs ids disjoint from the original split.
  int first_id = 0;
  size_t classes = 4;
  size_t size = 64;
  std::vector<double> priors;  // empty: 0.4 per class
};

struct ExtractorConfig {
  size_t dims_per_scale = 16;
  std::vector<size_t> scales = {1, 2, 4};
};

/// Every tunable of an end-to-end run. Seeds for the individual stages are
/// derived from `seed` (see stage_seed).
struct PipelineConfig {
  uint64_t seed = 7;
  DataConfig data;
  ExtractorConfig extractor;
  LocalizerConfig localizer;
  SamplingConfig sampling;
  SegmentationConfig segmentation;
  int jobs = 1;

  void validate() const;
};

nlohmann::json to_json(const PipelineConfig& c);
/// Missing keys keep their defaults; unknown enum names raise ConfigError.
PipelineConfig pipeline_config_from_json(const nlohmann::json& j);

enum class Stage : uint64_t {
  kTrainData = 1,
  kTestData = 2,
  kExtractor = 3,
  kSampling = 4,
  kSegmentation = 5,
  kLocalizerBase = 100,  // + class id
};

uint64_t stage_seed(uint64_t seed, Stage stage, uint64_t offset = 0);

struct TestImage {
  int id = 0;
  FeatureGrid features;  // unit-normalized
  Grid truth;            // grid-resolution labels, background = num classes
};

/// Generated and feature-extracted train/test splits, normalized with
/// statistics of the training split.
struct Benchmark {
  SceneConfig scenes;
  ExtractorSpec extractor;
  NormStats stats;
  std::vector<SyntheticScene> train_scenes;
  std::vector<SyntheticScene> test_scenes;
  std::vector<FeatureGrid> train_raw;
  std::vector<FeatureGrid> test_raw;
  std::vector<TrainingImage> train;
  std::vector<TestImage> test;
  FeatureStore train_features;
  FeatureStore test_features;
};

inline constexpr int kTestIdOffset = 1000000;

Benchmark build_benchmark(const PipelineConfig& config);

/// Converts prediction indices of `model` into the dataset label space
/// (class ids, background = num_classes).
Grid to_dataset_labels(const Grid& prediction, const SegmentationModel& model,
                       size_t num_classes);

EvalReport evaluate(const SegmentationModel& model, const std::vector<TestImage>& test,
                    const FeatureStore& test_features, size_t num_classes);

std::map<int, LocalizerTraining> train_all_localizers(const std::vector<TrainingImage>& train,
                                                      size_t num_classes,
                                                      const LocalizerConfig& base,
                                                      uint64_t seed, int jobs);

struct StageTimes {
  double data = 0, localization = 0, sampling = 0, segmentation = 0, eval = 0;
  nlohmann::json to_json() const;
};

struct PipelineResult {
  std::map<int, LocalizerTraining> localizers;
  std::vector<SampledPoint> points;
  SegmentationTraining segmentation;
  EvalReport report;
  StageTimes times;
};

/// Runs localization, sampling, segmentation training and evaluation on an
/// already-built benchmark.
PipelineResult run_pipeline(const PipelineConfig& config, const Benchmark& bench);

struct RunSummary {
  PipelineResult result;
  std::map<std::string, std::string> artifact_hashes;  // relative path -> hash
};

/// Full run with artifacts on disk under `out_dir`: dataset, localizer
/// checkpoints, points.jsonl, segmentation checkpoint, report.json (no
/// timing data) and summary.json (hashes and stage wall-clocks).
RunSummary run_pipeline_to_disk(const PipelineConfig& config,
                                const std::filesystem::path& out_dir);

/// Content hash of every regular file below `dir`, keyed by relative path.
std::map<std::string, std::string> hash_artifacts(const std::filesystem::path& dir);

}  // namespace divseg
