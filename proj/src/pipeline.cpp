#include "divseg/pipeline.hpp"

#include <algorithm>
#include <chrono>

#include <spdlog/spdlog.h>

#include "divseg/checkpoint.hpp"
#include "divseg/dataset_io.hpp"
#include "divseg/parallel.hpp"
#include "divseg/rng.hpp"
#include "divseg/tensor_io.hpp"

namespace divseg {
namespace fs = std::filesystem;
namespace {

double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

// Runs one stage, prefixing any failure with the stage name.
template <typename Fn>
auto run_stage(const char* name, double& seconds, Fn&& fn) {
  const auto start = std::chrono::steady_clock::now();
  try {
    if constexpr (std::is_void_v<decltype(fn())>) {
      fn();
      seconds = seconds_since(start);
    } else {
      auto out = fn();
      seconds = seconds_since(start);
      return out;
    }
  } catch (const Error& e) {
    throw Error(e.kind(), std::string(name) + ": " + e.what());
  }
}

template <typename T>
void read_opt(const nlohmann::json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace

void PipelineConfig::validate() const {
  if (data.classes == 0 || data.classes > kMaxSyntheticClasses) {
    throw ConfigError("data.classes must be in [1, " + std::to_string(kMaxSyntheticClasses) + "]");
  }
  if (data.n_train == 0 || data.n_test == 0) throw ConfigError("data splits must be nonempty");
  if (data.first_id < 0 ||
      static_cast<size_t>(data.first_id) + std::max(data.n_train, data.n_test) >
          static_cast<size_t>(kTestIdOffset)) {
    throw ConfigError("data.first_id must keep train and test ids disjoint");
  }
  if (data.size < 16 || data.size % 16 != 0) {
    throw ConfigError("data.size must be a positive multiple of 16");
  }
  if (!data.priors.empty() && data.priors.size() != data.classes) {
    throw ConfigError("data.priors must list one probability per class");
  }
  for (double p : data.priors) {
    if (!(p >= 0.0 && p <= 1.0)) throw ConfigError("data.priors must lie in [0, 1]");
  }
  if (extractor.dims_per_scale == 0 || extractor.scales.empty()) {
    throw ConfigError("extractor needs at least one scale and one dimension");
  }
  for (size_t s : extractor.scales) {
    if (s == 0 || (data.size / 4) % s != 0) {
      throw ConfigError("extractor scale " + std::to_string(s) + " does not divide the grid");
    }
  }
  if (localizer.hidden == 0 || segmentation.hidden == 0) {
    throw ConfigError("hidden sizes must be positive");
  }
  if (!(localizer.lr > 0) || !(localizer.decay_lr > 0) || !(segmentation.lr > 0)) {
    throw ConfigError("learning rates must be positive");
  }
  if (localizer.epochs + localizer.decay_epochs == 0 || segmentation.epochs == 0) {
    throw ConfigError("epoch counts must be positive");
  }
  if (segmentation.batch == 0) throw ConfigError("segmentation batch must be positive");
  sampling.validate();
  if (sampling.k > (data.size / 4) * (data.size / 4)) {
    throw ConfigError("sampling k exceeds the number of grid locations");
  }
}

nlohmann::json to_json(const PipelineConfig& c) {
  return {
      {"seed", c.seed},
      {"jobs", c.jobs},
      {"data",
       {{"n_train", c.data.n_train},
        {"n_test", c.data.n_test},
        {"first_id", c.data.first_id},
        {"classes", c.data.classes},
        {"size", c.data.size},
        {"priors", c.data.priors}}},
      {"extractor", {{"dims_per_scale", c.extractor.dims_per_scale}, {"scales", c.extractor.scales}}},
      {"localizer",
       {{"hidden", c.localizer.hidden},
        {"pooling", to_string(c.localizer.pooling)},
        {"lr", c.localizer.lr},
        {"epochs", c.localizer.epochs},
        {"decay_lr", c.localizer.decay_lr},
        {"decay_epochs", c.localizer.decay_epochs},
        {"batch_images", 1}}},
      {"sampling",
       {{"k", c.sampling.k},
        {"strategy", to_string(c.sampling.strategy)},
        {"tau", c.sampling.tau},
        {"spatial_scale", c.sampling.spatial_scale}}},
      {"segmentation",
       {{"hidden", c.segmentation.hidden},
        {"lr", c.segmentation.lr},
        {"epochs", c.segmentation.epochs},
        {"batch", c.segmentation.batch}}},
  };
}

PipelineConfig pipeline_config_from_json(const nlohmann::json& j) {
  PipelineConfig c;
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  try {
    read_opt(j, "seed", c.seed);
    read_opt(j, "jobs", c.jobs);
    if (j.contains("data")) {
      const auto& d = j.at("data");
      read_opt(d, "n_train", c.data.n_train);
      read_opt(d, "n_test", c.data.n_test);
      read_opt(d, "first_id", c.data.first_id);
      read_opt(d, "classes", c.data.classes);
      read_opt(d, "size", c.data.size);
      read_opt(d, "priors", c.data.priors);
    }
    if (j.contains("extractor")) {
      read_opt(j.at("extractor"), "dims_per_scale", c.extractor.dims_per_scale);
      read_opt(j.at("extractor"), "scales", c.extractor.scales);
    }
    if (j.contains("localizer")) {
      const auto& l = j.at("localizer");
      read_opt(l, "hidden", c.localizer.hidden);
      if (l.contains("pooling")) c.localizer.pooling = parse_pooling(l.at("pooling").get<std::string>());
      read_opt(l, "lr", c.localizer.lr);
      read_opt(l, "epochs", c.localizer.epochs);
      read_opt(l, "decay_lr", c.localizer.decay_lr);
      read_opt(l, "decay_epochs", c.localizer.decay_epochs);
      if (l.value("batch_images", 1) != 1) throw ConfigError("localizer batch is fixed at 1 image");
    }
    if (j.contains("sampling")) {
      const auto& s = j.at("sampling");
      read_opt(s, "k", c.sampling.k);
      if (s.contains("strategy")) c.sampling.strategy = parse_strategy(s.at("strategy").get<std::string>());
      read_opt(s, "tau", c.sampling.tau);
      read_opt(s, "spatial_scale", c.sampling.spatial_scale);
    }
    if (j.contains("segmentation")) {
      const auto& s = j.at("segmentation");
      read_opt(s, "hidden", c.segmentation.hidden);
      read_opt(s, "lr", c.segmentation.lr);
      read_opt(s, "epochs", c.segmentation.epochs);
      read_opt(s, "batch", c.segmentation.batch);
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("bad config value: ") + e.what());
  }
  return c;
}

uint64_t stage_seed(uint64_t seed, Stage stage, uint64_t offset) {
  return derive_seed(seed, static_cast<uint64_t>(stage) + offset);
}

Benchmark build_benchmark(const PipelineConfig& config) {
  config.validate();
  Benchmark b;
  b.scenes.height = config.data.size;
  b.scenes.width = config.data.size;
  b.scenes.num_classes = config.data.classes;
  b.scenes.priors = config.data.priors;
  b.train_scenes = generate_dataset(config.data.n_train, b.scenes,
                                    stage_seed(config.seed, Stage::kTrainData), config.data.first_id);
  b.test_scenes = generate_dataset(config.data.n_test, b.scenes,
                                   stage_seed(config.seed, Stage::kTestData),
                                   kTestIdOffset + config.data.first_id);
  b.extractor = make_extractor(stage_seed(config.seed, Stage::kExtractor),
                               config.extractor.dims_per_scale, config.extractor.scales);

  b.train_raw.resize(b.train_scenes.size());
  b.test_raw.resize(b.test_scenes.size());
  parallel_for(b.train_raw.size(), config.jobs, [&](size_t i) {
    b.train_raw[i] = extract_features(b.train_scenes[i].image, b.extractor);
  });
  parallel_for(b.test_raw.size(), config.jobs, [&](size_t i) {
    b.test_raw[i] = extract_features(b.test_scenes[i].image, b.extractor);
  });
  b.stats = compute_norm_stats(b.train_raw);

  for (size_t i = 0; i < b.train_scenes.size(); ++i) {
    const auto& s = b.train_scenes[i];
    FeatureGrid unit = normalize_features(b.train_raw[i], b.stats);
    b.train_features.emplace(s.id, augment_with_global(unit));
    b.train.push_back({s.id, std::move(unit), s.tags});
  }
  for (size_t i = 0; i < b.test_scenes.size(); ++i) {
    const auto& s = b.test_scenes[i];
    FeatureGrid unit = normalize_features(b.test_raw[i], b.stats);
    b.test_features.emplace(s.id, augment_with_global(unit));
    b.test.push_back({s.id, std::move(unit),
                      downsample_mask(s.mask, b.extractor.cell, b.scenes.num_classes + 1)});
  }
  return b;
}

Grid to_dataset_labels(const Grid& prediction, const SegmentationModel& model,
                       size_t num_classes) {
  Grid out(prediction.height(), prediction.width(), 1);
  for (size_t i = 0; i < prediction.locations(); ++i) {
    const int label = model.label_of(static_cast<size_t>(prediction(i, 0)));
    out(i, 0) = static_cast<float>(label == kBackgroundLabel ? static_cast<int>(num_classes) : label);
  }
  return out;
}

EvalReport evaluate(const SegmentationModel& model, const std::vector<TestImage>& test,
                    const FeatureStore& test_features, size_t num_classes) {
  ConfusionMatrix cm(num_classes + 1);
  for (const auto& img : test) {
    const auto it = test_features.find(img.id);
    if (it == test_features.end()) {
      throw DataError("evaluate: no features for test image " + std::to_string(img.id));
    }
    const Prediction p = predict(model, it->second);
    cm = accumulate(std::move(cm), to_dataset_labels(p.labels, model, num_classes), img.truth);
  }
  return miou(cm);
}

std::map<int, LocalizerTraining> train_all_localizers(const std::vector<TrainingImage>& train,
                                                      size_t num_classes,
                                                      const LocalizerConfig& base,
                                                      uint64_t seed, int jobs) {
  // Classes that never occur in the training split get no localizer.
  std::vector<int> classes;
  for (size_t c = 0; c < num_classes; ++c) {
    const int cls = static_cast<int>(c);
    for (const auto& img : train) {
      if (img.tags.contains(cls)) {
        classes.push_back(cls);
        break;
      }
    }
  }
  std::vector<LocalizerTraining> trained(classes.size());
  parallel_for(classes.size(), jobs, [&](size_t i) {
    LocalizerConfig cfg = base;
    cfg.seed = stage_seed(seed, Stage::kLocalizerBase, static_cast<uint64_t>(classes[i]));
    trained[i] = train_localizer(classes[i], train, cfg);
  });
  std::map<int, LocalizerTraining> out;
  for (size_t i = 0; i < classes.size(); ++i) out.emplace(classes[i], std::move(trained[i]));
  return out;
}

nlohmann::json StageTimes::to_json() const {
  return {{"data", data},
          {"localization", localization},
          {"sampling", sampling},
          {"segmentation", segmentation},
          {"eval", eval}};
}

PipelineResult run_pipeline(const PipelineConfig& config, const Benchmark& bench) {
  config.validate();
  PipelineResult r;
  const int jobs = resolve_jobs(config.jobs);

  r.localizers = run_stage("train-loc", r.times.localization, [&] {
    return train_all_localizers(bench.train, bench.scenes.num_classes, config.localizer,
                                config.seed, jobs);
  });
  std::map<int, LocalizationModel> models;
  std::vector<int> classes;
  for (const auto& [cls, t] : r.localizers) {
    models.emplace(cls, t.model);
    classes.push_back(cls);
  }

  r.points = run_stage("sample", r.times.sampling, [&] {
    SamplingConfig sc = config.sampling;
    sc.seed = stage_seed(config.seed, Stage::kSampling);
    return build_supervision_set(bench.train, models, sc, jobs);
  });

  r.segmentation = run_stage("train-seg", r.times.segmentation, [&] {
    SegmentationConfig sc = config.segmentation;
    sc.seed = stage_seed(config.seed, Stage::kSegmentation);
    return train_segmentation(r.points, bench.train_features, classes, bench.stats, sc);
  });

  r.report = run_stage("eval", r.times.eval, [&] {
    return evaluate(r.segmentation.model, bench.test, bench.test_features,
                    bench.scenes.num_classes);
  });
  r.report.config = {{"strategy", to_string(config.sampling.strategy)},
                     {"k", config.sampling.k},
                     {"pooling", to_string(config.localizer.pooling)},
                     {"seed", config.seed}};
  if (config.sampling.strategy == Strategy::kDense) r.report.config["tau"] = config.sampling.tau;
  spdlog::info("run seed={} strategy={} k={} pooling={}: mIoU {:.4f}", config.seed,
               to_string(config.sampling.strategy), config.sampling.k,
               to_string(config.localizer.pooling), r.report.miou);
  return r;
}

std::map<std::string, std::string> hash_artifacts(const fs::path& dir) {
  std::map<std::string, std::string> out;
  for (const auto& entry : fs::recursive_directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    const auto bytes = read_file_bytes(entry.path());
    out.emplace(fs::relative(entry.path(), dir).generic_string(), hex64(fnv1a64(bytes)));
  }
  return out;
}

RunSummary run_pipeline_to_disk(const PipelineConfig& config, const fs::path& out_dir) {
  config.validate();
  spdlog::info("resolved config: {}", to_json(config).dump());
  RunSummary s;
  double data_seconds = 0.0;
  const Benchmark bench = run_stage("gen-data", data_seconds, [&] {
    Benchmark b = build_benchmark(config);
    write_dataset(b, out_dir / "data");
    return b;
  });
  s.result = run_pipeline(config, bench);
  s.result.times.data = data_seconds;

  write_json_file(out_dir / "config.json", to_json(config));
  for (const auto& [cls, t] : s.result.localizers) {
    save_localizer(t.model, out_dir / "localizers" / ("class_" + std::to_string(cls)),
                   config.localizer);
  }
  write_points(out_dir / "points.jsonl", s.result.points);
  save_segmenter(s.result.segmentation.model, out_dir / "segmenter", config.segmentation);
  write_json_file(out_dir / "report.json", s.result.report.to_json());

  fs::remove(out_dir / "summary.json");
  s.artifact_hashes = hash_artifacts(out_dir);
  nlohmann::json summary = {{"artifacts", s.artifact_hashes},
                            {"stage_seconds", s.result.times.to_json()},
                            {"miou", s.result.report.miou}};
  write_json_file(out_dir / "summary.json", summary);
  const auto& t = s.result.times;
  spdlog::info("stage wall-clock (s): data {:.2f}, localization {:.2f}, sampling {:.2f}, "
               "segmentation {:.2f}, eval {:.2f}",
               t.data, t.localization, t.sampling, t.segmentation, t.eval);
  return s;
}

}  // namespace divseg
