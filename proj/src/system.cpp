#include "divseg/system.hpp"

#include <algorithm>

#include <spdlog/spdlog.h>

#include "divseg/checkpoint.hpp"
#include "divseg/parallel.hpp"

namespace divseg {
namespace fs = std::filesystem;
namespace {

void merge(StoredSystem& s, LoadedDataset&& d) {
  for (auto& img : d.train) {
    if (s.train_features.count(img.id)) {
      throw DataError("image id " + std::to_string(img.id) + " appears in two datasets");
    }
    s.train.push_back(std::move(img));
  }
  for (auto& img : d.test) s.test.push_back(std::move(img));
  s.train_features.merge(d.train_features);
  s.test_features.merge(d.test_features);
}

std::map<std::string, std::string> localizer_hashes(const fs::path& dir) {
  return fs::exists(dir / "localizers") ? hash_artifacts(dir / "localizers")
                                        : std::map<std::string, std::string>{};
}

}  // namespace

StoredSystem load_system(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw IoError("system directory not found: " + dir.string());
  StoredSystem s;
  s.config = pipeline_config_from_json(read_json_file(dir / "config.json"));
  s.system.segmenter = load_segmenter(dir / "segmenter");
  s.system.stats = s.system.segmenter.stats;
  s.system.classes = s.system.segmenter.classes;
  s.system.points = read_points(dir / "points.jsonl");
  for (int cls : s.system.classes) {
    s.system.localizers.emplace(
        cls, load_localizer(dir / "localizers" / ("class_" + std::to_string(cls))));
  }

  const DatasetManifest base = read_manifest(dir / "data");
  s.num_classes = base.num_classes;
  merge(s, load_dataset(base, &s.system.stats));
  if (fs::exists(dir / "added_data.json")) {
    for (const auto& p : read_json_file(dir / "added_data.json")) {
      const fs::path path = p.get<std::string>();
      const DatasetManifest m = read_manifest(path);
      if (m.num_classes != s.num_classes) {
        throw DataError("added dataset " + path.string() + " has a different class count");
      }
      merge(s, load_dataset(m, &s.system.stats));
      s.added_manifests.push_back(path);
    }
  }
  return s;
}

AddClassConfig add_class_config(const PipelineConfig& config, int new_class) {
  const auto offset = static_cast<uint64_t>(new_class);
  AddClassConfig c;
  c.localizer = config.localizer;
  c.localizer.seed = stage_seed(config.seed, Stage::kLocalizerBase, offset);
  c.sampling = config.sampling;
  c.sampling.seed = stage_seed(config.seed, Stage::kSampling, offset + 1);
  c.segmentation = config.segmentation;
  c.segmentation.seed = stage_seed(config.seed, Stage::kSegmentation, offset + 1);
  c.jobs = resolve_jobs(config.jobs);
  return c;
}

AddClassOutcome add_class_to_system(const fs::path& system_dir, int new_class,
                                    const fs::path& manifest, const fs::path& out_dir,
                                    int jobs) {
  StoredSystem stored = load_system(system_dir);
  if (new_class < 0 || static_cast<size_t>(new_class) >= stored.num_classes) {
    throw ConfigError("class " + std::to_string(new_class) + " is outside the dataset's " +
                      std::to_string(stored.num_classes) + " classes");
  }
  const DatasetManifest m = read_manifest(manifest);
  if (m.num_classes != stored.num_classes) {
    throw DataError("new dataset has " + std::to_string(m.num_classes) +
                    " classes, the system " + std::to_string(stored.num_classes));
  }
  LoadedDataset added = load_dataset(m, &stored.system.stats);
  if (added.train.empty()) throw DataError("new dataset has no train images");

  FeatureStore features = stored.train_features;
  for (const auto& [id, f] : added.train_features) {
    if (!features.emplace(id, f).second) {
      throw DataError("new image id " + std::to_string(id) + " collides with the system");
    }
  }

  if (fs::weakly_canonical(out_dir) != fs::weakly_canonical(system_dir)) {
    fs::create_directories(out_dir);
    fs::copy(system_dir, out_dir,
             fs::copy_options::recursive | fs::copy_options::overwrite_existing);
  }

  AddClassOutcome out;
  out.localizer_hashes_before = localizer_hashes(out_dir);
  AddClassConfig config = add_class_config(stored.config, new_class);
  if (jobs > 0) config.jobs = jobs;
  out.result = add_class(new_class, added.train, stored.train, stored.system, features, config);

  const SegmentationSystem& sys = out.result.system;
  save_localizer(sys.localizers.at(new_class),
                 out_dir / "localizers" / ("class_" + std::to_string(new_class)),
                 config.localizer);
  write_points(out_dir / "points.jsonl", sys.points);
  save_segmenter(sys.segmenter, out_dir / "segmenter", config.segmentation);

  nlohmann::json added_list = nlohmann::json::array();
  for (const auto& p : stored.added_manifests) added_list.push_back(p.string());
  added_list.push_back(fs::absolute(manifest).lexically_normal().string());
  write_json_file(out_dir / "added_data.json", added_list);

  out.localizer_hashes_after = localizer_hashes(out_dir);
  for (const auto& [path, hash] : out.localizer_hashes_before) {
    const auto it = out.localizer_hashes_after.find(path);
    if (it == out.localizer_hashes_after.end() || it->second != hash) {
      throw IoError("add-class modified existing localizer file " + path);
    }
  }

  out.before = evaluate(stored.system.segmenter, stored.test, stored.test_features,
                        stored.num_classes);
  out.after = evaluate(sys.segmenter, stored.test, stored.test_features, stored.num_classes);
  spdlog::info("add-class {}: {} new points, head retrained in {:.2f}s, mIoU {:.4f} -> {:.4f}",
               new_class, out.result.new_points.size(), out.result.segmentation.seconds,
               out.before.miou, out.after.miou);
  return out;
}

}  // namespace divseg
