#include "divseg/dataset_io.hpp"

#include <algorithm>

#include "divseg/checkpoint.hpp"
#include "divseg/tensor_io.hpp"

namespace divseg {
namespace fs = std::filesystem;
namespace {

ManifestEntry write_entry(const fs::path& dir, const SyntheticScene& scene,
                          const FeatureGrid& raw, const std::string& split) {
  ManifestEntry e;
  e.id = scene.id;
  e.split = split;
  e.tags = scene.tags.present;
  const std::string stem = "images/" + split + "_" + std::to_string(scene.id);
  e.image = stem + ".image.dstn";
  e.mask = stem + ".mask.dstn";
  e.features = stem + ".features.dstn";
  save_tensor(scene.image, dir / e.image);
  save_tensor(scene.mask, dir / e.mask);
  save_tensor(raw.grid, dir / e.features);
  return e;
}

}  // namespace

void write_dataset(const Benchmark& bench, const fs::path& dir) {
  nlohmann::json images = nlohmann::json::array();
  auto add = [&](const std::vector<SyntheticScene>& scenes, const std::vector<FeatureGrid>& raw,
                 const std::string& split) {
    for (size_t i = 0; i < scenes.size(); ++i) {
      const ManifestEntry e = write_entry(dir, scenes[i], raw[i], split);
      images.push_back({{"id", e.id},
                        {"split", e.split},
                        {"tags", e.tags},
                        {"image", e.image},
                        {"mask", e.mask},
                        {"features", e.features}});
    }
  };
  add(bench.train_scenes, bench.train_raw, "train");
  add(bench.test_scenes, bench.test_raw, "test");
  save_norm_stats(bench.stats, dir / "norm_stats.dstn");

  const nlohmann::json manifest = {
      {"version", 1},
      {"num_classes", bench.scenes.num_classes},
      {"height", bench.scenes.height},
      {"width", bench.scenes.width},
      {"cell", bench.extractor.cell},
      {"feature_dim", bench.extractor.depth()},
      {"extractor_seed", bench.extractor.seed},
      {"norm_stats", "norm_stats.dstn"},
      {"images", images}};
  write_json_file(dir / "manifest.json", manifest);
}

DatasetManifest read_manifest(const fs::path& path) {
  const fs::path file = fs::is_directory(path) ? path / "manifest.json" : path;
  if (!fs::exists(file)) throw IoError("manifest not found: " + file.string());
  const auto j = read_json_file(file);
  DatasetManifest m;
  m.root = file.parent_path();
  try {
    m.num_classes = j.at("num_classes");
    m.cell = j.value("cell", size_t{4});
    m.norm_stats = j.value("norm_stats", std::string("norm_stats.dstn"));
    for (const auto& item : j.at("images")) {
      ManifestEntry e;
      e.id = item.at("id");
      e.split = item.at("split");
      e.tags = item.at("tags").get<std::vector<int>>();
      e.image = item.value("image", std::string());
      e.mask = item.value("mask", std::string());
      e.features = item.at("features");
      if (e.split != "train" && e.split != "test") {
        throw DataError("manifest image " + std::to_string(e.id) + ": unknown split '" +
                        e.split + "'");
      }
      std::sort(e.tags.begin(), e.tags.end());
      e.tags.erase(std::unique(e.tags.begin(), e.tags.end()), e.tags.end());
      for (int t : e.tags) {
        if (t < 0 || static_cast<size_t>(t) >= m.num_classes) {
          throw DataError("manifest image " + std::to_string(e.id) + ": tag out of range");
        }
      }
      m.images.push_back(std::move(e));
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError("malformed manifest " + file.string() + ": " + e.what());
  }
  return m;
}

LoadedDataset load_dataset(const DatasetManifest& manifest, const NormStats* stats) {
  LoadedDataset out;
  out.num_classes = manifest.num_classes;
  out.stats = stats ? *stats : load_norm_stats(manifest.root / manifest.norm_stats);
  for (const auto& e : manifest.images) {
    FeatureGrid raw{load_tensor(manifest.root / e.features), NormState::kRaw, 0};
    FeatureGrid unit = normalize_features(raw, out.stats);
    if (e.split == "train") {
      out.train_features.emplace(e.id, augment_with_global(unit));
      out.train.push_back({e.id, std::move(unit), TagSet{e.id, e.tags}});
    } else {
      if (e.mask.empty()) {
        throw DataError("test image " + std::to_string(e.id) + " has no mask");
      }
      const Grid mask = load_tensor(manifest.root / e.mask);
      Grid truth = downsample_mask(mask, manifest.cell, manifest.num_classes + 1);
      if (truth.height() != unit.grid.height() || truth.width() != unit.grid.width()) {
        throw ShapeError("test image " + std::to_string(e.id) +
                         ": mask does not match the feature grid");
      }
      out.test_features.emplace(e.id, augment_with_global(unit));
      out.test.push_back({e.id, std::move(unit), std::move(truth)});
    }
  }
  return out;
}

}  // namespace divseg
