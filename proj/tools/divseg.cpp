// Command-line front end. Every subcommand resolves one PipelineConfig:
// defaults, then --config JSON, then flags.
#include <cstdio>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "divseg/ablation.hpp"
#include "divseg/checkpoint.hpp"
#include "divseg/dataset_io.hpp"
#include "divseg/gradcheck.hpp"
#include "divseg/parallel.hpp"
#include "divseg/pipeline.hpp"
#include "divseg/render.hpp"
#include "divseg/system.hpp"
#include "divseg/tensor_io.hpp"

namespace fs = std::filesystem;
using namespace divseg;

namespace {

struct Overrides {
  std::string config_path;
  std::optional<int> jobs;
  std::optional<uint64_t> seed;
  // data
  std::optional<size_t> n_train, n_test, classes, size;
  std::optional<int> first_id;
  std::vector<double> priors;
  // localizer
  std::optional<std::string> pooling;
  std::optional<size_t> loc_hidden, loc_epochs;
  std::optional<double> loc_lr;
  // sampling
  std::optional<std::string> strategy;
  std::optional<size_t> k;
  std::optional<double> tau, spatial_scale;
  // segmentation
  std::optional<size_t> seg_hidden, seg_epochs, batch;
  std::optional<double> seg_lr;
};

template <typename T, typename U>
void apply(const std::optional<T>& flag, U& field) {
  if (flag) field = *flag;
}

PipelineConfig resolve_config(const Overrides& o) {
  PipelineConfig c;
  bool jobs_in_file = false;
  if (!o.config_path.empty()) {
    const auto j = read_json_file(o.config_path);
    c = pipeline_config_from_json(j);
    jobs_in_file = j.contains("jobs");
  }
  // --jobs, then the config file, then DIVSEED_JOBS.
  if (!jobs_in_file) c.jobs = resolve_jobs(0);
  apply(o.jobs, c.jobs);
  apply(o.seed, c.seed);
  apply(o.n_train, c.data.n_train);
  apply(o.n_test, c.data.n_test);
  apply(o.classes, c.data.classes);
  apply(o.size, c.data.size);
  apply(o.first_id, c.data.first_id);
  if (!o.priors.empty()) c.data.priors = o.priors;
  if (o.pooling) c.localizer.pooling = parse_pooling(*o.pooling);
  apply(o.loc_hidden, c.localizer.hidden);
  apply(o.loc_epochs, c.localizer.epochs);
  apply(o.loc_lr, c.localizer.lr);
  if (o.strategy) c.sampling.strategy = parse_strategy(*o.strategy);
  apply(o.k, c.sampling.k);
  apply(o.tau, c.sampling.tau);
  apply(o.spatial_scale, c.sampling.spatial_scale);
  apply(o.seg_hidden, c.segmentation.hidden);
  apply(o.seg_epochs, c.segmentation.epochs);
  apply(o.batch, c.segmentation.batch);
  apply(o.seg_lr, c.segmentation.lr);
  c.validate();
  spdlog::info("resolved config: {}", to_json(c).dump());
  return c;
}

void add_data_flags(CLI::App* cmd, Overrides& o) {
  cmd->add_option("--n,--n-train", o.n_train, "Training scenes");
  cmd->add_option("--n-test", o.n_test, "Test scenes");
  cmd->add_option("--classes", o.classes, "Foreground classes");
  cmd->add_option("--size", o.size, "Scene side in pixels");
  cmd->add_option("--priors", o.priors, "Per-class appearance probability")->delimiter(',');
  cmd->add_option("--first-id", o.first_id, "First train image id");
}

void add_localizer_flags(CLI::App* cmd, Overrides& o) {
  cmd->add_option("--pooling", o.pooling, "pixel | global");
  cmd->add_option("--loc-hidden", o.loc_hidden, "Localizer hidden units");
  cmd->add_option("--loc-lr", o.loc_lr, "Localizer learning rate (first epochs)");
  cmd->add_option("--loc-epochs", o.loc_epochs, "Localizer epochs before the decay");
}

void add_sampling_flags(CLI::App* cmd, Overrides& o) {
  cmd->add_option("--strategy", o.strategy, "diverse | topk | spatial | dense");
  cmd->add_option("--k", o.k, "Points per (image, class)");
  cmd->add_option("--tau", o.tau, "Dense baseline threshold");
  cmd->add_option("--spatial-scale", o.spatial_scale, "Spatial kernel scale (grid cells)");
}

void add_segmentation_flags(CLI::App* cmd, Overrides& o) {
  cmd->add_option("--seg-hidden", o.seg_hidden, "Segmenter hidden units");
  cmd->add_option("--seg-lr", o.seg_lr, "Segmenter learning rate");
  cmd->add_option("--seg-epochs", o.seg_epochs, "Segmenter epochs");
  cmd->add_option("--batch", o.batch, "Points per segmenter batch");
}

std::map<int, LocalizationModel> load_localizers(const fs::path& path) {
  std::map<int, LocalizationModel> models;
  if (fs::exists(path / "model.json")) {
    LocalizationModel m = load_localizer(path);
    models.emplace(m.class_id, std::move(m));
    return models;
  }
  if (!fs::is_directory(path)) throw IoError("no localizer checkpoints at " + path.string());
  for (const auto& entry : fs::directory_iterator(path)) {
    if (entry.is_directory() && fs::exists(entry.path() / "model.json")) {
      LocalizationModel m = load_localizer(entry.path());
      models.emplace(m.class_id, std::move(m));
    }
  }
  if (models.empty()) throw IoError("no localizer checkpoints at " + path.string());
  return models;
}

const ManifestEntry& find_entry(const DatasetManifest& m, int id) {
  for (const auto& e : m.images) {
    if (e.id == id) return e;
  }
  throw DataError("image " + std::to_string(id) + " is not in the manifest");
}

FeatureGrid unit_features(const DatasetManifest& m, const ManifestEntry& e,
                          const NormStats& stats) {
  return normalize_features({load_tensor(m.root / e.features), NormState::kRaw, 0}, stats);
}

Grid load_rgb(const DatasetManifest& m, const ManifestEntry& e) {
  if (e.image.empty()) throw DataError("image " + std::to_string(e.id) + " has no pixels");
  return load_tensor(m.root / e.image);
}

Grid dataset_labels(const SegmentationModel& model, const FeatureGrid& unit,
                    size_t num_classes) {
  return to_dataset_labels(predict(model, augment_with_global(unit)).labels, model, num_classes);
}

std::vector<int> point_classes(const std::vector<SampledPoint>& points) {
  std::set<int> s;
  for (const auto& p : points) {
    if (p.label != kBackgroundLabel) s.insert(p.label);
  }
  return {s.begin(), s.end()};
}

// "table", "table.txt" and "table.json" all name the pair table.{txt,json}.
fs::path strip_table_ext(fs::path p) {
  if (p.extension() == ".txt" || p.extension() == ".json") p.replace_extension();
  return p;
}

int exit_code(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kConfig: return 2;
    case ErrorKind::kData: return 3;
    case ErrorKind::kNumeric: return 4;
    case ErrorKind::kIo: return 5;
  }
  return 1;
}

}  // namespace

int main(int argc, char** argv) {
  auto logger = spdlog::stderr_color_mt("divseg");
  spdlog::set_default_logger(logger);

  CLI::App app{"Self-supervised semantic segmentation from image-level tags"};
  app.require_subcommand(1);
  Overrides o;
  std::string log_level = "info";
  app.add_option("--config", o.config_path, "JSON config; flags override it")
      ->check(CLI::ExistingFile);
  app.add_option("--jobs", o.jobs, "Worker threads (default: DIVSEED_JOBS or 1)");
  app.add_option("--log-level", log_level, "trace | debug | info | warn | error")
      ->check(CLI::IsMember({"trace", "debug", "info", "warn", "error", "off"}));
  app.fallthrough();

  fs::path out, data, in, model_path, points_path, system_dir, grid_path;
  std::optional<int> class_id, image_id;
  std::optional<size_t> n_seeds;
  std::string ppm_path, kind;
  size_t instances = 20;
  double tolerance = 1e-4;

  auto* gen = app.add_subcommand("gen-data", "Generate a synthetic dataset with features");
  gen->add_option("--seed", o.seed, "Base seed");
  add_data_flags(gen, o);
  gen->add_option("--out", out, "Output directory")->required();

  auto* train_loc = app.add_subcommand("train-loc", "Train localization networks");
  train_loc->add_option("--class", class_id, "Class id (default: every tagged class)");
  train_loc->add_option("--data", data, "Dataset manifest")->required();
  train_loc->add_option("--seed", o.seed, "Base seed");
  add_localizer_flags(train_loc, o);
  train_loc->add_option("--out", out, "Checkpoint directory")->required();

  auto* sample = app.add_subcommand("sample", "Sample point-wise pseudo-labels");
  add_sampling_flags(sample, o);
  sample->add_option("--in", in, "Localizer checkpoint or directory of them")->required();
  sample->add_option("--features,--data", data, "Dataset manifest")->required();
  sample->add_option("--seed", o.seed, "Base seed");
  sample->add_option("--out", out, "points.jsonl")->required();

  auto* train_seg = app.add_subcommand("train-seg", "Train the segmentation head on points");
  train_seg->add_option("--points", points_path, "points.jsonl")->required();
  train_seg->add_option("--features,--data", data, "Dataset manifest")->required();
  train_seg->add_option("--seed", o.seed, "Base seed");
  add_segmentation_flags(train_seg, o);
  train_seg->add_option("--out", out, "Checkpoint directory")->required();

  auto* predict_cmd = app.add_subcommand("predict", "Predict label maps");
  predict_cmd->add_option("--model", model_path, "Segmenter checkpoint")->required();
  predict_cmd->add_option("--data", data, "Dataset manifest")->required();
  predict_cmd->add_option("--image", image_id, "Image id (default: every test image)");
  predict_cmd->add_option("--out", out, "labels.dstn, or a directory without --image")
      ->required();
  predict_cmd->add_option("--ppm", ppm_path, "Also write an indexed-color PPM");

  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a segmenter on the test split");
  eval_cmd->add_option("--model", model_path, "Segmenter checkpoint")->required();
  eval_cmd->add_option("--data", data, "Dataset manifest")->required();
  eval_cmd->add_option("--out", out, "report.json")->required();

  auto* ablate = app.add_subcommand("ablate", "Run an ablation grid over seeds");
  ablate->add_option("--grid", grid_path, "Grid JSON (default: the standard grid)")
      ->check(CLI::ExistingFile);
  ablate->add_option("--seeds", n_seeds, "Use seeds 1..N");
  add_data_flags(ablate, o);
  add_localizer_flags(ablate, o);
  add_sampling_flags(ablate, o);
  add_segmentation_flags(ablate, o);
  ablate->add_option("--out", out, "Writes <out>.txt and <out>.json")->required();

  auto* add_cls = app.add_subcommand("add-class", "Add a foreground class to a system");
  add_cls->add_option("--class", class_id, "New class id")->required();
  add_cls->add_option("--data", data, "Manifest of the new images")->required();
  add_cls->add_option("--system", system_dir, "System directory from `run`")->required();
  add_cls->add_option("--out", out, "Output system directory (default: in place)");

  auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference gradient checks");
  gradcheck->add_option("--seed", o.seed, "Seed");
  gradcheck->add_option("--instances", instances, "Random instances per loss");
  gradcheck->add_option("--tolerance", tolerance, "Max relative error");

  auto* render = app.add_subcommand("render", "Write figure-style PGM/PPM images");
  render->add_option("kind", kind, "heatmap | points | labels | image")
      ->required()
      ->check(CLI::IsMember({"heatmap", "points", "labels", "image"}));
  render->add_option("--data", data, "Dataset manifest")->required();
  render->add_option("--image", image_id, "Image id")->required();
  render->add_option("--localizer", in, "Localizer checkpoint (heatmap)");
  render->add_option("--points", points_path, "points.jsonl (points)");
  render->add_option("--model", model_path, "Segmenter checkpoint (labels)");
  render->add_option("--out", out, "Output file; heatmap also accepts .dstn")->required();

  auto* run = app.add_subcommand("run", "End-to-end pipeline with artifacts on disk");
  run->add_option("--seed", o.seed, "Base seed");
  add_data_flags(run, o);
  add_localizer_flags(run, o);
  add_sampling_flags(run, o);
  add_segmentation_flags(run, o);
  run->add_option("--out", out, "Output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }
  spdlog::set_level(spdlog::level::from_str(log_level));

  try {
    if (*gen) {
      const PipelineConfig c = resolve_config(o);
      const Benchmark bench = build_benchmark(c);
      write_dataset(bench, out);
      write_json_file(out / "config.json", to_json(c));
      spdlog::info("wrote {} train and {} test images to {}", bench.train.size(),
                   bench.test.size(), out.string());
    } else if (*train_loc) {
      const PipelineConfig c = resolve_config(o);
      const LoadedDataset d = load_dataset(read_manifest(data));
      if (class_id) {
        LocalizerConfig lc = c.localizer;
        lc.seed = stage_seed(c.seed, Stage::kLocalizerBase, static_cast<uint64_t>(*class_id));
        const auto t = train_localizer(*class_id, d.train, lc);
        save_localizer(t.model, out, lc);
        spdlog::info("class {}: final loss {:.5f}, train accuracy {:.3f}", *class_id,
                     t.epoch_loss.back(), image_accuracy(t.model, d.train));
      } else {
        for (const auto& [cls, t] :
             train_all_localizers(d.train, d.num_classes, c.localizer, c.seed, c.jobs)) {
          save_localizer(t.model, out / ("class_" + std::to_string(cls)), c.localizer);
          spdlog::info("class {}: final loss {:.5f}", cls, t.epoch_loss.back());
        }
      }
    } else if (*sample) {
      const PipelineConfig c = resolve_config(o);
      const LoadedDataset d = load_dataset(read_manifest(data));
      SamplingConfig sc = c.sampling;
      sc.seed = stage_seed(c.seed, Stage::kSampling);
      const auto points = build_supervision_set(d.train, load_localizers(in), sc, c.jobs);
      write_points(out, points);
      spdlog::info("wrote {} points to {}", points.size(), out.string());
    } else if (*train_seg) {
      const PipelineConfig c = resolve_config(o);
      const LoadedDataset d = load_dataset(read_manifest(data));
      const auto points = read_points(points_path);
      SegmentationConfig seg = c.segmentation;
      seg.seed = stage_seed(c.seed, Stage::kSegmentation);
      const auto t = train_segmentation(points, d.train_features, point_classes(points), d.stats,
                                        seg);
      save_segmenter(t.model, out, seg);
      std::printf("train-seg: %zu points, %.2f s, final loss %.5f\n", t.points, t.seconds,
                  t.epoch_loss.back());
    } else if (*predict_cmd) {
      const DatasetManifest m = read_manifest(data);
      const SegmentationModel model = load_segmenter(model_path);
      auto write_one = [&](const ManifestEntry& e, const fs::path& dst) {
        const Grid labels = dataset_labels(model, unit_features(m, e, model.stats), m.num_classes);
        save_tensor(labels, dst);
        return labels;
      };
      if (image_id) {
        const Grid labels = write_one(find_entry(m, *image_id), out);
        if (!ppm_path.empty()) {
          write_file_bytes(ppm_path, encode_ppm(colorize_labels(labels, m.num_classes)));
        }
      } else {
        fs::create_directories(out);
        for (const auto& e : m.images) {
          if (e.split != "test") continue;
          const Grid labels = write_one(e, out / (std::to_string(e.id) + ".labels.dstn"));
          if (!ppm_path.empty()) {
            write_file_bytes(out / (std::to_string(e.id) + ".labels.ppm"),
                             encode_ppm(colorize_labels(labels, m.num_classes)));
          }
        }
      }
    } else if (*eval_cmd) {
      const SegmentationModel model = load_segmenter(model_path);
      const LoadedDataset d = load_dataset(read_manifest(data), &model.stats);
      EvalReport report = evaluate(model, d.test, d.test_features, d.num_classes);
      report.config = {{"model", model_path.string()}, {"seed", model.seed}};
      write_json_file(out, report.to_json());
      std::printf("mIoU %.4f  pixel accuracy %.4f\n", report.miou, report.pixel_accuracy);
    } else if (*ablate) {
      const PipelineConfig c = resolve_config(o);
      AblationGrid grid = grid_path.empty()
                              ? default_ablation_grid(c, 5)
                              : ablation_grid_from_json(read_json_file(grid_path), c);
      if (n_seeds) {
        if (*n_seeds == 0) throw ConfigError("--seeds must be positive");
        grid.seeds.clear();
        for (uint64_t s = 1; s <= *n_seeds; ++s) grid.seeds.push_back(s);
      }
      const AblationTable table = ablation_run(grid);
      const fs::path stem = strip_table_ext(out);
      if (stem.has_parent_path()) fs::create_directories(stem.parent_path());
      const std::string text = table.to_text();
      write_file_bytes(fs::path(stem.string() + ".txt"),
                       std::vector<uint8_t>(text.begin(), text.end()));
      write_json_file(fs::path(stem.string() + ".json"), table.to_json());
      std::fputs(text.c_str(), stdout);
    } else if (*add_cls) {
      const fs::path dst = out.empty() ? system_dir : out;
      const AddClassOutcome r =
          add_class_to_system(system_dir, *class_id, data, dst, resolve_jobs(o.jobs.value_or(0)));
      const nlohmann::json summary = {
          {"class", *class_id},
          {"new_points", r.result.new_points.size()},
          {"train_seg_seconds", r.result.segmentation.seconds},
          {"before", r.before.to_json()},
          {"after", r.after.to_json()},
          {"localizer_hashes_before", r.localizer_hashes_before},
          {"localizer_hashes_after", r.localizer_hashes_after}};
      write_json_file(dst / "add_class.json", summary);
      std::printf("add-class %d: train-seg %.2f s, mIoU on existing test images %.4f -> %.4f\n",
                  *class_id, r.result.segmentation.seconds, r.before.miou, r.after.miou);
    } else if (*gradcheck) {
      const GradCheckSuite suite = run_gradient_checks(o.seed.value_or(1), instances);
      std::map<std::string, double> worst;
      for (const auto& cs : suite.cases) {
        worst[cs.loss] = std::max(worst[cs.loss], cs.result.max_rel_error);
      }
      for (const auto& [loss, err] : worst) {
        std::printf("%-12s max relative error %.3e\n", loss.c_str(), err);
      }
      if (suite.max_rel_error() >= tolerance) {
        throw NumericError("gradient check exceeded tolerance " + std::to_string(tolerance));
      }
    } else if (*render) {
      const DatasetManifest m = read_manifest(data);
      const ManifestEntry& e = find_entry(m, *image_id);
      if (kind == "heatmap") {
        if (in.empty()) throw ConfigError("render heatmap needs --localizer");
        const LocalizationModel loc = load_localizer(in);
        const NormStats stats = load_norm_stats(m.root / m.norm_stats);
        const ScoreMap s = score_image(loc, unit_features(m, e, stats), e.id);
        if (out.extension() == ".dstn") {
          Grid both(s.fg.height(), s.fg.width(), 2);
          for (size_t i = 0; i < s.locations(); ++i) {
            both(i, 0) = s.fg(i, 0);
            both(i, 1) = s.bg(i, 0);
          }
          save_tensor(both, out);
        } else {
          write_file_bytes(out, encode_heatmap_pgm(s.fg));
        }
      } else if (kind == "points") {
        if (points_path.empty()) throw ConfigError("render points needs --points");
        std::vector<SampledPoint> mine;
        for (const auto& p : read_points(points_path)) {
          if (p.image == e.id) mine.push_back(p);
        }
        const Grid rgb = load_rgb(m, e);
        write_file_bytes(out, encode_ppm(overlay_points(rgb, mine, rgb.width() / m.cell, m.cell)));
      } else if (kind == "labels") {
        if (model_path.empty()) throw ConfigError("render labels needs --model");
        const SegmentationModel model = load_segmenter(model_path);
        const Grid labels = dataset_labels(model, unit_features(m, e, model.stats), m.num_classes);
        write_file_bytes(out, encode_ppm(colorize_labels(labels, m.num_classes)));
      } else {
        write_file_bytes(out, encode_ppm(load_rgb(m, e)));
      }
    } else if (*run) {
      const PipelineConfig c = resolve_config(o);
      const RunSummary s = run_pipeline_to_disk(c, out);
      const auto& t = s.result.times;
      std::printf("mIoU %.4f\nstage seconds: data %.2f, train-loc %.2f, sample %.2f, "
                  "train-seg %.2f, eval %.2f\n",
                  s.result.report.miou, t.data, t.localization, t.sampling, t.segmentation,
                  t.eval);
    }
  } catch (const Error& e) {
    spdlog::error("{}", e.what());
    return exit_code(e.kind());
  } catch (const nlohmann::json::exception& e) {
    spdlog::error("bad JSON: {}", e.what());
    return 2;
  } catch (const fs::filesystem_error& e) {
    spdlog::error("{}", e.what());
    return 5;
  }
  return 0;
}
