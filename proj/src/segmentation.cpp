#include "divseg/segmentation.hpp"

#include <algorithm>
#include <chrono>
#include <numeric>
#include <set>

#include <spdlog/spdlog.h>

namespace divseg {

AugmentedFeatureGrid augment_with_global(const FeatureGrid& f) {
  const size_t d = f.depth();
  const size_t n = f.locations();
  std::vector<double> mean(d, 0.0);
  for (size_t i = 0; i < n; ++i) {
    auto v = f.grid.at(i);
    for (size_t k = 0; k < d; ++k) mean[k] += v[k];
  }
  double ss = 0.0;
  for (double& m : mean) {
    m /= static_cast<double>(n);
    ss += m * m;
  }
  AugmentedFeatureGrid out;
  out.base_depth = d;
  out.global.assign(d, 0.0f);
  if (ss > 0.0) {
    const double inv = 1.0 / std::sqrt(ss);
    for (size_t k = 0; k < d; ++k) out.global[k] = static_cast<float>(mean[k] * inv);
  }
  out.grid = Grid(f.grid.height(), f.grid.width(), 2 * d);
  for (size_t i = 0; i < n; ++i) {
    auto src = f.grid.at(i);
    auto dst = out.grid.at(i);
    std::copy(src.begin(), src.end(), dst.begin());
    std::copy(out.global.begin(), out.global.end(), dst.begin() + static_cast<long>(d));
  }
  return out;
}

size_t SegmentationModel::index_of(int label) const {
  if (label == kBackgroundLabel) return background_index();
  auto it = std::find(classes.begin(), classes.end(), label);
  if (it == classes.end()) {
    throw DataError("label " + std::to_string(label) + " is not in the class universe");
  }
  return static_cast<size_t>(it - classes.begin());
}

int SegmentationModel::label_of(size_t index) const {
  if (index == background_index()) return kBackgroundLabel;
  return classes.at(index);
}

SegmentationTraining train_segmentation(std::span<const SampledPoint> points,
                                        const FeatureStore& features,
                                        const std::vector<int>& classes,
                                        const NormStats& stats,
                                        const SegmentationConfig& config) {
  const auto start = std::chrono::steady_clock::now();
  if (points.empty()) throw DataError("train_segmentation: empty point set");
  if (classes.empty()) throw ConfigError("train_segmentation: empty class universe");
  if (std::set<int>(classes.begin(), classes.end()).size() != classes.size()) {
    throw ConfigError("train_segmentation: duplicate class ids");
  }
  if (config.batch == 0 || config.hidden == 0) {
    throw ConfigError("segmentation batch and hidden sizes must be positive");
  }

  SegmentationTraining result;
  SegmentationModel& model = result.model;
  model.classes = classes;
  model.stats = stats;
  model.seed = config.seed;

  // Resolve every point up front: feature row pointer and target index.
  struct Target {
    std::span<const float> x;
    size_t cls;
  };
  std::vector<Target> targets;
  targets.reserve(points.size());
  size_t in_dim = 0;
  for (const auto& p : points) {
    auto it = features.find(p.image);
    if (it == features.end()) {
      throw DataError("train_segmentation: no features for image " + std::to_string(p.image));
    }
    const AugmentedFeatureGrid& g = it->second;
    if (in_dim == 0) {
      in_dim = g.grid.depth();
      model.base_dim = g.base_depth;
      model.global_dim = g.global.size();
    } else if (g.grid.depth() != in_dim) {
      throw ShapeError("train_segmentation: inconsistent feature depth");
    }
    if (p.loc >= g.grid.locations()) throw DataError("point location out of range");
    targets.push_back({g.grid.at(p.loc), model.index_of(p.label)});
  }

  Rng rng(config.seed);
  model.net = TwoLayerNet<float>(in_dim, config.hidden, model.num_outputs());
  Rng init_rng = rng.derive(1);
  model.net.init(init_rng);

  std::vector<size_t> order(targets.size());
  std::iota(order.begin(), order.end(), size_t{0});
  AdamOptimizer adam(config.lr);
  TwoLayerGrad grad = model.net.make_grad();
  std::vector<PointLabel> labels;
  for (size_t epoch = 0; epoch < config.epochs; ++epoch) {
    rng.shuffle(std::span<size_t>(order));
    double epoch_loss = 0.0;
    for (size_t start_idx = 0; start_idx < order.size(); start_idx += config.batch) {
      const size_t b = std::min(config.batch, order.size() - start_idx);
      Grid batch(1, b, in_dim);
      labels.clear();
      for (size_t j = 0; j < b; ++j) {
        const Target& t = targets[order[start_idx + j]];
        std::copy(t.x.begin(), t.x.end(), batch.at(j).begin());
        labels.push_back({j, t.cls});
      }
      Grid pre;
      const Grid logits = model.net.forward(batch, &pre);
      const LossValue loss = masked_ce_loss_and_grad(logits, labels);
      epoch_loss += loss.loss * static_cast<double>(b);
      grad.zero();
      for (size_t j = 0; j < b; ++j) {
        model.net.backward(batch.at(j), pre.at(j), loss.grad.at(j), grad);
      }
      adam.step(model.net, grad);
    }
    epoch_loss /= static_cast<double>(order.size());
    if (!std::isfinite(epoch_loss)) throw NumericError("segmentation loss is not finite");
    result.epoch_loss.push_back(epoch_loss);
    spdlog::debug("segmentation epoch {} loss {:.5f}", epoch, epoch_loss);
  }
  result.points = targets.size();
  result.seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return result;
}

Prediction predict(const SegmentationModel& model, const AugmentedFeatureGrid& f) {
  if (f.grid.depth() != model.net.in_dim()) {
    throw ShapeError("predict: feature depth " + std::to_string(f.grid.depth()) +
                     " but model expects " + std::to_string(model.net.in_dim()));
  }
  const Grid logits = model.net.forward(f.grid);
  const size_t c = model.num_outputs();
  Prediction out;
  out.labels = Grid(f.grid.height(), f.grid.width(), 1);
  out.probs = Grid(f.grid.height(), f.grid.width(), c);
  std::vector<double> e(c);
  for (size_t i = 0; i < logits.locations(); ++i) {
    auto z = logits.at(i);
    const double m = *std::max_element(z.begin(), z.end());
    double sum = 0.0;
    for (size_t k = 0; k < c; ++k) {
      e[k] = std::exp(static_cast<double>(z[k]) - m);
      sum += e[k];
    }
    size_t best = 0;
    for (size_t k = 0; k < c; ++k) {
      out.probs(i, k) = static_cast<float>(e[k] / sum);
      if (z[k] > z[best]) best = k;
    }
    out.labels(i, 0) = static_cast<float>(best);
  }
  return out;
}

double point_accuracy(const SegmentationModel& model, std::span<const SampledPoint> points,
                      const FeatureStore& features) {
  if (points.empty()) return 0.0;
  size_t correct = 0;
  std::vector<float> pre(model.net.hidden_dim()), act(model.net.hidden_dim()),
      out(model.num_outputs());
  for (const auto& p : points) {
    const auto& g = features.at(p.image);
    model.net.forward(g.grid.at(p.loc), pre, act, out);
    const size_t best =
        static_cast<size_t>(std::max_element(out.begin(), out.end()) - out.begin());
    if (best == model.index_of(p.label)) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(points.size());
}

AddClassResult add_class(int new_class, std::span<const TrainingImage> new_images,
                         std::span<const TrainingImage> existing_images,
                         const SegmentationSystem& existing, const FeatureStore& features,
                         const AddClassConfig& config) {
  if (std::find(existing.classes.begin(), existing.classes.end(), new_class) !=
      existing.classes.end()) {
    throw ConfigError("add_class: class " + std::to_string(new_class) +
                      " is already registered");
  }
  const bool any_tagged = std::any_of(new_images.begin(), new_images.end(),
                                      [&](const auto& img) { return img.tags.contains(new_class); });
  if (!any_tagged) {
    throw DataError("add_class: no new image is tagged with class " + std::to_string(new_class));
  }

  AddClassResult result;
  for (const auto& [cls, m] : existing.localizers) {
    result.checksums_before[cls] = parameter_checksum(m.net);
  }

  std::vector<TrainingImage> loc_data(new_images.begin(), new_images.end());
  loc_data.insert(loc_data.end(), existing_images.begin(), existing_images.end());
  result.new_localizer = train_localizer(new_class, loc_data, config.localizer);

  SegmentationSystem& sys = result.system;
  sys = existing;
  sys.classes.push_back(new_class);
  sys.localizers[new_class] = result.new_localizer.model;

  result.new_points =
      build_supervision_set(new_images, sys.localizers, config.sampling, config.jobs);
  sys.points.insert(sys.points.end(), result.new_points.begin(), result.new_points.end());

  result.segmentation =
      train_segmentation(sys.points, features, sys.classes, sys.stats, config.segmentation);
  sys.segmenter = result.segmentation.model;

  for (const auto& [cls, before] : result.checksums_before) {
    const uint64_t after = parameter_checksum(sys.localizers.at(cls).net);
    result.checksums_after[cls] = after;
    if (after != before) {
      throw NumericError("add_class: localizer for class " + std::to_string(cls) +
                         " changed");
    }
  }
  return result;
}

}  // namespace divseg
