#include "divseg/localization.hpp"

#include <algorithm>
#include <numeric>

#include <spdlog/spdlog.h>

#include "divseg/tensor_io.hpp"

namespace divseg {
namespace {

void check_features(const LocalizationModel& model, const FeatureGrid& f) {
  if (f.state != NormState::kUnit) {
    throw DataError("localization expects unit-normalized features, got " +
                    to_string(f.state));
  }
  if (f.depth() != model.net.in_dim()) {
    throw ShapeError("feature depth " + std::to_string(f.depth()) +
                     " but localizer expects " + std::to_string(model.net.in_dim()));
  }
}

void split_scores(const Grid& out, std::vector<float>& fg, std::vector<float>& bg) {
  fg.resize(out.locations());
  bg.resize(out.locations());
  for (size_t i = 0; i < out.locations(); ++i) {
    fg[i] = out(i, 0);
    bg[i] = out(i, 1);
  }
}

}  // namespace

bool TagSet::contains(int cls) const {
  return std::binary_search(present.begin(), present.end(), cls);
}

LocalizerTraining train_localizer(int cls, std::span<const TrainingImage> images,
                                  const LocalizerConfig& config) {
  std::vector<size_t> positives, negatives;
  for (size_t i = 0; i < images.size(); ++i) {
    (images[i].tags.contains(cls) ? positives : negatives).push_back(i);
  }
  if (positives.empty()) {
    throw DataError("train_localizer: no positive images for class " + std::to_string(cls));
  }
  if (negatives.empty()) {
    throw DataError("train_localizer: no negative images for class " + std::to_string(cls));
  }
  if (config.hidden == 0) throw ConfigError("localizer hidden size must be positive");

  Rng rng(config.seed);
  std::vector<size_t> drawn;
  if (negatives.size() >= positives.size()) {
    std::vector<size_t> pool = negatives;
    rng.shuffle(std::span<size_t>(pool));
    drawn.assign(pool.begin(), pool.begin() + static_cast<long>(positives.size()));
  } else {
    for (size_t k = 0; k < positives.size(); ++k) {
      drawn.push_back(negatives[rng.below(negatives.size())]);
    }
  }

  LocalizerTraining result;
  for (size_t idx : drawn) result.negative_ids.push_back(images[idx].id);
  spdlog::debug("class {}: {} positives, negatives drawn {}", cls, positives.size(),
                result.negative_ids.size());

  LocalizationModel& model = result.model;
  model.class_id = cls;
  model.pooling = config.pooling;
  model.seed = config.seed;
  model.net = TwoLayerNet<float>(images[positives[0]].features.depth(), config.hidden, 2);
  Rng init_rng = rng.derive(1);
  model.net.init(init_rng);

  std::vector<std::pair<size_t, int>> schedule;
  for (size_t i : positives) schedule.emplace_back(i, 1);
  for (size_t i : drawn) schedule.emplace_back(i, 0);

  AdamOptimizer adam(config.lr);
  TwoLayerGrad grad = model.net.make_grad();
  Grid pre;
  std::vector<float> fg, bg;
  const size_t total_epochs = config.epochs + config.decay_epochs;
  for (size_t epoch = 0; epoch < total_epochs; ++epoch) {
    adam.set_lr(epoch < config.epochs ? config.lr : config.decay_lr);
    rng.shuffle(std::span<std::pair<size_t, int>>(schedule));
    double epoch_loss = 0.0;
    for (const auto& [idx, label] : schedule) {
      const FeatureGrid& f = images[idx].features;
      check_features(model, f);
      const Grid out = model.net.forward(f.grid, &pre);
      split_scores(out, fg, bg);
      const PoolingTrace trace = pool_scores<float>(model.pooling, fg, bg);
      const PooledLoss loss = bce_loss_and_grad(trace, label);
      if (!std::isfinite(loss.loss)) {
        throw NumericError("localizer class " + std::to_string(cls) + " epoch " +
                           std::to_string(epoch) + " image " +
                           std::to_string(images[idx].id) + ": loss is NaN");
      }
      if (loss.clamped) ++result.clamp_events;
      epoch_loss += loss.loss;

      grad.zero();
      if (loss.fg_loc == loss.bg_loc) {
        const double d[2] = {loss.d_fg, loss.d_bg};
        model.net.backward(f.grid.at(loss.fg_loc), pre.at(loss.fg_loc), d, grad);
      } else {
        const double dfg[2] = {loss.d_fg, 0.0};
        const double dbg[2] = {0.0, loss.d_bg};
        model.net.backward(f.grid.at(loss.fg_loc), pre.at(loss.fg_loc), dfg, grad);
        model.net.backward(f.grid.at(loss.bg_loc), pre.at(loss.bg_loc), dbg, grad);
      }
      adam.step(model.net, grad);
    }
    epoch_loss /= static_cast<double>(schedule.size());
    if (!std::isfinite(epoch_loss)) {
      throw NumericError("localizer class " + std::to_string(cls) + ": epoch loss not finite");
    }
    result.epoch_loss.push_back(epoch_loss);
    spdlog::debug("class {} epoch {} loss {:.5f}", cls, epoch, epoch_loss);
  }
  return result;
}

ScoreMap score_image(const LocalizationModel& model, const FeatureGrid& f, int image_id) {
  check_features(model, f);
  const Grid out = model.net.forward(f.grid);
  ScoreMap map;
  map.class_id = model.class_id;
  map.image_id = image_id;
  map.fg = Grid(f.grid.height(), f.grid.width(), 1);
  map.bg = Grid(f.grid.height(), f.grid.width(), 1);
  for (size_t i = 0; i < out.locations(); ++i) {
    map.fg(i, 0) = out(i, 0);
    map.bg(i, 0) = out(i, 1);
  }
  if (!all_finite(map.fg) || !all_finite(map.bg)) {
    throw NumericError("score map for class " + std::to_string(model.class_id) +
                       " is not finite");
  }
  return map;
}

PoolingTrace image_probability(const LocalizationModel& model, const FeatureGrid& f) {
  const ScoreMap map = score_image(model, f);
  return pool_scores(model.pooling, map.fg.values(), map.bg.values());
}

double image_accuracy(const LocalizationModel& model, std::span<const TrainingImage> images) {
  if (images.empty()) return 0.0;
  size_t correct = 0;
  for (const auto& img : images) {
    const bool present = img.tags.contains(model.class_id);
    const bool predicted = image_probability(model, img.features).prob > 0.5;
    if (present == predicted) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(images.size());
}

uint64_t parameter_checksum(const TwoLayerNet<float>& net) {
  uint64_t h = 0xcbf29ce484222325ULL;
  for (auto p : net.parameters()) {
    h = fnv1a64({reinterpret_cast<const uint8_t*>(p.data()), p.size_bytes()}, h);
  }
  return h;
}

}  // namespace divseg
