#include <gtest/gtest.h>

#include <cmath>

#include "divseg/pipeline.hpp"
#include "divseg/segmentation.hpp"

using namespace divseg;

namespace {

FeatureGrid random_unit(Rng& rng, size_t h, size_t w, size_t d) {
  FeatureGrid f{Grid(h, w, d), NormState::kUnit, 0};
  for (float& v : f.grid.values()) v = static_cast<float>(rng.normal());
  l2_normalize_locations(f.grid);
  return f;
}

// Class c points sit on feature direction c; background on direction 3.
struct ToyProblem {
  FeatureStore features;
  std::vector<SampledPoint> points;
  NormStats stats;
};

ToyProblem separable_points() {
  ToyProblem t;
  Rng rng(3);
  t.stats = {std::vector<float>(4, 0.0f), std::vector<float>(4, 1.0f)};
  for (int img = 0; img < 10; ++img) {
    FeatureGrid f{Grid(4, 4, 4), NormState::kUnit, 0};
    for (size_t loc = 0; loc < 16; ++loc) {
      const size_t dir = rng.below(4);
      f.grid(loc, dir) = 1.0f;
      const int label = dir == 3 ? kBackgroundLabel : static_cast<int>(dir);
      t.points.push_back({img, loc, label, 1, 1.0, 0});
    }
    t.features.emplace(img, augment_with_global(f));
  }
  return t;
}

SegmentationConfig fast_seg() {
  SegmentationConfig c;
  c.hidden = 16;
  c.lr = 1e-2;
  c.epochs = 30;
  c.batch = 20;
  c.seed = 4;
  return c;
}

}  // namespace

TEST(Augment, ConstantGridDescriptorIsThatVector) {
  FeatureGrid f{Grid(3, 3, 2), NormState::kUnit, 0};
  for (size_t i = 0; i < 9; ++i) {
    f.grid(i, 0) = 0.6f;
    f.grid(i, 1) = 0.8f;
  }
  const AugmentedFeatureGrid a = augment_with_global(f);
  EXPECT_EQ(a.grid.depth(), 4u);
  EXPECT_EQ(a.base_depth, 2u);
  EXPECT_NEAR(a.global[0], 0.6f, 1e-6);
  EXPECT_NEAR(a.global[1], 0.8f, 1e-6);
  for (size_t i = 0; i < 9; ++i) {
    EXPECT_EQ(a.grid(i, 0), f.grid(i, 0));
    EXPECT_EQ(a.grid(i, 2), a.global[0]);
    EXPECT_EQ(a.grid(i, 3), a.global[1]);
  }
}

TEST(Augment, PermutationInvariantDescriptor) {
  Rng rng(1);
  const FeatureGrid f = random_unit(rng, 4, 4, 5);
  FeatureGrid rev = f;
  for (size_t i = 0; i < 16; ++i) {
    for (size_t d = 0; d < 5; ++d) rev.grid(i, d) = f.grid(15 - i, d);
  }
  const auto a = augment_with_global(f).global;
  const auto b = augment_with_global(rev).global;
  for (size_t d = 0; d < 5; ++d) EXPECT_NEAR(a[d], b[d], 1e-6);
}

TEST(TrainSegmentation, SeparablePointsFitExactly) {
  const ToyProblem t = separable_points();
  const auto r = train_segmentation(t.points, t.features, {0, 1, 2}, t.stats, fast_seg());
  EXPECT_EQ(point_accuracy(r.model, t.points, t.features), 1.0);
  EXPECT_EQ(r.model.num_outputs(), 4u);
  EXPECT_EQ(r.points, t.points.size());
}

TEST(TrainSegmentation, DeterministicForSeed) {
  const ToyProblem t = separable_points();
  const auto a = train_segmentation(t.points, t.features, {0, 1, 2}, t.stats, fast_seg());
  const auto b = train_segmentation(t.points, t.features, {0, 1, 2}, t.stats, fast_seg());
  EXPECT_EQ(a.model, b.model);
  EXPECT_EQ(a.epoch_loss, b.epoch_loss);
}

TEST(TrainSegmentation, Preconditions) {
  const ToyProblem t = separable_points();
  EXPECT_THROW(train_segmentation({}, t.features, {0, 1, 2}, t.stats, fast_seg()), DataError);
  EXPECT_THROW(train_segmentation(t.points, t.features, {}, t.stats, fast_seg()), ConfigError);
  EXPECT_THROW(train_segmentation(t.points, t.features, {0, 0, 1}, t.stats, fast_seg()),
               ConfigError);
  // Labels outside the universe.
  EXPECT_THROW(train_segmentation(t.points, t.features, {0, 1}, t.stats, fast_seg()),
               DataError);
  std::vector<SampledPoint> stray = t.points;
  stray.push_back({99, 0, 0, 1, 1.0, 0});
  EXPECT_THROW(train_segmentation(stray, t.features, {0, 1, 2}, t.stats, fast_seg()),
               DataError);
}

TEST(Predict, ZeroWeightsGiveUniformProbabilities) {
  SegmentationModel m;
  m.classes = {0, 1, 2};
  m.net = TwoLayerNet<float>(4, 3, 4);
  Rng rng(2);
  const auto f = augment_with_global(random_unit(rng, 3, 3, 2));
  const Prediction p = predict(m, f);
  for (float v : p.probs.values()) EXPECT_NEAR(v, 0.25f, 1e-7);
  for (float v : p.labels.values()) EXPECT_EQ(v, 0.0f);
}

TEST(Predict, ProbabilitiesSumToOneAndLabelsInRange) {
  const ToyProblem t = separable_points();
  const auto r = train_segmentation(t.points, t.features, {0, 1, 2}, t.stats, fast_seg());
  for (const auto& [id, f] : t.features) {
    const Prediction p = predict(r.model, f);
    for (size_t i = 0; i < p.probs.locations(); ++i) {
      double s = 0.0;
      for (float v : p.probs.at(i)) s += v;
      EXPECT_NEAR(s, 1.0, 1e-6);
      EXPECT_GE(p.labels(i, 0), 0.0f);
      EXPECT_LE(p.labels(i, 0), 3.0f);
    }
  }
}

TEST(Predict, LocationWise) {
  const ToyProblem t = separable_points();
  const auto r = train_segmentation(t.points, t.features, {0, 1, 2}, t.stats, fast_seg());
  const AugmentedFeatureGrid& f = t.features.at(0);
  AugmentedFeatureGrid rev = f;
  const size_t n = f.grid.locations();
  for (size_t i = 0; i < n; ++i) {
    for (size_t d = 0; d < f.grid.depth(); ++d) rev.grid(i, d) = f.grid(n - 1 - i, d);
  }
  const Prediction a = predict(r.model, f);
  const Prediction b = predict(r.model, rev);
  for (size_t i = 0; i < n; ++i) EXPECT_EQ(b.labels(i, 0), a.labels(n - 1 - i, 0));
}

TEST(Model, LabelIndexMapping) {
  SegmentationModel m;
  m.classes = {2, 0, 5};
  EXPECT_EQ(m.index_of(5), 2u);
  EXPECT_EQ(m.index_of(kBackgroundLabel), 3u);
  EXPECT_EQ(m.label_of(3), kBackgroundLabel);
  EXPECT_EQ(m.label_of(0), 2);
  EXPECT_THROW(m.index_of(1), DataError);
}

TEST(AddClass, GrowsUniverseAndKeepsOldLocalizers) {
  PipelineConfig c;
  c.seed = 2;
  c.data.n_train = 120;
  c.data.n_test = 20;
  c.data.classes = 3;
  c.data.priors = {0.5, 0.5, 0.0};
  const Benchmark bench = build_benchmark(c);
  const PipelineResult base = run_pipeline(c, bench);

  SegmentationSystem sys;
  for (const auto& [cls, t] : base.localizers) {
    sys.classes.push_back(cls);
    sys.localizers.emplace(cls, t.model);
  }
  sys.points = base.points;
  sys.segmenter = base.segmentation.model;
  sys.stats = bench.stats;
  ASSERT_EQ(sys.classes, (std::vector<int>{0, 1}));

  SceneConfig sc = bench.scenes;
  sc.priors = {0.3, 0.3, 0.8};
  FeatureStore features = bench.train_features;
  std::vector<TrainingImage> fresh;
  for (const auto& s : generate_dataset(60, sc, 77, 5000)) {
    FeatureGrid u = normalize_features(extract_features(s.image, bench.extractor), bench.stats);
    features.emplace(s.id, augment_with_global(u));
    fresh.push_back({s.id, std::move(u), s.tags});
  }
  AddClassConfig ac;
  ac.localizer = c.localizer;
  ac.sampling = c.sampling;
  ac.segmentation = c.segmentation;
  const auto r = add_class(2, fresh, bench.train, sys, features, ac);

  EXPECT_EQ(r.system.classes, (std::vector<int>{0, 1, 2}));
  EXPECT_EQ(r.system.segmenter.num_outputs(), sys.segmenter.num_outputs() + 1);
  EXPECT_EQ(r.checksums_before, r.checksums_after);
  for (int cls : {0, 1}) EXPECT_EQ(r.system.localizers.at(cls), sys.localizers.at(cls));
  EXPECT_GT(r.new_points.size(), 0u);
  EXPECT_EQ(r.system.points.size(), sys.points.size() + r.new_points.size());

  EXPECT_THROW(add_class(1, fresh, bench.train, sys, features, ac), ConfigError);
  std::vector<TrainingImage> untagged;
  for (const auto& img : fresh) {
    if (!img.tags.contains(2)) untagged.push_back(img);
  }
  EXPECT_THROW(add_class(2, untagged, bench.train, sys, features, ac), DataError);
}
