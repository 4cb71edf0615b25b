#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <random>

#include "mandseg/forest.hpp"
#include "mandseg/phantom.hpp"
#include "mandseg/recognition.hpp"
#include "support.hpp"

using namespace mandseg;

namespace {

Slice2D<float> make_slice(std::size_t w, std::size_t h, std::vector<float> px) {
  Slice2D<float> s;
  s.width = w;
  s.height = h;
  s.pixels = std::move(px);
  return s;
}

AxisScores scores(Axis a, std::size_t n, double value) { return {a, std::vector<double>(n, value)}; }

}  // namespace

TEST(Features, LayoutAndValues) {
  // 4x2 slice: air, soft tissue, two bone blobs and one tooth pixel.
  const auto s = make_slice(4, 2, {-1000, 40, 1200, -1000, 40, 40, -1000, 1800});
  const SliceFeatures f = extract_features(s);
  ASSERT_EQ(f.size(), kFeatureCount);
  ASSERT_EQ(kFeatureCount, 40u);
  EXPECT_DOUBLE_EQ(std::accumulate(f.begin(), f.begin() + 32, 0.0), 1.0);
  EXPECT_DOUBLE_EQ(f[0], 3.0 / 8.0);                 // -1000 falls in bin 0
  EXPECT_DOUBLE_EQ(f[(40 + 1000) / 125], 3.0 / 8.0);  // 40 HU
  EXPECT_DOUBLE_EQ(f[(1200 + 1000) / 125], 1.0 / 8.0);
  EXPECT_DOUBLE_EQ(f[32], 2.0 / 8.0);  // >= 200
  EXPECT_DOUBLE_EQ(f[33], 2.0 / 8.0);  // >= 600
  EXPECT_DOUBLE_EQ(f[34], 2.0 / 8.0);  // >= 1100
  EXPECT_DOUBLE_EQ(f[35], 1.0);        // (2,0) and (3,1) touch diagonally
}

TEST(Features, ComponentCountUsesEightAdjacency) {
  const auto diag = make_slice(3, 3, {1200, -1000, -1000, -1000, 1200, -1000, -1000, -1000, 1200});
  EXPECT_DOUBLE_EQ(extract_features(diag)[35], 1.0);
  const auto apart = make_slice(3, 1, {1200, -1000, 1200});
  EXPECT_DOUBLE_EQ(extract_features(apart)[35], 2.0);
}

TEST(Features, MomentsAndCentroid) {
  const auto s = make_slice(2, 2, {0, 0, 0, 1000});
  const SliceFeatures f = extract_features(s);
  EXPECT_DOUBLE_EQ(f[36], 250.0);
  EXPECT_NEAR(f[37], std::sqrt(0.75 * 250.0 * 250.0 + 0.25 * 750.0 * 750.0), 1e-9);
  EXPECT_DOUBLE_EQ(f[38], 0.75);
  EXPECT_DOUBLE_EQ(f[39], 0.75);

  const auto dark = make_slice(2, 2, {-1000, -1000, -1000, -1000});
  const SliceFeatures g = extract_features(dark);
  EXPECT_DOUBLE_EQ(g[38], 0.5);
  EXPECT_DOUBLE_EQ(g[39], 0.5);
  EXPECT_DOUBLE_EQ(g[35], 0.0);
}

TEST(Features, OutOfRangeValuesClampToEndBins) {
  const auto s = make_slice(2, 1, {-3000, 5000});
  const SliceFeatures f = extract_features(s);
  EXPECT_DOUBLE_EQ(f[0], 0.5);
  EXPECT_DOUBLE_EQ(f[31], 0.5);
}

TEST(Labels, MinimumPositiveVoxels) {
  Mask gt(Dims{4, 4, 3}, Spacing{1, 1, 1}, 0);
  for (std::size_t y = 0; y < 4; ++y)
    for (std::size_t x = 0; x < 3; ++x) gt(x, y, 1) = 1;  // 12 voxels in slice z=1
  gt(0, 0, 2) = 1;
  const auto z = make_labels(gt, Axis::axial, 10);
  EXPECT_EQ(z, (std::vector<double>{0, 1, 0}));
  const auto x = make_labels(gt, Axis::sagittal, 4);
  EXPECT_EQ(x, (std::vector<double>{1, 1, 1, 0}));
  EXPECT_EQ(make_labels(gt, Axis::coronal, 1).size(), 4u);
}

TEST(Forest, ConstantTargets) {
  std::mt19937_64 rng(1);
  std::vector<std::vector<double>> x(40, std::vector<double>(5));
  for (auto& r : x)
    for (auto& v : r) v = std::uniform_real_distribution<double>(0, 1)(rng);
  const std::vector<double> ones(40, 1.0), zeros(40, 0.0);
  const ForestParams p{10, 8, 2, 0, true};
  const Forest f1 = train_forest(x, ones, p, 3);
  const Forest f0 = train_forest(x, zeros, p, 3);
  for (const auto& r : x) {
    EXPECT_EQ(f1.predict(r), 1.0);
    EXPECT_EQ(f0.predict(r), 0.0);
  }
}

namespace {

void two_clusters(std::mt19937_64& rng, std::size_t n, std::size_t d, std::vector<std::vector<double>>& x,
                  std::vector<double>& y) {
  std::normal_distribution<double> noise(0.0, 1.0);
  for (std::size_t i = 0; i < n; ++i) {
    const double label = i % 2 == 0 ? 1.0 : 0.0;
    std::vector<double> row(d);
    for (auto& v : row) v = noise(rng) + (label == 1.0 ? 3.0 : -3.0);
    x.push_back(std::move(row));
    y.push_back(label);
  }
}

}  // namespace

TEST(Forest, SeparatesTwoClusters) {
  std::mt19937_64 rng(2);
  std::vector<std::vector<double>> x;
  std::vector<double> y;
  two_clusters(rng, 200, 6, x, y);
  const Forest f = train_forest(x, y, ForestParams{}, 11);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double p = f.predict(x[i]);
    EXPECT_GE(p, 0.0);
    EXPECT_LE(p, 1.0);
    correct += (p >= 0.5) == (y[i] == 1.0);
  }
  EXPECT_GE(double(correct) / double(x.size()), 0.95);
}

TEST(Forest, LeafValuesBoundedForBinaryLabels) {
  std::mt19937_64 rng(4);
  std::vector<std::vector<double>> x(120, std::vector<double>(4));
  std::vector<double> y(120);
  for (std::size_t i = 0; i < x.size(); ++i) {
    for (auto& v : x[i]) v = std::uniform_real_distribution<double>(-1, 1)(rng);
    y[i] = std::bernoulli_distribution(0.4)(rng) ? 1.0 : 0.0;
  }
  const Forest f = train_forest(x, y, ForestParams{20, 6, 1, 2, true}, 5);
  for (const auto& t : f.trees)
    for (const auto& n : t.nodes()) {
      EXPECT_GE(n.value, 0.0);
      EXPECT_LE(n.value, 1.0);
    }
}

TEST(Forest, DeterministicAcrossThreadCounts) {
  std::mt19937_64 rng(6);
  std::vector<std::vector<double>> x;
  std::vector<double> y;
  two_clusters(rng, 80, 5, x, y);
  const Forest a = train_forest(x, y, ForestParams{12, 6, 3, 0, true}, 99, 1);
  const Forest b = train_forest(x, y, ForestParams{12, 6, 3, 0, true}, 99, 4);
  EXPECT_TRUE(a == b);
  EXPECT_EQ(forest_to_json(a).dump(), forest_to_json(b).dump());
  const Forest c = train_forest(x, y, ForestParams{12, 6, 3, 0, true}, 100, 1);
  EXPECT_FALSE(a == c);
}

TEST(Forest, SplitPrefersLowestFeatureOnTies) {
  // Features 0 and 1 are identical, so both give the same gain.
  std::vector<std::vector<double>> x;
  std::vector<double> y;
  for (int i = 0; i < 10; ++i) {
    x.push_back({double(i), double(i)});
    y.push_back(i < 5 ? 0.0 : 1.0);
  }
  const Forest f = train_forest(x, y, ForestParams{1, 1, 1, 2, false}, 0);
  ASSERT_GE(f.trees[0].nodes().size(), 3u);
  EXPECT_EQ(f.trees[0].nodes()[0].feature, 0);
  EXPECT_DOUBLE_EQ(f.trees[0].nodes()[0].threshold, 4.5);
}

TEST(Forest, JsonRoundTrip) {
  std::mt19937_64 rng(8);
  std::vector<std::vector<double>> x;
  std::vector<double> y;
  two_clusters(rng, 60, 3, x, y);
  const Forest f = train_forest(x, y, ForestParams{5, 4, 2, 0, true}, 1);
  const Forest g = forest_from_json(nlohmann::json::parse(forest_to_json(f).dump()));
  EXPECT_TRUE(f == g);
  for (const auto& r : x) EXPECT_EQ(f.predict(r), g.predict(r));
}

TEST(Forest, RejectsBadInput) {
  const std::vector<std::vector<double>> x{{1.0}, {2.0}};
  EXPECT_THROW((void)train_forest(x, std::vector<double>{1.0}, ForestParams{}, 0), ArgumentError);
  EXPECT_THROW((void)train_forest({}, std::vector<double>{}, ForestParams{}, 0), ArgumentError);
  EXPECT_THROW((void)train_forest(x, std::vector<double>{0, 1}, ForestParams{0, 1, 1, 0, true}, 0), ArgumentError);
  const Forest f = train_forest(x, std::vector<double>{0, 1}, ForestParams{2, 2, 1, 0, true}, 0);
  EXPECT_THROW((void)f.predict(std::vector<double>{1.0, 2.0}), ArgumentError);

  auto j = forest_to_json(f);
  j["format"] = "other";
  EXPECT_THROW((void)forest_from_json(j), IoError);
  j = forest_to_json(f);
  j["trees"][0][0] = {{"feature", 5}, {"threshold", 0.0}, {"left", 1}, {"right", 2}, {"value", 0.0}};
  EXPECT_THROW((void)forest_from_json(j), IoError);
  EXPECT_THROW((void)forest_from_json(nlohmann::json::object()), IoError);
}

TEST(Fuse, AllOnesWithoutPaddingIsFullBox) {
  RecognitionConfig cfg;
  cfg.padding = 0;
  const BoundingBox b =
      fuse_to_bbox(scores(Axis::sagittal, 7, 1.0), scores(Axis::coronal, 8, 1.0), scores(Axis::axial, 9, 1.0), cfg);
  EXPECT_EQ(b, full_box(Dims{7, 8, 9}));
}

TEST(Fuse, BridgesShortGaps) {
  RecognitionConfig cfg;
  cfg.padding = 0;
  AxisScores x = scores(Axis::sagittal, 30, 0.1);
  for (std::size_t i = 10; i <= 20; ++i) x.scores[i] = 0.9;
  x.scores[14] = x.scores[15] = 0.2;
  const BoundingBox b = fuse_to_bbox(x, scores(Axis::coronal, 5, 1.0), scores(Axis::axial, 5, 1.0), cfg);
  EXPECT_EQ(b.min.x, 10u);
  EXPECT_EQ(b.max.x, 20u);

  // A gap of three is not bridged; the longer run wins.
  x.scores[13] = 0.2;
  const BoundingBox c = fuse_to_bbox(x, scores(Axis::coronal, 5, 1.0), scores(Axis::axial, 5, 1.0), cfg);
  EXPECT_EQ(c.min.x, 16u);
  EXPECT_EQ(c.max.x, 20u);
}

TEST(Fuse, PaddingIsClamped) {
  RecognitionConfig cfg;
  AxisScores x = scores(Axis::sagittal, 12, 0.0);
  x.scores[1] = x.scores[2] = 1.0;
  x.scores[10] = 0.0;
  const BoundingBox b = fuse_to_bbox(x, scores(Axis::coronal, 4, 1.0), scores(Axis::axial, 4, 1.0), cfg);
  EXPECT_EQ(b.min.x, 0u);
  EXPECT_EQ(b.max.x, 5u);
  EXPECT_EQ(b.max.y, 3u);
}

TEST(Fuse, NothingAboveThresholdIsNotFound) {
  RecognitionConfig cfg;
  try {
    (void)fuse_to_bbox(scores(Axis::sagittal, 5, 1.0), scores(Axis::coronal, 5, 0.49), scores(Axis::axial, 5, 1.0),
                       cfg);
    FAIL();
  } catch (const RecognitionError& e) {
    EXPECT_STREQ(e.what(), "mandible not found");
  }
}

TEST(Fuse, SelectedRunContainedInBox) {
  // Every slice of the selected run scores at or above the threshold and
  // lies inside the box; single-run inputs cover every positive slice.
  std::mt19937_64 rng(12);
  RecognitionConfig cfg;
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 5 + rng() % 30;
    const std::size_t a = rng() % n;
    const std::size_t b = a + rng() % (n - a);
    AxisScores s{Axis::axial, std::vector<double>(n, 0.0)};
    std::uniform_real_distribution<double> lo(0.0, 0.49), hi(0.5, 1.0);
    for (std::size_t i = 0; i < n; ++i) s.scores[i] = (i >= a && i <= b) ? hi(rng) : lo(rng);
    const BoundingBox box = fuse_to_bbox(scores(Axis::sagittal, 3, 1.0), scores(Axis::coronal, 3, 1.0), s, cfg);
    for (std::size_t i = 0; i < n; ++i)
      if (s.scores[i] >= cfg.threshold) {
        EXPECT_LE(box.min.z, i);
        EXPECT_GE(box.max.z, i);
      }
    EXPECT_EQ(box.min.z, a >= 3 ? a - 3 : 0);
    EXPECT_EQ(box.max.z, std::min(n - 1, b + 3));
  }
}

TEST(Recognition, PhantomBoxContainsMandible) {
  std::vector<PhantomCase> train;
  for (int i = 0; i < 2; ++i) {
    PhantomParams p;
    p.rng_seed = 40 + std::uint64_t(i);
    train.push_back(generate(p));
  }
  std::vector<TrainingCase> cases;
  for (auto& c : train) cases.push_back({&c.volume, &c.gt_mandible});
  ForestParams fp;
  fp.tree_count = 15;
  const RecognitionModel m = train_recognition(cases, fp, RecognitionConfig{}, 3);
  PhantomParams p;
  p.rng_seed = 77;
  const PhantomCase test = generate(p);
  const BoundingBox b = recognize(test.volume, m, RecognitionConfig{});
  std::size_t inside = 0;
  for (std::size_t i = 0; i < test.gt_mandible.size(); ++i)
    if (test.gt_mandible[i] && b.contains(test.gt_mandible.coord(i))) ++inside;
  EXPECT_GE(double(inside) / double(count_foreground(test.gt_mandible)), 0.95);
}

TEST(Recognition, AirVolumeIsNotFound) {
  PhantomParams p;
  p.rng_seed = 5;
  PhantomCase c = generate(p);
  std::vector<TrainingCase> cases{{&c.volume, &c.gt_mandible}};
  ForestParams fp;
  fp.tree_count = 10;
  const RecognitionModel m = train_recognition(cases, fp, RecognitionConfig{}, 1);
  const Image air(c.volume.dims(), c.volume.spacing(), -1000.0f);
  EXPECT_THROW((void)recognize(air, m, RecognitionConfig{}), RecognitionError);
}
