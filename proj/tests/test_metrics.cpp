#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "mandseg/metrics.hpp"
#include "support.hpp"

using namespace mandseg;

namespace {

BoundingBox box(std::size_t x0, std::size_t y0, std::size_t z0, std::size_t x1, std::size_t y1, std::size_t z1) {
  return {{x0, y0, z0}, {x1, y1, z1}};
}

MetricsReport rep(Severity s, double u, double d, double h) {
  MetricsReport r;
  r.severity = s;
  r.uoi = u;
  r.dsc = d;
  r.mhd_mm = h;
  return r;
}

}  // namespace

TEST(Dsc, Fixtures) {
  Mask a(Dims{4, 4, 1}, Spacing{}, 0), b = a;
  for (std::size_t i = 0; i < 8; ++i) a[i] = 1;
  for (std::size_t i = 4; i < 12; ++i) b[i] = 1;
  EXPECT_DOUBLE_EQ(dsc(a, b), 0.5);
  EXPECT_DOUBLE_EQ(dsc(a, a), 1.0);
  const Mask empty(Dims{4, 4, 1}, Spacing{}, 0);
  EXPECT_DOUBLE_EQ(dsc(empty, empty), 1.0);
  EXPECT_DOUBLE_EQ(dsc(a, empty), 0.0);
  EXPECT_THROW((void)dsc(a, Mask(Dims{4, 4, 2}, Spacing{}, 0)), ArgumentError);
}

TEST(Dsc, SymmetricAndBounded) {
  std::mt19937_64 rng(2);
  for (int t = 0; t < 30; ++t) {
    const Mask a = testsupport::random_mask(Dims{6, 5, 4}, rng, 0.4);
    const Mask b = testsupport::random_mask(Dims{6, 5, 4}, rng, 0.4);
    const double d = dsc(a, b);
    EXPECT_DOUBLE_EQ(d, dsc(b, a));
    EXPECT_GE(d, 0.0);
    EXPECT_LE(d, 1.0);
  }
}

TEST(Uoi, Fixtures) {
  EXPECT_DOUBLE_EQ(uoi(box(0, 0, 0, 9, 9, 9), box(0, 0, 0, 9, 9, 4)), 0.5);
  EXPECT_DOUBLE_EQ(uoi(box(0, 0, 0, 1, 1, 1), box(5, 5, 5, 6, 6, 6)), 0.0);
  EXPECT_DOUBLE_EQ(uoi(box(2, 3, 4, 5, 6, 7), box(2, 3, 4, 5, 6, 7)), 1.0);
  // 2x1x1 overlap of two 3x1x1 boxes: 2 / 4.
  EXPECT_DOUBLE_EQ(uoi(box(0, 0, 0, 2, 0, 0), box(1, 0, 0, 3, 0, 0)), 0.5);
  EXPECT_THROW((void)uoi(box(3, 0, 0, 2, 0, 0), box(0, 0, 0, 1, 1, 1)), ArgumentError);
}

TEST(Uoi, SliceSetMode) {
  const BoundingBox a = box(0, 0, 0, 9, 9, 9), b = box(0, 0, 0, 9, 9, 4);
  EXPECT_DOUBLE_EQ(slice_set_iou(a, b, 2), 0.5);
  EXPECT_DOUBLE_EQ(slice_set_iou(a, b, 0), 1.0);
  EXPECT_DOUBLE_EQ(uoi(a, b, UoiMode::slice_sets), 2.5 / 3.0);
  EXPECT_DOUBLE_EQ(uoi(a, b, UoiMode::box), 0.5);
}

TEST(ModifiedHd, TwoVoxelsAlongZ) {
  Mask a(Dims{3, 3, 5}, Spacing{1, 1, 3}, 0), b = a;
  a(1, 1, 0) = 1;
  b(1, 1, 3) = 1;
  EXPECT_DOUBLE_EQ(modified_hd(a, b), 9.0);
  EXPECT_DOUBLE_EQ(modified_hd(b, a), 9.0);
  EXPECT_DOUBLE_EQ(modified_hd(a, a), 0.0);
}

TEST(ModifiedHd, TakesTheLargerMean) {
  // a = {0}, b = {0, 4} on a line: a->b mean 0, b->a mean 2.
  Mask a(Dims{5, 1, 1}, Spacing{1, 1, 1}, 0), b = a;
  a(0, 0, 0) = 1;
  b(0, 0, 0) = 1;
  b(4, 0, 0) = 1;
  EXPECT_DOUBLE_EQ(modified_hd(a, b), 2.0);
}

TEST(ModifiedHd, InteriorVoxelsAreNotSurface) {
  Mask m(Dims{5, 5, 5}, Spacing{1, 1, 1}, 0);
  for (std::size_t z = 1; z < 4; ++z)
    for (std::size_t y = 1; y < 4; ++y)
      for (std::size_t x = 1; x < 4; ++x) m(x, y, z) = 1;
  EXPECT_EQ(surface_points(m, m.spacing()).size(), 26u);
  const Mask full(Dims{3, 3, 3}, Spacing{1, 1, 1}, 1);
  EXPECT_EQ(surface_points(full, full.spacing()).size(), 26u);
}

TEST(ModifiedHd, SymmetricAndScalesWithSpacing) {
  std::mt19937_64 rng(5);
  for (int t = 0; t < 20; ++t) {
    const Mask a = testsupport::random_mask(Dims{5, 4, 3}, rng, 0.3);
    const Mask b = testsupport::random_mask(Dims{5, 4, 3}, rng, 0.3);
    if (count_foreground(a) == 0 || count_foreground(b) == 0) continue;
    const double h = modified_hd(a, b, Spacing{1, 1, 1});
    EXPECT_DOUBLE_EQ(h, modified_hd(b, a, Spacing{1, 1, 1}));
    EXPECT_NEAR(modified_hd(a, b, Spacing{2.5, 2.5, 2.5}), 2.5 * h, 1e-12);
    EXPECT_GE(h, 0.0);
  }
}

TEST(ModifiedHd, Errors) {
  const Mask empty(Dims{3, 3, 3}, Spacing{}, 0);
  Mask one = empty;
  one(1, 1, 1) = 1;
  EXPECT_THROW((void)modified_hd(one, empty), ArgumentError);
  EXPECT_THROW((void)modified_hd(one, Mask(Dims{3, 3, 3}, Spacing{2, 1, 1}, 1)), ArgumentError);
  // float32 rounding of a header spacing is not a mismatch.
  Mask rounded(Dims{3, 3, 3}, Spacing{double(1.12f), 1, 1}, 0);
  rounded(1, 1, 1) = 1;
  Mask exact(Dims{3, 3, 3}, Spacing{1.12, 1, 1}, 0);
  exact(1, 1, 1) = 1;
  EXPECT_DOUBLE_EQ(modified_hd(rounded, exact), 0.0);
}

TEST(Evaluate, CombinesMetrics) {
  Mask gt(Dims{6, 6, 6}, Spacing{1, 1, 1}, 0);
  gt(2, 2, 2) = 1;
  const MetricsReport r = evaluate(gt, gt, box(1, 1, 1, 3, 3, 3), box(1, 1, 1, 3, 3, 3), Severity::high);
  EXPECT_DOUBLE_EQ(r.dsc, 1.0);
  EXPECT_DOUBLE_EQ(r.uoi, 1.0);
  EXPECT_DOUBLE_EQ(r.mhd_mm, 0.0);
  EXPECT_EQ(r.severity, Severity::high);
  EXPECT_THROW((void)evaluate(gt, gt, box(1, 1, 1, 9, 3, 3), box(1, 1, 1, 3, 3, 3), Severity::low),
               ArgumentError);
}

TEST(Quantiles, LinearInterpolation) {
  EXPECT_DOUBLE_EQ(quantile({1, 2, 3, 4}, 0.5), 2.5);
  EXPECT_DOUBLE_EQ(quantile({4, 1, 3, 2}, 0.25), 1.75);
  EXPECT_DOUBLE_EQ(quantile({7}, 0.75), 7.0);
  EXPECT_DOUBLE_EQ(quantile({1, 5}, 1.0), 5.0);
  const Quartiles q = quartiles({1, 2, 3, 4, 5});
  EXPECT_DOUBLE_EQ(q.q1, 2.0);
  EXPECT_DOUBLE_EQ(q.median, 3.0);
  EXPECT_DOUBLE_EQ(q.q3, 4.0);
  EXPECT_DOUBLE_EQ(q.iqr(), 2.0);
  EXPECT_THROW((void)quantile({}, 0.5), ArgumentError);
}

TEST(Aggregate, GroupsBySeverity) {
  const std::vector<MetricsReport> rs{rep(Severity::low, 0.8, 0.9, 1.0), rep(Severity::low, 0.6, 0.7, 3.0),
                                      rep(Severity::high, 0.5, 0.95, 2.0)};
  const auto g = aggregate(rs);
  ASSERT_EQ(g.size(), 4u);
  EXPECT_EQ(g[0].group, "low");
  EXPECT_EQ(g[0].count, 2u);
  EXPECT_DOUBLE_EQ(g[0].dsc.median, 0.8);
  EXPECT_DOUBLE_EQ(g[0].mhd_mm.median, 2.0);
  EXPECT_EQ(g[1].group, "medium");
  EXPECT_EQ(g[1].count, 0u);
  EXPECT_EQ(g[2].count, 1u);
  EXPECT_DOUBLE_EQ(g[2].uoi.median, 0.5);
  EXPECT_EQ(g[3].group, "overall");
  EXPECT_EQ(g[3].count, 3u);
  EXPECT_DOUBLE_EQ(g[3].uoi.median, 0.6);

  const auto j = report_to_json(rs);
  EXPECT_EQ(j.at("cases").size(), 3u);
  EXPECT_EQ(j.at("groups").at("overall").at("count"), 3);
  EXPECT_DOUBLE_EQ(j["groups"]["low"]["dsc"]["median"].get<double>(), 0.8);
  EXPECT_TRUE(j["groups"].contains("medium"));
}
