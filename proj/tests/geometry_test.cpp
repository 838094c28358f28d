#include <gtest/gtest.h>

#include <random>

#include "support.hpp"

namespace {

using namespace propfuse;

TEST(Iou, SpecCases) {
  const BBox a{0, 0, 10, 10};
  EXPECT_EQ(iou(a, a), 1.0);
  EXPECT_EQ(iou(a, BBox{20, 20, 30, 30}), 0.0);
  EXPECT_NEAR(iou(a, BBox{5, 0, 15, 10}), 50.0 / 150.0, 1e-12);
  EXPECT_NEAR(iou(BBox{0, 0, 3, 2}, BBox{1, 1, 4, 3}), 0.2, 1e-12);
}

TEST(Iou, SmallCaseAgreesWithPixelCount) {
  const BBox a{0, 0, 3, 2}, b{1, 1, 4, 3};
  EXPECT_NEAR(testsupport::pixel_count_iou(a, b, 1.0 / 64), iou(a, b), 1e-9);
}

TEST(Iou, TouchingBoxesAreDisjoint) {
  EXPECT_EQ(iou(BBox{0, 0, 10, 10}, BBox{10, 0, 20, 10}), 0.0);
}

TEST(Iou, RandomPairsMatchPixelOracle) {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> pos(0, 20), len(1, 12);
  const double cell = 1.0 / 16;
  for (int i = 0; i < 200; ++i) {
    const double ax = pos(rng), ay = pos(rng), bx = pos(rng), by = pos(rng);
    const BBox a{ax, ay, ax + len(rng), ay + len(rng)};
    const BBox b{bx, by, bx + len(rng), by + len(rng)};
    const double v = iou(a, b);
    EXPECT_DOUBLE_EQ(v, iou(b, a));
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
    // Each box edge can misclassify at most one row or column of cells.
    const double min_cells = std::min({a.width(), a.height(), b.width(), b.height()}) / cell;
    EXPECT_NEAR(testsupport::pixel_count_iou(a, b, cell), v, 2.0 / min_cells) << i;
  }
}

TEST(Clip, SpecCases) {
  const FrameSize s{100, 100};
  auto half = clip_to_frame(BBox{-5, 0, 5, 10}, s);
  ASSERT_TRUE(half);
  EXPECT_EQ(half->box, (BBox{0, 0, 5, 10}));
  EXPECT_DOUBLE_EQ(half->coverage, 0.5);

  auto inside = clip_to_frame(BBox{10, 10, 20, 20}, s);
  ASSERT_TRUE(inside);
  EXPECT_EQ(inside->box, (BBox{10, 10, 20, 20}));
  EXPECT_EQ(inside->coverage, 1.0);

  EXPECT_FALSE(clip_to_frame(BBox{-20, -20, -10, -10}, s));
}

TEST(Clip, DegenerateIntersectionIsAbsent) {
  EXPECT_FALSE(clip_to_frame(BBox{100, 10, 120, 20}, FrameSize{100, 100}));
}

TEST(Clip, OutputInsideBoxAndFrame) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> pos(-40, 120), len(0.5, 60);
  const FrameSize s{80, 60};
  for (int i = 0; i < 500; ++i) {
    const double x = pos(rng), y = pos(rng);
    const BBox b{x, y, x + len(rng), y + len(rng)};
    auto c = clip_to_frame(b, s);
    if (!c) continue;
    EXPECT_GT(c->coverage, 0.0);
    EXPECT_LE(c->coverage, 1.0);
    EXPECT_GE(c->box.x1, std::max(0.0, b.x1));
    EXPECT_GE(c->box.y1, std::max(0.0, b.y1));
    EXPECT_LE(c->box.x2, std::min(80.0, b.x2));
    EXPECT_LE(c->box.y2, std::min(60.0, b.y2));
  }
}

TEST(BBoxValidity, RejectsInvertedAndNonFinite) {
  EXPECT_TRUE((BBox{0, 0, 1, 1}).valid());
  EXPECT_FALSE((BBox{1, 0, 1, 1}).valid());
  EXPECT_FALSE((BBox{0, 0, std::nan(""), 1}).valid());
}

}  // namespace
