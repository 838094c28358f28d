#include <gtest/gtest.h>

#include <random>

#include "support.hpp"

namespace {

using namespace propfuse;

Frame noise_frame(FrameSize s, std::uint64_t seed, int lo = 30, int hi = 220) {
  Frame f(s, 1);
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> v(lo, hi);
  for (auto& p : f.pixels) p = static_cast<std::uint8_t>(v(rng));
  return f;
}

// Vectors handed out by (frame, x1).
class TableProvider : public FeatureProvider {
 public:
  std::map<std::pair<int, double>, FeatureVector> table;
  std::optional<FeatureVector> embed(int frame, const BBox& b) const override {
    auto it = table.find({frame, b.x1});
    if (it == table.end()) return std::nullopt;
    return it->second;
  }
};

TEST(Cosine, SpecCases) {
  const FeatureVector a{{0.2, 0.4, 0.9}};
  EXPECT_EQ(cosine_sim(a, a), 1.0);
  EXPECT_EQ(cosine_sim(FeatureVector{{1, 0}}, FeatureVector{{0, 1}}), 0.0);
  EXPECT_NEAR(cosine_sim(FeatureVector{{1, 0, 1}}, FeatureVector{{1, 1, 0}}), 0.5, 1e-15);
}

TEST(Cosine, Errors) {
  EXPECT_THROW(cosine_sim(FeatureVector{{1, 0}}, FeatureVector{{1, 0, 0}}), ValidationError);
  EXPECT_THROW(cosine_sim(FeatureVector{{0, 0}}, FeatureVector{{1, 0}}), ValidationError);
  EXPECT_THROW(validate(FeatureVector{{0.5, 1.5}}), ValidationError);
  EXPECT_THROW(validate(FeatureVector{{0.0, 0.0}}), ValidationError);
}

TEST(Cosine, ParallelByPowerOfTwoIsExactlyOne) {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(0.01, 1.0);
  for (int i = 0; i < 1000; ++i) {
    FeatureVector a, b;
    for (int d = 0; d < 32; ++d) {
      a.values.push_back(u(rng) * 0.5);
      b.values.push_back(a.values.back() * 2.0);
    }
    EXPECT_EQ(cosine_sim(a, b), 1.0);
  }
}

TEST(PatchDescriptor, ValuesInUnitRangeAndDeterministic) {
  const Frame f = noise_frame({64, 48}, 1);
  const auto a = PatchDescriptor::describe(f, {3.5, 4.25, 40, 30}, 16);
  ASSERT_TRUE(a);
  EXPECT_EQ(a->dim(), 256u);
  for (double v : a->values) {
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
  }
  EXPECT_EQ(*a, *PatchDescriptor::describe(f, {3.5, 4.25, 40, 30}, 16));
}

TEST(PatchDescriptor, ConstantPatchIsHalf) {
  Frame f({20, 20}, 1);
  std::fill(f.pixels.begin(), f.pixels.end(), 90);
  const auto a = PatchDescriptor::describe(f, {2, 2, 10, 10}, 4);
  ASSERT_TRUE(a);
  for (double v : a->values) EXPECT_EQ(v, 0.5);
}

TEST(PatchDescriptor, OutsideFrameIsAbsent) {
  const Frame f = noise_frame({20, 20}, 3);
  EXPECT_FALSE(PatchDescriptor::describe(f, {30, 30, 40, 40}, 4));
}

TEST(PatchDescriptor, InvariantToBrightnessShift) {
  const Frame f = noise_frame({64, 48}, 4, 20, 200);
  Frame g = f;
  for (auto& p : g.pixels) p = static_cast<std::uint8_t>(p + 37);
  const BBox b{5.3, 6.1, 50.7, 40.2};
  const auto a = PatchDescriptor::describe(f, b, 16);
  const auto c = PatchDescriptor::describe(g, b, 16);
  for (std::size_t i = 0; i < a->dim(); ++i) EXPECT_NEAR(a->values[i], c->values[i], 1e-12);
  EXPECT_NEAR(cosine_sim(*a, *c), 1.0, 1e-12);
}

TEST(Rescore, OffsetZeroPassesThrough) {
  TableProvider p;
  const Candidate c{Detection{0, {1, 1, 5, 5}, 0.7, 0}, {1, 1, 5, 5}, 3};
  auto out = rescore(c, 3, p);
  ASSERT_TRUE(out);
  EXPECT_EQ(*out, c.detection);
}

TEST(Rescore, IdenticalContentKeepsScore) {
  TableProvider p;
  p.table[{3, 10}] = FeatureVector{{0.1, 0.5, 1.0}};
  p.table[{2, 7}] = FeatureVector{{0.1, 0.5, 1.0}};
  const Candidate c{Detection{0, {10, 0, 20, 10}, 0.7, 1}, {7, 0, 17, 10}, 2};
  EXPECT_EQ(rescore(c, 3, p)->score, 0.7);
}

TEST(Rescore, MissingDescriptorDrops) {
  TableProvider p;
  p.table[{3, 10}] = FeatureVector{{0.1, 0.5, 1.0}};
  const Candidate c{Detection{0, {10, 0, 20, 10}, 0.7, 1}, {7, 0, 17, 10}, 2};
  EXPECT_FALSE(rescore(c, 3, p));
}

TEST(Rescore, OccludedTargetIsDemoted) {
  const auto bundle = synth::generate([] {
    auto s = synth::occlusion_scene();
    s.objects[0].occlusions = {{2, 2, true}};
    return s;
  }());
  auto frames = std::make_shared<std::map<int, Frame>>();
  for (int t = 0; t < 5; ++t) (*frames)[t] = bundle.frames[static_cast<std::size_t>(t)];
  const PatchDescriptor p(frames);
  const BBox src = bundle.ground_truth[1].detections.at(0).bbox;
  const BBox dst{src.x1 + 3, src.y1 + 2, src.x2 + 3, src.y2 + 2};
  const Candidate hidden{Detection{0, dst, 0.9, 1}, src, 1};
  const auto out = rescore(hidden, 2, p);
  ASSERT_TRUE(out);
  EXPECT_LT(out->score, 0.9 * 0.8);

  const BBox next = bundle.ground_truth[3].detections.at(0).bbox;
  const Candidate visible{Detection{0, next, 0.9, 1}, src, 1};
  EXPECT_NEAR(rescore(visible, 3, p)->score, 0.9, 1e-9);
}

TEST(Embeddings, LoadLookupAndFallback) {
  testsupport::TempDir dir;
  {
    std::ofstream out(dir / "emb.jsonl");
    out << R"({"frame": 1, "box": [1.004, 2, 3, 4], "vec": [0.5, 1.0]})" << "\n";
    out << R"({"frame": 2, "box": [1, 2, 3, 4], "vec": [1.0, 0.0]})" << "\n";
  }
  const auto e = PrecomputedEmbeddings::load(dir / "emb.jsonl");
  EXPECT_EQ(e.size(), 2u);
  ASSERT_TRUE(e.embed(1, {1.0, 2.0, 3.0, 4.0}));
  EXPECT_EQ(e.embed(1, {1.0, 2.0, 3.0, 4.0})->values, (std::vector<double>{0.5, 1.0}));
  EXPECT_FALSE(e.embed(1, {1.2, 2.0, 3.0, 4.0}));

  auto fb = std::make_shared<TableProvider>();
  fb->table[{1, 1.2}] = FeatureVector{{1, 1}};
  const auto e2 = PrecomputedEmbeddings::load(dir / "emb.jsonl", fb);
  EXPECT_TRUE(e2.embed(1, {1.2, 2.0, 3.0, 4.0}));
}

TEST(Embeddings, MalformedIsFormatError) {
  testsupport::TempDir dir;
  {
    std::ofstream out(dir / "emb.jsonl");
    out << R"({"frame": 1, "box": [1, 2, 3], "vec": [0.5, 1.0]})" << "\n";
  }
  EXPECT_THROW(PrecomputedEmbeddings::load(dir / "emb.jsonl"), FormatError);
  {
    std::ofstream out(dir / "emb2.jsonl");
    out << R"({"frame": 1, "box": [1, 2, 3, 4], "vec": [0.0, 0.0]})" << "\n";
  }
  EXPECT_THROW(PrecomputedEmbeddings::load(dir / "emb2.jsonl"), FormatError);
}

}  // namespace
