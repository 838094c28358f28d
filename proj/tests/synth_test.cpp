#include <gtest/gtest.h>

#include "support.hpp"

namespace {

using namespace propfuse;
using namespace propfuse::synth;

SceneSpec clean_mover() {
  SceneSpec s;
  s.size = {120, 90};
  s.length = 5;
  s.classes = {"car"};
  ObjectSpec o;
  o.cls = "car";
  o.width = 20;
  o.height = 16;
  o.path = {{0, 10, 10}, {4, 22, 18}};  // (3, 2) per frame
  s.objects = {o};
  return s;
}

TEST(Generate, ZeroNoiseDetectionsEqualGroundTruth) {
  const auto b = generate(clean_mover());
  ASSERT_EQ(b.detections.size(), 5u);
  for (int t = 0; t < 5; ++t) {
    EXPECT_EQ(b.detections[t], b.ground_truth[t]);
    EXPECT_EQ(b.detections[t].detections.at(0).score, 1.0);
  }
}

TEST(Generate, ConstantVelocityBoxesAndFlow) {
  const auto b = generate(clean_mover());
  ASSERT_EQ(b.forward.size(), 4u);
  ASSERT_EQ(b.backward.size(), 4u);
  for (int t = 0; t < 5; ++t)
    EXPECT_EQ(b.ground_truth[t].detections[0].bbox, (BBox{10.0 + 3 * t, 10.0 + 2 * t, 30.0 + 3 * t, 26.0 + 2 * t}));
  const auto& f = b.forward[1];
  EXPECT_EQ(f.from(), 1);
  EXPECT_EQ(f.to(), 2);
  EXPECT_EQ(f.at(20, 18).du, 3.0f);
  EXPECT_EQ(f.at(20, 18).dv, 2.0f);
  // Corners of the box carry the object motion too.
  EXPECT_EQ(f.at(33, 28).du, 3.0f);
  EXPECT_EQ(f.at(100, 80).du, 0.0f);
  const auto& g = b.backward[1];
  EXPECT_EQ(g.from(), 2);
  EXPECT_EQ(g.to(), 1);
  EXPECT_EQ(g.at(20, 18).du, -3.0f);
}

TEST(Generate, OcclusionIntervalDropsDetectionOnly) {
  auto s = clean_mover();
  s.objects[0].occlusions = {{2, 2, false}};
  const auto b = generate(s);
  EXPECT_TRUE(b.detections[2].detections.empty());
  EXPECT_EQ(b.ground_truth[2].detections.size(), 1u);
  EXPECT_EQ(b.detections[1].detections.size(), 1u);
}

TEST(Generate, RenderedOccluderHidesFromGroundTruth) {
  auto s = clean_mover();
  s.objects[0].occlusions = {{2, 3, true}};
  const auto b = generate(s);
  EXPECT_TRUE(b.ground_truth[2].detections.empty());
  EXPECT_TRUE(b.ground_truth[3].detections.empty());
  EXPECT_NE(b.frames[2].pixels, generate(clean_mover()).frames[2].pixels);
}

TEST(Generate, InjectedFalsePositiveInOneFrame) {
  const auto b = generate(type_b_scene(0.8));
  int frames_with_person = 0;
  for (const auto& ls : b.detections)
    for (const auto& d : ls.detections)
      if (b.vocab.name(d.class_id) == "person") {
        ++frames_with_person;
        EXPECT_EQ(ls.frame_index, 2);
        EXPECT_EQ(d.score, 0.8);
      }
  EXPECT_EQ(frames_with_person, 1);
}

TEST(Generate, SameSeedSameBundle) {
  const auto a = generate(benchmark_scene(5, 30));
  const auto b = generate(benchmark_scene(5, 30));
  EXPECT_EQ(a.detections, b.detections);
  EXPECT_EQ(a.ground_truth, b.ground_truth);
  for (std::size_t i = 0; i < a.frames.size(); ++i) EXPECT_EQ(a.frames[i].pixels, b.frames[i].pixels);
  for (std::size_t i = 0; i < a.forward.size(); ++i) EXPECT_EQ(a.forward[i], b.forward[i]);
  const auto c = generate(benchmark_scene(6, 30));
  EXPECT_NE(a.detections, c.detections);
}

TEST(Generate, NoisyDetectorProducesMissesAndSpuriousBoxes) {
  const auto b = generate(benchmark_scene(2024, 60));
  std::size_t gt = 0, det = 0;
  for (std::size_t t = 0; t < b.detections.size(); ++t) {
    gt += b.ground_truth[t].detections.size();
    det += b.detections[t].detections.size();
    for (const auto& d : b.detections[t].detections) {
      EXPECT_TRUE(d.bbox.valid());
      EXPECT_GE(d.score, 0.0);
      EXPECT_LE(d.score, 1.0);
      EXPECT_TRUE(clip_to_frame(d.bbox, b.size));
    }
  }
  EXPECT_GT(gt, 0u);
  EXPECT_NE(gt, det);
}

TEST(Validate, ListsEveryProblem) {
  auto s = clean_mover();
  s.objects[0].cls = "boat";
  s.objects[0].path = {{0, 500, 500}};
  s.detector.miss_prob = 2.0;
  try {
    generate(s);
    FAIL();
  } catch (const ValidationError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("unknown class 'boat'"), std::string::npos);
    EXPECT_NE(msg.find("object 0, frame 0"), std::string::npos);
    EXPECT_NE(msg.find("miss_prob"), std::string::npos);
  }
}

TEST(SceneJson, VelocityAndWaypointForms) {
  const auto j = nlohmann::json::parse(R"({
    "width": 120, "height": 90, "length": 5, "classes": ["car"], "seed": 3,
    "objects": [
      {"class": "car", "size": [20, 16], "position": [10, 10], "velocity": [3, 2]},
      {"class": "car", "size": [10, 10], "waypoints": [[0, 80, 60], [4, 60, 60]], "color": 150,
       "occlusions": [{"start": 1, "end": 2, "render_occluder": true}]}
    ],
    "detector": {"miss_prob": 0.1, "fp_score_range": [0.2, 0.3]}
  })");
  const auto s = scene_from_json(j);
  EXPECT_EQ(s.objects[0].box(4), (BBox{22, 18, 42, 34}));
  EXPECT_EQ(s.objects[1].box(2), (BBox{70, 60, 80, 70}));
  EXPECT_TRUE(s.objects[1].occlusions[0].render_occluder);
  EXPECT_EQ(s.detector.fp_score_range.second, 0.3);
  EXPECT_EQ(s.seed, 3u);
  EXPECT_THROW(scene_from_json(nlohmann::json::parse(R"({"width": 5})")), ValidationError);
}

TEST(Bundle, WriteReadRoundTrip) {
  testsupport::TempDir dir;
  auto spec = benchmark_scene(9, 12);
  spec.embeddings = true;
  const auto b = generate(spec);
  const auto m = write_bundle(b, dir.str());
  EXPECT_EQ(m.flows.size(), 22u);
  const auto loaded = load_manifest(dir / "manifest.json");
  const auto r = read_bundle(loaded);
  EXPECT_EQ(r.detections, b.detections);
  EXPECT_EQ(r.ground_truth, b.ground_truth);
  ASSERT_EQ(r.forward.size(), b.forward.size());
  for (std::size_t i = 0; i < b.forward.size(); ++i) {
    EXPECT_EQ(r.forward[i], b.forward[i]);
    EXPECT_EQ(r.backward[i], b.backward[i]);
  }
  for (std::size_t i = 0; i < b.frames.size(); ++i) EXPECT_EQ(r.frames[i].pixels, b.frames[i].pixels);
  const auto emb = PrecomputedEmbeddings::load(dir / "embeddings.jsonl");
  const auto& d0 = b.detections[0].detections.at(0);
  EXPECT_EQ(*emb.embed(0, d0.bbox), *PatchDescriptor::describe(b.frames[0], d0.bbox, 16));
}

TEST(Bundle, SameSeedByteIdenticalFiles) {
  testsupport::TempDir a, b;
  write_bundle(generate(benchmark_scene(4, 10)), a.str());
  write_bundle(generate(benchmark_scene(4, 10)), b.str());
  auto ta = testsupport::tree_contents(a.str());
  auto tb = testsupport::tree_contents(b.str());
  ta.erase("manifest.json");
  tb.erase("manifest.json");
  EXPECT_EQ(ta, tb);
}

}  // namespace
