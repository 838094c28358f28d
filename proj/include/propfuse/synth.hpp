#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "propfuse/error.hpp"
#include "propfuse/frame.hpp"
#include "propfuse/geometry.hpp"
#include "propfuse/labels_io.hpp"
#include "propfuse/manifest.hpp"
#include "propfuse/motion.hpp"
#include "propfuse/similarity.hpp"

namespace propfuse::synth {

struct Waypoint {
  double t = 0.0;
  double x = 0.0;  // top-left corner
  double y = 0.0;
};

// Inclusive frame range in which the detector misses the object. With
// `render_occluder` an occluding patch is drawn over the object and the
// object also leaves the ground truth for those frames.
struct Occlusion {
  int start = 0;
  int end = 0;
  bool render_occluder = false;
};

struct ObjectSpec {
  std::string cls;
  double width = 0.0;
  double height = 0.0;
  std::vector<Waypoint> path;  // piecewise-linear, held outside its span
  std::array<int, 3> color{200, 200, 200};
  std::vector<Occlusion> occlusions;

  std::pair<double, double> position(double t) const {
    if (t <= path.front().t) return {path.front().x, path.front().y};
    for (std::size_t i = 1; i < path.size(); ++i) {
      if (t <= path[i].t) {
        const Waypoint& a = path[i - 1];
        const Waypoint& b = path[i];
        const double s = (t - a.t) / (b.t - a.t);
        return {a.x + s * (b.x - a.x), a.y + s * (b.y - a.y)};
      }
    }
    return {path.back().x, path.back().y};
  }

  BBox box(int t) const {
    const auto [x, y] = position(t);
    return {x, y, x + width, y + height};
  }

  const Occlusion* occlusion_at(int t) const {
    for (const auto& o : occlusions)
      if (t >= o.start && t <= o.end) return &o;
    return nullptr;
  }
};

struct DetectorNoise {
  double miss_prob = 0.0;
  double jitter_sigma = 0.0;  // px, per corner
  double fp_rate = 0.0;       // expected spurious boxes per frame
  std::pair<double, double> fp_score_range{0.5, 0.9};
  std::pair<double, double> tp_score_range{1.0, 1.0};
  std::pair<double, double> fp_size_range{16.0, 48.0};
};

// A spurious detection placed by hand (e.g. a Type-B false positive).
struct InjectedDetection {
  int frame = 0;
  std::string cls;
  BBox box;
  double score = 0.0;
};

struct SceneSpec {
  FrameSize size{160, 120};
  int length = 5;
  int channels = 1;
  std::vector<std::string> classes;
  std::vector<ObjectSpec> objects;
  double background_du = 0.0;
  double background_dv = 0.0;
  double background_contrast = 60.0;
  DetectorNoise detector;
  std::vector<InjectedDetection> injected;
  std::uint64_t seed = 0;
  double min_coverage = kDefaultMinCoverage;
  bool embeddings = false;
};

struct EmbeddingRecord {
  int frame = 0;
  BBox box;
  FeatureVector vec;
};

struct SequenceBundle {
  FrameSize size;
  ClassVocabulary vocab;
  std::vector<Frame> frames;
  std::vector<MotionField> forward;   // t -> t+1
  std::vector<MotionField> backward;  // t+1 -> t
  std::vector<LabelSet> ground_truth;
  std::vector<LabelSet> detections;
  std::vector<EmbeddingRecord> embeddings;
};

// ---------------------------------------------------------------------------

inline void validate(const SceneSpec& spec) {
  std::vector<std::string> problems;
  if (!spec.size.valid()) problems.push_back("frame size must be positive");
  if (spec.length < 1) problems.push_back("length must be at least 1");
  if (spec.channels != 1 && spec.channels != 3) problems.push_back("channels must be 1 or 3");
  if (spec.classes.empty()) problems.push_back("class vocabulary is empty");
  auto in_unit = [](double v) { return v >= 0.0 && v <= 1.0; };
  auto range_ok = [&](std::pair<double, double> r) {
    return in_unit(r.first) && in_unit(r.second) && r.first <= r.second;
  };
  const auto& d = spec.detector;
  if (!in_unit(d.miss_prob)) problems.push_back("detector.miss_prob outside [0,1]");
  if (!(d.jitter_sigma >= 0.0)) problems.push_back("detector.jitter_sigma negative");
  if (!(d.fp_rate >= 0.0)) problems.push_back("detector.fp_rate negative");
  if (!range_ok(d.fp_score_range)) problems.push_back("detector.fp_score_range invalid");
  if (!range_ok(d.tp_score_range)) problems.push_back("detector.tp_score_range invalid");
  if (!(d.fp_size_range.first >= 1.0 && d.fp_size_range.first <= d.fp_size_range.second))
    problems.push_back("detector.fp_size_range invalid");

  const ClassVocabulary vocab(spec.classes);
  for (std::size_t i = 0; i < spec.objects.size(); ++i) {
    const auto& o = spec.objects[i];
    const std::string who = "object " + std::to_string(i);
    if (!vocab.find(o.cls)) problems.push_back(who + ": unknown class '" + o.cls + "'");
    if (!(o.width > 0.0 && o.height > 0.0)) problems.push_back(who + ": non-positive size");
    if (o.path.empty()) {
      problems.push_back(who + ": empty trajectory");
      continue;
    }
    for (std::size_t w = 1; w < o.path.size(); ++w)
      if (!(o.path[w].t > o.path[w - 1].t))
        problems.push_back(who + ": waypoint times must increase");
    for (const auto& occ : o.occlusions)
      if (occ.start > occ.end) problems.push_back(who + ": occlusion start after end");
    if (!(o.width > 0.0 && o.height > 0.0) || !spec.size.valid()) continue;
    for (int t = 0; t < spec.length; ++t) {
      const auto c = clip_to_frame(o.box(t), spec.size);
      if (!c || c->coverage < spec.min_coverage)
        problems.push_back(who + ", frame " + std::to_string(t) + ": less than min_coverage in frame");
    }
  }
  for (const auto& inj : spec.injected) {
    if (!vocab.find(inj.cls)) problems.push_back("injected detection: unknown class '" + inj.cls + "'");
    if (inj.frame < 0 || inj.frame >= spec.length)
      problems.push_back("injected detection: frame " + std::to_string(inj.frame) + " out of range");
    if (!clip_to_frame(inj.box, spec.size)) problems.push_back("injected detection: box outside frame");
    if (!in_unit(inj.score)) problems.push_back("injected detection: score outside [0,1]");
  }
  if (!problems.empty()) {
    std::string msg = "invalid scene spec:";
    for (const auto& p : problems) msg += "\n  " + p;
    throw ValidationError(msg);
  }
}

namespace detail {

inline double quantize6(double v) { return std::round(v * 1e6) / 1e6; }

inline BBox quantize6(const BBox& b) {
  return {quantize6(b.x1), quantize6(b.y1), quantize6(b.x2), quantize6(b.y2)};
}

inline std::uint64_t mix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Smooth value noise in [0,1] on a 12 px lattice.
inline double value_noise(std::uint64_t seed, double x, double y) {
  constexpr double kCell = 12.0;
  const double gx = x / kCell, gy = y / kCell;
  const double fx0 = std::floor(gx), fy0 = std::floor(gy);
  const double fx = gx - fx0, fy = gy - fy0;
  auto lattice = [&](long i, long j) {
    const std::uint64_t h = mix(seed ^ mix(static_cast<std::uint64_t>(i) * 0x632be59bd9b4e019ULL ^
                                           static_cast<std::uint64_t>(j)));
    return static_cast<double>(h >> 11) / static_cast<double>(1ULL << 53);
  };
  const long i = static_cast<long>(fx0), j = static_cast<long>(fy0);
  const double sx = fx * fx * (3 - 2 * fx), sy = fy * fy * (3 - 2 * fy);
  const double a = lattice(i, j), b = lattice(i + 1, j), c = lattice(i, j + 1), d = lattice(i + 1, j + 1);
  return (a * (1 - sx) + b * sx) * (1 - sy) + (c * (1 - sx) + d * sx) * sy;
}

inline std::uint8_t to_byte(double v) {
  return static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
}

// Object appearance at local coordinates (lx, ly) in [0,1]^2: a diagonal
// shading ramp over the fill colour.
inline double object_shade(double lx, double ly) { return 0.45 + 0.55 * (1.0 - 0.5 * (lx + ly)); }

// Occluder appearance: dark vertical bars.
inline double occluder_value(double px) {
  return std::fmod(std::floor(px / 6.0), 2.0) == 0.0 ? 35.0 : 90.0;
}

inline Frame render(const SceneSpec& spec, int t) {
  Frame f(spec.size, spec.channels);
  const double ox = spec.background_du * t, oy = spec.background_dv * t;
  for (int y = 0; y < spec.size.height; ++y)
    for (int x = 0; x < spec.size.width; ++x) {
      const double v = 128.0 + spec.background_contrast *
                                   (value_noise(spec.seed, x + 0.5 - ox, y + 0.5 - oy) - 0.5) * 2.0;
      for (int c = 0; c < spec.channels; ++c) f.at(x, y, c) = to_byte(v);
    }
  for (const auto& o : spec.objects) {
    const BBox b = o.box(t);
    const Occlusion* occ = o.occlusion_at(t);
    const bool hidden = occ && occ->render_occluder;
    const int xa = std::max(0, static_cast<int>(std::floor(b.x1 - 0.5)));
    const int xb = std::min(spec.size.width - 1, static_cast<int>(std::ceil(b.x2)));
    const int ya = std::max(0, static_cast<int>(std::floor(b.y1 - 0.5)));
    const int yb = std::min(spec.size.height - 1, static_cast<int>(std::ceil(b.y2)));
    for (int y = ya; y <= yb; ++y)
      for (int x = xa; x <= xb; ++x) {
        const double cx = x + 0.5, cy = y + 0.5;
        if (cx < b.x1 || cx >= b.x2 || cy < b.y1 || cy >= b.y2) continue;
        if (hidden) {
          const double v = occluder_value(cx);
          for (int c = 0; c < spec.channels; ++c) f.at(x, y, c) = to_byte(v);
          continue;
        }
        const double shade = object_shade((cx - b.x1) / o.width, (cy - b.y1) / o.height);
        if (spec.channels == 1) {
          const double lum = 0.299 * o.color[0] + 0.587 * o.color[1] + 0.114 * o.color[2];
          f.at(x, y) = to_byte(lum * shade);
        } else {
          for (int c = 0; c < 3; ++c) f.at(x, y, c) = to_byte(o.color[static_cast<std::size_t>(c)] * shade);
        }
      }
  }
  return f;
}

// Field on frame `t` carrying it to `t + step` (step = +1 or -1). Each object
// paints its displacement over the closed pixel hull of its box; later
// objects overwrite earlier ones.
inline MotionField motion(const SceneSpec& spec, int t, int step) {
  const float bu = static_cast<float>(step * spec.background_du);
  const float bv = static_cast<float>(step * spec.background_dv);
  MotionField base = MotionField::constant(spec.size, bu, bv, t, t + step);
  std::vector<float> data(base.data().begin(), base.data().end());
  const int w = spec.size.width;
  for (const auto& o : spec.objects) {
    const BBox b = o.box(t);
    const BBox n = o.box(t + step);
    const float du = static_cast<float>(n.x1 - b.x1), dv = static_cast<float>(n.y1 - b.y1);
    const int xa = std::max(0, static_cast<int>(std::floor(b.x1)));
    const int xb = std::min(w - 1, static_cast<int>(std::ceil(b.x2)));
    const int ya = std::max(0, static_cast<int>(std::floor(b.y1)));
    const int yb = std::min(spec.size.height - 1, static_cast<int>(std::ceil(b.y2)));
    for (int y = ya; y <= yb; ++y)
      for (int x = xa; x <= xb; ++x) {
        const std::size_t i = (static_cast<std::size_t>(y) * w + x) * 2;
        data[i] = du;
        data[i + 1] = dv;
      }
  }
  return MotionField(spec.size, std::move(data), t, t + step);
}

}  // namespace detail

// Renders frames, exact flows, ground truth and simulated detector output.
// Deterministic for a given spec (including its seed).
inline SequenceBundle generate(const SceneSpec& spec) {
  validate(spec);
  SequenceBundle out;
  out.size = spec.size;
  out.vocab = ClassVocabulary(spec.classes);

  std::mt19937_64 rng(spec.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);
  auto uniform = [&](std::pair<double, double> r) { return r.first + (r.second - r.first) * unit(rng); };

  const auto& noise = spec.detector;
  for (int t = 0; t < spec.length; ++t) {
    out.frames.push_back(detail::render(spec, t));
    if (t + 1 < spec.length) {
      out.forward.push_back(detail::motion(spec, t, +1));
      out.backward.push_back(detail::motion(spec, t + 1, -1));
    }

    LabelSet gt{t, {}}, det{t, {}};
    for (const auto& o : spec.objects) {
      const int cls = out.vocab.id(o.cls);
      const auto clipped = clip_to_frame(o.box(t), spec.size);
      const Occlusion* occ = o.occlusion_at(t);
      // Random draws happen unconditionally so the stream does not depend on
      // which branch is taken.
      const double miss_draw = unit(rng);
      double jitter[4];
      for (double& j : jitter) j = gauss(rng) * noise.jitter_sigma;
      const double score = uniform(noise.tp_score_range);
      if (!clipped) continue;
      const BBox truth = detail::quantize6(clipped->box);
      if (!(occ && occ->render_occluder)) gt.detections.push_back({cls, truth, 1.0, 0});
      if (occ || miss_draw < noise.miss_prob) continue;

      BBox seen{truth.x1 + jitter[0], truth.y1 + jitter[1], truth.x2 + jitter[2], truth.y2 + jitter[3]};
      const auto c = clip_to_frame(seen, spec.size);
      seen = c && c->box.width() >= 1.0 && c->box.height() >= 1.0 ? detail::quantize6(c->box) : truth;
      det.detections.push_back({cls, seen, detail::quantize6(score), 0});
    }

    const double whole = std::floor(noise.fp_rate);
    const int spurious = static_cast<int>(whole) + (unit(rng) < noise.fp_rate - whole ? 1 : 0);
    for (int n = 0; n < spurious; ++n) {
      const int cls = static_cast<int>(unit(rng) * static_cast<double>(spec.classes.size())) %
                      static_cast<int>(spec.classes.size());
      const double bw = uniform(noise.fp_size_range), bh = uniform(noise.fp_size_range);
      const double x = unit(rng) * std::max(1.0, spec.size.width - bw);
      const double y = unit(rng) * std::max(1.0, spec.size.height - bh);
      const double score = uniform(noise.fp_score_range);
      const auto c = clip_to_frame({x, y, x + bw, y + bh}, spec.size);
      if (!c) continue;
      det.detections.push_back({cls, detail::quantize6(c->box), detail::quantize6(score), 0});
    }
    for (const auto& inj : spec.injected) {
      if (inj.frame != t) continue;
      const auto c = clip_to_frame(inj.box, spec.size);
      det.detections.push_back({out.vocab.id(inj.cls), detail::quantize6(c->box),
                                detail::quantize6(inj.score), 0});
    }
    out.ground_truth.push_back(std::move(gt));
    out.detections.push_back(std::move(det));
  }

  if (spec.embeddings) {
    for (const auto& ls : out.detections)
      for (const auto& d : ls.detections)
        if (auto v = PatchDescriptor::describe(out.frames[static_cast<std::size_t>(ls.frame_index)], d.bbox,
                                               PatchDescriptor::kDefaultSide))
          out.embeddings.push_back({ls.frame_index, d.bbox, std::move(*v)});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Scene spec JSON

inline SceneSpec scene_from_json(const nlohmann::json& j) {
  SceneSpec s;
  try {
    s.size = {j.at("width").get<int>(), j.at("height").get<int>()};
    s.length = j.at("length").get<int>();
    s.channels = j.value("channels", 1);
    s.classes = j.at("classes").get<std::vector<std::string>>();
    s.seed = j.value("seed", std::uint64_t{0});
    s.min_coverage = j.value("min_coverage", kDefaultMinCoverage);
    s.embeddings = j.value("embeddings", false);
    if (j.contains("background")) {
      const auto& b = j["background"];
      if (b.contains("motion")) {
        const auto m = b["motion"].get<std::vector<double>>();
        if (m.size() != 2) throw ValidationError("background.motion needs 2 values");
        s.background_du = m[0];
        s.background_dv = m[1];
      }
      s.background_contrast = b.value("contrast", s.background_contrast);
    }
    for (const auto& jo : j.value("objects", nlohmann::json::array())) {
      ObjectSpec o;
      o.cls = jo.at("class").get<std::string>();
      const auto size = jo.at("size").get<std::vector<double>>();
      if (size.size() != 2) throw ValidationError("object size needs 2 values");
      o.width = size[0];
      o.height = size[1];
      if (jo.contains("velocity")) {
        const auto p = jo.at("position").get<std::vector<double>>();
        const auto v = jo.at("velocity").get<std::vector<double>>();
        if (p.size() != 2 || v.size() != 2) throw ValidationError("position/velocity need 2 values");
        const double end = std::max(1, s.length - 1);
        o.path = {{0.0, p[0], p[1]}, {end, p[0] + v[0] * end, p[1] + v[1] * end}};
      } else {
        for (const auto& w : jo.at("waypoints")) {
          const auto v = w.get<std::vector<double>>();
          if (v.size() != 3) throw ValidationError("waypoint needs [t, x, y]");
          o.path.push_back({v[0], v[1], v[2]});
        }
      }
      if (jo.contains("color")) {
        const auto& c = jo["color"];
        if (c.is_number()) {
          o.color = {c.get<int>(), c.get<int>(), c.get<int>()};
        } else {
          const auto v = c.get<std::vector<int>>();
          if (v.size() != 3) throw ValidationError("color needs 1 or 3 values");
          o.color = {v[0], v[1], v[2]};
        }
      }
      for (const auto& occ : jo.value("occlusions", nlohmann::json::array()))
        o.occlusions.push_back({occ.at("start").get<int>(), occ.at("end").get<int>(),
                                occ.value("render_occluder", false)});
      s.objects.push_back(std::move(o));
    }
    if (j.contains("detector")) {
      const auto& d = j["detector"];
      auto range = [&](const char* key, std::pair<double, double> def) {
        if (!d.contains(key)) return def;
        const auto v = d[key].get<std::vector<double>>();
        if (v.size() != 2) throw ValidationError(std::string("detector.") + key + " needs 2 values");
        return std::pair{v[0], v[1]};
      };
      s.detector.miss_prob = d.value("miss_prob", 0.0);
      s.detector.jitter_sigma = d.value("jitter_sigma", 0.0);
      s.detector.fp_rate = d.value("fp_rate", 0.0);
      s.detector.fp_score_range = range("fp_score_range", s.detector.fp_score_range);
      s.detector.tp_score_range = range("tp_score_range", s.detector.tp_score_range);
      s.detector.fp_size_range = range("fp_size_range", s.detector.fp_size_range);
    }
    for (const auto& ji : j.value("injected", nlohmann::json::array())) {
      const auto b = ji.at("box").get<std::vector<double>>();
      if (b.size() != 4) throw ValidationError("injected box needs 4 values");
      s.injected.push_back({ji.at("frame").get<int>(), ji.at("class").get<std::string>(),
                            {b[0], b[1], b[2], b[3]}, ji.at("score").get<double>()});
    }
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("scene spec: ") + e.what());
  }
  return s;
}

inline SceneSpec load_scene(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open scene spec " + path);
  try {
    return scene_from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError(path + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------
// Canned scenes

// One object, integer velocity, detector forced to miss it at frame 2 while
// it stays visible: the propagated boxes from frames 1 and 3 should recover it.
inline SceneSpec occlusion_scene() {
  SceneSpec s;
  s.size = {160, 120};
  s.length = 5;
  s.classes = {"car", "person"};
  ObjectSpec car;
  car.cls = "car";
  car.width = 48;
  car.height = 36;
  car.path = {{0, 20, 30}, {4, 32, 38}};  // (3, 2) px per frame
  car.color = {220, 180, 60};
  car.occlusions = {{2, 2, false}};
  s.objects = {car};
  s.seed = 7;
  return s;
}

// Clean object track plus one hand-placed false positive on frame 2.
inline SceneSpec type_b_scene(double fp_score = 0.8) {
  SceneSpec s = occlusion_scene();
  s.objects.front().occlusions.clear();
  s.injected = {{2, "person", BBox{100, 10, 140, 50}, fp_score}};
  return s;
}

// Whole frame pans with the object, so the exact flow is one constant
// translation. Used for the forward-backward consistency check.
inline SceneSpec drift_scene(double vx, double vy) {
  SceneSpec s;
  s.size = {200, 150};
  s.length = 4;
  s.classes = {"car"};
  s.background_du = vx;
  s.background_dv = vy;
  ObjectSpec o;
  o.cls = "car";
  o.width = 64;
  o.height = 48;
  o.path = {{0, 40, 40}, {3, 40 + 3 * vx, 40 + 3 * vy}};
  s.objects = {o};
  return s;
}

// Long mixed-noise benchmark: several objects on random piecewise-linear
// tracks, rendered occluders (object hidden, detector silent), forced
// detector misses, box jitter and spurious single-frame detections.
inline SceneSpec benchmark_scene(std::uint64_t seed = 2024, int length = 200) {
  SceneSpec s;
  s.size = {192, 144};
  s.length = length;
  s.classes = {"car", "person", "truck"};
  s.seed = seed;
  s.detector.miss_prob = 0.15;
  s.detector.jitter_sigma = 1.0;
  s.detector.fp_rate = 0.4;
  s.detector.fp_score_range = {0.45, 0.95};
  s.detector.tp_score_range = {0.5, 1.0};
  s.detector.fp_size_range = {16.0, 44.0};

  std::mt19937_64 rng(seed ^ 0x5eedULL);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const std::array<std::array<int, 3>, 5> palette{{{230, 200, 40}, {70, 160, 230}, {240, 90, 90},
                                                   {120, 220, 120}, {250, 250, 250}}};
  const int objects = 5;
  for (int i = 0; i < objects; ++i) {
    ObjectSpec o;
    o.cls = s.classes[static_cast<std::size_t>(i) % s.classes.size()];
    o.width = 30 + 20 * unit(rng);
    o.height = 24 + 18 * unit(rng);
    o.color = palette[static_cast<std::size_t>(i) % palette.size()];
    for (double t = 0; t <= length - 1 + 1e-9;) {
      const double x = unit(rng) * (s.size.width - o.width);
      const double y = unit(rng) * (s.size.height - o.height);
      o.path.push_back({t, x, y});
      if (t >= length - 1) break;
      t = std::min<double>(length - 1, t + 20 + std::floor(25 * unit(rng)));
    }
    // A few occlusion episodes per object; half of them visibly occluded.
    for (int e = 0; e < 4; ++e) {
      const int start = static_cast<int>(unit(rng) * (length - 3));
      const int len = 1 + static_cast<int>(unit(rng) * 2);
      o.occlusions.push_back({start, std::min(length - 1, start + len - 1), e % 2 == 0});
    }
    s.objects.push_back(std::move(o));
  }
  return s;
}

// ---------------------------------------------------------------------------
// Bundle files

inline std::string flow_file_name(int from, int to) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%s_%06d_%06d.flo", to > from ? "fwd" : "bwd", from, to);
  return buf;
}

// Writes frames (PGM/PPM), flows (.flo), detections and ground truth (JSONL,
// one file per frame), optional embeddings and manifest.json.
inline SequenceManifest write_bundle(const SequenceBundle& b, const std::string& dir) {
  namespace fs = std::filesystem;
  std::error_code ec;
  for (const char* sub : {"frames", "flows", "detections", "gt"}) {
    fs::create_directories(fs::path(dir) / sub, ec);
    if (ec) throw IoError("cannot create " + (fs::path(dir) / sub).string() + ": " + ec.message());
  }
  SequenceManifest m;
  m.root = dir;
  m.size = b.size;
  m.classes = b.vocab.names();
  for (std::size_t t = 0; t < b.frames.size(); ++t) {
    const int idx = static_cast<int>(t);
    FrameEntry e;
    e.index = idx;
    e.image = "frames/" + frame_file_name(idx, b.frames[t].channels == 1 ? ".pgm" : ".ppm");
    e.detections = "detections/" + frame_file_name(idx);
    e.gt = "gt/" + frame_file_name(idx);
    write_pnm(b.frames[t], m.resolve(e.image));
    write_labels(b.detections[t], m.resolve(e.detections), b.vocab);
    write_labels(b.ground_truth[t], m.resolve(e.gt), b.vocab);
    m.frames.push_back(e);
  }
  for (const auto* set : {&b.forward, &b.backward})
    for (const auto& f : *set) {
      FlowEntry e{f.from(), f.to(), "flows/" + flow_file_name(f.from(), f.to())};
      write_flow(f, m.resolve(e.path));
      m.flows.push_back(e);
    }
  if (!b.embeddings.empty()) {
    m.embeddings = "embeddings.jsonl";
    std::string text;
    for (const auto& r : b.embeddings) {
      nlohmann::json j;
      j["frame"] = r.frame;
      j["box"] = {r.box.x1, r.box.y1, r.box.x2, r.box.y2};
      j["vec"] = r.vec.values;
      text += j.dump() + "\n";
    }
    write_text_file(m.resolve(m.embeddings), text);
  }
  save_manifest(m, (fs::path(dir) / "manifest.json").string());
  return m;
}

// Inverse of write_bundle (embeddings are not read back).
inline SequenceBundle read_bundle(const SequenceManifest& m) {
  SequenceBundle b;
  b.size = m.size;
  b.vocab = vocabulary(m);
  const auto frames = load_frames(m);
  for (const auto& [idx, f] : *frames) b.frames.push_back(f);
  const auto teacher = load_teacher_labels(m);
  for (const auto& [idx, ls] : teacher) b.detections.push_back(ls);
  if (m.has_gt())
    for (const auto& [idx, ls] : load_ground_truth(m)) b.ground_truth.push_back(ls);
  for (const auto& e : m.flows) {
    MotionField f = read_flow(m.resolve(e.path));
    f.set_direction(e.from, e.to);
    (e.to > e.from ? b.forward : b.backward).push_back(std::move(f));
  }
  return b;
}

}  // namespace propfuse::synth
