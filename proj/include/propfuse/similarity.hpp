#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include "json.hpp"

#include "propfuse/bplp.hpp"
#include "propfuse/error.hpp"
#include "propfuse/frame.hpp"
#include "propfuse/geometry.hpp"

namespace propfuse {

// Non-negative descriptor with every component in [0,1].
struct FeatureVector {
  std::vector<double> values;

  std::size_t dim() const noexcept { return values.size(); }
  bool operator==(const FeatureVector&) const = default;
};

inline void validate(const FeatureVector& f) {
  double norm2 = 0.0;
  for (double x : f.values) {
    if (!(x >= 0.0 && x <= 1.0)) throw ValidationError("feature value outside [0,1]");
    norm2 += x * x;
  }
  if (!(norm2 > 0.0)) throw ValidationError("feature vector has zero norm");
}

// dot(a,b) / (|a| |b|). Non-negative inputs keep the result in [0,1].
inline double cosine_sim(const FeatureVector& a, const FeatureVector& b) {
  if (a.dim() != b.dim())
    throw ValidationError("feature dimension mismatch: " + std::to_string(a.dim()) + " vs " +
                          std::to_string(b.dim()));
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.dim(); ++i) {
    dot += a.values[i] * b.values[i];
    na += a.values[i] * a.values[i];
    nb += b.values[i] * b.values[i];
  }
  if (!(na > 0.0) || !(nb > 0.0)) throw ValidationError("cosine of a zero-norm vector");
  // A single sqrt of the product keeps exactly parallel inputs (b == 2^n a)
  // at exactly 1.
  return std::clamp(dot / std::sqrt(na * nb), 0.0, 1.0);
}

class FeatureProvider {
 public:
  virtual ~FeatureProvider() = default;
  // nullopt when no descriptor can be produced for the box.
  virtual std::optional<FeatureVector> embed(int frame_index, const BBox& box) const = 0;
};

// Appearance descriptor computed straight from the frame: crop, bilinear
// resample to side x side, luminance, per-vector min-max to [0,1].
class PatchDescriptor : public FeatureProvider {
 public:
  static constexpr int kDefaultSide = 16;

  explicit PatchDescriptor(std::shared_ptr<const std::map<int, Frame>> frames,
                           int side = kDefaultSide)
      : frames_(std::move(frames)), side_(side) {
    if (side_ < 1) throw ConfigError("patch descriptor side must be positive");
  }

  int side() const noexcept { return side_; }

  std::optional<FeatureVector> embed(int frame_index, const BBox& box) const override {
    auto it = frames_->find(frame_index);
    if (it == frames_->end()) return std::nullopt;
    return describe(it->second, box, side_);
  }

  static std::optional<FeatureVector> describe(const Frame& frame, const BBox& box, int side) {
    const auto clipped = clip_to_frame(box, frame.size);
    if (!clipped) return std::nullopt;
    const BBox& c = clipped->box;
    const int w = frame.size.width, h = frame.size.height;

    // Luminance at a continuous pixel-centre coordinate, clamped to the frame.
    auto lum = [&](double x, double y) {
      x = std::clamp(x, 0.0, static_cast<double>(w - 1));
      y = std::clamp(y, 0.0, static_cast<double>(h - 1));
      const int x0 = static_cast<int>(std::floor(x)), y0 = static_cast<int>(std::floor(y));
      const int x1 = std::min(x0 + 1, w - 1), y1 = std::min(y0 + 1, h - 1);
      const double fx = x - x0, fy = y - y0;
      return (1 - fx) * (1 - fy) * frame.luminance(x0, y0) + fx * (1 - fy) * frame.luminance(x1, y0) +
             (1 - fx) * fy * frame.luminance(x0, y1) + fx * fy * frame.luminance(x1, y1);
    };

    FeatureVector f;
    f.values.resize(static_cast<std::size_t>(side) * side);
    const double sx = c.width() / side, sy = c.height() / side;
    for (int j = 0; j < side; ++j)
      for (int i = 0; i < side; ++i)
        f.values[static_cast<std::size_t>(j) * side + i] =
            lum(c.x1 + (i + 0.5) * sx - 0.5, c.y1 + (j + 0.5) * sy - 0.5);

    const auto [lo, hi] = std::minmax_element(f.values.begin(), f.values.end());
    const double mn = *lo, mx = *hi;
    for (double& v : f.values) v = mx > mn ? (v - mn) / (mx - mn) : 0.5;
    return f;
  }

 private:
  std::shared_ptr<const std::map<int, Frame>> frames_;
  int side_;
};

// File-backed descriptors, keyed by (frame, box rounded to 2 decimals).
// Misses go to `fallback` when one is given, otherwise they are dropped.
class PrecomputedEmbeddings : public FeatureProvider {
 public:
  using Key = std::tuple<int, long long, long long, long long, long long>;

  explicit PrecomputedEmbeddings(std::shared_ptr<const FeatureProvider> fallback = nullptr)
      : fallback_(std::move(fallback)) {}

  static PrecomputedEmbeddings load(const std::string& path,
                                    std::shared_ptr<const FeatureProvider> fallback = nullptr) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open embeddings file " + path);
    PrecomputedEmbeddings out(std::move(fallback));
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
      try {
        const auto j = nlohmann::json::parse(line);
        const auto box = j.at("box").get<std::vector<double>>();
        if (box.size() != 4) throw FormatError("box needs 4 coordinates");
        FeatureVector f{j.at("vec").get<std::vector<double>>()};
        validate(f);
        out.insert(j.at("frame").get<int>(), BBox{box[0], box[1], box[2], box[3]}, std::move(f));
      } catch (const nlohmann::json::exception& e) {
        throw FormatError(path + ":" + std::to_string(lineno) + ": " + e.what());
      } catch (const ValidationError& e) {
        throw FormatError(path + ":" + std::to_string(lineno) + ": " + e.what());
      }
    }
    return out;
  }

  static Key key(int frame, const BBox& b) {
    auto r = [](double x) { return std::llround(x * 100.0); };
    return {frame, r(b.x1), r(b.y1), r(b.x2), r(b.y2)};
  }

  void insert(int frame, const BBox& b, FeatureVector f) {
    if (dim_ == 0) dim_ = f.dim();
    if (f.dim() != dim_) throw FormatError("embeddings of mixed dimension");
    table_[key(frame, b)] = std::move(f);
  }

  std::size_t size() const noexcept { return table_.size(); }

  std::optional<FeatureVector> embed(int frame_index, const BBox& box) const override {
    auto it = table_.find(key(frame_index, box));
    if (it != table_.end()) return it->second;
    if (fallback_) return fallback_->embed(frame_index, box);
    return std::nullopt;
  }

 private:
  std::map<Key, FeatureVector> table_;
  std::size_t dim_ = 0;
  std::shared_ptr<const FeatureProvider> fallback_;
};

// sim(C(propagated box on target), C(source box on source frame)); nullopt
// when either descriptor is unavailable.
inline std::optional<double> candidate_similarity(const Candidate& c, int target_frame,
                                                  const FeatureProvider& provider) {
  const auto here = provider.embed(target_frame, c.detection.bbox);
  if (!here) return std::nullopt;
  const auto there = provider.embed(c.source_frame, c.source_box);
  if (!there) return std::nullopt;
  return cosine_sim(*here, *there);
}

// Propagated candidates get score * sim; offset-0 candidates pass through.
// nullopt means the candidate is dropped.
inline std::optional<Detection> rescore(const Candidate& c, int target_frame,
                                        const FeatureProvider& provider) {
  if (c.detection.source_offset == 0) return c.detection;
  const auto sim = candidate_similarity(c, target_frame, provider);
  if (!sim) return std::nullopt;
  Detection out = c.detection;
  out.score = c.detection.score * *sim;
  return out;
}

}  // namespace propfuse
