#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "propfuse/error.hpp"
#include "propfuse/geometry.hpp"

namespace propfuse {

static_assert(std::endian::native == std::endian::little,
              "flow I/O assumes a little-endian host");

struct Vec2 {
  double du = 0.0;
  double dv = 0.0;
  bool operator==(const Vec2&) const = default;
};

// Dense per-pixel displacement for the transition from -> to, stored
// row-major as interleaved float32 (du, dv).
class MotionField {
 public:
  MotionField() = default;

  MotionField(FrameSize size, std::vector<float> data, int from = 0, int to = 1)
      : size_(size), data_(std::move(data)), from_(from), to_(to) {
    if (!size_.valid())
      throw ValidationError("motion field: non-positive frame size");
    if (data_.size() != expected_length(size_))
      throw ValidationError("motion field: data length " +
                            std::to_string(data_.size()) + " != " +
                            std::to_string(expected_length(size_)));
    for (float f : data_)
      if (!std::isfinite(f))
        throw ValidationError("motion field: non-finite value");
  }

  static MotionField constant(FrameSize size, float du, float dv, int from = 0,
                              int to = 1) {
    std::vector<float> data(expected_length(size));
    for (std::size_t i = 0; i < data.size(); i += 2) {
      data[i] = du;
      data[i + 1] = dv;
    }
    return MotionField(size, std::move(data), from, to);
  }

  static std::size_t expected_length(FrameSize s) {
    return static_cast<std::size_t>(s.width) * static_cast<std::size_t>(s.height) * 2;
  }

  FrameSize size() const noexcept { return size_; }
  int from() const noexcept { return from_; }
  int to() const noexcept { return to_; }
  void set_direction(int from, int to) noexcept {
    from_ = from;
    to_ = to;
  }

  std::span<const float> data() const noexcept { return data_; }

  Vec2 at(int x, int y) const noexcept {
    const std::size_t i =
        (static_cast<std::size_t>(y) * static_cast<std::size_t>(size_.width) +
         static_cast<std::size_t>(x)) * 2;
    return {data_[i], data_[i + 1]};
  }

  // Bilinear lookup at a continuous position; out-of-range positions are
  // clamped to the border first.
  Vec2 sample(double u, double v) const noexcept {
    const double maxu = size_.width - 1;
    const double maxv = size_.height - 1;
    u = std::isfinite(u) ? std::clamp(u, 0.0, maxu) : 0.0;
    v = std::isfinite(v) ? std::clamp(v, 0.0, maxv) : 0.0;
    const int x0 = static_cast<int>(std::floor(u));
    const int y0 = static_cast<int>(std::floor(v));
    const int x1 = std::min(x0 + 1, size_.width - 1);
    const int y1 = std::min(y0 + 1, size_.height - 1);
    const double fx = u - x0;
    const double fy = v - y0;
    if (fx == 0.0 && fy == 0.0) return at(x0, y0);
    const Vec2 a = at(x0, y0), b = at(x1, y0), c = at(x0, y1), d = at(x1, y1);
    const double w00 = (1 - fx) * (1 - fy), w10 = fx * (1 - fy);
    const double w01 = (1 - fx) * fy, w11 = fx * fy;
    return {w00 * a.du + w10 * b.du + w01 * c.du + w11 * d.du,
            w00 * a.dv + w10 * b.dv + w01 * c.dv + w11 * d.dv};
  }

  bool operator==(const MotionField& o) const {
    return size_ == o.size_ &&
           std::memcmp(data_.data(), o.data_.data(), data_.size() * sizeof(float)) == 0;
  }

 private:
  FrameSize size_;
  std::vector<float> data_;
  int from_ = 0;
  int to_ = 1;
};

// ---------------------------------------------------------------------------
// .flo container: float32 magic 202021.25, int32 width, int32 height, then
// width*height interleaved float32 (du, dv), all little-endian.

inline constexpr float kFlowMagic = 202021.25f;

inline std::string encode_flow(const MotionField& field) {
  const auto data = field.data();
  std::string out(12 + data.size() * sizeof(float), '\0');
  const std::int32_t w = field.size().width, h = field.size().height;
  std::memcpy(out.data(), &kFlowMagic, 4);
  std::memcpy(out.data() + 4, &w, 4);
  std::memcpy(out.data() + 8, &h, 4);
  std::memcpy(out.data() + 12, data.data(), data.size() * sizeof(float));
  return out;
}

inline MotionField decode_flow(std::span<const char> bytes, const std::string& origin = "<memory>") {
  if (bytes.size() < 4)
    throw LengthError(origin + ": flow file shorter than its magic");
  float magic;
  std::memcpy(&magic, bytes.data(), 4);
  if (magic != kFlowMagic) throw FormatError(origin + ": bad flow magic");
  if (bytes.size() < 12) throw LengthError(origin + ": truncated flow header");
  std::int32_t w, h;
  std::memcpy(&w, bytes.data() + 4, 4);
  std::memcpy(&h, bytes.data() + 8, 4);
  if (w < 1 || h < 1)
    throw FormatError(origin + ": invalid flow dimensions " + std::to_string(w) +
                      "x" + std::to_string(h));
  const FrameSize size{w, h};
  const std::size_t n = MotionField::expected_length(size);
  const std::size_t payload = bytes.size() - 12;
  if (payload < n * sizeof(float))
    throw LengthError(origin + ": truncated flow payload (" + std::to_string(payload) +
                      " of " + std::to_string(n * sizeof(float)) + " bytes)");
  if (payload > n * sizeof(float))
    throw FormatError(origin + ": trailing bytes after flow payload");
  std::vector<float> data(n);
  std::memcpy(data.data(), bytes.data() + 12, n * sizeof(float));
  for (float f : data)
    if (!std::isfinite(f)) throw FormatError(origin + ": non-finite flow value");
  return MotionField(size, std::move(data));
}

inline MotionField read_flow(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open flow file " + path);
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_flow(bytes, path);
}

inline void write_flow(const MotionField& field, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write flow file " + path);
  const std::string bytes = encode_flow(field);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("short write to flow file " + path);
}

// ---------------------------------------------------------------------------
// Multi-hop composition and the floor-based transfer operator.

enum class CompositionMode {
  // Each hop samples its field at the position reached so far.
  kTrajectory,
  // All fields are sampled at the starting position and summed.
  kAdditive,
};

struct ComposedMotion {
  std::vector<const MotionField*> fields;  // applied in order
  CompositionMode mode = CompositionMode::kTrajectory;
};

struct Pixel {
  long u = 0;
  long v = 0;
  bool operator==(const Pixel&) const = default;
};

// Continuous end point of a chain, before flooring.
inline std::pair<double, double> displace(double u, double v, const ComposedMotion& motion) {
  double pu = u, pv = v;
  for (const MotionField* f : motion.fields) {
    const Vec2 d = motion.mode == CompositionMode::kTrajectory ? f->sample(pu, pv)
                                                              : f->sample(u, v);
    pu += d.du;
    pv += d.dv;
  }
  return {pu, pv};
}

// (floor(u + du), floor(v + dv)) with the displacement accumulated over the
// whole chain; the floor is applied once at the end.
inline Pixel transfer_point(double u, double v, const ComposedMotion& motion) {
  const auto [pu, pv] = displace(u, v, motion);
  return {static_cast<long>(std::floor(pu)), static_cast<long>(std::floor(pv))};
}

inline constexpr double kDefaultMinCoverage = 0.25;

// Moves the four corners, takes their hull and clips it to the frame. Class,
// score and source_offset pass through untouched.
inline std::optional<Detection> transfer_box(const Detection& d, const ComposedMotion& motion,
                                             FrameSize size,
                                             double min_coverage = kDefaultMinCoverage) {
  const BBox& b = d.bbox;
  const Pixel corners[4] = {transfer_point(b.x1, b.y1, motion), transfer_point(b.x2, b.y1, motion),
                            transfer_point(b.x1, b.y2, motion), transfer_point(b.x2, b.y2, motion)};
  BBox moved{static_cast<double>(corners[0].u), static_cast<double>(corners[0].v),
             static_cast<double>(corners[0].u), static_cast<double>(corners[0].v)};
  for (const Pixel& c : corners) {
    moved.x1 = std::min(moved.x1, static_cast<double>(c.u));
    moved.y1 = std::min(moved.y1, static_cast<double>(c.v));
    moved.x2 = std::max(moved.x2, static_cast<double>(c.u));
    moved.y2 = std::max(moved.y2, static_cast<double>(c.v));
  }
  const auto clipped = clip_to_frame(moved, size);
  if (!clipped || clipped->coverage < min_coverage) return std::nullopt;
  Detection out = d;
  out.bbox = clipped->box;
  return out;
}

}  // namespace propfuse
