#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <vector>

namespace propfuse {

struct FrameSize {
  int width = 0;
  int height = 0;

  bool valid() const noexcept { return width >= 1 && height >= 1; }
  bool operator==(const FrameSize&) const = default;
};

// Axis-aligned box as a continuous corner pair, image origin top-left.
struct BBox {
  double x1 = 0.0;
  double y1 = 0.0;
  double x2 = 0.0;
  double y2 = 0.0;

  double width() const noexcept { return x2 - x1; }
  double height() const noexcept { return y2 - y1; }
  double area() const noexcept { return width() * height(); }

  bool valid() const noexcept {
    return std::isfinite(x1) && std::isfinite(y1) && std::isfinite(x2) &&
           std::isfinite(y2) && x1 < x2 && y1 < y2;
  }

  bool operator==(const BBox&) const = default;
};

struct Detection {
  int class_id = 0;
  BBox bbox;
  double score = 0.0;
  // 0 for the teacher's own prediction on the frame; i when propagated from
  // frame (target - i).
  int source_offset = 0;

  bool operator==(const Detection&) const = default;
};

struct LabelSet {
  int frame_index = 0;
  std::vector<Detection> detections;

  bool operator==(const LabelSet&) const = default;
};

inline double intersection_area(const BBox& a, const BBox& b) noexcept {
  const double w = std::min(a.x2, b.x2) - std::max(a.x1, b.x1);
  const double h = std::min(a.y2, b.y2) - std::max(a.y1, b.y1);
  if (w <= 0.0 || h <= 0.0) return 0.0;
  return w * h;
}

inline double iou(const BBox& a, const BBox& b) noexcept {
  if (a == b) return 1.0;
  const double inter = intersection_area(a, b);
  if (inter <= 0.0) return 0.0;
  const double uni = a.area() + b.area() - inter;
  return std::clamp(inter / uni, 0.0, 1.0);
}

struct ClippedBox {
  BBox box;
  double coverage = 0.0;  // clipped area / original area
};

// Intersects `b` with [0,width]x[0,height]. Empty or degenerate results are
// dropped.
inline std::optional<ClippedBox> clip_to_frame(const BBox& b, FrameSize s) {
  if (!b.valid()) return std::nullopt;
  BBox c{std::max(b.x1, 0.0), std::max(b.y1, 0.0),
         std::min(b.x2, static_cast<double>(s.width)),
         std::min(b.y2, static_cast<double>(s.height))};
  if (!c.valid()) return std::nullopt;
  const double coverage = c == b ? 1.0 : std::min(1.0, c.area() / b.area());
  if (!(coverage > 0.0)) return std::nullopt;
  return ClippedBox{c, coverage};
}

}  // namespace propfuse
