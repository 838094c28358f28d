#pragma once

// Shared test fixtures: temp directories, random instance generators and
// brute-force reference implementations used as oracles.

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "propfuse/propfuse.hpp"

namespace testsupport {

using propfuse::BBox;
using propfuse::Detection;

class TempDir {
 public:
  explicit TempDir(const std::string& tag = "propfuse") {
    static int counter = 0;
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() /
            (tag + "_" + std::to_string(rd()) + "_" + std::to_string(counter++));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  std::string str() const { return path_.string(); }
  std::string operator/(const std::string& rel) const { return (path_ / rel).string(); }

 private:
  std::filesystem::path path_;
};

inline std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

// Relative path -> file bytes for every regular file below `root`.
inline std::map<std::string, std::string> tree_contents(const std::string& root) {
  std::map<std::string, std::string> out;
  for (const auto& e : std::filesystem::recursive_directory_iterator(root))
    if (e.is_regular_file())
      out[std::filesystem::relative(e.path(), root).string()] = slurp(e.path().string());
  return out;
}

// ---------------------------------------------------------------------------
// Generators

// Up to `max_boxes` boxes per class scattered around a few centres, so that
// clusters actually form. Scores are sometimes drawn from a coarse grid to
// exercise tie breaking.
inline std::vector<Detection> random_instance(std::mt19937_64& rng, int classes, int max_boxes) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<Detection> out;
  for (int c = 0; c < classes; ++c) {
    const int n = static_cast<int>(unit(rng) * (max_boxes + 1));
    const int centres = 1 + static_cast<int>(unit(rng) * 3);
    std::vector<std::pair<double, double>> ctr;
    for (int i = 0; i < centres; ++i) ctr.emplace_back(20 + 60 * unit(rng), 20 + 60 * unit(rng));
    const bool coarse = unit(rng) < 0.3;
    for (int i = 0; i < n; ++i) {
      const auto [cx, cy] = ctr[static_cast<std::size_t>(unit(rng) * centres)];
      const double w = 8 + 12 * unit(rng), h = 8 + 12 * unit(rng);
      const double x = cx + 6 * (unit(rng) - 0.5), y = cy + 6 * (unit(rng) - 0.5);
      Detection d;
      d.class_id = c;
      d.bbox = {x, y, x + w, y + h};
      d.score = coarse ? (1 + static_cast<int>(unit(rng) * 10)) / 10.0 : unit(rng);
      d.source_offset = static_cast<int>(unit(rng) * 5) - 2;
      out.push_back(d);
    }
  }
  std::shuffle(out.begin(), out.end(), rng);
  return out;
}

// ---------------------------------------------------------------------------
// Oracles

// IoU by counting the centres of a fine grid of cells.
inline double pixel_count_iou(const BBox& a, const BBox& b, double cell) {
  const double x0 = std::min(a.x1, b.x1), y0 = std::min(a.y1, b.y1);
  const double x1 = std::max(a.x2, b.x2), y1 = std::max(a.y2, b.y2);
  long inter = 0, uni = 0;
  for (double y = y0 + cell / 2; y < y1; y += cell)
    for (double x = x0 + cell / 2; x < x1; x += cell) {
      const bool in_a = x > a.x1 && x < a.x2 && y > a.y1 && y < a.y2;
      const bool in_b = x > b.x1 && x < b.x2 && y > b.y1 && y < b.y2;
      inter += in_a && in_b;
      uni += in_a || in_b;
    }
  return uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

inline double ref_iou(const BBox& a, const BBox& b) {
  const double iw = std::max(0.0, std::min(a.x2, b.x2) - std::max(a.x1, b.x1));
  const double ih = std::max(0.0, std::min(a.y2, b.y2) - std::max(a.y1, b.y1));
  const double inter = iw * ih;
  const double uni = (a.x2 - a.x1) * (a.y2 - a.y1) + (b.x2 - b.x1) * (b.y2 - b.y1) - inter;
  return uni > 0 ? inter / uni : 0.0;
}

// True when `a` ranks before `b`: score descending, then corners ascending,
// then input position.
inline bool ref_before(const Detection& a, std::size_t ia, const Detection& b, std::size_t ib) {
  if (a.score != b.score) return a.score > b.score;
  if (a.bbox.x1 != b.bbox.x1) return a.bbox.x1 < b.bbox.x1;
  if (a.bbox.y1 != b.bbox.y1) return a.bbox.y1 < b.bbox.y1;
  if (a.bbox.x2 != b.bbox.x2) return a.bbox.x2 < b.bbox.x2;
  if (a.bbox.y2 != b.bbox.y2) return a.bbox.y2 < b.bbox.y2;
  return ia < ib;
}

// Selection sort by ref_before.
inline std::vector<Detection> ref_sort(const std::vector<Detection>& in) {
  std::vector<bool> taken(in.size(), false);
  std::vector<Detection> out;
  for (std::size_t k = 0; k < in.size(); ++k) {
    std::size_t best = in.size();
    for (std::size_t i = 0; i < in.size(); ++i) {
      if (taken[i]) continue;
      if (best == in.size() || ref_before(in[i], i, in[best], best)) best = i;
    }
    taken[best] = true;
    out.push_back(in[best]);
  }
  return out;
}

// Weighted boxes fusion written straight from the procedure: lists L
// (clusters) and F (fused boxes), first matching F entry wins, F entry
// recomputed from all members after every insertion, then the
// min(B, N) / N re-scale and the post filter.
inline std::vector<Detection> ref_wbf_class(const std::vector<Detection>& boxes, double thr,
                                            int num_sources, double post) {
  std::vector<std::vector<Detection>> L;
  std::vector<Detection> F;
  for (const Detection& d : ref_sort(boxes)) {
    std::size_t pos = F.size();
    for (std::size_t r = 0; r < F.size(); ++r)
      if (ref_iou(F[r].bbox, d.bbox) > thr) {
        pos = r;
        break;
      }
    if (pos == F.size()) {
      L.emplace_back();
      F.emplace_back();
    }
    L[pos].push_back(d);
    double s = 0, x1 = 0, y1 = 0, x2 = 0, y2 = 0;
    for (const auto& m : L[pos]) {
      s += m.score;
      x1 += m.score * m.bbox.x1;
      y1 += m.score * m.bbox.y1;
      x2 += m.score * m.bbox.x2;
      y2 += m.score * m.bbox.y2;
    }
    Detection f;
    f.class_id = d.class_id;
    f.score = s / static_cast<double>(L[pos].size());
    f.bbox = {x1 / s, y1 / s, x2 / s, y2 / s};
    F[pos] = f;
  }
  std::vector<Detection> out;
  for (std::size_t r = 0; r < F.size(); ++r) {
    Detection f = F[r];
    const int B = static_cast<int>(L[r].size());
    if (B < num_sources) f.score = f.score * B / static_cast<double>(num_sources);
    if (f.score > post) out.push_back(f);
  }
  return ref_sort(out);
}

// Textbook NMS: repeatedly take the best unprocessed box and suppress every
// remaining box that overlaps it by more than thr.
inline std::vector<Detection> ref_nms_class(const std::vector<Detection>& boxes, double thr,
                                            double post) {
  const auto sorted = ref_sort(boxes);
  std::vector<bool> alive(sorted.size(), true);
  std::vector<Detection> out;
  for (std::size_t i = 0; i < sorted.size(); ++i) {
    if (!alive[i]) continue;
    Detection keep = sorted[i];
    keep.source_offset = 0;
    if (keep.score > post) out.push_back(keep);
    for (std::size_t j = i + 1; j < sorted.size(); ++j)
      if (ref_iou(sorted[i].bbox, sorted[j].bbox) > thr) alive[j] = false;
  }
  return out;
}

// Runs a per-class oracle over every class and merges the result in rank order.
template <class PerClass>
std::vector<Detection> ref_per_class(const std::vector<Detection>& dets, PerClass fn) {
  std::map<int, std::vector<Detection>> by_class;
  for (const auto& d : dets) by_class[d.class_id].push_back(d);
  std::vector<Detection> all;
  for (const auto& [c, v] : by_class) {
    auto r = fn(v);
    all.insert(all.end(), r.begin(), r.end());
  }
  return ref_sort(all);
}

// Average precision by full enumeration: precision and recall after every
// rank, then for each of the 101 recall levels the best precision reached at
// any rank with at least that recall.
inline double ref_average_precision(const std::vector<std::pair<int, Detection>>& dets,
                                    const std::map<int, std::vector<BBox>>& gts, double thr) {
  int npos = 0;
  for (const auto& [f, g] : gts) npos += static_cast<int>(g.size());
  std::vector<std::pair<int, Detection>> ranked = dets;
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const auto& a, const auto& b) { return a.second.score > b.second.score; });
  std::map<int, std::vector<bool>> used;
  for (const auto& [f, g] : gts) used[f].assign(g.size(), false);
  std::vector<double> prec, rec;
  int tp = 0, fp = 0;
  for (const auto& [f, d] : ranked) {
    int hit = -1;
    double best = -1;
    auto it = gts.find(f);
    if (it != gts.end())
      for (std::size_t g = 0; g < it->second.size(); ++g) {
        if (used[f][g]) continue;
        const double o = ref_iou(d.bbox, it->second[g]);
        if (o >= thr && o > best) {
          best = o;
          hit = static_cast<int>(g);
        }
      }
    if (hit >= 0) {
      used[f][static_cast<std::size_t>(hit)] = true;
      ++tp;
    } else {
      ++fp;
    }
    prec.push_back(static_cast<double>(tp) / (tp + fp));
    rec.push_back(npos ? static_cast<double>(tp) / npos : 0.0);
  }
  if (npos == 0) return 0.0;
  double sum = 0;
  for (int i = 0; i <= 100; ++i) {
    const double level = i / 100.0;
    double p = 0;
    for (std::size_t r = 0; r < prec.size(); ++r)
      if (rec[r] >= level) p = std::max(p, prec[r]);
    sum += p;
  }
  return sum / 101.0;
}

}  // namespace testsupport
