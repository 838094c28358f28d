#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <optional>
#include <string>
#include <string_view>
#include <tuple>
#include <vector>

#include "propfuse/bplp.hpp"
#include "propfuse/error.hpp"
#include "propfuse/geometry.hpp"
#include "propfuse/similarity.hpp"

namespace propfuse {

enum class FusionMethod { kSwbf, kWbf, kNms, kSoftNms, kNmw };

inline std::string_view to_string(FusionMethod m) {
  switch (m) {
    case FusionMethod::kSwbf: return "swbf";
    case FusionMethod::kWbf: return "wbf";
    case FusionMethod::kNms: return "nms";
    case FusionMethod::kSoftNms: return "snms";
    case FusionMethod::kNmw: return "nmw";
  }
  return "?";
}

inline FusionMethod parse_fusion_method(std::string_view s) {
  for (auto m : {FusionMethod::kSwbf, FusionMethod::kWbf, FusionMethod::kNms,
                 FusionMethod::kSoftNms, FusionMethod::kNmw})
    if (to_string(m) == s) return m;
  throw ConfigError("unknown fusion method '" + std::string(s) + "'");
}

// How a box picks its cluster among the fused boxes that clear the threshold.
enum class MatchRule { kFirst, kBest };

struct FusionConfig {
  FusionMethod method = FusionMethod::kSwbf;
  double iou_threshold = 0.5;
  int num_sources = 1;
  double snms_sigma = 0.5;
  double post_threshold = 0.0;
  MatchRule match = MatchRule::kFirst;

  void validate() const {
    if (!(iou_threshold > 0.0 && iou_threshold < 1.0))
      throw ConfigError("iou threshold must lie in (0,1)");
    if (num_sources < 1) throw ConfigError("num_sources must be at least 1");
    if (!(snms_sigma > 0.0)) throw ConfigError("soft-nms sigma must be positive");
    if (!(post_threshold >= 0.0 && post_threshold <= 1.0))
      throw ConfigError("post threshold must lie in [0,1]");
  }
};

struct FusionStats {
  int inputs = 0;
  int clusters = 0;
  int dropped_by_rescore = 0;
  int dropped_by_threshold = 0;

  FusionStats& operator+=(const FusionStats& o) {
    inputs += o.inputs;
    clusters += o.clusters;
    dropped_by_rescore += o.dropped_by_rescore;
    dropped_by_threshold += o.dropped_by_threshold;
    return *this;
  }
};

// Score descending; ties by (x1, y1, x2, y2) then original position.
inline std::vector<Detection> sort_by_score(std::vector<Detection> dets) {
  std::vector<std::size_t> order(dets.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    const Detection& da = dets[a];
    const Detection& db = dets[b];
    if (da.score != db.score) return da.score > db.score;
    return std::tie(da.bbox.x1, da.bbox.y1, da.bbox.x2, da.bbox.y2) <
           std::tie(db.bbox.x1, db.bbox.y1, db.bbox.x2, db.bbox.y2);
  });
  std::vector<Detection> out;
  out.reserve(dets.size());
  for (std::size_t i : order) out.push_back(dets[i]);
  return out;
}

namespace detail {

inline std::vector<Detection> apply_post_threshold(std::vector<Detection> dets, double thr,
                                                   FusionStats* stats) {
  const auto before = dets.size();
  std::erase_if(dets, [&](const Detection& d) { return d.score <= thr; });
  if (stats) stats->dropped_by_threshold += static_cast<int>(before - dets.size());
  return dets;
}

// Mean score and score-weighted mean corners over the members.
inline Detection fuse_members(const std::vector<Detection>& members) {
  double score_sum = 0.0, x1 = 0.0, y1 = 0.0, x2 = 0.0, y2 = 0.0;
  for (const auto& m : members) {
    score_sum += m.score;
    x1 += m.score * m.bbox.x1;
    y1 += m.score * m.bbox.y1;
    x2 += m.score * m.bbox.x2;
    y2 += m.score * m.bbox.y2;
  }
  Detection f;
  f.class_id = members.front().class_id;
  f.source_offset = 0;
  f.score = score_sum / static_cast<double>(members.size());
  if (score_sum > 0.0) {
    f.bbox = {x1 / score_sum, y1 / score_sum, x2 / score_sum, y2 / score_sum};
  } else {
    BBox b{};
    for (const auto& m : members) {
      b.x1 += m.bbox.x1;
      b.y1 += m.bbox.y1;
      b.x2 += m.bbox.x2;
      b.y2 += m.bbox.y2;
    }
    const double n = static_cast<double>(members.size());
    f.bbox = {b.x1 / n, b.y1 / n, b.x2 / n, b.y2 / n};
  }
  return f;
}

}  // namespace detail

// Weighted boxes fusion with the source-count re-scaling
//   C_r <- C_r * min(B, N) / N
// where B is the cluster size and N = cfg.num_sources. Clusters are grown
// greedily in score order and matched against the running fused box.
inline std::vector<Detection> weighted_boxes_fusion(const std::vector<Detection>& candidates,
                                                    const FusionConfig& cfg,
                                                    FusionStats* stats = nullptr) {
  const auto sorted = sort_by_score(candidates);
  std::vector<std::vector<Detection>> clusters;
  std::vector<Detection> fused;
  for (const Detection& d : sorted) {
    std::optional<std::size_t> match;
    double best = cfg.iou_threshold;
    for (std::size_t r = 0; r < fused.size(); ++r) {
      const double o = iou(fused[r].bbox, d.bbox);
      if (o > best) {
        match = r;
        if (cfg.match == MatchRule::kFirst) break;
        best = o;
      }
    }
    if (!match) {
      clusters.push_back({d});
      fused.push_back(detail::fuse_members(clusters.back()));
    } else {
      clusters[*match].push_back(d);
      fused[*match] = detail::fuse_members(clusters[*match]);
    }
  }
  for (std::size_t r = 0; r < fused.size(); ++r) {
    const int members = static_cast<int>(clusters[r].size());
    if (members < cfg.num_sources)
      fused[r].score = fused[r].score * members / static_cast<double>(cfg.num_sources);
  }
  if (stats) {
    stats->inputs += static_cast<int>(candidates.size());
    stats->clusters += static_cast<int>(fused.size());
  }
  return sort_by_score(detail::apply_post_threshold(std::move(fused), cfg.post_threshold, stats));
}

// Greedy hard suppression: a box survives if no higher-ranked survivor
// overlaps it with IoU > threshold.
inline std::vector<Detection> nms(const std::vector<Detection>& candidates,
                                  const FusionConfig& cfg, FusionStats* stats = nullptr) {
  std::vector<Detection> kept;
  for (const Detection& d : sort_by_score(candidates)) {
    const bool suppressed = std::any_of(kept.begin(), kept.end(), [&](const Detection& k) {
      return iou(k.bbox, d.bbox) > cfg.iou_threshold;
    });
    if (!suppressed) kept.push_back(d);
  }
  for (auto& d : kept) d.source_offset = 0;
  if (stats) {
    stats->inputs += static_cast<int>(candidates.size());
    stats->clusters += static_cast<int>(kept.size());
  }
  return detail::apply_post_threshold(std::move(kept), cfg.post_threshold, stats);
}

// Gaussian Soft-NMS: s <- s * exp(-IoU^2 / sigma) against each selected box.
inline std::vector<Detection> soft_nms(const std::vector<Detection>& candidates,
                                       const FusionConfig& cfg, FusionStats* stats = nullptr) {
  std::vector<Detection> pending = sort_by_score(candidates);
  std::vector<Detection> selected;
  while (!pending.empty()) {
    Detection top = pending.front();
    pending.erase(pending.begin());
    for (auto& d : pending) {
      const double o = iou(top.bbox, d.bbox);
      d.score *= std::exp(-(o * o) / cfg.snms_sigma);
    }
    pending = sort_by_score(std::move(pending));
    top.source_offset = 0;
    selected.push_back(top);
  }
  if (stats) {
    stats->inputs += static_cast<int>(candidates.size());
    stats->clusters += static_cast<int>(selected.size());
  }
  return sort_by_score(detail::apply_post_threshold(std::move(selected), cfg.post_threshold, stats));
}

// Non-maximum weighted: NMS clusters, but the output position is the
// IoU-to-top weighted mean of the cluster and the score is the top score.
inline std::vector<Detection> nmw(const std::vector<Detection>& candidates,
                                  const FusionConfig& cfg, FusionStats* stats = nullptr) {
  std::vector<Detection> pending = sort_by_score(candidates);
  std::vector<Detection> out;
  while (!pending.empty()) {
    const Detection top = pending.front();
    double wsum = 0.0;
    BBox acc{};
    std::vector<Detection> rest;
    for (const auto& d : pending) {
      const double o = iou(top.bbox, d.bbox);
      if (&d == &pending.front() || o > cfg.iou_threshold) {
        const double w = &d == &pending.front() ? 1.0 : o;
        wsum += w;
        acc.x1 += w * d.bbox.x1;
        acc.y1 += w * d.bbox.y1;
        acc.x2 += w * d.bbox.x2;
        acc.y2 += w * d.bbox.y2;
      } else {
        rest.push_back(d);
      }
    }
    Detection f = top;
    f.source_offset = 0;
    f.bbox = {acc.x1 / wsum, acc.y1 / wsum, acc.x2 / wsum, acc.y2 / wsum};
    out.push_back(f);
    pending = std::move(rest);
  }
  if (stats) {
    stats->inputs += static_cast<int>(candidates.size());
    stats->clusters += static_cast<int>(out.size());
  }
  return detail::apply_post_threshold(std::move(out), cfg.post_threshold, stats);
}

// Fuses one class. SWBF and WBF share the clustering path here; the
// similarity re-scoring of SWBF happens before this call.
inline std::vector<Detection> fuse_class(const std::vector<Detection>& candidates,
                                         const FusionConfig& cfg, FusionStats* stats = nullptr) {
  switch (cfg.method) {
    case FusionMethod::kSwbf:
    case FusionMethod::kWbf: return weighted_boxes_fusion(candidates, cfg, stats);
    case FusionMethod::kNms: return nms(candidates, cfg, stats);
    case FusionMethod::kSoftNms: return soft_nms(candidates, cfg, stats);
    case FusionMethod::kNmw: return nmw(candidates, cfg, stats);
  }
  return {};
}

// Splits by class, fuses each class and returns everything score-sorted.
inline std::vector<Detection> fuse_detections(const std::vector<Detection>& dets,
                                              const FusionConfig& cfg,
                                              FusionStats* stats = nullptr) {
  cfg.validate();
  std::map<int, std::vector<Detection>> by_class;
  for (const auto& d : dets) by_class[d.class_id].push_back(d);
  std::vector<Detection> out;
  for (const auto& [cls, members] : by_class) {
    auto fused = fuse_class(members, cfg, stats);
    out.insert(out.end(), fused.begin(), fused.end());
  }
  return sort_by_score(std::move(out));
}

enum class SourceCountMode {
  kEffective,  // offsets that actually had a source frame
  kLiteral,    // 2k + 1 regardless of sequence boundaries
};

inline int source_count(const CandidateSet& set, int k, SourceCountMode mode) {
  return mode == SourceCountMode::kEffective ? set.effective_sources : 2 * k + 1;
}

struct FusionOutcome {
  LabelSet labels;
  FusionStats stats;
};

// SWBF re-scores every propagated candidate by appearance similarity first;
// the other methods fuse the raw candidate scores.
inline FusionOutcome fuse(const CandidateSet& set, const FusionConfig& cfg,
                          const FeatureProvider* provider) {
  FusionOutcome out;
  out.labels.frame_index = set.frame_index;
  std::vector<Detection> dets;
  dets.reserve(set.candidates.size());
  if (cfg.method == FusionMethod::kSwbf) {
    if (!provider) throw ConfigError("swbf requires a feature provider");
    for (const auto& c : set.candidates) {
      if (auto d = rescore(c, set.frame_index, *provider))
        dets.push_back(*d);
      else
        ++out.stats.dropped_by_rescore;
    }
  } else {
    for (const auto& c : set.candidates) dets.push_back(c.detection);
  }
  out.labels.detections = fuse_detections(dets, cfg, &out.stats);
  return out;
}

}  // namespace propfuse
