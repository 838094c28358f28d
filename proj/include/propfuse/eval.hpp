#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "propfuse/bplp.hpp"
#include "propfuse/error.hpp"
#include "propfuse/geometry.hpp"
#include "propfuse/motion.hpp"

namespace propfuse {

// ---------------------------------------------------------------------------
// Average precision

struct PRCurve {
  std::vector<double> recall;     // non-decreasing
  std::vector<double> precision;  // max-interpolated, non-increasing
  double ap = 0.0;
  // False when the class has neither ground truth nor detections.
  bool defined = true;
};

inline constexpr int kRecallSamples = 101;

// Recall grid i/100, i = 0..100.
inline double recall_threshold(int i) { return i / 100.0; }

// IoU grid 0.50, 0.55, ..., 0.95.
inline std::vector<double> coco_iou_thresholds() {
  std::vector<double> t;
  for (int i = 0; i < 10; ++i) t.push_back((50 + 5 * i) / 100.0);
  return t;
}

// Single-class AP over many frames. Detections are ranked globally by score;
// each one takes the still-unmatched ground truth of its frame with the
// highest IoU >= iou_thr (lowest index on ties).
inline PRCurve average_precision(const std::map<int, std::vector<Detection>>& dets_by_frame,
                                 const std::map<int, std::vector<BBox>>& gts_by_frame,
                                 double iou_thr) {
  struct Ranked {
    double score;
    int frame;
    std::size_t index;
  };
  std::vector<Ranked> ranked;
  for (const auto& [f, dets] : dets_by_frame)
    for (std::size_t i = 0; i < dets.size(); ++i) ranked.push_back({dets[i].score, f, i});
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const Ranked& a, const Ranked& b) { return a.score > b.score; });

  std::size_t npos = 0;
  std::map<int, std::vector<bool>> taken;
  for (const auto& [f, gts] : gts_by_frame) {
    npos += gts.size();
    taken[f].assign(gts.size(), false);
  }

  PRCurve curve;
  if (npos == 0) {
    curve.defined = !ranked.empty();
    return curve;
  }

  std::size_t tp = 0, fp = 0;
  for (const Ranked& r : ranked) {
    const BBox& box = dets_by_frame.at(r.frame)[r.index].bbox;
    int best = -1;
    double best_iou = iou_thr;
    if (auto it = gts_by_frame.find(r.frame); it != gts_by_frame.end()) {
      auto& used = taken[r.frame];
      for (std::size_t g = 0; g < it->second.size(); ++g) {
        if (used[g]) continue;
        const double o = iou(box, it->second[g]);
        if (o >= best_iou && (best < 0 || o > best_iou)) {
          best = static_cast<int>(g);
          best_iou = o;
        }
      }
      if (best >= 0) used[static_cast<std::size_t>(best)] = true;
    }
    best >= 0 ? ++tp : ++fp;
    curve.recall.push_back(static_cast<double>(tp) / static_cast<double>(npos));
    curve.precision.push_back(static_cast<double>(tp) / static_cast<double>(tp + fp));
  }
  for (std::size_t i = curve.precision.size(); i-- > 1;)
    curve.precision[i - 1] = std::max(curve.precision[i - 1], curve.precision[i]);

  double sum = 0.0;
  for (int i = 0; i < kRecallSamples; ++i) {
    const auto it =
        std::lower_bound(curve.recall.begin(), curve.recall.end(), recall_threshold(i));
    if (it != curve.recall.end()) sum += curve.precision[static_cast<std::size_t>(it - curve.recall.begin())];
  }
  curve.ap = sum / kRecallSamples;
  return curve;
}

// Convenience form for a single image.
inline PRCurve average_precision(const std::vector<Detection>& dets, const std::vector<BBox>& gts,
                                 double iou_thr) {
  return average_precision(std::map<int, std::vector<Detection>>{{0, dets}},
                           std::map<int, std::vector<BBox>>{{0, gts}}, iou_thr);
}

struct EvalReport {
  double map = 0.0;
  double map50 = 0.0;
  double map75 = 0.0;
  std::map<std::string, double> per_class_ap50;
  std::map<std::string, double> per_class_ap;  // mean over the IoU grid
  int evaluated_classes = 0;
};

// Class ids index into `class_names`. Classes with neither ground truth nor
// detections are left out of every mean.
inline EvalReport evaluate(const std::vector<LabelSet>& dets, const std::vector<LabelSet>& gts,
                           const std::vector<std::string>& class_names) {
  const int num_classes = static_cast<int>(class_names.size());
  std::set<int> unknown;
  for (const auto* sets : {&dets, &gts})
    for (const auto& ls : *sets)
      for (const auto& d : ls.detections)
        if (d.class_id < 0 || d.class_id >= num_classes) unknown.insert(d.class_id);
  if (!unknown.empty()) {
    std::string msg = "unknown class ids:";
    for (int c : unknown) msg += " " + std::to_string(c);
    throw ValidationError(msg);
  }

  std::vector<std::map<int, std::vector<Detection>>> det_idx(class_names.size());
  std::vector<std::map<int, std::vector<BBox>>> gt_idx(class_names.size());
  for (const auto& ls : dets)
    for (const auto& d : ls.detections)
      det_idx[static_cast<std::size_t>(d.class_id)][ls.frame_index].push_back(d);
  for (const auto& ls : gts)
    for (const auto& d : ls.detections)
      gt_idx[static_cast<std::size_t>(d.class_id)][ls.frame_index].push_back(d.bbox);

  EvalReport report;
  const auto thresholds = coco_iou_thresholds();
  double sum_all = 0.0, sum50 = 0.0, sum75 = 0.0;
  for (std::size_t c = 0; c < class_names.size(); ++c) {
    double class_sum = 0.0;
    bool defined = true;
    for (double t : thresholds) {
      const PRCurve pr = average_precision(det_idx[c], gt_idx[c], t);
      if (!pr.defined) {
        defined = false;
        break;
      }
      class_sum += pr.ap;
      if (t == 0.5) {
        sum50 += pr.ap;
        report.per_class_ap50[class_names[c]] = pr.ap;
      }
      if (t == 0.75) sum75 += pr.ap;
    }
    if (!defined) continue;
    ++report.evaluated_classes;
    report.per_class_ap[class_names[c]] = class_sum / static_cast<double>(thresholds.size());
    sum_all += class_sum / static_cast<double>(thresholds.size());
  }
  if (report.evaluated_classes > 0) {
    const double n = report.evaluated_classes;
    report.map = sum_all / n;
    report.map50 = sum50 / n;
    report.map75 = sum75 / n;
  }
  return report;
}

inline nlohmann::ordered_json to_json(const EvalReport& r) {
  nlohmann::ordered_json j;
  j["mAP"] = r.map;
  j["mAP50"] = r.map50;
  j["mAP75"] = r.map75;
  j["evaluated_classes"] = r.evaluated_classes;
  j["per_class_ap50"] = r.per_class_ap50;
  j["per_class_ap"] = r.per_class_ap;
  return j;
}

// One header row and one value row: mAP, mAP50, mAP75, then per-class AP50.
inline std::string to_csv(const EvalReport& r) {
  std::ostringstream head, row;
  head << "mAP,mAP50,mAP75";
  row << r.map << "," << r.map50 << "," << r.map75;
  for (const auto& [name, ap] : r.per_class_ap50) {
    head << "," << name;
    row << "," << ap;
  }
  return head.str() + "\n" + row.str() + "\n";
}

// ---------------------------------------------------------------------------
// Forward-backward self-consistency of the motion fields

struct ConsistencyOptions {
  int hops = 1;
  PropagationOptions propagation;
  double small_height = 45.0;
};

struct ConsistencyReport {
  static constexpr int kBins = 20;  // width 0.05 over [0,1]

  std::vector<double> ious;
  double mean_iou = 0.0;
  std::map<int, double> per_class_mean_iou;
  std::vector<double> pmf;
  int zero_iou_count = 0;
  // Conditioned on IoU == 0; nullopt when no box reached zero.
  std::optional<double> out_of_frame_given_zero;
  std::optional<double> small_given_zero;
};

inline int iou_bin(double v) {
  return std::clamp(static_cast<int>(std::floor(v * ConsistencyReport::kBins)), 0,
                    ConsistencyReport::kBins - 1);
}

// Carries each box `hops` frames forward and back again, then measures the
// IoU with where it started. Boxes lost on the way count as IoU 0.
inline ConsistencyReport self_consistency(const LabelSet& labels, const FlowStore& flows,
                                          FrameSize size, const ConsistencyOptions& opts = {}) {
  if (opts.hops < 1) throw ValidationError("self-consistency needs at least one hop");
  if (labels.detections.empty()) throw ValidationError("self-consistency needs at least one box");
  const int t = labels.frame_index;

  auto compose = [&](const OffsetChain& chain,
                     std::vector<std::shared_ptr<const MotionField>>& held) {
    ComposedMotion m{{}, opts.propagation.mode};
    for (const auto& [from, to] : chain.hops) {
      auto f = flows.get(from, to);
      if (!f) throw UnavailableOffsetError(from, to);
      m.fields.push_back(f.get());
      held.push_back(std::move(f));
    }
    return m;
  };
  std::vector<std::shared_ptr<const MotionField>> held;
  const ComposedMotion forward = compose(chain_for_offset(t + opts.hops, opts.hops), held);
  const ComposedMotion backward = compose(chain_for_offset(t, -opts.hops), held);

  ConsistencyReport r;
  r.pmf.assign(ConsistencyReport::kBins, 0.0);
  std::map<int, std::pair<double, int>> per_class;
  int out_of_frame = 0, small = 0;
  for (const Detection& d : labels.detections) {
    double v = 0.0;
    bool lost = true;
    if (auto there = transfer_box(d, forward, size, opts.propagation.min_coverage)) {
      if (auto back = transfer_box(*there, backward, size, opts.propagation.min_coverage)) {
        v = iou(d.bbox, back->bbox);
        lost = false;
      }
    }
    r.ious.push_back(v);
    auto& pc = per_class[d.class_id];
    pc.first += v;
    pc.second += 1;
    if (v == 0.0) {
      ++r.zero_iou_count;
      if (lost) ++out_of_frame;
      if (d.bbox.height() <= opts.small_height) ++small;
    }
  }
  const double n = static_cast<double>(r.ious.size());
  double sum = 0.0;
  for (double v : r.ious) {
    sum += v;
    r.pmf[static_cast<std::size_t>(iou_bin(v))] += 1.0;
  }
  for (double& p : r.pmf) p /= n;
  r.mean_iou = sum / n;
  for (const auto& [c, acc] : per_class) r.per_class_mean_iou[c] = acc.first / acc.second;
  if (r.zero_iou_count > 0) {
    r.out_of_frame_given_zero = out_of_frame / static_cast<double>(r.zero_iou_count);
    r.small_given_zero = small / static_cast<double>(r.zero_iou_count);
  }
  return r;
}

inline nlohmann::ordered_json to_json(const ConsistencyReport& r,
                                      const std::vector<std::string>& class_names = {}) {
  nlohmann::ordered_json j;
  j["boxes"] = r.ious.size();
  j["mean_iou"] = r.mean_iou;
  nlohmann::ordered_json per_class = nlohmann::ordered_json::object();
  for (const auto& [c, m] : r.per_class_mean_iou) {
    const std::string name = c >= 0 && c < static_cast<int>(class_names.size())
                                 ? class_names[static_cast<std::size_t>(c)]
                                 : std::to_string(c);
    per_class[name] = m;
  }
  j["per_class_mean_iou"] = per_class;
  j["pmf_bin_width"] = 1.0 / ConsistencyReport::kBins;
  j["pmf"] = r.pmf;
  j["zero_iou_count"] = r.zero_iou_count;
  j["out_of_frame_given_zero"] =
      r.out_of_frame_given_zero ? nlohmann::ordered_json(*r.out_of_frame_given_zero) : nullptr;
  j["small_given_zero"] =
      r.small_given_zero ? nlohmann::ordered_json(*r.small_given_zero) : nullptr;
  j["ious"] = r.ious;
  return j;
}

}  // namespace propfuse
