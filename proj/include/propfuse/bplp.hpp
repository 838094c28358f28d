#pragma once

#include <algorithm>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "propfuse/error.hpp"
#include "propfuse/geometry.hpp"
#include "propfuse/motion.hpp"

namespace propfuse {

// Motion fields keyed by (from, to). Entries added by path are read on first
// use; lookups are safe from concurrent workers.
class FlowStore {
 public:
  FlowStore() = default;
  FlowStore(FlowStore&& other) noexcept {
    std::lock_guard lock(other.mutex_);
    entries_ = std::move(other.entries_);
  }
  FlowStore& operator=(FlowStore&& other) noexcept {
    if (this != &other) {
      std::scoped_lock lock(mutex_, other.mutex_);
      entries_ = std::move(other.entries_);
    }
    return *this;
  }

  void add(MotionField field) {
    const std::pair key{field.from(), field.to()};
    std::lock_guard lock(mutex_);
    entries_[key].field = std::make_shared<const MotionField>(std::move(field));
  }

  void add_file(int from, int to, std::string path) {
    std::lock_guard lock(mutex_);
    auto& e = entries_[{from, to}];
    e.path = std::move(path);
    e.field.reset();
  }

  bool contains(int from, int to) const {
    std::lock_guard lock(mutex_);
    return entries_.count({from, to}) != 0;
  }

  // nullptr when no such transition is known.
  std::shared_ptr<const MotionField> get(int from, int to) const {
    std::unique_lock lock(mutex_);
    auto it = entries_.find({from, to});
    if (it == entries_.end()) return nullptr;
    if (!it->second.field) {
      const std::string path = it->second.path;
      lock.unlock();
      MotionField f = read_flow(path);
      f.set_direction(from, to);
      auto loaded = std::make_shared<const MotionField>(std::move(f));
      lock.lock();
      if (!it->second.field) it->second.field = std::move(loaded);
    }
    return it->second.field;
  }

  std::vector<std::pair<int, int>> keys() const {
    std::lock_guard lock(mutex_);
    std::vector<std::pair<int, int>> out;
    for (const auto& [k, v] : entries_) out.push_back(k);
    return out;
  }

 private:
  struct Entry {
    std::string path;
    std::shared_ptr<const MotionField> field;
  };
  mutable std::mutex mutex_;
  mutable std::map<std::pair<int, int>, Entry> entries_;
};

// The hops that carry labels from frame (target - offset) onto target.
// Positive offsets walk forward fields from the past, negative offsets walk
// backward fields from the future.
struct OffsetChain {
  int offset = 0;
  int source_frame = 0;
  std::vector<std::pair<int, int>> hops;  // (from, to), in application order
};

inline OffsetChain chain_for_offset(int target, int offset) {
  if (offset == 0) throw ValidationError("propagation offset must be non-zero");
  OffsetChain c{offset, target - offset, {}};
  const int step = offset > 0 ? 1 : -1;
  for (int f = c.source_frame; f != target; f += step) c.hops.emplace_back(f, f + step);
  return c;
}

struct PropagationPlan {
  int target_frame = 0;
  int k = 0;
  std::vector<OffsetChain> chains;  // offsets ascending, 0 excluded
};

// Offsets whose source frame is absent from `available_frames`, or whose
// chain misses a flow, are left out of the plan.
inline PropagationPlan make_plan(int target, int k, const std::vector<int>& available_frames,
                                 const FlowStore& flows) {
  if (k < 0) throw ValidationError("propagation length k must be non-negative");
  PropagationPlan plan{target, k, {}};
  auto has_frame = [&](int f) {
    return std::find(available_frames.begin(), available_frames.end(), f) !=
           available_frames.end();
  };
  for (int i = -k; i <= k; ++i) {
    if (i == 0) continue;
    OffsetChain c = chain_for_offset(target, i);
    if (!has_frame(c.source_frame)) continue;
    const bool complete = std::all_of(c.hops.begin(), c.hops.end(), [&](const auto& h) {
      return flows.contains(h.first, h.second);
    });
    if (complete) plan.chains.push_back(std::move(c));
  }
  return plan;
}

struct PropagationOptions {
  CompositionMode mode = CompositionMode::kTrajectory;
  double min_coverage = kDefaultMinCoverage;
};

// A member of the candidate set together with where it came from. For
// offset-0 members source_box equals the detection's own box.
struct Candidate {
  Detection detection;
  BBox source_box;
  int source_frame = 0;

  bool operator==(const Candidate&) const = default;
};

struct CandidateSet {
  int frame_index = 0;
  std::vector<Candidate> candidates;
  // Number of distinct offsets (including 0) that had a source frame.
  int effective_sources = 1;
  std::vector<int> offsets;  // available offsets, ascending, includes 0

  LabelSet labels() const {
    LabelSet out{frame_index, {}};
    out.detections.reserve(candidates.size());
    for (const auto& c : candidates) out.detections.push_back(c.detection);
    return out;
  }
};

inline LabelSet threshold_labels(const LabelSet& labels, double teacher_threshold) {
  LabelSet out{labels.frame_index, {}};
  for (const auto& d : labels.detections)
    if (d.score > teacher_threshold) out.detections.push_back(d);
  return out;
}

inline std::vector<Candidate> propagate_from_offset(int offset, int target,
                                                    const LabelSet& source_labels,
                                                    const FlowStore& flows, FrameSize size,
                                                    const PropagationOptions& opts = {}) {
  const OffsetChain chain = chain_for_offset(target, offset);
  std::vector<std::shared_ptr<const MotionField>> held;
  ComposedMotion motion{{}, opts.mode};
  for (const auto& [from, to] : chain.hops) {
    auto f = flows.get(from, to);
    if (!f) throw UnavailableOffsetError(from, to);
    if (f->size() != size)
      throw ValidationError("flow (" + std::to_string(from) + "," + std::to_string(to) +
                            ") does not match the frame size");
    motion.fields.push_back(f.get());
    held.push_back(std::move(f));
  }
  std::vector<Candidate> out;
  for (const Detection& d : source_labels.detections) {
    auto moved = transfer_box(d, motion, size, opts.min_coverage);
    if (!moved) continue;
    moved->source_offset = offset;
    out.push_back({*moved, d.bbox, chain.source_frame});
  }
  return out;
}

// Candidate set for `target`: the thresholded teacher labels of the target
// itself plus everything propagated from up to k frames on either side.
inline CandidateSet build_candidates(int target, int k,
                                     const std::map<int, LabelSet>& labels_by_frame,
                                     const FlowStore& flows, FrameSize size,
                                     double teacher_threshold,
                                     const PropagationOptions& opts = {}) {
  CandidateSet set;
  set.frame_index = target;
  if (auto it = labels_by_frame.find(target); it != labels_by_frame.end()) {
    for (const auto& d : threshold_labels(it->second, teacher_threshold).detections) {
      Detection own = d;
      own.source_offset = 0;
      set.candidates.push_back({own, d.bbox, target});
    }
  }

  std::vector<int> frames;
  for (const auto& [f, _] : labels_by_frame) frames.push_back(f);
  const PropagationPlan plan = make_plan(target, k, frames, flows);

  set.offsets.push_back(0);
  for (const auto& chain : plan.chains) {
    const LabelSet source =
        threshold_labels(labels_by_frame.at(chain.source_frame), teacher_threshold);
    auto moved = propagate_from_offset(chain.offset, target, source, flows, size, opts);
    set.candidates.insert(set.candidates.end(), moved.begin(), moved.end());
    set.offsets.push_back(chain.offset);
  }
  std::sort(set.offsets.begin(), set.offsets.end());
  set.effective_sources = static_cast<int>(set.offsets.size());
  return set;
}

}  // namespace propfuse
