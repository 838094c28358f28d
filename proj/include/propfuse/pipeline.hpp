#pragma once

#include <atomic>
#include <chrono>
#include <cstdint>
#include <exception>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"

#include "propfuse/bplp.hpp"
#include "propfuse/error.hpp"
#include "propfuse/fusion.hpp"
#include "propfuse/labels_io.hpp"
#include "propfuse/log.hpp"
#include "propfuse/manifest.hpp"
#include "propfuse/similarity.hpp"
#include "propfuse/synth.hpp"

namespace propfuse {

enum class FeatureSource { kPatch, kPrecomputed };
enum class MissPolicy { kDrop, kPatch };

struct PipelineConfig {
  int k = 1;
  double teacher_threshold = 0.4;
  double iou_threshold = 0.5;
  double post_threshold = 0.1;
  FusionMethod method = FusionMethod::kSwbf;
  CompositionMode composition = CompositionMode::kTrajectory;
  double min_coverage = kDefaultMinCoverage;
  FeatureSource features = FeatureSource::kPatch;
  int patch_size = PatchDescriptor::kDefaultSide;
  MissPolicy embedding_miss = MissPolicy::kDrop;
  SourceCountMode source_count = SourceCountMode::kEffective;
  double snms_sigma = 0.5;
  MatchRule match = MatchRule::kFirst;
  int jobs = 1;
  std::uint64_t seed = 0;
  bool keep_going = false;

  void validate() const {
    auto unit = [](double v) { return v >= 0.0 && v <= 1.0; };
    if (k < 0) throw ConfigError("k must be non-negative");
    if (!unit(teacher_threshold)) throw ConfigError("teacher_threshold must lie in [0,1]");
    if (!unit(min_coverage)) throw ConfigError("min_coverage must lie in [0,1]");
    if (patch_size < 1) throw ConfigError("patch_size must be positive");
    if (jobs < 1) throw ConfigError("jobs must be at least 1");
    fusion(1).validate();
  }

  PropagationOptions propagation() const { return {composition, min_coverage}; }

  FusionConfig fusion(int num_sources) const {
    FusionConfig f;
    f.method = method;
    f.iou_threshold = iou_threshold;
    f.num_sources = num_sources;
    f.snms_sigma = snms_sigma;
    f.post_threshold = post_threshold;
    f.match = match;
    return f;
  }

  // Applies one key=value setting; unknown keys and malformed values throw.
  void set(const std::string& key, const std::string& value) {
    auto number = [&]() {
      try {
        std::size_t used = 0;
        const double v = std::stod(value, &used);
        if (used != value.size()) throw std::invalid_argument(value);
        return v;
      } catch (const std::exception&) {
        throw ConfigError("config key '" + key + "': not a number: '" + value + "'");
      }
    };
    auto integer = [&]() {
      const double v = number();
      if (v != std::floor(v)) throw ConfigError("config key '" + key + "': not an integer");
      return static_cast<long long>(v);
    };
    auto choice = [&](std::initializer_list<const char*> options) {
      for (const char* o : options)
        if (value == o) return;
      std::string msg = "config key '" + key + "': '" + value + "' is not one of";
      for (const char* o : options) msg += std::string(" ") + o;
      throw ConfigError(msg);
    };

    if (key == "k") {
      k = static_cast<int>(integer());
    } else if (key == "teacher_threshold") {
      teacher_threshold = number();
    } else if (key == "iou_threshold" || key == "thr") {
      iou_threshold = number();
    } else if (key == "post_threshold") {
      post_threshold = number();
    } else if (key == "method") {
      method = parse_fusion_method(value);
    } else if (key == "composition") {
      choice({"trajectory", "additive"});
      composition = value == "trajectory" ? CompositionMode::kTrajectory : CompositionMode::kAdditive;
    } else if (key == "min_coverage") {
      min_coverage = number();
    } else if (key == "features") {
      choice({"patch", "precomputed"});
      features = value == "patch" ? FeatureSource::kPatch : FeatureSource::kPrecomputed;
    } else if (key == "patch_size") {
      patch_size = static_cast<int>(integer());
    } else if (key == "embedding_miss") {
      choice({"drop", "patch"});
      embedding_miss = value == "drop" ? MissPolicy::kDrop : MissPolicy::kPatch;
    } else if (key == "source_count") {
      choice({"effective", "literal"});
      source_count = value == "effective" ? SourceCountMode::kEffective : SourceCountMode::kLiteral;
    } else if (key == "snms_sigma") {
      snms_sigma = number();
    } else if (key == "match") {
      choice({"first", "best"});
      match = value == "first" ? MatchRule::kFirst : MatchRule::kBest;
    } else if (key == "jobs") {
      jobs = static_cast<int>(integer());
    } else if (key == "seed") {
      seed = static_cast<std::uint64_t>(integer());
    } else if (key == "keep_going") {
      choice({"true", "false"});
      keep_going = value == "true";
    } else {
      throw ConfigError("unknown config key '" + key + "'");
    }
  }
};

inline std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

// Flat key=value text; '#' starts a comment.
inline void apply_config_text(PipelineConfig& cfg, std::istream& in, const std::string& origin) {
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError(origin + ":" + std::to_string(lineno) + ": expected key=value, got '" + line + "'");
    try {
      cfg.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    } catch (const ConfigError& e) {
      throw ConfigError(origin + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
}

inline PipelineConfig load_config(const std::string& path, PipelineConfig base = {}) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path);
  apply_config_text(base, in, path);
  return base;
}

// ---------------------------------------------------------------------------

// Everything the pipeline reads, held in memory (flows may load lazily).
struct SequenceData {
  FrameSize size;
  ClassVocabulary vocab;
  std::map<int, LabelSet> teacher;
  std::shared_ptr<FlowStore> flows = std::make_shared<FlowStore>();
  std::shared_ptr<const std::map<int, Frame>> frames = std::make_shared<std::map<int, Frame>>();
  std::string embeddings_path;

  std::vector<int> frame_indices() const {
    std::vector<int> out;
    for (const auto& [f, _] : teacher) out.push_back(f);
    return out;
  }
};

inline SequenceData load_sequence(const SequenceManifest& m, bool with_frames) {
  SequenceData d;
  d.size = m.size;
  d.vocab = vocabulary(m);
  d.teacher = load_teacher_labels(m);
  *d.flows = flow_store(m);
  if (with_frames) d.frames = load_frames(m);
  if (!m.embeddings.empty()) d.embeddings_path = m.resolve(m.embeddings);
  return d;
}

inline SequenceData sequence_from_bundle(const synth::SequenceBundle& b) {
  SequenceData d;
  d.size = b.size;
  d.vocab = b.vocab;
  for (const auto& ls : b.detections) d.teacher[ls.frame_index] = ls;
  for (const auto* set : {&b.forward, &b.backward})
    for (const auto& f : *set) d.flows->add(f);
  auto frames = std::make_shared<std::map<int, Frame>>();
  for (std::size_t t = 0; t < b.frames.size(); ++t) frames->emplace(static_cast<int>(t), b.frames[t]);
  d.frames = frames;
  return d;
}

// Every hop needed by an offset whose source frame exists must be present.
inline void validate_flow_coverage(const SequenceData& d, int k, const std::vector<int>& targets) {
  for (int t : targets)
    for (int i = -k; i <= k; ++i) {
      if (i == 0 || !d.teacher.count(t - i)) continue;
      for (const auto& [from, to] : chain_for_offset(t, i).hops)
        if (!d.flows->contains(from, to))
          throw ValidationError("missing flow (" + std::to_string(from) + "," + std::to_string(to) +
                                ") required for k=" + std::to_string(k) + " at frame " +
                                std::to_string(t));
    }
}

inline std::shared_ptr<const FeatureProvider> make_provider(const SequenceData& d,
                                                            const PipelineConfig& cfg) {
  std::shared_ptr<const FeatureProvider> patch;
  if (!d.frames->empty()) patch = std::make_shared<PatchDescriptor>(d.frames, cfg.patch_size);
  if (cfg.features == FeatureSource::kPatch) {
    if (!patch) throw ConfigError("patch features need the frame images");
    return patch;
  }
  if (d.embeddings_path.empty()) throw ConfigError("precomputed features need an embeddings file");
  if (cfg.embedding_miss == MissPolicy::kPatch && !patch)
    throw ConfigError("embedding_miss=patch needs the frame images");
  return std::make_shared<PrecomputedEmbeddings>(PrecomputedEmbeddings::load(
      d.embeddings_path, cfg.embedding_miss == MissPolicy::kPatch ? patch : nullptr));
}

inline bool needs_frames(const PipelineConfig& cfg) {
  return cfg.method == FusionMethod::kSwbf &&
         (cfg.features == FeatureSource::kPatch || cfg.embedding_miss == MissPolicy::kPatch);
}

// ---------------------------------------------------------------------------

struct FrameReport {
  int frame = 0;
  int candidates = 0;
  std::map<int, int> per_offset;  // offset -> candidates contributed
  int effective_sources = 0;
  FusionStats fusion;
  int outputs = 0;
  std::string error;
};

struct RunReport {
  std::vector<FrameReport> frames;
  double build_seconds = 0.0;
  double fuse_seconds = 0.0;
  double write_seconds = 0.0;
};

struct PipelineResult {
  std::map<int, LabelSet> labels;
  RunReport report;
};

inline nlohmann::ordered_json to_json(const RunReport& r, bool with_timings) {
  nlohmann::ordered_json j;
  int candidates = 0, clusters = 0, dropped = 0, outputs = 0, failed = 0;
  std::map<int, int> per_offset;
  nlohmann::ordered_json frames = nlohmann::ordered_json::array();
  for (const auto& f : r.frames) {
    candidates += f.candidates;
    clusters += f.fusion.clusters;
    dropped += f.fusion.dropped_by_rescore + f.fusion.dropped_by_threshold;
    outputs += f.outputs;
    failed += f.error.empty() ? 0 : 1;
    for (const auto& [o, n] : f.per_offset) per_offset[o] += n;
    nlohmann::ordered_json e;
    e["frame"] = f.frame;
    e["candidates"] = f.candidates;
    nlohmann::ordered_json po = nlohmann::ordered_json::object();
    for (const auto& [o, n] : f.per_offset) po[std::to_string(o)] = n;
    e["per_offset"] = po;
    e["effective_sources"] = f.effective_sources;
    e["clusters"] = f.fusion.clusters;
    e["dropped_by_rescore"] = f.fusion.dropped_by_rescore;
    e["dropped_by_threshold"] = f.fusion.dropped_by_threshold;
    e["outputs"] = f.outputs;
    if (!f.error.empty()) e["error"] = f.error;
    frames.push_back(e);
  }
  j["frames_processed"] = r.frames.size();
  j["frames_failed"] = failed;
  j["candidates"] = candidates;
  nlohmann::ordered_json po = nlohmann::ordered_json::object();
  for (const auto& [o, n] : per_offset) po[std::to_string(o)] = n;
  j["per_offset"] = po;
  j["clusters"] = clusters;
  j["dropped"] = dropped;
  j["outputs"] = outputs;
  if (with_timings) {
    j["seconds"] = {{"build_candidates", r.build_seconds},
                    {"rescore_and_fuse", r.fuse_seconds},
                    {"write", r.write_seconds}};
  }
  j["per_frame"] = frames;
  return j;
}

struct FrameOutcome {
  LabelSet labels;
  FrameReport report;
  double build_seconds = 0.0;
  double fuse_seconds = 0.0;
};

// One target frame of the propagation + fusion loop. With k = 0 the
// thresholded teacher labels are returned as they are.
inline FrameOutcome process_frame(const SequenceData& d, const PipelineConfig& cfg,
                                  const FeatureProvider* provider, int target) {
  using clock = std::chrono::steady_clock;
  FrameOutcome out;
  out.report.frame = target;
  const auto t0 = clock::now();
  const CandidateSet set = build_candidates(target, cfg.k, d.teacher, *d.flows, d.size,
                                            cfg.teacher_threshold, cfg.propagation());
  const auto t1 = clock::now();
  out.report.candidates = static_cast<int>(set.candidates.size());
  out.report.effective_sources = set.effective_sources;
  for (int o : set.offsets) out.report.per_offset[o] = 0;
  for (const auto& c : set.candidates) ++out.report.per_offset[c.detection.source_offset];

  if (cfg.k == 0) {
    out.labels = set.labels();
  } else {
    FusionOutcome fused =
        fuse(set, cfg.fusion(source_count(set, cfg.k, cfg.source_count)), provider);
    out.labels = std::move(fused.labels);
    out.report.fusion = fused.stats;
  }
  out.report.outputs = static_cast<int>(out.labels.detections.size());
  out.build_seconds = std::chrono::duration<double>(t1 - t0).count();
  out.fuse_seconds = std::chrono::duration<double>(clock::now() - t1).count();
  return out;
}

// Runs every target on a pool of cfg.jobs workers. Results are keyed by
// frame, so completion order never shows in the output.
inline PipelineResult run_pipeline(const SequenceData& d, const PipelineConfig& cfg,
                                   std::vector<int> targets = {}) {
  cfg.validate();
  if (targets.empty()) targets = d.frame_indices();
  validate_flow_coverage(d, cfg.k, targets);
  std::shared_ptr<const FeatureProvider> provider;
  if (cfg.method == FusionMethod::kSwbf && cfg.k > 0) provider = make_provider(d, cfg);

  std::vector<std::optional<FrameOutcome>> slots(targets.size());
  std::vector<std::exception_ptr> errors(targets.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&]() {
    for (std::size_t i = next++; i < targets.size(); i = next++) {
      try {
        slots[i] = process_frame(d, cfg, provider.get(), targets[i]);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const int jobs = std::min<int>(cfg.jobs, static_cast<int>(std::max<std::size_t>(1, targets.size())));
  std::vector<std::thread> pool;
  for (int j = 1; j < jobs; ++j) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();

  PipelineResult result;
  for (std::size_t i = 0; i < targets.size(); ++i) {
    if (errors[i]) {
      if (!cfg.keep_going) std::rethrow_exception(errors[i]);
      FrameReport failed;
      failed.frame = targets[i];
      try {
        std::rethrow_exception(errors[i]);
      } catch (const std::exception& e) {
        failed.error = e.what();
      }
      log::error("frame " + std::to_string(targets[i]) + " skipped: " + failed.error);
      result.report.frames.push_back(failed);
      continue;
    }
    auto& o = *slots[i];
    result.report.build_seconds += o.build_seconds;
    result.report.fuse_seconds += o.fuse_seconds;
    result.report.frames.push_back(o.report);
    result.labels[targets[i]] = std::move(o.labels);
  }
  return result;
}

// One JSONL file per frame plus a summary.json of deterministic counts.
inline void write_pipeline_output(PipelineResult& result, const std::string& dir,
                                  const ClassVocabulary& vocab) {
  namespace fs = std::filesystem;
  const auto t0 = std::chrono::steady_clock::now();
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create output directory " + dir + ": " + ec.message());
  for (const auto& [frame, labels] : result.labels)
    write_labels(labels, (fs::path(dir) / frame_file_name(frame)).string(), vocab);
  write_text_file((fs::path(dir) / "summary.json").string(),
                  to_json(result.report, false).dump(2) + "\n");
  result.report.write_seconds +=
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// ---------------------------------------------------------------------------
// Candidate files: `propagate` writes them, `fuse` consumes them.

inline std::vector<DetectionRecord> candidate_records(const CandidateSet& set, int k,
                                                      const FeatureProvider* provider) {
  std::vector<DetectionRecord> out;
  for (const auto& c : set.candidates) {
    DetectionRecord r{set.frame_index, c.detection, {}, set.effective_sources, k};
    if (provider && c.detection.source_offset != 0)
      r.sim = candidate_similarity(c, set.frame_index, *provider);
    out.push_back(std::move(r));
  }
  return out;
}

// Fuses candidate records frame by frame, exactly as the pipeline would.
inline std::map<int, LabelSet> fuse_records(const std::vector<DetectionRecord>& records,
                                            const PipelineConfig& cfg) {
  cfg.validate();
  std::map<int, std::vector<const DetectionRecord*>> by_frame;
  for (const auto& r : records) by_frame[r.frame].push_back(&r);

  std::map<int, LabelSet> out;
  for (const auto& [frame, recs] : by_frame) {
    const int k = recs.front()->k.value_or(cfg.k);
    LabelSet& labels = out[frame];
    labels.frame_index = frame;
    if (k == 0) {
      for (const auto* r : recs) labels.detections.push_back(r->detection);
      continue;
    }
    int num_sources = 2 * k + 1;
    if (cfg.source_count == SourceCountMode::kEffective) {
      if (!recs.front()->effective_sources)
        throw ConfigError("frame " + std::to_string(frame) + ": candidates lack effective_sources");
      num_sources = *recs.front()->effective_sources;
    }
    std::vector<Detection> dets;
    for (const auto* r : recs) {
      Detection d = r->detection;
      if (cfg.method == FusionMethod::kSwbf && d.source_offset != 0) {
        if (!r->sim)
          throw ConfigError("frame " + std::to_string(frame) +
                            ": swbf needs similarity values in the candidate file");
        if (!*r->sim) continue;
        d.score = d.score * **r->sim;
      }
      dets.push_back(d);
    }
    labels.detections = fuse_detections(dets, cfg.fusion(num_sources));
  }
  return out;
}

}  // namespace propfuse
