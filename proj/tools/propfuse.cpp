// propfuse command-line front end.
//
// Exit status: 0 success, 1 validation or usage error, 2 I/O error.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "propfuse/propfuse.hpp"

namespace {

using namespace propfuse;

constexpr int kExitValidation = 1;
constexpr int kExitIo = 2;

// Options shared by the commands that run propagation or fusion.
struct ConfigFlags {
  std::string config_path;
  std::vector<std::string> overrides;  // key=value
  std::optional<int> k;
  std::optional<std::string> method;
  std::optional<int> jobs;
  std::optional<std::uint64_t> seed;

  void attach(CLI::App* app) {
    app->add_option("--config", config_path, "flat key=value config file");
    app->add_option("--set", overrides, "override one config key (key=value), repeatable");
    app->add_option("--k", k, "propagation length");
    app->add_option("--method", method, "swbf | wbf | nms | snms | nmw");
    app->add_option("--jobs", jobs, "worker threads");
    app->add_option("--seed", seed, "random seed");
  }

  PipelineConfig resolve() const {
    PipelineConfig cfg;
    if (!config_path.empty()) cfg = load_config(config_path);
    for (const auto& kv : overrides) {
      const auto eq = kv.find('=');
      if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
      cfg.set(trim(kv.substr(0, eq)), trim(kv.substr(eq + 1)));
    }
    if (k) cfg.k = *k;
    if (method) cfg.method = parse_fusion_method(*method);
    if (jobs) cfg.jobs = *jobs;
    if (seed) cfg.seed = *seed;
    cfg.validate();
    return cfg;
  }
};

void write_json(const nlohmann::ordered_json& j, const std::string& path) {
  write_text_file(path, j.dump(2) + "\n");
}

int cmd_synth(const std::string& spec_path, const std::string& preset,
              std::optional<std::uint64_t> seed, const std::string& out) {
  synth::SceneSpec spec;
  if (!spec_path.empty()) {
    spec = synth::load_scene(spec_path);
  } else if (preset == "occlusion") {
    spec = synth::occlusion_scene();
  } else if (preset == "type_b") {
    spec = synth::type_b_scene();
  } else if (preset == "benchmark") {
    spec = synth::benchmark_scene(seed.value_or(2024));
  } else if (preset == "drift") {
    spec = synth::drift_scene(2.5, 1.5);
  } else {
    throw ValidationError("synth needs --spec FILE or --preset occlusion|type_b|benchmark|drift");
  }
  if (seed) spec.seed = *seed;
  const auto bundle = synth::generate(spec);
  synth::write_bundle(bundle, out);
  log::info("wrote " + std::to_string(bundle.frames.size()) + " frames to " + out);
  return 0;
}

int cmd_propagate(const std::string& manifest_path, int frame, const ConfigFlags& flags,
                  const std::string& out) {
  const PipelineConfig cfg = flags.resolve();
  const SequenceManifest m = load_manifest(manifest_path);
  const bool have_images =
      std::all_of(m.frames.begin(), m.frames.end(), [](const FrameEntry& f) { return !f.image.empty(); });
  const bool want_frames = cfg.features == FeatureSource::kPatch || cfg.embedding_miss == MissPolicy::kPatch;
  const SequenceData d = load_sequence(m, want_frames && have_images);
  if (!d.teacher.count(frame)) throw ValidationError("frame " + std::to_string(frame) + " not in manifest");
  validate_flow_coverage(d, cfg.k, {frame});

  std::shared_ptr<const FeatureProvider> provider;
  if (cfg.k > 0) {
    if (cfg.features == FeatureSource::kPatch && !have_images)
      log::info("no frame images: candidates carry no similarity values");
    else
      provider = make_provider(d, cfg);
  }
  const CandidateSet set = build_candidates(frame, cfg.k, d.teacher, *d.flows, d.size,
                                            cfg.teacher_threshold, cfg.propagation());
  std::ostringstream os;
  write_records(os, candidate_records(set, cfg.k, provider.get()), d.vocab);
  write_text_file(out, os.str());
  return 0;
}

int cmd_fuse(const std::string& in, const std::string& manifest_path, const ConfigFlags& flags,
             const std::string& out) {
  const PipelineConfig cfg = flags.resolve();
  ClassVocabulary vocab;
  if (!manifest_path.empty()) vocab = vocabulary(load_manifest(manifest_path));
  const auto records = read_records(in, vocab, manifest_path.empty());
  const auto fused = fuse_records(records, cfg);
  std::string text;
  for (const auto& [frame, labels] : fused) text += labels_to_jsonl(labels, vocab);
  write_text_file(out, text);
  return 0;
}

int cmd_pipeline(const std::string& manifest_path, const ConfigFlags& flags, bool keep_going,
                 const std::string& report_path, const std::string& out) {
  PipelineConfig cfg = flags.resolve();
  if (keep_going) cfg.keep_going = true;
  const SequenceManifest m = load_manifest(manifest_path);
  const SequenceData d = load_sequence(m, needs_frames(cfg) && cfg.k > 0);
  PipelineResult result = run_pipeline(d, cfg);
  write_pipeline_output(result, out, d.vocab);
  if (!report_path.empty()) write_json(to_json(result.report, true), report_path);
  log::info("pipeline: " + std::to_string(result.labels.size()) + " frames written to " + out);
  for (const auto& f : result.report.frames)
    if (!f.error.empty()) return kExitValidation;
  return 0;
}

int cmd_eval(const std::string& dets_dir, const std::string& gt_dir, const std::string& manifest_path,
             const std::string& csv_path, const std::string& out) {
  ClassVocabulary vocab;
  if (!manifest_path.empty()) vocab = vocabulary(load_manifest(manifest_path));
  const auto gts = read_label_dir(gt_dir, vocab, manifest_path.empty());
  const std::size_t known = vocab.size();
  const auto dets = read_label_dir(dets_dir, vocab, true);
  if (vocab.size() > known) {
    std::string msg = "detections use classes absent from the ground truth:";
    for (std::size_t i = known; i < vocab.size(); ++i) msg += " " + vocab.names()[i];
    throw ValidationError(msg);
  }
  std::vector<LabelSet> det_sets, gt_sets;
  for (const auto& [f, ls] : dets) det_sets.push_back(ls);
  for (const auto& [f, ls] : gts) gt_sets.push_back(ls);
  const EvalReport report = evaluate(det_sets, gt_sets, vocab.names());
  write_json(to_json(report), out);
  if (!csv_path.empty()) write_text_file(csv_path, to_csv(report));
  return 0;
}

int cmd_selfcheck(const std::string& manifest_path, int frame, int hops, const std::string& labels_kind,
                  const ConfigFlags& flags, const std::string& out) {
  const PipelineConfig cfg = flags.resolve();
  const SequenceManifest m = load_manifest(manifest_path);
  const FrameEntry* entry = m.frame(frame);
  if (!entry) throw ValidationError("frame " + std::to_string(frame) + " not in manifest");
  ClassVocabulary vocab = vocabulary(m);
  std::string rel;
  if (labels_kind == "gt") {
    if (entry->gt.empty()) throw ValidationError("manifest has no ground truth for frame " + std::to_string(frame));
    rel = entry->gt;
  } else if (labels_kind == "teacher") {
    rel = entry->detections;
  } else {
    throw ValidationError("--labels must be gt or teacher");
  }
  LabelSet labels = read_labels(m.resolve(rel), frame, vocab);
  if (labels_kind == "teacher") labels = threshold_labels(labels, cfg.teacher_threshold);
  const FlowStore flows = flow_store(m);
  ConsistencyOptions opts;
  opts.hops = hops;
  opts.propagation = cfg.propagation();
  const auto report = self_consistency(labels, flows, m.size, opts);
  write_json(to_json(report, vocab.names()), out);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Motion-based pseudo-label propagation and box fusion"};
  app.require_subcommand(1);

  std::string spec_path, preset, synth_out;
  std::optional<std::uint64_t> synth_seed;
  auto* synth_cmd = app.add_subcommand("synth", "generate a synthetic sequence bundle");
  synth_cmd->add_option("--spec", spec_path, "scene spec JSON");
  synth_cmd->add_option("--preset", preset, "occlusion | type_b | benchmark | drift");
  synth_cmd->add_option("--seed", synth_seed, "override the spec seed");
  synth_cmd->add_option("--out", synth_out, "output directory")->required();

  std::string prop_manifest, prop_out;
  int prop_frame = 0;
  ConfigFlags prop_flags;
  auto* prop_cmd = app.add_subcommand("propagate", "write the candidate set of one frame");
  prop_cmd->add_option("--manifest", prop_manifest, "sequence manifest")->required();
  prop_cmd->add_option("--frame", prop_frame, "target frame index")->required();
  prop_cmd->add_option("--out", prop_out, "candidate JSONL file")->required();
  prop_flags.attach(prop_cmd);

  std::string fuse_in, fuse_out, fuse_manifest;
  ConfigFlags fuse_flags;
  auto* fuse_cmd = app.add_subcommand("fuse", "fuse a candidate file");
  fuse_cmd->add_option("--in", fuse_in, "candidate JSONL file")->required();
  fuse_cmd->add_option("--out", fuse_out, "fused label JSONL file")->required();
  fuse_cmd->add_option("--manifest", fuse_manifest, "take the class vocabulary from a manifest");
  fuse_flags.attach(fuse_cmd);

  std::string pipe_manifest, pipe_out, pipe_report;
  bool keep_going = false;
  ConfigFlags pipe_flags;
  auto* pipe_cmd = app.add_subcommand("pipeline", "propagate and fuse every frame of a sequence");
  pipe_cmd->add_option("--manifest", pipe_manifest, "sequence manifest")->required();
  pipe_cmd->add_option("--out", pipe_out, "output directory")->required();
  pipe_cmd->add_option("--report", pipe_report, "run report with timings (JSON)");
  pipe_cmd->add_flag("--keep-going", keep_going, "skip frames that fail");
  pipe_flags.attach(pipe_cmd);

  std::string eval_dets, eval_gt, eval_out, eval_manifest, eval_csv;
  auto* eval_cmd = app.add_subcommand("eval", "mAP / mAP50 / mAP75 of detections against ground truth");
  eval_cmd->add_option("--dets", eval_dets, "directory of detection JSONL files")->required();
  eval_cmd->add_option("--gt", eval_gt, "directory of ground-truth JSONL files")->required();
  eval_cmd->add_option("--out", eval_out, "report JSON")->required();
  eval_cmd->add_option("--manifest", eval_manifest, "take the class vocabulary from a manifest");
  eval_cmd->add_option("--csv", eval_csv, "also write a CSV table");

  std::string sc_manifest, sc_out, sc_labels = "gt";
  int sc_frame = 0, sc_hops = 1;
  ConfigFlags sc_flags;
  auto* sc_cmd = app.add_subcommand("selfcheck", "forward-backward motion consistency");
  sc_cmd->add_option("--manifest", sc_manifest, "sequence manifest")->required();
  sc_cmd->add_option("--frame", sc_frame, "source frame index")->required();
  sc_cmd->add_option("--hops", sc_hops, "hops each way");
  sc_cmd->add_option("--labels", sc_labels, "gt | teacher");
  sc_cmd->add_option("--out", sc_out, "report JSON")->required();
  sc_flags.attach(sc_cmd);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitValidation;
  }

  try {
    if (*synth_cmd) return cmd_synth(spec_path, preset, synth_seed, synth_out);
    if (*prop_cmd) return cmd_propagate(prop_manifest, prop_frame, prop_flags, prop_out);
    if (*fuse_cmd) return cmd_fuse(fuse_in, fuse_manifest, fuse_flags, fuse_out);
    if (*pipe_cmd) return cmd_pipeline(pipe_manifest, pipe_flags, keep_going, pipe_report, pipe_out);
    if (*eval_cmd) return cmd_eval(eval_dets, eval_gt, eval_manifest, eval_csv, eval_out);
    if (*sc_cmd) return cmd_selfcheck(sc_manifest, sc_frame, sc_hops, sc_labels, sc_flags, sc_out);
  } catch (const IoError& e) {
    log::error(e.what());
    std::cerr << "error: " << e.what() << "\n";
    return kExitIo;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitValidation;
  }
  return 0;
}
