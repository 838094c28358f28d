#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "propfuse/bplp.hpp"
#include "propfuse/error.hpp"
#include "propfuse/frame.hpp"
#include "propfuse/geometry.hpp"
#include "propfuse/labels_io.hpp"

namespace propfuse {

struct FrameEntry {
  int index = 0;
  std::string image;       // relative to the manifest root
  std::string detections;  // teacher output for this frame
  std::string gt;          // optional
};

struct FlowEntry {
  int from = 0;
  int to = 0;
  std::string path;
};

// A sequence directory: manifest.json plus the files it lists.
struct SequenceManifest {
  std::string root;
  FrameSize size;
  std::vector<std::string> classes;
  std::vector<FrameEntry> frames;  // ascending index
  std::vector<FlowEntry> flows;
  std::string embeddings;  // optional

  std::string resolve(const std::string& rel) const {
    return (std::filesystem::path(root) / rel).string();
  }

  const FrameEntry* frame(int index) const {
    for (const auto& f : frames)
      if (f.index == index) return &f;
    return nullptr;
  }

  bool has_flow(int from, int to) const {
    for (const auto& f : flows)
      if (f.from == from && f.to == to) return true;
    return false;
  }

  bool has_gt() const {
    return !frames.empty() &&
           std::all_of(frames.begin(), frames.end(), [](const FrameEntry& f) { return !f.gt.empty(); });
  }
};

inline nlohmann::ordered_json to_json(const SequenceManifest& m) {
  nlohmann::ordered_json j;
  j["width"] = m.size.width;
  j["height"] = m.size.height;
  j["classes"] = m.classes;
  j["frames"] = nlohmann::ordered_json::array();
  for (const auto& f : m.frames) {
    nlohmann::ordered_json e;
    e["index"] = f.index;
    e["image"] = f.image;
    e["detections"] = f.detections;
    if (!f.gt.empty()) e["gt"] = f.gt;
    j["frames"].push_back(e);
  }
  j["flows"] = nlohmann::ordered_json::array();
  for (const auto& f : m.flows) {
    nlohmann::ordered_json e;
    e["from"] = f.from;
    e["to"] = f.to;
    e["path"] = f.path;
    j["flows"].push_back(e);
  }
  if (!m.embeddings.empty()) j["embeddings"] = m.embeddings;
  return j;
}

inline void save_manifest(const SequenceManifest& m, const std::string& path) {
  write_text_file(path, to_json(m).dump(2) + "\n");
}

// Parses and validates: positive size, unique frame indices, and every
// referenced file present on disk.
inline SequenceManifest load_manifest(const std::string& path) {
  namespace fs = std::filesystem;
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest " + path);
  SequenceManifest m;
  m.root = fs::path(path).parent_path().string();
  if (m.root.empty()) m.root = ".";
  try {
    const auto j = nlohmann::json::parse(in);
    m.size = {j.at("width").get<int>(), j.at("height").get<int>()};
    m.classes = j.at("classes").get<std::vector<std::string>>();
    for (const auto& e : j.at("frames"))
      m.frames.push_back({e.at("index").get<int>(), e.value("image", std::string{}),
                          e.at("detections").get<std::string>(), e.value("gt", std::string{})});
    for (const auto& e : j.value("flows", nlohmann::json::array()))
      m.flows.push_back({e.at("from").get<int>(), e.at("to").get<int>(), e.at("path").get<std::string>()});
    m.embeddings = j.value("embeddings", std::string{});
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path + ": " + e.what());
  }
  if (!m.size.valid()) throw ValidationError(path + ": non-positive frame size");
  std::sort(m.frames.begin(), m.frames.end(),
            [](const FrameEntry& a, const FrameEntry& b) { return a.index < b.index; });
  for (std::size_t i = 1; i < m.frames.size(); ++i)
    if (m.frames[i].index == m.frames[i - 1].index)
      throw ValidationError(path + ": duplicate frame index " + std::to_string(m.frames[i].index));

  auto require = [&](const std::string& rel, const std::string& what) {
    if (rel.empty()) return;
    if (!fs::exists(m.resolve(rel)))
      throw ValidationError(path + ": " + what + " file missing: " + rel);
  };
  for (const auto& f : m.frames) {
    require(f.image, "frame");
    require(f.detections, "detection");
    require(f.gt, "ground-truth");
  }
  for (const auto& f : m.flows) require(f.path, "flow");
  require(m.embeddings, "embeddings");
  return m;
}

inline ClassVocabulary vocabulary(const SequenceManifest& m) { return ClassVocabulary(m.classes); }

inline std::map<int, LabelSet> load_teacher_labels(const SequenceManifest& m) {
  ClassVocabulary vocab = vocabulary(m);
  std::map<int, LabelSet> out;
  for (const auto& f : m.frames) out[f.index] = read_labels(m.resolve(f.detections), f.index, vocab);
  return out;
}

inline std::map<int, LabelSet> load_ground_truth(const SequenceManifest& m) {
  ClassVocabulary vocab = vocabulary(m);
  std::map<int, LabelSet> out;
  for (const auto& f : m.frames) {
    if (f.gt.empty()) throw ValidationError("manifest has no ground truth for frame " + std::to_string(f.index));
    out[f.index] = read_labels(m.resolve(f.gt), f.index, vocab);
  }
  return out;
}

inline FlowStore flow_store(const SequenceManifest& m) {
  FlowStore store;
  for (const auto& f : m.flows) store.add_file(f.from, f.to, m.resolve(f.path));
  return store;
}

inline std::shared_ptr<const std::map<int, Frame>> load_frames(const SequenceManifest& m) {
  auto frames = std::make_shared<std::map<int, Frame>>();
  for (const auto& f : m.frames) {
    if (f.image.empty()) continue;
    Frame img = read_pnm(m.resolve(f.image));
    if (img.size != m.size)
      throw ValidationError("frame " + std::to_string(f.index) + " does not match the manifest size");
    frames->emplace(f.index, std::move(img));
  }
  return frames;
}

}  // namespace propfuse
