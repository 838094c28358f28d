#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "propfuse/error.hpp"
#include "propfuse/geometry.hpp"

namespace propfuse {

// Index <-> name mapping for class labels.
class ClassVocabulary {
 public:
  ClassVocabulary() = default;
  explicit ClassVocabulary(std::vector<std::string> names) {
    for (auto& n : names) intern(n);
  }

  // Existing id, or a freshly appended one.
  int intern(const std::string& name) {
    if (auto it = ids_.find(name); it != ids_.end()) return it->second;
    const int id = static_cast<int>(names_.size());
    names_.push_back(name);
    ids_.emplace(name, id);
    return id;
  }

  std::optional<int> find(const std::string& name) const {
    if (auto it = ids_.find(name); it != ids_.end()) return it->second;
    return std::nullopt;
  }

  int id(const std::string& name) const {
    if (auto v = find(name)) return *v;
    throw ValidationError("unknown class '" + name + "'");
  }

  const std::string& name(int id) const {
    if (id < 0 || id >= static_cast<int>(names_.size()))
      throw ValidationError("class id " + std::to_string(id) + " outside the vocabulary");
    return names_[static_cast<std::size_t>(id)];
  }

  const std::vector<std::string>& names() const noexcept { return names_; }
  std::size_t size() const noexcept { return names_.size(); }

 private:
  std::vector<std::string> names_;
  std::map<std::string, int> ids_;
};

// One line of a detection file. The optional fields only appear in
// candidate files written by `propagate`.
struct DetectionRecord {
  int frame = 0;
  Detection detection;
  // Appearance similarity to the source box; set but empty when the
  // provider could not describe one of the crops.
  std::optional<std::optional<double>> sim;
  std::optional<int> effective_sources;
  std::optional<int> k;
};

inline std::string format_fixed6(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  std::string s = buf;
  if (s == "-0.000000") s = "0.000000";
  return s;
}

inline std::string format_exact(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::string json_escape(const std::string& s) { return nlohmann::json(s).dump(); }

inline std::string format_record(const DetectionRecord& r, const ClassVocabulary& vocab) {
  const Detection& d = r.detection;
  std::string line = "{\"frame\": " + std::to_string(r.frame) +
                     ", \"class\": " + json_escape(vocab.name(d.class_id)) + ", \"bbox\": [" +
                     format_fixed6(d.bbox.x1) + ", " + format_fixed6(d.bbox.y1) + ", " +
                     format_fixed6(d.bbox.x2) + ", " + format_fixed6(d.bbox.y2) +
                     "], \"score\": " + format_fixed6(d.score) +
                     ", \"source_offset\": " + std::to_string(d.source_offset);
  if (r.sim) line += ", \"sim\": " + (*r.sim ? format_exact(**r.sim) : std::string("null"));
  if (r.effective_sources) line += ", \"effective_sources\": " + std::to_string(*r.effective_sources);
  if (r.k) line += ", \"k\": " + std::to_string(*r.k);
  line += "}";
  return line;
}

// `vocab` is extended with unseen class names when `grow` is set; otherwise
// an unseen name is a validation error.
inline DetectionRecord parse_record(const std::string& line, ClassVocabulary& vocab, bool grow) {
  const auto j = nlohmann::json::parse(line);
  DetectionRecord r;
  r.frame = j.at("frame").get<int>();
  const std::string cls = j.at("class").get<std::string>();
  r.detection.class_id = grow ? vocab.intern(cls) : vocab.id(cls);
  const auto b = j.at("bbox").get<std::vector<double>>();
  if (b.size() != 4) throw FormatError("bbox needs 4 coordinates");
  r.detection.bbox = {b[0], b[1], b[2], b[3]};
  if (!r.detection.bbox.valid()) throw FormatError("invalid bbox");
  r.detection.score = j.at("score").get<double>();
  if (!(r.detection.score >= 0.0 && r.detection.score <= 1.0))
    throw FormatError("score outside [0,1]");
  r.detection.source_offset = j.value("source_offset", 0);
  if (j.contains("sim")) {
    r.sim = j["sim"].is_null() ? std::optional<double>{} : std::optional<double>{j["sim"].get<double>()};
  }
  if (j.contains("effective_sources")) r.effective_sources = j["effective_sources"].get<int>();
  if (j.contains("k")) r.k = j["k"].get<int>();
  return r;
}

inline std::vector<DetectionRecord> read_records(std::istream& in, const std::string& origin,
                                                 ClassVocabulary& vocab, bool grow) {
  std::vector<DetectionRecord> out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(parse_record(line, vocab, grow));
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(origin + ":" + std::to_string(lineno) + ": " + e.what());
    } catch (const ValidationError& e) {
      throw FormatError(origin + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

inline std::vector<DetectionRecord> read_records(const std::string& path, ClassVocabulary& vocab,
                                                 bool grow) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open detection file " + path);
  return read_records(in, path, vocab, grow);
}

inline void write_records(std::ostream& out, const std::vector<DetectionRecord>& records,
                          const ClassVocabulary& vocab) {
  for (const auto& r : records) out << format_record(r, vocab) << "\n";
}

inline void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path);
  out << text;
  if (!out) throw IoError("short write to " + path);
}

inline std::string labels_to_jsonl(const LabelSet& labels, const ClassVocabulary& vocab) {
  std::ostringstream os;
  for (const auto& d : labels.detections) os << format_record({labels.frame_index, d, {}, {}, {}}, vocab) << "\n";
  return os.str();
}

inline void write_labels(const LabelSet& labels, const std::string& path,
                         const ClassVocabulary& vocab) {
  write_text_file(path, labels_to_jsonl(labels, vocab));
}

inline std::map<int, LabelSet> group_by_frame(const std::vector<DetectionRecord>& records) {
  std::map<int, LabelSet> out;
  for (const auto& r : records) {
    auto& ls = out[r.frame];
    ls.frame_index = r.frame;
    ls.detections.push_back(r.detection);
  }
  return out;
}

inline LabelSet read_labels(const std::string& path, int frame, ClassVocabulary& vocab,
                            bool grow = false) {
  LabelSet ls{frame, {}};
  for (const auto& r : read_records(path, vocab, grow)) {
    if (r.frame != frame)
      throw FormatError(path + ": record for frame " + std::to_string(r.frame) +
                        " in the file of frame " + std::to_string(frame));
    ls.detections.push_back(r.detection);
  }
  return ls;
}

// Every *.jsonl file under `dir` (sorted by name), grouped by frame.
inline std::map<int, LabelSet> read_label_dir(const std::string& dir, ClassVocabulary& vocab,
                                              bool grow) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(dir)) throw IoError("not a directory: " + dir);
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".jsonl") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  std::vector<DetectionRecord> all;
  for (const auto& f : files) {
    auto recs = read_records(f.string(), vocab, grow);
    all.insert(all.end(), recs.begin(), recs.end());
  }
  return group_by_frame(all);
}

inline std::string frame_file_name(int frame, const std::string& ext = ".jsonl") {
  char buf[32];
  std::snprintf(buf, sizeof buf, "frame_%06d", frame);
  return buf + ext;
}

}  // namespace propfuse
