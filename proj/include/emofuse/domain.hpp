#pragma once

// Core dataset types and the JSON Lines manifest reader/writer.

#include <cstddef>
#include <filesystem>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

#include <nlohmann/json.hpp>

#include "emofuse/detail/codec.hpp"
#include "emofuse/error.hpp"

namespace emofuse {

enum class Split { kTrain, kTest };

/// 0 = non-disturbing, 1 = disturbing.
enum class Label : int { kNonDisturbing = 0, kDisturbing = 1 };

inline std::string_view to_string(Split s) { return s == Split::kTrain ? "train" : "test"; }

inline std::string_view label_name(Label l) {
  return l == Label::kDisturbing ? "disturbing" : "non-disturbing";
}

struct ImageRecord {
  std::string id;
  std::string image_ref;
  Label label = Label::kNonDisturbing;
  Split split = Split::kTrain;

  friend bool operator==(const ImageRecord&, const ImageRecord&) = default;
};

struct SplitCounts {
  std::size_t train = 0;
  std::size_t test = 0;
  std::size_t train_positive = 0;
  std::size_t test_positive = 0;

  std::size_t train_negative() const { return train - train_positive; }
  std::size_t test_negative() const { return test - test_positive; }
};

/// Ordered, validated collection of image records. Immutable after load.
class DatasetManifest {
 public:
  DatasetManifest() = default;

  /// Validates id uniqueness and non-emptiness.
  explicit DatasetManifest(std::vector<ImageRecord> records, std::filesystem::path base_dir = {})
      : records_(std::move(records)), base_dir_(std::move(base_dir)) {
    std::unordered_set<std::string> seen;
    for (std::size_t i = 0; i < records_.size(); ++i) {
      if (records_[i].id.empty()) throw ManifestError("empty id", i + 1);
      if (!seen.insert(records_[i].id).second) throw DuplicateIdError(records_[i].id, i + 1);
    }
  }

  const std::vector<ImageRecord>& records() const noexcept { return records_; }
  std::size_t size() const noexcept { return records_.size(); }
  bool empty() const noexcept { return records_.empty(); }

  /// Directory that relative image_ref values resolve against.
  const std::filesystem::path& base_dir() const noexcept { return base_dir_; }

  SplitCounts counts() const {
    SplitCounts c;
    for (const auto& r : records_) {
      bool pos = r.label == Label::kDisturbing;
      if (r.split == Split::kTrain) {
        ++c.train;
        c.train_positive += pos;
      } else {
        ++c.test;
        c.test_positive += pos;
      }
    }
    return c;
  }

  const ImageRecord* find(std::string_view id) const {
    for (const auto& r : records_)
      if (r.id == id) return &r;
    return nullptr;
  }

  std::filesystem::path resolve_image_path(const ImageRecord& record) const {
    std::filesystem::path p(record.image_ref);
    if (p.is_absolute() || base_dir_.empty()) return p;
    return base_dir_ / p;
  }

  /// Training needs both a train and a test split.
  void require_trainable() const {
    auto c = counts();
    if (c.train == 0) throw ManifestError("manifest has no train records");
    if (c.test == 0) throw ManifestError("manifest has no test records");
  }

 private:
  std::vector<ImageRecord> records_;
  std::filesystem::path base_dir_;
};

/// Records whose split matches, in manifest order.
inline std::vector<ImageRecord> split_view(const DatasetManifest& manifest, Split split) {
  std::vector<ImageRecord> out;
  for (const auto& r : manifest.records())
    if (r.split == split) out.push_back(r);
  return out;
}

namespace detail {

inline ImageRecord parse_manifest_line(std::string_view line, std::size_t line_no) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(line);
  } catch (const nlohmann::json::parse_error& e) {
    throw ManifestError(std::string("malformed JSON: ") + e.what(), line_no);
  }
  if (!j.is_object()) throw ManifestError("expected a JSON object", line_no);
  for (const auto& [key, _] : j.items()) {
    if (key != "id" && key != "image_ref" && key != "label" && key != "split")
      throw ManifestError("unknown key \"" + key + "\"", line_no);
  }
  for (const char* key : {"id", "image_ref", "label", "split"})
    if (!j.contains(key)) throw ManifestError(std::string("missing key \"") + key + "\"", line_no);

  ImageRecord r;
  if (!j["id"].is_string()) throw ManifestError("id must be a string", line_no);
  r.id = j["id"].get<std::string>();
  if (r.id.empty()) throw ManifestError("empty id", line_no);
  if (!j["image_ref"].is_string()) throw ManifestError("image_ref must be a string", line_no);
  r.image_ref = j["image_ref"].get<std::string>();

  const auto& label = j["label"];
  if (!label.is_number_integer() || (label.get<long long>() != 0 && label.get<long long>() != 1))
    throw ManifestError("unknown label token " + label.dump() + " (expected 0 or 1)", line_no);
  r.label = label.get<long long>() == 1 ? Label::kDisturbing : Label::kNonDisturbing;

  const auto& split = j["split"];
  if (split == "train") r.split = Split::kTrain;
  else if (split == "test") r.split = Split::kTest;
  else throw ManifestError("unknown split token " + split.dump(), line_no);
  return r;
}

}  // namespace detail

/// Parses a manifest from a stream. Blank lines are skipped; line numbers in
/// errors are 1-based physical line numbers.
inline DatasetManifest parse_manifest(std::istream& in, std::filesystem::path base_dir = {}) {
  std::vector<ImageRecord> records;
  std::unordered_set<std::string> seen;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (detail::trim(line).empty()) continue;
    auto rec = detail::parse_manifest_line(line, line_no);
    if (!seen.insert(rec.id).second) throw DuplicateIdError(rec.id, line_no);
    records.push_back(std::move(rec));
  }
  if (records.empty()) throw ManifestError("manifest contains no records");
  return DatasetManifest(std::move(records), std::move(base_dir));
}

inline DatasetManifest load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ManifestError("cannot open manifest: " + path.string());
  return parse_manifest(in, path.parent_path());
}

inline void write_manifest(std::ostream& out, const DatasetManifest& manifest) {
  for (const auto& r : manifest.records()) {
    nlohmann::json j = {{"id", r.id},
                        {"image_ref", r.image_ref},
                        {"label", static_cast<int>(r.label)},
                        {"split", std::string(to_string(r.split))}};
    out << j.dump() << '\n';
  }
}

/// Parsed LMM outputs for one image.
struct ResponseSet {
  std::string image_id;
  std::vector<std::string> descriptions;
  std::vector<std::string> emotions;
  std::string raw_description_reply;
  std::string raw_emotion_reply;

  friend bool operator==(const ResponseSet&, const ResponseSet&) = default;
};

inline nlohmann::json to_json(const ResponseSet& r) {
  return {{"image_id", r.image_id},
          {"descriptions", r.descriptions},
          {"emotions", r.emotions},
          {"raw_description_reply", r.raw_description_reply},
          {"raw_emotion_reply", r.raw_emotion_reply}};
}

inline ResponseSet response_set_from_json(const nlohmann::json& j) {
  ResponseSet r;
  r.image_id = j.at("image_id").get<std::string>();
  r.descriptions = j.at("descriptions").get<std::vector<std::string>>();
  r.emotions = j.at("emotions").get<std::vector<std::string>>();
  r.raw_description_reply = j.value("raw_description_reply", "");
  r.raw_emotion_reply = j.value("raw_emotion_reply", "");
  return r;
}

}  // namespace emofuse
