#pragma once

// Eliciting descriptions and emotions from the LMM for dataset images.

#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "emofuse/clients.hpp"
#include "emofuse/detail/codec.hpp"
#include "emofuse/detail/parallel.hpp"
#include "emofuse/domain.hpp"
#include "emofuse/prompt.hpp"

namespace emofuse {

struct ElicitOptions {
  DecodeParams decode;
  /// Re-prompt once (with a shifted seed) when a reply parses to fewer than
  /// ten items. The longer of the two parses is kept.
  bool retry_short = false;
};

/// Raw reply for one prompt kind, passed through unmodified.
inline std::string generate_responses(const ImageRecord& record, std::string_view image_bytes,
                                      PromptKind kind, AdapterClient& client,
                                      const DecodeParams& decode = {}) {
  decode.validate();
  GenerationRequest req{record.id, std::string(image_bytes), kind, decode};
  return client.generate(req);
}

struct ElicitResult {
  ResponseSet responses;
  std::vector<std::string> warnings;
};

namespace detail {

struct KindReply {
  std::string raw;
  ParsedList parsed;
};

inline KindReply elicit_kind(const ImageRecord& record, std::string_view image_bytes, PromptKind kind,
                             AdapterClient& client, const ElicitOptions& options,
                             std::vector<std::string>& warnings) {
  KindReply r;
  r.raw = generate_responses(record, image_bytes, kind, client, options.decode);
  r.parsed = parse_enumerated_list(r.raw);
  if (r.parsed.short_list && options.retry_short) {
    auto decode = options.decode;
    decode.seed = decode.seed.value_or(0) + 1;
    auto raw2 = generate_responses(record, image_bytes, kind, client, decode);
    try {
      auto parsed2 = parse_enumerated_list(raw2);
      if (parsed2.items.size() > r.parsed.items.size()) r = KindReply{std::move(raw2), std::move(parsed2)};
    } catch (const EmptyParseError&) {
    }
  }
  if (r.parsed.short_list)
    warnings.push_back("image \"" + record.id + "\": " + std::to_string(r.parsed.items.size()) + " " +
                       std::string(to_string(kind)) + " item(s) parsed, expected " +
                       std::to_string(kItemsPerPrompt));
  if (r.parsed.truncated)
    warnings.push_back("image \"" + record.id + "\": " + std::string(to_string(kind)) +
                       " reply truncated to " + std::to_string(kItemsPerPrompt) + " items");
  return r;
}

}  // namespace detail

/// Prompts both kinds for one image and parses the replies.
inline ElicitResult elicit_responses(const ImageRecord& record, std::string_view image_bytes,
                                     AdapterClient& client, const ElicitOptions& options = {}) {
  ElicitResult out;
  auto desc = detail::elicit_kind(record, image_bytes, PromptKind::kDescription, client, options, out.warnings);
  auto emo = detail::elicit_kind(record, image_bytes, PromptKind::kEmotion, client, options, out.warnings);
  out.responses.image_id = record.id;
  out.responses.descriptions = std::move(desc.parsed.items);
  out.responses.emotions = std::move(emo.parsed.items);
  out.responses.raw_description_reply = std::move(desc.raw);
  out.responses.raw_emotion_reply = std::move(emo.raw);
  return out;
}

/// Responses keyed by image id.
using ResponseMap = std::map<std::string, ResponseSet>;

inline ResponseMap load_responses(const std::filesystem::path& path) {
  ResponseMap out;
  std::ifstream in(path);
  if (!in) return out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (detail::trim(line).empty()) continue;
    try {
      auto r = response_set_from_json(nlohmann::json::parse(line));
      auto id = r.image_id;
      out.insert_or_assign(std::move(id), std::move(r));
    } catch (const nlohmann::json::exception& e) {
      throw Error("responses file " + path.string() + " line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

inline void append_response(const std::filesystem::path& path, const ResponseSet& r) {
  std::ofstream out(path, std::ios::app | std::ios::binary);
  if (!out) throw Error("cannot write responses file " + path.string());
  out << to_json(r).dump() << '\n';
  if (!out) throw Error("write failure on responses file " + path.string());
}

struct GenerateSummary {
  std::size_t generated = 0;
  std::size_t skipped = 0;
  std::vector<std::string> warnings;
};

/// Elicits responses for every manifest record not already in `responses`,
/// with up to `in_flight` concurrent requests. New results are inserted into
/// `responses` and, if `sink` is non-empty, appended to that file.
inline GenerateSummary generate_all(const DatasetManifest& manifest, AdapterClient& client,
                                    ResponseMap& responses, const std::filesystem::path& sink = {},
                                    const ElicitOptions& options = {}, std::size_t in_flight = 4) {
  GenerateSummary summary;
  std::vector<const ImageRecord*> todo;
  for (const auto& r : manifest.records()) {
    if (responses.contains(r.id)) ++summary.skipped;
    else todo.push_back(&r);
  }
  std::mutex mutex;
  detail::bounded_parallel_for(todo.size(), in_flight, [&](std::size_t i) {
    const auto& rec = *todo[i];
    auto bytes = detail::read_file_bytes(manifest.resolve_image_path(rec).string());
    auto result = elicit_responses(rec, bytes, client, options);
    std::lock_guard lock(mutex);
    if (!sink.empty()) append_response(sink, result.responses);
    responses.insert_or_assign(rec.id, std::move(result.responses));
    summary.warnings.insert(summary.warnings.end(), result.warnings.begin(), result.warnings.end());
    ++summary.generated;
  });
  return summary;
}

}  // namespace emofuse
