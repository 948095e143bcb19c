#pragma once

// The two elicitation prompts, generation requests and their stable digests,
// and the enumerated-list reply parser.

#include <charconv>
#include <cstdio>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "emofuse/detail/codec.hpp"
#include "emofuse/error.hpp"

namespace emofuse {

enum class PromptKind { kDescription, kEmotion };

inline constexpr std::string_view kDescriptionPrompt = "Give 10 semantic descriptions for the image";
inline constexpr std::string_view kEmotionPrompt = "Give 10 emotions that the image elicits";

/// Number of items each prompt asks for.
inline constexpr std::size_t kItemsPerPrompt = 10;

inline constexpr std::string_view build_prompt(PromptKind kind) noexcept {
  return kind == PromptKind::kDescription ? kDescriptionPrompt : kEmotionPrompt;
}

inline std::string_view to_string(PromptKind kind) noexcept {
  return kind == PromptKind::kDescription ? "description" : "emotion";
}

struct DecodeParams {
  int max_new_tokens = 512;
  double temperature = 0.0;  // greedy
  std::optional<std::int64_t> seed = 0;

  void validate() const {
    if (max_new_tokens <= 0) throw InvalidArgument("max_new_tokens must be > 0");
    if (!(temperature >= 0.0)) throw InvalidArgument("temperature must be >= 0");
  }
};

struct GenerationRequest {
  std::string image_id;
  std::string image_bytes;
  PromptKind prompt = PromptKind::kDescription;
  DecodeParams decode;
};

namespace detail {

inline std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace detail

/// Hex SHA-256 over (image bytes digest, prompt text, decode params).
/// The image id is deliberately excluded so identical bytes share a key.
inline std::string request_digest(const GenerationRequest& req) {
  std::string canon = "emofuse/generate/v1\n";
  canon += detail::sha256_hex(req.image_bytes);
  canon += '\n';
  canon += build_prompt(req.prompt);
  canon += '\n';
  canon += std::to_string(req.decode.max_new_tokens);
  canon += '\n';
  canon += detail::format_double(req.decode.temperature);
  canon += '\n';
  canon += req.decode.seed ? std::to_string(*req.decode.seed) : std::string("-");
  return detail::sha256_hex(canon);
}

inline std::string text_embedding_digest(std::string_view text) {
  std::string canon = "emofuse/embed-text/v1\n";
  canon += text;
  return detail::sha256_hex(canon);
}

inline std::string image_embedding_digest(std::string_view image_bytes) {
  std::string canon = "emofuse/embed-image/v1\n";
  canon += detail::sha256_hex(image_bytes);
  return detail::sha256_hex(canon);
}

struct ParsedList {
  std::vector<std::string> items;
  /// Fewer than the expected number of items survived parsing.
  bool short_list = false;
  /// More than expected were present and the tail was dropped.
  bool truncated = false;
};

namespace detail {

inline bool is_space(char c) { return c == ' ' || c == '\t' || c == '\r' || c == '\f' || c == '\v'; }

/// Length of a leading enumeration marker ("12.", "3)", "4:", "-", "*", "•")
/// including the whitespace that must follow it, or 0 if there is none.
inline std::size_t marker_length(std::string_view line) {
  std::size_t i = 0;
  while (i < line.size() && is_space(line[i])) ++i;
  std::size_t start = i;
  while (i < line.size() && line[i] >= '0' && line[i] <= '9') ++i;
  if (i > start) {
    if (i < line.size() && (line[i] == '.' || line[i] == ')' || line[i] == ':')) {
      ++i;
      if (i == line.size()) return i;
      if (is_space(line[i])) {
        while (i < line.size() && is_space(line[i])) ++i;
        return i;
      }
    }
    return 0;
  }
  std::size_t bullet = 0;
  if (i < line.size() && (line[i] == '-' || line[i] == '*')) bullet = 1;
  else if (line.substr(i).starts_with("\xE2\x80\xA2")) bullet = 3;  // U+2022
  if (bullet == 0) return 0;
  i += bullet;
  if (i == line.size()) return i;
  if (!is_space(line[i])) return 0;
  while (i < line.size() && is_space(line[i])) ++i;
  return i;
}

/// Strips every leading marker, so "1. - item" yields "item".
inline std::string strip_markers(std::string_view line) {
  for (auto m = marker_length(line); m > 0; m = marker_length(line)) line.remove_prefix(m);
  return trim(line);
}

inline std::vector<std::string_view> split_lines(std::string_view raw) {
  std::vector<std::string_view> lines;
  std::size_t pos = 0;
  while (pos <= raw.size()) {
    auto nl = raw.find('\n', pos);
    if (nl == std::string_view::npos) {
      lines.push_back(raw.substr(pos));
      break;
    }
    lines.push_back(raw.substr(pos, nl - pos));
    pos = nl + 1;
  }
  return lines;
}

}  // namespace detail

/// Splits an LMM reply into list items.
///
/// When any line carries an enumeration or bullet marker, only marked lines
/// are kept (lead-in and trailing prose are dropped) and the marker is
/// stripped. A reply without any markers falls back to one item per
/// non-empty line, or to comma-separated items if it is a single line.
/// Items are trimmed, empties dropped, and the list truncated to `expected`.
inline ParsedList parse_enumerated_list(std::string_view raw, std::size_t expected = kItemsPerPrompt) {
  auto lines = detail::split_lines(raw);
  bool any_marker = false;
  for (auto line : lines) {
    if (detail::marker_length(line) > 0 && !detail::strip_markers(line).empty()) {
      any_marker = true;
      break;
    }
  }

  std::vector<std::string> items;
  if (any_marker) {
    for (auto line : lines) {
      if (detail::marker_length(line) == 0) continue;
      auto item = detail::strip_markers(line);
      if (!item.empty()) items.push_back(std::move(item));
    }
  } else {
    std::vector<std::string> nonempty;
    for (auto line : lines) {
      auto t = detail::strip_markers(line);
      if (!t.empty()) nonempty.push_back(std::move(t));
    }
    if (nonempty.size() == 1 && nonempty[0].find(',') != std::string::npos) {
      std::string_view one = nonempty[0];
      std::size_t pos = 0;
      while (pos <= one.size()) {
        auto comma = one.find(',', pos);
        auto len = comma == std::string_view::npos ? std::string_view::npos : comma - pos;
        auto piece = detail::strip_markers(one.substr(pos, len));
        if (!piece.empty() && piece.back() == '.') piece = detail::trim(std::string_view(piece).substr(0, piece.size() - 1));
        if (!piece.empty()) items.push_back(std::move(piece));
        if (comma == std::string_view::npos) break;
        pos = comma + 1;
      }
    } else {
      items = std::move(nonempty);
    }
  }

  if (items.empty()) throw EmptyParseError(std::string(raw));

  ParsedList out;
  if (items.size() > expected) {
    items.resize(expected);
    out.truncated = true;
  }
  out.short_list = items.size() < expected;
  out.items = std::move(items);
  return out;
}

}  // namespace emofuse
