#pragma once

// Formatting fuzzer for LMM list replies. Each case knows the items it
// rendered, so the parser's output can be checked exactly.

#include <algorithm>
#include <random>
#include <string>
#include <vector>

#include "emofuse/prompt.hpp"

namespace emofuse::fuzz {

struct ListCase {
  std::string raw;
  std::vector<std::string> expected;  // what a correct parser returns
  std::size_t rendered = 0;           // items present in the reply
};

inline const std::vector<std::string>& word_pool() {
  static const std::vector<std::string> v = {
      "a child crying in a hospital", "smoke over the harbour", "Fear", "a red umbrella in the rain",
      "Nostalgia", "two dogs asleep on a porch", "broken windows on an abandoned house", "Quiet joy",
      "an old man reading a newspaper", "Anger and frustration", "a field of sunflowers", "Shock",
      "police tape across a doorway", "a crowded subway platform", "Serenity", "a birthday cake with 7 candles",
      "a flooded street after the storm", "Relief", "the ruins of a church", "a teenager skateboarding",
      "Disgust", "3 people waiting at a bus stop", "Curiosity", "a wounded soldier being carried",
      "Hope", "a tray of freshly baked bread", "Sadness (deep)", "a lonely lighthouse at dusk"};
  return v;
}

/// Renders one reply: random marker style, optional indentation, blank lines
/// between items, CRLF endings, and lead-in / trailing prose.
inline ListCase make_list_case(std::mt19937_64& gen) {
  auto pick = [&](std::size_t n) { return static_cast<std::size_t>(gen() % n); };
  const auto& pool = word_pool();
  std::size_t count = 1 + pick(13);  // 1..13
  std::vector<std::string> items;
  for (std::size_t i = 0; i < count; ++i) items.push_back(pool[pick(pool.size())]);

  static const char* leads[] = {"", "Sure! Here are the items:", "Here is the list you requested.\n",
                                "Certainly, based on the image:"};
  static const char* tails[] = {"", "These reflect the overall mood of the scene.",
                                "I hope this helps!", "Note: interpretations may vary."};
  const int style = static_cast<int>(pick(7));
  const bool crlf = pick(4) == 0;
  const bool spaced = pick(3) == 0;
  const std::string indent = pick(3) == 0 ? "   " : "";
  const std::string nl = crlf ? "\r\n" : "\n";

  std::string raw = leads[pick(4)];
  if (!raw.empty()) raw += nl + (pick(2) ? nl : "");
  for (std::size_t i = 0; i < count; ++i) {
    std::string n = std::to_string(i + 1);
    std::string marker;
    switch (style) {
      case 0: marker = n + ". "; break;
      case 1: marker = n + ") "; break;
      case 2: marker = n + ": "; break;
      case 3: marker = "- "; break;
      case 4: marker = "* "; break;
      case 5: marker = "\xE2\x80\xA2 "; break;
      default: marker = n + ".\t"; break;
    }
    raw += indent + marker + items[i] + (pick(5) == 0 ? "  " : "") + nl;
    if (spaced) raw += nl;
  }
  std::string tail = tails[pick(4)];
  if (!tail.empty()) raw += nl + tail;

  ListCase c;
  c.raw = std::move(raw);
  c.rendered = count;
  c.expected.assign(items.begin(), items.begin() + static_cast<std::ptrdiff_t>(std::min(count, kItemsPerPrompt)));
  return c;
}

inline std::vector<ListCase> corpus(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 gen(seed);
  std::vector<ListCase> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(make_list_case(gen));
  return out;
}

}  // namespace emofuse::fuzz
