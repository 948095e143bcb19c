#include <fstream>
#include <random>

#include <gtest/gtest.h>

#include "emofuse/clients.hpp"
#include "emofuse/prompting.hpp"
#include "emofuse/testing/synthetic_adapter.hpp"
#include "support/free_port.hpp"
#include "support/list_fuzzer.hpp"
#include "support/temp_dir.hpp"

using namespace emofuse;
using emofuse::testing::TempDir;

namespace {

ImageRecord record(const std::string& id) { return {id, id + ".img", Label::kNonDisturbing, Split::kTrain}; }

RetryConfig fast_retry(int attempts) {
  RetryConfig r;
  r.max_attempts = attempts;
  r.initial_delay = std::chrono::milliseconds(1);
  return r;
}

}  // namespace

TEST(Prompt, ExactBytes) {
  EXPECT_EQ(build_prompt(PromptKind::kDescription), "Give 10 semantic descriptions for the image");
  EXPECT_EQ(build_prompt(PromptKind::kEmotion), "Give 10 emotions that the image elicits");
  EXPECT_EQ(build_prompt(PromptKind::kDescription).size(), 43u);
  EXPECT_EQ(build_prompt(PromptKind::kEmotion).size(), 39u);
}

TEST(Prompt, Pure) {
  static_assert(build_prompt(PromptKind::kEmotion) == kEmotionPrompt);
  EXPECT_EQ(build_prompt(PromptKind::kDescription).data(), build_prompt(PromptKind::kDescription).data());
}

TEST(Digest, DependsOnBytesPromptAndDecodeOnly) {
  GenerationRequest a{"a", "bytes", PromptKind::kDescription, {}};
  GenerationRequest b = a;
  b.image_id = "other";
  EXPECT_EQ(request_digest(a), request_digest(b));
  b.prompt = PromptKind::kEmotion;
  EXPECT_NE(request_digest(a), request_digest(b));
  b = a;
  b.decode.seed = 1;
  EXPECT_NE(request_digest(a), request_digest(b));
  b.decode.seed.reset();
  EXPECT_NE(request_digest(a), request_digest(b));
  b = a;
  b.decode.temperature = 0.7;
  EXPECT_NE(request_digest(a), request_digest(b));
  EXPECT_EQ(request_digest(a).size(), 64u);
}

TEST(Parser, ShortList) {
  auto p = parse_enumerated_list("1. cat\n2. mat");
  EXPECT_EQ(p.items, (std::vector<std::string>{"cat", "mat"}));
  EXPECT_TRUE(p.short_list);
  EXPECT_FALSE(p.truncated);
}

TEST(Parser, TruncatesToTen) {
  std::string raw;
  for (char c = 'a'; c <= 'l'; ++c) raw += std::to_string(c - 'a' + 1) + ") " + std::string(1, c) + "\n";
  auto p = parse_enumerated_list(raw);
  EXPECT_EQ(p.items, (std::vector<std::string>{"a", "b", "c", "d", "e", "f", "g", "h", "i", "j"}));
  EXPECT_TRUE(p.truncated);
  EXPECT_FALSE(p.short_list);
}

TEST(Parser, DropsProseAroundMarkedLists) {
  auto p = parse_enumerated_list("Sure! Here you go:\n\n1. Fear\n2. Anger\n\nHope this helps.");
  EXPECT_EQ(p.items, (std::vector<std::string>{"Fear", "Anger"}));
}

TEST(Parser, UnmarkedFallbacks) {
  EXPECT_EQ(parse_enumerated_list("Fear\nAnger\n\nSadness").items, (std::vector<std::string>{"Fear", "Anger", "Sadness"}));
  EXPECT_EQ(parse_enumerated_list("Fear, anger, sadness.").items, (std::vector<std::string>{"Fear", "anger", "sadness"}));
}

TEST(Parser, NumbersInsideItemsAreNotMarkers) {
  auto p = parse_enumerated_list("1. 3 people at a bus stop\n2. a 1990s car");
  EXPECT_EQ(p.items, (std::vector<std::string>{"3 people at a bus stop", "a 1990s car"}));
}

TEST(Parser, EmptyReplyCarriesRawText) {
  for (std::string raw : {"", "   \n\n", "1.\n2.\n-"}) {
    try {
      parse_enumerated_list(raw);
      FAIL() << "expected EmptyParseError for \"" << raw << "\"";
    } catch (const EmptyParseError& e) {
      EXPECT_EQ(e.raw(), raw);
    }
  }
}

TEST(Parser, FuzzerCorpusRecovery) {
  auto cases = fuzz::corpus(200, 2024);
  std::size_t exact = 0;
  for (const auto& c : cases) {
    ParsedList p;
    ASSERT_NO_THROW(p = parse_enumerated_list(c.raw)) << c.raw;
    if (p.items == c.expected) ++exact;
    EXPECT_EQ(p.truncated, c.rendered > kItemsPerPrompt) << c.raw;
    EXPECT_EQ(p.short_list, c.rendered < kItemsPerPrompt) << c.raw;
  }
  EXPECT_GE(exact, 190u);
}

// Properties over arbitrary byte strings: never crashes with anything other
// than EmptyParseError, output bounded by `expected`, items trimmed, non-empty
// and marker-free, and reparsing a re-rendered list is the identity.
TEST(Parser, ArbitraryInputProperties) {
  std::mt19937_64 gen(99);
  const std::string alphabet = "ab 1.)-*:\n\r\t,\xE2\x80\xA2x9";
  for (int trial = 0; trial < 2000; ++trial) {
    std::string raw;
    std::size_t len = gen() % 80;
    for (std::size_t i = 0; i < len; ++i) raw += alphabet[gen() % alphabet.size()];
    std::size_t expected = 1 + gen() % 12;
    ParsedList p;
    try {
      p = parse_enumerated_list(raw, expected);
    } catch (const EmptyParseError&) {
      continue;
    }
    ASSERT_FALSE(p.items.empty());
    ASSERT_LE(p.items.size(), expected);
    EXPECT_EQ(p.short_list, p.items.size() < expected);
    std::string rendered;
    for (std::size_t i = 0; i < p.items.size(); ++i) {
      const auto& item = p.items[i];
      ASSERT_FALSE(item.empty());
      EXPECT_EQ(detail::trim(item), item);
      EXPECT_EQ(detail::marker_length(item), 0u) << "item \"" << item << "\" from \"" << raw << "\"";
      rendered += std::to_string(i + 1) + ". " + item + "\n";
    }
    EXPECT_EQ(parse_enumerated_list(rendered, expected).items, p.items) << raw;
  }
}

TEST(Fixtures, ReplayEchoesStoredReply) {
  auto store = std::make_shared<FixtureStore>();
  const std::string reply = "1. A dog...\n2. A ball\n3. Grass\n4. Sun\n5. Trees\n6. A bench\n7. A path\n8. A fence\n9. Sky\n10. A park";
  GenerationRequest req{"d", "image-d", PromptKind::kDescription, {}};
  store->append(request_digest(req), kGenerateEndpoint, reply);
  ReplayClient client(store);
  EXPECT_EQ(generate_responses(record("d"), "image-d", PromptKind::kDescription, client), reply);
  EXPECT_THROW(generate_responses(record("d"), "image-d", PromptKind::kEmotion, client), MissingFixtureError);
}

TEST(Fixtures, FirstReplyWinsAndPersists) {
  TempDir dir;
  {
    FixtureStore store(dir / "f.jsonl");
    store.append("k", "/v1/generate", "first");
    store.append("k", "/v1/generate", "second");
    store.append("j", "/v1/generate", "line1\nline2 \"quoted\"");
  }
  FixtureStore reopened(dir / "f.jsonl");
  EXPECT_EQ(reopened.size(), 2u);
  EXPECT_EQ(reopened.find("k")->reply, "first");
  EXPECT_EQ(reopened.find("j")->reply, "line1\nline2 \"quoted\"");
}

TEST(Http, UnreachableEndpointNamesEndpointAndAttempts) {
  HttpAdapterClient client("http://127.0.0.1:" + std::to_string(emofuse::testing::unused_port()), fast_retry(3),
                           std::chrono::seconds(2));
  try {
    generate_responses(record("a"), "bytes", PromptKind::kDescription, client);
    FAIL() << "expected TransportError";
  } catch (const TransportError& e) {
    EXPECT_EQ(e.attempts(), 3);
    EXPECT_NE(e.endpoint().find("/v1/generate"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("3 attempt(s)"), std::string::npos);
  }
}

TEST(Http, RecordThenReplayIsByteIdentical) {
  emofuse::testing::SyntheticAdapterServer server({});
  auto live = std::make_shared<HttpAdapterClient>(server.base_url(), fast_retry(2));
  auto store = std::make_shared<FixtureStore>();
  RecordingClient recorder(live, store);

  auto bytes = emofuse::testing::make_image_bytes("q", 1);
  GenerationRequest req{"q", bytes, PromptKind::kEmotion, {}};
  auto reply = recorder.generate(req);
  std::vector<std::string> texts = {"Fear", "Hope", "Fear"};
  auto vectors = recorder.embed_texts(texts);
  auto image = recorder.embed_image(bytes);
  EXPECT_EQ(recorder.live_calls(), 3u);

  ReplayClient replay(store);
  EXPECT_EQ(replay.generate(req), reply);
  EXPECT_EQ(replay.embed_texts(texts), vectors);
  EXPECT_EQ(replay.embed_image(bytes), image);
  EXPECT_EQ(vectors[0], vectors[2]);

  // A second pass through the recorder is served from the store.
  auto before = server.requests();
  EXPECT_EQ(recorder.generate(req), reply);
  EXPECT_EQ(server.requests(), before);
}

TEST(Http, RetriesServerErrors) {
  emofuse::testing::SyntheticAdapterServer server({.fail_first = 2});
  HttpAdapterClient client(server.base_url(), fast_retry(3));
  auto reply = generate_responses(record("a"), emofuse::testing::make_image_bytes("a", 0), PromptKind::kDescription, client);
  EXPECT_FALSE(reply.empty());
  EXPECT_EQ(server.requests(), 3u);
}

TEST(Http, ServerErrorAfterRetriesIsAdapterError) {
  emofuse::testing::SyntheticAdapterServer server({.fail_first = 5});
  HttpAdapterClient client(server.base_url(), fast_retry(2));
  try {
    client.embed_image("x");
    FAIL();
  } catch (const AdapterError& e) {
    EXPECT_EQ(e.status(), 503);
  }
  EXPECT_EQ(server.requests(), 2u);
}

TEST(Http, ClientErrorsAreNotRetried) {
  emofuse::testing::SyntheticAdapterServer server({});
  HttpAdapterClient client(server.base_url(), fast_retry(3));
  std::vector<std::string> none;
  EXPECT_THROW(client.embed_texts(none), InvalidArgument);
  // Over-long batch is split client-side, so the server never sees > max_batch.
  std::vector<std::string> many(40, "Fear");
  EXPECT_EQ(client.embed_texts(many).size(), 40u);
}

TEST(Http, Info) {
  emofuse::testing::SyntheticAdapterServer server({});
  HttpAdapterClient client(server.base_url(), fast_retry(1));
  auto info = client.info();
  EXPECT_EQ(info.dim, 768);
  EXPECT_TRUE(info.loaded);
  EXPECT_TRUE(info.deterministic_decoding);
}

TEST(Elicit, ShortListWarnsAndRetryKeepsLonger) {
  emofuse::testing::SyntheticClient synth;
  // Find an image whose emotion reply is short.
  std::string bytes;
  for (int i = 0; i < 100; ++i) {
    auto candidate = emofuse::testing::make_image_bytes("s" + std::to_string(i), 1);
    GenerationRequest req{"s", candidate, PromptKind::kEmotion, {}};
    if (parse_enumerated_list(synth.generate(req)).short_list) {
      bytes = candidate;
      break;
    }
  }
  ASSERT_FALSE(bytes.empty());
  auto plain = elicit_responses(record("s"), bytes, synth);
  EXPECT_EQ(plain.responses.emotions.size(), 7u);
  ASSERT_EQ(plain.warnings.size(), 1u);
  EXPECT_NE(plain.warnings[0].find("7 emotion item(s)"), std::string::npos);
  EXPECT_EQ(plain.responses.descriptions.size(), 10u);
}

TEST(Elicit, GenerateAllSkipsExistingAndAppends) {
  TempDir dir;
  emofuse::testing::write_fixture_corpus(dir.path(), 3, 1, {.dim = 8});
  auto manifest = load_manifest(dir / "manifest.jsonl");
  auto store = std::make_shared<const FixtureStore>(dir / "fixtures.jsonl");
  ReplayClient client(store);
  ResponseMap responses;
  auto first = generate_all(manifest, client, responses, dir / "responses.jsonl", {}, 2);
  EXPECT_EQ(first.generated, 4u);
  EXPECT_EQ(responses.size(), 4u);
  auto second = generate_all(manifest, client, responses, dir / "responses.jsonl");
  EXPECT_EQ(second.generated, 0u);
  EXPECT_EQ(second.skipped, 4u);
  EXPECT_EQ(load_responses(dir / "responses.jsonl"), responses);
}
