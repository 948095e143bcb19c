#pragma once

// Deterministic stand-in for the model adapter, used by the test suites and
// the offline demo. Images are small text blobs carrying their class; the
// fake LMM answers with class-flavoured enumerated lists, and the fake
// encoders map text/images to seeded Gaussian vectors shifted along a fixed
// class direction.

#include <atomic>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <memory>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include "emofuse/detail/http.hpp"
#include <nlohmann/json.hpp>

#include "emofuse/classifier.hpp"
#include "emofuse/clients.hpp"
#include "emofuse/detail/codec.hpp"
#include "emofuse/domain.hpp"
#include "emofuse/prompt.hpp"

namespace emofuse::testing {

inline const std::vector<std::string>& disturbing_descriptions() {
  static const std::vector<std::string> v = {
      "a violent confrontation on a city street", "an injured person lying on the ground",
      "a burning building after an explosion",    "a crowd fleeing from gunfire",
      "blood stains on a concrete floor",        "a wounded animal in a cage",
      "rubble and debris after a disaster",      "a soldier aiming a rifle",
      "a car wreck with broken glass",           "smoke rising over a destroyed village",
      "a person being attacked",                 "an emergency crew carrying a stretcher"};
  return v;
}

inline const std::vector<std::string>& calm_descriptions() {
  static const std::vector<std::string> v = {
      "a sunny park with families walking", "a dog playing fetch on the grass",
      "a bowl of fresh fruit on a table",  "children laughing at a birthday party",
      "a quiet beach at sunset",           "a cyclist riding through the countryside",
      "a cup of coffee next to a book",    "a mountain lake under a clear sky",
      "friends sharing a meal outdoors",   "a cat sleeping on a windowsill",
      "a colorful flower market",          "a couple dancing at a wedding"};
  return v;
}

inline const std::vector<std::string>& disturbing_emotions() {
  static const std::vector<std::string> v = {"Fear",   "Sadness", "Grief",   "Disgust", "Anger", "Horror",
                                             "Anxiety", "Shock",  "Despair", "Distress", "Dread", "Helplessness"};
  return v;
}

inline const std::vector<std::string>& calm_emotions() {
  static const std::vector<std::string> v = {"Joy",      "Calm",      "Contentment", "Happiness", "Serenity", "Amusement",
                                             "Gratitude", "Hope",     "Wonder",      "Relief",    "Nostalgia", "Warmth"};
  return v;
}

/// Synthetic image blob. The fake encoders read the class back out of it.
inline std::string make_image_bytes(const std::string& id, int label) {
  return "EMOFUSE-SYNTHETIC-IMAGE\nid=" + id + "\nlabel=" + std::to_string(label) + "\n";
}

struct SyntheticAdapterOptions {
  std::size_t dim = kDefaultDim;
  /// Length of the class shift along a unit direction. Noise has unit
  /// expected norm (per-coordinate std 1/sqrt(dim)).
  double text_signal = 0.5;
  double image_signal = 0.1;
  /// Fraction of items drawn from the opposite class vocabulary.
  double crossover = 0.2;
};

class SyntheticAdapter {
 public:
  explicit SyntheticAdapter(SyntheticAdapterOptions options = {}) : options_(options) {
    direction_ = gaussian("emofuse/direction", 1.0);
    double n = 0.0;
    for (double x : direction_) n += x * x;
    n = std::sqrt(n);
    for (double& x : direction_) x /= n;
  }

  std::size_t dim() const noexcept { return options_.dim; }

  static int label_of(std::string_view image_bytes) {
    return image_bytes.find("\nlabel=1") != std::string_view::npos ? 1 : 0;
  }

  std::string generate(std::string_view image_bytes, std::string_view prompt) const {
    int label = label_of(image_bytes);
    bool emotion = prompt == kEmotionPrompt;
    const auto& own = emotion ? (label ? disturbing_emotions() : calm_emotions())
                              : (label ? disturbing_descriptions() : calm_descriptions());
    const auto& other = emotion ? (label ? calm_emotions() : disturbing_emotions())
                                : (label ? calm_descriptions() : disturbing_descriptions());
    detail::Rng rng(seed_of(std::string(image_bytes) + "\x1f" + std::string(prompt)));

    // Every fifth image gives a short emotion list; reply styles vary.
    std::size_t count = (emotion && rng.below(5) == 0) ? 7 : 10;
    std::vector<std::string> items;
    for (std::size_t i = 0; i < count; ++i) {
      const auto& pool = rng.uniform() < options_.crossover ? other : own;
      items.push_back(pool[rng.below(pool.size())]);
    }
    std::string out;
    switch (rng.below(3)) {
      case 0: out += "Sure! Here are the items you asked for:\n\n"; break;
      case 1: break;
      default: out += "\n"; break;
    }
    int style = static_cast<int>(rng.below(3));
    for (std::size_t i = 0; i < items.size(); ++i) {
      if (style == 0) out += std::to_string(i + 1) + ". " + items[i] + "\n";
      else if (style == 1) out += std::to_string(i + 1) + ") " + items[i] + "\n";
      else out += "- " + items[i] + "\n";
    }
    if (rng.below(2) == 0) out += "\nThese capture the overall impression of the image.";
    return out;
  }

  std::vector<float> embed_text(std::string_view text) const {
    double sign = 0.0;
    if (contains(disturbing_descriptions(), text) || contains(disturbing_emotions(), text)) sign = 1.0;
    if (contains(calm_descriptions(), text) || contains(calm_emotions(), text)) sign = -1.0;
    return shifted("text\x1f" + std::string(text), sign * options_.text_signal);
  }

  std::vector<float> embed_image(std::string_view image_bytes) const {
    double sign = label_of(image_bytes) ? 1.0 : -1.0;
    return shifted("image\x1f" + std::string(image_bytes), sign * options_.image_signal);
  }

 private:
  static bool contains(const std::vector<std::string>& pool, std::string_view s) {
    for (const auto& p : pool)
      if (p == s) return true;
    return false;
  }

  static std::uint64_t seed_of(std::string_view key) {
    auto hex = detail::sha256_hex(key);
    return std::stoull(hex.substr(0, 16), nullptr, 16);
  }

  std::vector<double> gaussian(std::string_view key, double scale) const {
    detail::Rng rng(seed_of(key));
    std::vector<double> v(options_.dim);
    for (double& x : v) x = scale * rng.normal();
    return v;
  }

  std::vector<float> shifted(std::string_view key, double shift) const {
    auto noise = gaussian(key, 1.0 / std::sqrt(static_cast<double>(options_.dim)));
    std::vector<float> out(options_.dim);
    for (std::size_t i = 0; i < options_.dim; ++i) out[i] = static_cast<float>(noise[i] + shift * direction_[i]);
    return out;
  }

  SyntheticAdapterOptions options_;
  std::vector<double> direction_;
};

/// In-process AdapterClient backed by SyntheticAdapter.
class SyntheticClient final : public AdapterClient {
 public:
  explicit SyntheticClient(SyntheticAdapterOptions options = {}) : adapter_(options) {}

  std::string generate(const GenerationRequest& r) override {
    ++calls_;
    return adapter_.generate(r.image_bytes, build_prompt(r.prompt));
  }
  std::vector<std::vector<float>> embed_texts(std::span<const std::string> texts) override {
    ++calls_;
    std::vector<std::vector<float>> out;
    for (const auto& t : texts) out.push_back(adapter_.embed_text(t));
    return out;
  }
  std::vector<float> embed_image(std::string_view bytes) override {
    ++calls_;
    return adapter_.embed_image(bytes);
  }

  std::size_t calls() const noexcept { return calls_.load(); }

 private:
  SyntheticAdapter adapter_;
  std::atomic<std::size_t> calls_{0};
};

/// Serves the adapter wire protocol (/v1/info, /v1/generate, /v1/embed/text,
/// /v1/embed/image) on a loopback port for the lifetime of the object.
class SyntheticAdapterServer {
 public:
  struct Options {
    SyntheticAdapterOptions adapter;
    std::size_t max_batch = 64;
    /// The first N requests are answered with 503.
    int fail_first = 0;
  };

  explicit SyntheticAdapterServer(Options options) : options_(options), adapter_(options.adapter) {
    server_.set_pre_routing_handler([this](const httplib::Request&, httplib::Response& res) {
      ++requests_;
      if (failures_left_.fetch_sub(1) > 0) {
        res.status = 503;
        res.set_content(R"({"error":"warming up"})", "application/json");
        return httplib::Server::HandlerResponse::Handled;
      }
      return httplib::Server::HandlerResponse::Unhandled;
    });
    failures_left_ = options_.fail_first;

    server_.Get("/v1/info", [this](const httplib::Request&, httplib::Response& res) {
      nlohmann::json j = {{"text_encoder_name", "synthetic-text"},
                          {"image_encoder_name", "synthetic-image"},
                          {"lmm_name", "synthetic-lmm"},
                          {"dim", adapter_.dim()},
                          {"loaded", true},
                          {"max_batch", options_.max_batch},
                          {"deterministic_decoding", true}};
      res.set_content(j.dump(), "application/json");
    });
    server_.Post("/v1/generate", [this](const httplib::Request& req, httplib::Response& res) {
      handle(res, [&] {
        auto j = nlohmann::json::parse(req.body);
        auto bytes = detail::base64_decode(j.at("image_b64").get<std::string>());
        auto prompt = j.at("prompt").get<std::string>();
        if (prompt.empty()) throw InvalidArgument("empty prompt");
        return nlohmann::json{{"text", adapter_.generate(bytes, prompt)}};
      });
    });
    server_.Post("/v1/embed/text", [this](const httplib::Request& req, httplib::Response& res) {
      handle(res, [&]() -> nlohmann::json {
        auto j = nlohmann::json::parse(req.body);
        auto texts = j.at("texts").get<std::vector<std::string>>();
        if (texts.empty()) throw InvalidArgument("empty texts");
        if (texts.size() > options_.max_batch) throw BatchTooLarge{};
        nlohmann::json vectors = nlohmann::json::array();
        for (const auto& t : texts) vectors.push_back(adapter_.embed_text(t));
        return {{"vectors", vectors}};
      });
    });
    server_.Post("/v1/embed/image", [this](const httplib::Request& req, httplib::Response& res) {
      handle(res, [&]() -> nlohmann::json {
        auto j = nlohmann::json::parse(req.body);
        auto bytes = detail::base64_decode(j.at("image_b64").get<std::string>());
        return {{"vector", adapter_.embed_image(bytes)}};
      });
    });

    port_ = server_.bind_to_any_port("127.0.0.1");
    if (port_ <= 0) throw Error("synthetic adapter: cannot bind a loopback port");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }

  ~SyntheticAdapterServer() {
    server_.stop();
    if (thread_.joinable()) thread_.join();
  }

  SyntheticAdapterServer(const SyntheticAdapterServer&) = delete;
  SyntheticAdapterServer& operator=(const SyntheticAdapterServer&) = delete;

  int port() const noexcept { return port_; }
  std::string base_url() const { return "http://127.0.0.1:" + std::to_string(port_); }
  std::size_t requests() const noexcept { return requests_.load(); }

 private:
  struct BatchTooLarge {};

  template <typename Fn>
  void handle(httplib::Response& res, Fn&& fn) {
    try {
      res.set_content(fn().dump(), "application/json");
    } catch (const BatchTooLarge&) {
      res.status = 413;
      res.set_content(R"({"error":"batch too large"})", "application/json");
    } catch (const std::exception& e) {
      res.status = 400;
      res.set_content(nlohmann::json{{"error", e.what()}}.dump(), "application/json");
    }
  }

  Options options_;
  SyntheticAdapter adapter_;
  httplib::Server server_;
  std::thread thread_;
  int port_ = -1;
  std::atomic<std::size_t> requests_{0};
  std::atomic<int> failures_left_{0};
};

struct FixtureCorpus {
  std::filesystem::path manifest;
  std::filesystem::path fixtures;
  std::filesystem::path image_dir;
  std::vector<ImageRecord> records;
};

/// Writes `n_train + n_test` synthetic images, a manifest and a fixture
/// store covering every request an offline pipeline run makes with the given
/// decode parameters. Labels alternate 0/1.
inline FixtureCorpus write_fixture_corpus(const std::filesystem::path& dir, std::size_t n_train, std::size_t n_test,
                                          SyntheticAdapterOptions options = {}, const DecodeParams& decode = {}) {
  std::filesystem::create_directories(dir / "images");
  FixtureCorpus corpus;
  corpus.manifest = dir / "manifest.jsonl";
  corpus.fixtures = dir / "fixtures.jsonl";
  corpus.image_dir = dir / "images";
  std::filesystem::remove(corpus.fixtures);

  auto live = std::make_shared<SyntheticClient>(options);
  auto store = std::make_shared<FixtureStore>(corpus.fixtures);
  RecordingClient recorder(live, store);

  std::ofstream manifest(corpus.manifest, std::ios::trunc);
  for (std::size_t i = 0; i < n_train + n_test; ++i) {
    char id[32];
    std::snprintf(id, sizeof id, "img%04zu", i);
    int label = static_cast<int>(i % 2);
    ImageRecord rec{id, std::string("images/") + id + ".img", static_cast<Label>(label),
                    i < n_train ? Split::kTrain : Split::kTest};
    auto bytes = make_image_bytes(id, label);
    {
      std::ofstream img(dir / rec.image_ref, std::ios::binary | std::ios::trunc);
      img << bytes;
    }
    manifest << nlohmann::json{{"id", rec.id},
                               {"image_ref", rec.image_ref},
                               {"label", label},
                               {"split", std::string(to_string(rec.split))}}
                    .dump()
             << '\n';
    for (auto kind : {PromptKind::kDescription, PromptKind::kEmotion}) {
      auto reply = recorder.generate(GenerationRequest{rec.id, bytes, kind, decode});
      auto items = parse_enumerated_list(reply).items;
      recorder.embed_texts(items);
    }
    recorder.embed_image(bytes);
    corpus.records.push_back(std::move(rec));
  }
  return corpus;
}

}  // namespace emofuse::testing
