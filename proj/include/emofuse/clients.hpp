#pragma once

// Clients for the model adapter: the live HTTP client with retry, the JSON
// Lines fixture store, and the replay/recording wrappers built on it.

#include <atomic>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <span>
#include <string>
#include <string_view>
#include <thread>
#include <unordered_map>
#include <vector>

#include "emofuse/detail/http.hpp"
#include <nlohmann/json.hpp>

#include "emofuse/detail/codec.hpp"
#include "emofuse/error.hpp"
#include "emofuse/prompt.hpp"

namespace emofuse {

inline constexpr std::string_view kGenerateEndpoint = "/v1/generate";
inline constexpr std::string_view kEmbedTextEndpoint = "/v1/embed/text";
inline constexpr std::string_view kEmbedImageEndpoint = "/v1/embed/image";
inline constexpr std::string_view kInfoEndpoint = "/v1/info";

/// Generation and encoder contracts the pipeline consumes.
class AdapterClient {
 public:
  virtual ~AdapterClient() = default;

  /// Raw LMM reply text, unmodified.
  virtual std::string generate(const GenerationRequest& request) = 0;

  /// One vector per input text, order-aligned.
  virtual std::vector<std::vector<float>> embed_texts(std::span<const std::string> texts) = 0;

  virtual std::vector<float> embed_image(std::string_view image_bytes) = 0;
};

struct RetryConfig {
  int max_attempts = 3;
  std::chrono::milliseconds initial_delay{200};
  double backoff_factor = 2.0;
};

struct AdapterInfo {
  std::string text_encoder_name;
  std::string image_encoder_name;
  std::string lmm_name;
  int dim = 0;
  bool loaded = false;
  int max_batch = 0;
  bool deterministic_decoding = false;
};

/// Talks JSON over HTTP to a running model adapter.
class HttpAdapterClient final : public AdapterClient {
 public:
  explicit HttpAdapterClient(std::string base_url, RetryConfig retry = {},
                             std::chrono::seconds timeout = std::chrono::seconds(120),
                             std::size_t text_batch = 16)
      : base_url_(std::move(base_url)), retry_(retry), timeout_(timeout), text_batch_(text_batch) {
    while (!base_url_.empty() && base_url_.back() == '/') base_url_.pop_back();
    if (retry_.max_attempts < 1) throw InvalidArgument("max_attempts must be >= 1");
    if (text_batch_ == 0) throw InvalidArgument("text batch size must be > 0");
  }

  std::string generate(const GenerationRequest& request) override {
    request.decode.validate();
    nlohmann::json body = {{"image_b64", detail::base64_encode(request.image_bytes)},
                           {"prompt", std::string(build_prompt(request.prompt))},
                           {"max_new_tokens", request.decode.max_new_tokens},
                           {"temperature", request.decode.temperature}};
    if (request.decode.seed) body["seed"] = *request.decode.seed;
    auto reply = post(kGenerateEndpoint, body);
    if (!reply.contains("text") || !reply["text"].is_string())
      throw AdapterError(url(kGenerateEndpoint), 200, "response lacks \"text\"");
    return reply["text"].get<std::string>();
  }

  std::vector<std::vector<float>> embed_texts(std::span<const std::string> texts) override {
    if (texts.empty()) throw InvalidArgument("embed_texts: empty input");
    std::vector<std::vector<float>> out;
    out.reserve(texts.size());
    for (std::size_t start = 0; start < texts.size(); start += text_batch_) {
      auto chunk = texts.subspan(start, std::min(text_batch_, texts.size() - start));
      nlohmann::json body = {{"texts", std::vector<std::string>(chunk.begin(), chunk.end())}};
      auto reply = post(kEmbedTextEndpoint, body);
      if (!reply.contains("vectors") || !reply["vectors"].is_array() ||
          reply["vectors"].size() != chunk.size())
        throw AdapterError(url(kEmbedTextEndpoint), 200, "vector count does not match input");
      for (const auto& v : reply["vectors"]) out.push_back(to_floats(v, kEmbedTextEndpoint));
    }
    return out;
  }

  std::vector<float> embed_image(std::string_view image_bytes) override {
    nlohmann::json body = {{"image_b64", detail::base64_encode(image_bytes)}};
    auto reply = post(kEmbedImageEndpoint, body);
    if (!reply.contains("vector"))
      throw AdapterError(url(kEmbedImageEndpoint), 200, "response lacks \"vector\"");
    return to_floats(reply["vector"], kEmbedImageEndpoint);
  }

  AdapterInfo info() {
    auto j = with_retry(kInfoEndpoint, [&](httplib::Client& cli) { return cli.Get(std::string(kInfoEndpoint)); });
    AdapterInfo info;
    info.text_encoder_name = j.value("text_encoder_name", "");
    info.image_encoder_name = j.value("image_encoder_name", "");
    info.lmm_name = j.value("lmm_name", "");
    info.dim = j.value("dim", 0);
    info.loaded = j.value("loaded", false);
    info.max_batch = j.value("max_batch", 0);
    info.deterministic_decoding = j.value("deterministic_decoding", false);
    return info;
  }

  const std::string& base_url() const noexcept { return base_url_; }

 private:
  std::string url(std::string_view endpoint) const { return base_url_ + std::string(endpoint); }

  std::vector<float> to_floats(const nlohmann::json& v, std::string_view endpoint) const {
    if (!v.is_array()) throw AdapterError(url(endpoint), 200, "vector is not an array");
    std::vector<float> out;
    out.reserve(v.size());
    for (const auto& x : v) {
      if (!x.is_number()) throw AdapterError(url(endpoint), 200, "non-numeric vector entry");
      out.push_back(static_cast<float>(x.get<double>()));
    }
    return out;
  }

  nlohmann::json post(std::string_view endpoint, const nlohmann::json& body) {
    auto payload = body.dump();
    return with_retry(endpoint, [&](httplib::Client& cli) {
      return cli.Post(std::string(endpoint), payload, "application/json");
    });
  }

  // Transport failures and 5xx answers are retried with exponential backoff;
  // 4xx answers are surfaced immediately.
  template <typename Call>
  nlohmann::json with_retry(std::string_view endpoint, Call&& call) {
    auto delay = retry_.initial_delay;
    std::string last_detail;
    for (int attempt = 1; attempt <= retry_.max_attempts; ++attempt) {
      httplib::Client cli(base_url_);
      cli.set_connection_timeout(timeout_);
      cli.set_read_timeout(timeout_);
      cli.set_write_timeout(timeout_);
      auto res = call(cli);
      if (res) {
        if (res->status >= 200 && res->status < 300) {
          try {
            return nlohmann::json::parse(res->body);
          } catch (const nlohmann::json::parse_error&) {
            throw AdapterError(url(endpoint), res->status, "response is not JSON");
          }
        }
        if (res->status < 500) throw AdapterError(url(endpoint), res->status, res->body);
        if (attempt == retry_.max_attempts) throw AdapterError(url(endpoint), res->status, res->body);
        last_detail = "HTTP " + std::to_string(res->status);
      } else {
        last_detail = httplib::to_string(res.error());
      }
      if (attempt < retry_.max_attempts) {
        std::this_thread::sleep_for(delay);
        delay = std::chrono::milliseconds(
            static_cast<long long>(static_cast<double>(delay.count()) * retry_.backoff_factor));
      }
    }
    throw TransportError(url(endpoint), retry_.max_attempts, last_detail);
  }

  std::string base_url_;
  RetryConfig retry_;
  std::chrono::seconds timeout_;
  std::size_t text_batch_;
};

/// Recorded adapter replies keyed by request digest, persisted as JSON Lines
/// {"digest", "endpoint", "reply"}. Concurrent lookups; appends serialized.
class FixtureStore {
 public:
  struct Entry {
    std::string endpoint;
    std::string reply;
  };

  FixtureStore() = default;

  /// Loads `path` if it exists; appends go to the same file.
  explicit FixtureStore(std::filesystem::path path) : path_(std::move(path)) {
    std::ifstream in(path_);
    if (!in) return;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      if (detail::trim(line).empty()) continue;
      nlohmann::json j;
      try {
        j = nlohmann::json::parse(line);
        entries_.try_emplace(j.at("digest").get<std::string>(),
                             Entry{j.at("endpoint").get<std::string>(), j.at("reply").get<std::string>()});
      } catch (const nlohmann::json::exception& e) {
        throw Error("fixture store " + path_.string() + " line " + std::to_string(line_no) + ": " + e.what());
      }
    }
  }

  std::optional<Entry> find(const std::string& digest) const {
    std::shared_lock lock(mutex_);
    auto it = entries_.find(digest);
    if (it == entries_.end()) return std::nullopt;
    return it->second;
  }

  /// Records a reply. An existing digest keeps its first reply.
  void append(const std::string& digest, std::string_view endpoint, std::string_view reply) {
    std::unique_lock lock(mutex_);
    if (!entries_.try_emplace(digest, Entry{std::string(endpoint), std::string(reply)}).second) return;
    if (path_.empty()) return;
    std::ofstream out(path_, std::ios::app | std::ios::binary);
    if (!out) throw Error("cannot append to fixture store " + path_.string());
    nlohmann::json j = {{"digest", digest}, {"endpoint", std::string(endpoint)}, {"reply", std::string(reply)}};
    out << j.dump() << '\n';
    out.flush();
    if (!out) throw Error("write failure on fixture store " + path_.string());
  }

  std::size_t size() const {
    std::shared_lock lock(mutex_);
    return entries_.size();
  }

  const std::filesystem::path& path() const noexcept { return path_; }

 private:
  std::filesystem::path path_;
  mutable std::shared_mutex mutex_;
  std::unordered_map<std::string, Entry> entries_;
};

namespace detail {

inline std::string encode_vector_reply(std::span<const float> v) {
  nlohmann::json j = nlohmann::json::array();
  for (float x : v) j.push_back(static_cast<double>(x));
  return j.dump();
}

inline std::vector<float> decode_vector_reply(const std::string& reply) {
  auto j = nlohmann::json::parse(reply);
  std::vector<float> out;
  out.reserve(j.size());
  for (const auto& x : j) out.push_back(static_cast<float>(x.get<double>()));
  return out;
}

}  // namespace detail

/// Serves every request from a fixture store and never touches the network.
class ReplayClient final : public AdapterClient {
 public:
  explicit ReplayClient(std::shared_ptr<const FixtureStore> store) : store_(std::move(store)) {}

  std::string generate(const GenerationRequest& request) override {
    auto digest = request_digest(request);
    auto hit = store_->find(digest);
    if (!hit) throw MissingFixtureError(std::string(to_string(request.prompt)) + " reply for image \"" + request.image_id + "\"", digest);
    return hit->reply;
  }

  std::vector<std::vector<float>> embed_texts(std::span<const std::string> texts) override {
    if (texts.empty()) throw InvalidArgument("embed_texts: empty input");
    std::vector<std::vector<float>> out;
    out.reserve(texts.size());
    for (const auto& t : texts) {
      auto digest = text_embedding_digest(t);
      auto hit = store_->find(digest);
      if (!hit) throw MissingFixtureError("text embedding of \"" + t + "\"", digest);
      out.push_back(detail::decode_vector_reply(hit->reply));
    }
    return out;
  }

  std::vector<float> embed_image(std::string_view image_bytes) override {
    auto digest = image_embedding_digest(image_bytes);
    auto hit = store_->find(digest);
    if (!hit) throw MissingFixtureError("image embedding", digest);
    return detail::decode_vector_reply(hit->reply);
  }

 private:
  std::shared_ptr<const FixtureStore> store_;
};

/// Replays recorded requests; forwards misses to a live client and records
/// the reply so a later replay returns it byte-identically.
class RecordingClient final : public AdapterClient {
 public:
  RecordingClient(std::shared_ptr<AdapterClient> live, std::shared_ptr<FixtureStore> store)
      : live_(std::move(live)), store_(std::move(store)) {}

  std::string generate(const GenerationRequest& request) override {
    auto digest = request_digest(request);
    if (auto hit = store_->find(digest)) return hit->reply;
    auto reply = live_->generate(request);
    live_calls_.fetch_add(1);
    store_->append(digest, kGenerateEndpoint, reply);
    return reply;
  }

  std::vector<std::vector<float>> embed_texts(std::span<const std::string> texts) override {
    if (texts.empty()) throw InvalidArgument("embed_texts: empty input");
    std::vector<std::vector<float>> out(texts.size());
    std::vector<std::string> misses;
    std::vector<std::size_t> miss_index;
    for (std::size_t i = 0; i < texts.size(); ++i) {
      if (auto hit = store_->find(text_embedding_digest(texts[i]))) {
        out[i] = detail::decode_vector_reply(hit->reply);
      } else {
        misses.push_back(texts[i]);
        miss_index.push_back(i);
      }
    }
    if (!misses.empty()) {
      auto fresh = live_->embed_texts(misses);
      live_calls_.fetch_add(1);
      if (fresh.size() != misses.size()) throw AdapterError(std::string(kEmbedTextEndpoint), 200, "vector count does not match input");
      for (std::size_t k = 0; k < misses.size(); ++k) {
        store_->append(text_embedding_digest(misses[k]), kEmbedTextEndpoint, detail::encode_vector_reply(fresh[k]));
        out[miss_index[k]] = std::move(fresh[k]);
      }
    }
    return out;
  }

  std::vector<float> embed_image(std::string_view image_bytes) override {
    auto digest = image_embedding_digest(image_bytes);
    if (auto hit = store_->find(digest)) return detail::decode_vector_reply(hit->reply);
    auto v = live_->embed_image(image_bytes);
    live_calls_.fetch_add(1);
    store_->append(digest, kEmbedImageEndpoint, detail::encode_vector_reply(v));
    return v;
  }

  /// Number of requests forwarded to the live client.
  std::size_t live_calls() const noexcept { return live_calls_.load(); }

 private:
  std::shared_ptr<AdapterClient> live_;
  std::shared_ptr<FixtureStore> store_;
  std::atomic<std::size_t> live_calls_{0};
};

}  // namespace emofuse
