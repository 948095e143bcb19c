#pragma once

// Single-image inference: elicit -> parse -> embed -> pool -> fuse -> predict,
// shared by the `classify` command and the POST /v1/classify endpoint.

#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "emofuse/detail/http.hpp"
#include <nlohmann/json.hpp>

#include "emofuse/checkpoint.hpp"
#include "emofuse/classifier.hpp"
#include "emofuse/clients.hpp"
#include "emofuse/domain.hpp"
#include "emofuse/embedding.hpp"
#include "emofuse/prompting.hpp"

namespace emofuse {

struct PipelineConfig {
  std::string adapter_base_url = "http://127.0.0.1:8000";
  bool offline = false;
  std::filesystem::path fixture_path;
  std::filesystem::path store_path;
  std::filesystem::path manifest_path;
  std::uint32_t encoder_dim = kDefaultDim;
  std::size_t in_flight_limit = 4;
  RetryConfig retry;

  void validate() const {
    if (encoder_dim == 0) throw InvalidArgument("encoder_dim must be > 0");
    if (in_flight_limit == 0) throw InvalidArgument("in_flight_limit must be > 0");
    if (offline) {
      if (fixture_path.empty()) throw InvalidArgument("offline mode requires a fixture file");
      if (!std::filesystem::exists(fixture_path))
        throw InvalidArgument("fixture file does not exist: " + fixture_path.string());
    }
  }
};

/// Offline: replay only. Online with a fixture path: record-and-replay.
/// Online without: live adapter calls.
inline std::shared_ptr<AdapterClient> make_client(const PipelineConfig& config) {
  config.validate();
  if (config.offline)
    return std::make_shared<ReplayClient>(std::make_shared<const FixtureStore>(config.fixture_path));
  auto live = std::make_shared<HttpAdapterClient>(config.adapter_base_url, config.retry);
  if (config.fixture_path.empty()) return live;
  return std::make_shared<RecordingClient>(live, std::make_shared<FixtureStore>(config.fixture_path));
}

struct ClassifyResult {
  int label = 0;
  double probability = 0.5;  // of the predicted class
  std::vector<std::string> descriptions;
  std::vector<std::string> emotions;
  std::vector<std::string> warnings;
};

inline nlohmann::json to_json(const ClassifyResult& r) {
  return {{"label", std::string(label_name(static_cast<Label>(r.label)))},
          {"probability", r.probability},
          {"descriptions", r.descriptions},
          {"emotions", r.emotions}};
}

/// Holds an immutable checkpoint; classify() is safe for concurrent callers
/// as long as the client is.
class ClassifyPipeline {
 public:
  ClassifyPipeline(Checkpoint checkpoint, std::shared_ptr<AdapterClient> client, ElicitOptions elicit = {})
      : checkpoint_(std::move(checkpoint)), client_(std::move(client)), elicit_(elicit) {}

  ClassifyResult classify(const std::string& image_id, std::string_view image_bytes) const {
    ImageRecord rec{image_id, {}, Label::kNonDisturbing, Split::kTest};
    auto elicited = elicit_responses(rec, image_bytes, *client_, elicit_);
    const auto& rs = elicited.responses;
    const std::size_t dim = checkpoint_.embedding_dim;
    const auto& cfg = checkpoint_.config;

    ChannelVectors ch;
    auto widen = [&](std::vector<float> v, EmbeddingKind k) {
      std::vector<double> out(v.begin(), v.end());
      if (checkpoint_.features.normalizes(k)) l2_normalize(out);
      return out;
    };
    if (cfg.use_image) ch.image = widen(embed_image_bytes(image_id, image_bytes, *client_, dim).values, EmbeddingKind::kImage);
    if (cfg.use_description)
      ch.description = widen(pooled_text_embedding(image_id, EmbeddingKind::kDescription, rs.descriptions, *client_, dim).values,
                             EmbeddingKind::kDescription);
    if (cfg.use_emotion)
      ch.emotion = widen(pooled_text_embedding(image_id, EmbeddingKind::kEmotion, rs.emotions, *client_, dim).values,
                         EmbeddingKind::kEmotion);
    auto fused = fuse(ch, cfg, dim);
    Matrix x(1, static_cast<Eigen::Index>(fused.size()));
    for (std::size_t j = 0; j < fused.size(); ++j) x(0, static_cast<Eigen::Index>(j)) = fused[j];

    auto proba = predict_proba(checkpoint_.params, x);
    auto labels = predict(checkpoint_.params, x);
    ClassifyResult out;
    out.label = labels[0];
    out.probability = proba(0, out.label);
    out.descriptions = rs.descriptions;
    out.emotions = rs.emotions;
    out.warnings = std::move(elicited.warnings);
    return out;
  }

  const Checkpoint& checkpoint() const noexcept { return checkpoint_; }

 private:
  Checkpoint checkpoint_;
  std::shared_ptr<AdapterClient> client_;
  ElicitOptions elicit_;
};

struct HttpReply {
  int status = 200;
  nlohmann::json body;
};

/// Request handling for POST /v1/classify, independent of the HTTP server.
/// Body: {"image_b64": str} or {"image_id": str} (the latter needs a manifest).
inline HttpReply handle_classify(const ClassifyPipeline& pipeline, const DatasetManifest* manifest,
                                 const std::string& body) {
  auto error = [](int status, const std::string& message) { return HttpReply{status, {{"error", message}}}; };
  nlohmann::json req;
  try {
    req = nlohmann::json::parse(body);
  } catch (const nlohmann::json::parse_error&) {
    return error(400, "request body is not valid JSON");
  }
  if (!req.is_object()) return error(400, "request body must be a JSON object");
  bool has_b64 = req.contains("image_b64"), has_id = req.contains("image_id");
  if (has_b64 == has_id) return error(400, "exactly one of \"image_b64\" or \"image_id\" is required");

  std::string image_id, bytes;
  try {
    if (has_b64) {
      if (!req["image_b64"].is_string()) return error(400, "\"image_b64\" must be a string");
      bytes = detail::base64_decode(req["image_b64"].get<std::string>());
      image_id = "sha256:" + detail::sha256_hex(bytes);
    } else {
      if (!req["image_id"].is_string()) return error(400, "\"image_id\" must be a string");
      image_id = req["image_id"].get<std::string>();
      if (!manifest) return error(400, "\"image_id\" lookups need the server to be started with a manifest");
      const auto* rec = manifest->find(image_id);
      if (!rec) return error(404, "unknown image id \"" + image_id + "\"");
      bytes = detail::read_file_bytes(manifest->resolve_image_path(*rec).string());
    }
  } catch (const InvalidArgument& e) {
    return error(400, e.what());
  } catch (const Error& e) {
    return error(500, e.what());
  }

  try {
    return HttpReply{200, to_json(pipeline.classify(image_id, bytes))};
  } catch (const EmptyParseError& e) {
    return HttpReply{422, {{"error", "unparseable LMM reply"}, {"raw", e.raw()}}};
  } catch (const TransportError& e) {
    return error(503, e.what());
  } catch (const AdapterError& e) {
    return error(e.status() >= 500 ? 503 : 400, e.what());
  } catch (const MissingFixtureError& e) {
    return error(503, std::string("adapter unavailable: ") + e.what());
  } catch (const std::exception& e) {
    return error(500, e.what());
  }
}

/// Registers POST /v1/classify and GET /healthz on `server`.
inline void mount_classify_routes(httplib::Server& server, std::shared_ptr<const ClassifyPipeline> pipeline,
                                  std::shared_ptr<const DatasetManifest> manifest = nullptr) {
  server.Post("/v1/classify", [pipeline, manifest](const httplib::Request& req, httplib::Response& res) {
    auto reply = handle_classify(*pipeline, manifest.get(), req.body);
    res.status = reply.status;
    res.set_content(reply.body.dump(), "application/json");
  });
  server.Get("/healthz", [](const httplib::Request&, httplib::Response& res) {
    res.set_content(R"({"status":"ok"})", "application/json");
  });
}

}  // namespace emofuse
