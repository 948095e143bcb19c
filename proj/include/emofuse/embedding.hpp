#pragma once

// Channel embeddings: encoder calls, average pooling of per-item text
// embeddings, and the per-image orchestration that fills an EmbeddingStore.

#include <algorithm>
#include <cmath>
#include <mutex>
#include <span>
#include <string>
#include <vector>

#include "emofuse/clients.hpp"
#include "emofuse/detail/parallel.hpp"
#include "emofuse/domain.hpp"
#include "emofuse/embedding_store.hpp"
#include "emofuse/error.hpp"
#include "emofuse/prompting.hpp"

namespace emofuse {

/// Component-wise arithmetic mean, accumulated in double.
///
/// Each component's values are summed in ascending order, so the result is
/// bit-identical under any permutation of `vectors`.
template <typename T>
std::vector<double> average_pool(std::span<const std::vector<T>> vectors) {
  if (vectors.empty()) throw InvalidArgument("average_pool: empty list");
  const std::size_t dim = vectors.front().size();
  for (const auto& v : vectors)
    if (v.size() != dim) throw DimensionMismatch(dim, v.size(), "average_pool");

  const std::size_t n = vectors.size();
  std::vector<double> out(dim);
  std::vector<double> column(n);
  for (std::size_t d = 0; d < dim; ++d) {
    for (std::size_t i = 0; i < n; ++i) column[i] = static_cast<double>(vectors[i][d]);
    std::sort(column.begin(), column.end());
    double sum = 0.0;
    for (double x : column) sum += x;
    out[d] = sum / static_cast<double>(n);
  }
  return out;
}

template <typename T>
std::vector<double> average_pool(const std::vector<std::vector<T>>& vectors) {
  return average_pool(std::span<const std::vector<T>>(vectors));
}

/// Scales to unit Euclidean norm; the zero vector is returned unchanged.
inline void l2_normalize(std::span<double> v) {
  double ss = 0.0;
  for (double x : v) ss += x * x;
  if (ss == 0.0) return;
  double inv = 1.0 / std::sqrt(ss);
  for (double& x : v) x *= inv;
}

namespace detail {

inline void check_vector(std::span<const float> v, std::size_t dim, const std::string& what) {
  if (v.size() != dim) throw DimensionMismatch(dim, v.size(), what);
  if (!all_finite(v)) throw AdapterError(what, 200, "non-finite embedding value");
}

inline std::vector<float> to_float(std::span<const double> v) {
  return std::vector<float>(v.begin(), v.end());
}

}  // namespace detail

/// One embedding per text, order-aligned, each checked against `dim`.
inline std::vector<EmbeddingVector> embed_texts(std::span<const std::string> texts, AdapterClient& client,
                                                std::size_t dim = kDefaultDim, const std::string& image_id = {},
                                                EmbeddingKind kind = EmbeddingKind::kDescription) {
  if (texts.empty()) throw InvalidArgument("embed_texts: no texts to embed");
  auto raw = client.embed_texts(texts);
  if (raw.size() != texts.size())
    throw AdapterError(std::string(kEmbedTextEndpoint), 200, "vector count does not match input");
  std::vector<EmbeddingVector> out;
  out.reserve(raw.size());
  for (auto& v : raw) {
    detail::check_vector(v, dim, "text embedding");
    out.push_back(EmbeddingVector{image_id, kind, std::move(v)});
  }
  return out;
}

inline EmbeddingVector embed_image_bytes(const std::string& image_id, std::string_view image_bytes,
                                         AdapterClient& client, std::size_t dim = kDefaultDim) {
  auto v = client.embed_image(image_bytes);
  detail::check_vector(v, dim, "image embedding of \"" + image_id + "\"");
  return EmbeddingVector{image_id, EmbeddingKind::kImage, std::move(v)};
}

inline EmbeddingVector embed_image(const DatasetManifest& manifest, const ImageRecord& record, AdapterClient& client,
                                   std::size_t dim = kDefaultDim) {
  auto path = manifest.resolve_image_path(record);
  std::string bytes;
  try {
    bytes = detail::read_file_bytes(path.string());
  } catch (const Error&) {
    throw Error("unreadable image for \"" + record.id + "\": " + path.string());
  }
  try {
    return embed_image_bytes(record.id, bytes, client, dim);
  } catch (const MissingFixtureError&) {
    throw MissingEmbeddingError({record.id});
  }
}

/// Embeds each item and pools to one vector tagged with `kind`.
inline EmbeddingVector pooled_text_embedding(const std::string& image_id, EmbeddingKind kind,
                                             std::span<const std::string> items, AdapterClient& client,
                                             std::size_t dim = kDefaultDim) {
  auto vecs = embed_texts(items, client, dim, image_id, kind);
  std::vector<std::vector<float>> values;
  values.reserve(vecs.size());
  for (auto& v : vecs) values.push_back(std::move(v.values));
  auto pooled = average_pool(values);
  return EmbeddingVector{image_id, kind, detail::to_float(pooled)};
}

struct BuildOptions {
  std::size_t dim = kDefaultDim;
  std::size_t in_flight = 4;
  /// Used when a record has no entry in the response map.
  ElicitOptions elicit;
};

struct BuildSummary {
  std::size_t written = 0;
  std::size_t skipped_images = 0;
  std::vector<std::string> warnings;
};

/// Fills `store` with the image, pooled description and pooled emotion
/// vectors of every record. Entries already present are skipped, so an
/// interrupted run can be resumed. Records missing from `responses` are
/// elicited on demand and added to it.
inline BuildSummary build_channel_embeddings(const DatasetManifest& manifest, ResponseMap& responses,
                                             AdapterClient& client, EmbeddingStore& store,
                                             const BuildOptions& options = {}) {
  if (store.dim() != options.dim) throw DimensionMismatch(options.dim, store.dim(), "embedding store");
  BuildSummary summary;
  std::mutex mutex;
  std::vector<const ImageRecord*> todo;
  for (const auto& r : manifest.records()) {
    bool done = std::all_of(kAllKinds.begin(), kAllKinds.end(), [&](auto k) { return store.contains(r.id, k); });
    if (done) ++summary.skipped_images;
    else todo.push_back(&r);
  }

  detail::bounded_parallel_for(todo.size(), options.in_flight, [&](std::size_t i) {
    const ImageRecord& rec = *todo[i];
    std::string bytes;
    auto ensure_bytes = [&]() -> const std::string& {
      if (bytes.empty()) bytes = detail::read_file_bytes(manifest.resolve_image_path(rec).string());
      return bytes;
    };

    ResponseSet rs;
    bool have_responses = false;
    {
      std::lock_guard lock(mutex);
      if (auto it = responses.find(rec.id); it != responses.end()) {
        rs = it->second;
        have_responses = true;
      }
    }
    std::vector<std::string> warnings;
    if (!have_responses) {
      auto elicited = elicit_responses(rec, ensure_bytes(), client, options.elicit);
      rs = std::move(elicited.responses);
      warnings = std::move(elicited.warnings);
    }
    if (rs.descriptions.empty()) throw EmptyParseError(rs.raw_description_reply);
    if (rs.emotions.empty()) throw EmptyParseError(rs.raw_emotion_reply);

    std::size_t written = 0;
    if (!store.contains(rec.id, EmbeddingKind::kImage)) {
      store.put(embed_image_bytes(rec.id, ensure_bytes(), client, options.dim));
      ++written;
    }
    if (!store.contains(rec.id, EmbeddingKind::kDescription)) {
      store.put(pooled_text_embedding(rec.id, EmbeddingKind::kDescription, rs.descriptions, client, options.dim));
      ++written;
    }
    if (!store.contains(rec.id, EmbeddingKind::kEmotion)) {
      store.put(pooled_text_embedding(rec.id, EmbeddingKind::kEmotion, rs.emotions, client, options.dim));
      ++written;
    }

    std::lock_guard lock(mutex);
    if (!have_responses) responses.insert_or_assign(rec.id, std::move(rs));
    summary.written += written;
    summary.warnings.insert(summary.warnings.end(), warnings.begin(), warnings.end());
  });
  return summary;
}

}  // namespace emofuse
