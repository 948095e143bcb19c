#pragma once

// Fused-feature classification head: channel concatenation and a three-layer
// ReLU MLP trained with softmax cross-entropy. Forward and backward passes are
// written out by hand; all training math is in double precision.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "emofuse/detail/codec.hpp"
#include "emofuse/embedding_store.hpp"
#include "emofuse/error.hpp"
#include "emofuse/metrics.hpp"

namespace emofuse {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowVector = Eigen::RowVectorXd;

inline constexpr int kNumClasses = 2;

// ---------------------------------------------------------------------------
// Channel selection and fusion

/// Which embedding channels enter the fused feature. Concatenation order is
/// always image, description, emotion.
struct AblationConfig {
  bool use_image = true;
  bool use_description = true;
  bool use_emotion = true;

  std::size_t channel_count() const noexcept {
    return static_cast<std::size_t>(use_image) + use_description + use_emotion;
  }

  std::size_t input_dim(std::size_t dim = kDefaultDim) const { return dim * channel_count(); }

  bool uses(EmbeddingKind k) const noexcept {
    switch (k) {
      case EmbeddingKind::kImage: return use_image;
      case EmbeddingKind::kDescription: return use_description;
      case EmbeddingKind::kEmotion: return use_emotion;
    }
    return false;
  }

  void validate() const {
    if (channel_count() == 0) throw InvalidArgument("ablation config enables no channel");
  }

  /// Row label in the ablation table, e.g. "Image Embeddings + Emotion Embeddings".
  std::string name() const {
    std::string out;
    auto add = [&](const char* part) {
      if (!out.empty()) out += " + ";
      out += part;
    };
    if (use_image) add("Image Embeddings");
    if (use_emotion) add("Emotion Embeddings");
    if (use_description) add("Semantic Description Embeddings");
    return out;
  }

  /// Comma-separated channel tokens, e.g. "image,description".
  std::string spec() const {
    std::string out;
    for (auto k : kAllKinds) {
      if (!uses(k)) continue;
      if (!out.empty()) out += ',';
      out += to_string(k);
    }
    return out;
  }

  /// Parses "all" or a comma-separated subset of {image, description, emotion}.
  static AblationConfig parse(std::string_view text) {
    if (text == "all") return {};
    AblationConfig c{false, false, false};
    std::size_t pos = 0;
    while (pos <= text.size()) {
      auto comma = text.find(',', pos);
      auto tok = detail::trim(text.substr(pos, comma == std::string_view::npos ? std::string_view::npos : comma - pos));
      if (tok == "image") c.use_image = true;
      else if (tok == "description") c.use_description = true;
      else if (tok == "emotion") c.use_emotion = true;
      else throw InvalidArgument("unknown channel \"" + tok + "\" (expected image, description, emotion or all)");
      if (comma == std::string_view::npos) break;
      pos = comma + 1;
    }
    c.validate();
    return c;
  }

  friend bool operator==(const AblationConfig&, const AblationConfig&) = default;
};

/// Per-channel vectors for one image; absent channels are empty optionals.
struct ChannelVectors {
  std::optional<std::vector<double>> image;
  std::optional<std::vector<double>> description;
  std::optional<std::vector<double>> emotion;

  const std::optional<std::vector<double>>& get(EmbeddingKind k) const {
    switch (k) {
      case EmbeddingKind::kImage: return image;
      case EmbeddingKind::kDescription: return description;
      case EmbeddingKind::kEmotion: return emotion;
    }
    return image;
  }
};

/// Concatenates the enabled channels in fixed order.
inline std::vector<double> fuse(const ChannelVectors& channels, const AblationConfig& config,
                                std::size_t dim = kDefaultDim) {
  config.validate();
  std::vector<double> out;
  out.reserve(config.input_dim(dim));
  for (auto k : kAllKinds) {
    if (!config.uses(k)) continue;
    const auto& v = channels.get(k);
    if (!v) throw MissingEmbeddingError({"<" + std::string(to_string(k)) + " channel>"});
    if (v->size() != dim) throw DimensionMismatch(dim, v->size(), std::string(to_string(k)) + " channel");
    out.insert(out.end(), v->begin(), v->end());
  }
  return out;
}

/// Optional per-channel L2 normalization applied before fusion.
struct FeatureOptions {
  bool normalize_image = false;
  bool normalize_description = false;
  bool normalize_emotion = false;

  bool normalizes(EmbeddingKind k) const noexcept {
    switch (k) {
      case EmbeddingKind::kImage: return normalize_image;
      case EmbeddingKind::kDescription: return normalize_description;
      case EmbeddingKind::kEmotion: return normalize_emotion;
    }
    return false;
  }

  friend bool operator==(const FeatureOptions&, const FeatureOptions&) = default;
};

// ---------------------------------------------------------------------------
// Parameters

struct LayerSizes {
  std::size_t input = kDefaultDim * 3;
  std::size_t hidden1 = 512;
  std::size_t hidden2 = 256;
};

struct MlpParams {
  Matrix w1, w2, w3;
  RowVector b1, b2, b3;

  MlpParams() = default;

  /// Zero-initialized parameters of the given shape.
  explicit MlpParams(const LayerSizes& s)
      : w1(Matrix::Zero(s.input, s.hidden1)),
        w2(Matrix::Zero(s.hidden1, s.hidden2)),
        w3(Matrix::Zero(s.hidden2, kNumClasses)),
        b1(RowVector::Zero(s.hidden1)),
        b2(RowVector::Zero(s.hidden2)),
        b3(RowVector::Zero(kNumClasses)) {}

  LayerSizes sizes() const {
    return {static_cast<std::size_t>(w1.rows()), static_cast<std::size_t>(w1.cols()),
            static_cast<std::size_t>(w2.cols())};
  }
  std::size_t input_dim() const noexcept { return static_cast<std::size_t>(w1.rows()); }

  /// Visits (name, tensor) pairs in a fixed order. Biases are 1-row matrices.
  template <typename Fn>
  void for_each(Fn&& fn) {
    fn("w1", w1);
    fn("b1", b1);
    fn("w2", w2);
    fn("b2", b2);
    fn("w3", w3);
    fn("b3", b3);
  }
  template <typename Fn>
  void for_each(Fn&& fn) const {
    fn("w1", w1);
    fn("b1", b1);
    fn("w2", w2);
    fn("b2", b2);
    fn("w3", w3);
    fn("b3", b3);
  }

  bool all_finite() const {
    bool ok = true;
    for_each([&](const char*, const auto& t) { ok = ok && t.allFinite(); });
    return ok;
  }

  void check_shapes() const {
    auto s = sizes();
    if (w2.rows() != static_cast<Eigen::Index>(s.hidden1) || w3.rows() != static_cast<Eigen::Index>(s.hidden2) ||
        w3.cols() != kNumClasses || b1.size() != w1.cols() || b2.size() != w2.cols() || b3.size() != kNumClasses)
      throw ShapeError("inconsistent MLP parameter shapes");
  }

  /// Exact element-wise equality, shapes included.
  friend bool operator==(const MlpParams& a, const MlpParams& b) {
    auto same = [](const auto& x, const auto& y) {
      return x.rows() == y.rows() && x.cols() == y.cols() && x == y;
    };
    return same(a.w1, b.w1) && same(a.w2, b.w2) && same(a.w3, b.w3) && same(a.b1, b.b1) && same(a.b2, b.b2) &&
           same(a.b3, b.b3);
  }
};

using Gradients = MlpParams;

namespace detail {

/// Deterministic generator with distribution code fixed here rather than
/// left to the standard library implementation.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  /// Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n) by rejection.
  std::uint64_t below(std::uint64_t n) {
    const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() - std::numeric_limits<std::uint64_t>::max() % n;
    std::uint64_t x;
    do x = engine_();
    while (x >= limit);
    return x % n;
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[below(i)]);
  }

  /// Standard normal via Box-Muller.
  double normal() {
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
  }

 private:
  std::mt19937_64 engine_;
};

}  // namespace detail

/// Uniform(-a, a) with a = sqrt(6 / (fan_in + fan_out)), zero biases.
inline MlpParams init_params(const LayerSizes& sizes, detail::Rng& rng) {
  MlpParams p(sizes);
  auto fill = [&](Matrix& w) {
    double a = std::sqrt(6.0 / static_cast<double>(w.rows() + w.cols()));
    for (Eigen::Index r = 0; r < w.rows(); ++r)
      for (Eigen::Index c = 0; c < w.cols(); ++c) w(r, c) = rng.uniform(-a, a);
  };
  fill(p.w1);
  fill(p.w2);
  fill(p.w3);
  return p;
}

inline MlpParams init_params(const LayerSizes& sizes, std::uint64_t seed) {
  detail::Rng rng(seed);
  return init_params(sizes, rng);
}

// ---------------------------------------------------------------------------
// Forward, loss, backward

struct ForwardCache {
  Matrix input;
  Matrix z1, h1, z2, h2;
  Matrix logits;
};

inline ForwardCache forward(const MlpParams& p, const Matrix& batch) {
  if (static_cast<std::size_t>(batch.cols()) != p.input_dim())
    throw ShapeError("batch width " + std::to_string(batch.cols()) + " does not match input dim " +
                     std::to_string(p.input_dim()));
  ForwardCache c;
  c.input = batch;
  c.z1 = (batch * p.w1).rowwise() + p.b1;
  c.h1 = c.z1.cwiseMax(0.0);
  c.z2 = (c.h1 * p.w2).rowwise() + p.b2;
  c.h2 = c.z2.cwiseMax(0.0);
  c.logits = (c.h2 * p.w3).rowwise() + p.b3;
  return c;
}

struct LossResult {
  double loss = 0.0;
  Matrix dlogits;
};

/// Mean softmax cross-entropy over the batch with max-shifted log-sum-exp.
/// dlogits = (softmax - onehot) / B.
inline LossResult cross_entropy(const Matrix& logits, std::span<const int> labels) {
  const auto b = logits.rows();
  if (b < 1) throw InvalidArgument("cross_entropy: empty batch");
  if (logits.cols() != kNumClasses) throw ShapeError("cross_entropy expects 2 logit columns");
  if (static_cast<std::size_t>(b) != labels.size()) throw ShapeError("cross_entropy: label count mismatch");
  LossResult r;
  r.dlogits.resize(b, kNumClasses);
  const double inv_b = 1.0 / static_cast<double>(b);
  double total = 0.0;
  for (Eigen::Index i = 0; i < b; ++i) {
    int y = labels[static_cast<std::size_t>(i)];
    if (y != 0 && y != 1) throw InvalidArgument("cross_entropy: invalid label " + std::to_string(y));
    double m = std::max(logits(i, 0), logits(i, 1));
    double lse = m + std::log(std::exp(logits(i, 0) - m) + std::exp(logits(i, 1) - m));
    total += lse - logits(i, y);
    for (int j = 0; j < kNumClasses; ++j) {
      double p = std::exp(logits(i, j) - lse);
      r.dlogits(i, j) = (p - (j == y ? 1.0 : 0.0)) * inv_b;
    }
  }
  r.loss = total * inv_b;
  return r;
}

/// Exact gradients of the loss behind `dlogits`. ReLU subgradient is 0 at 0.
inline Gradients backward(const MlpParams& p, const ForwardCache& c, const Matrix& dlogits) {
  if (dlogits.rows() != c.logits.rows() || dlogits.cols() != kNumClasses || c.z1.cols() != p.w1.cols() ||
      c.z2.cols() != p.w2.cols() || c.input.cols() != p.w1.rows())
    throw ShapeError("backward: caches do not match parameters");
  Gradients g;
  g.w3 = c.h2.transpose() * dlogits;
  g.b3 = dlogits.colwise().sum();
  Matrix dz2 = (dlogits * p.w3.transpose()).cwiseProduct((c.z2.array() > 0.0).cast<double>().matrix());
  g.w2 = c.h1.transpose() * dz2;
  g.b2 = dz2.colwise().sum();
  Matrix dz1 = (dz2 * p.w2.transpose()).cwiseProduct((c.z1.array() > 0.0).cast<double>().matrix());
  g.w1 = c.input.transpose() * dz1;
  g.b1 = dz1.colwise().sum();
  return g;
}

// ---------------------------------------------------------------------------
// Optimizers

enum class OptimizerKind { kAdam, kSgd };

inline std::string_view to_string(OptimizerKind k) { return k == OptimizerKind::kAdam ? "adam" : "sgd"; }

inline OptimizerKind optimizer_from_string(std::string_view s) {
  if (s == "adam") return OptimizerKind::kAdam;
  if (s == "sgd") return OptimizerKind::kSgd;
  throw InvalidArgument("unknown optimizer \"" + std::string(s) + "\"");
}

struct AdamConstants {
  static constexpr double kBeta1 = 0.9;
  static constexpr double kBeta2 = 0.999;
  static constexpr double kEpsilon = 1e-8;
};

struct OptimizerState {
  MlpParams m;
  MlpParams v;
  std::int64_t step = 0;
};

inline OptimizerState make_optimizer_state(const MlpParams& p) {
  return {MlpParams(p.sizes()), MlpParams(p.sizes()), 0};
}

namespace detail {

template <typename T>
void adam_update(T& param, const T& grad, T& m, T& v, double lr, double bc1, double bc2) {
  using A = AdamConstants;
  m = A::kBeta1 * m + (1.0 - A::kBeta1) * grad;
  v = A::kBeta2 * v + (1.0 - A::kBeta2) * grad.cwiseProduct(grad);
  auto m_hat = m.array() / bc1;
  auto v_hat = v.array() / bc2;
  param.array() -= lr * m_hat / (v_hat.sqrt() + A::kEpsilon);
}

}  // namespace detail

/// One update. Adam uses beta1 0.9, beta2 0.999, eps 1e-8 with bias
/// correction; SGD is p -= lr * g.
inline void optimizer_step(MlpParams& params, const Gradients& grads, OptimizerState& state, OptimizerKind kind,
                           double learning_rate) {
  if (grads.w1.rows() != params.w1.rows() || grads.w1.cols() != params.w1.cols() || grads.w2.size() != params.w2.size() ||
      grads.w3.size() != params.w3.size() || grads.b1.size() != params.b1.size() ||
      grads.b2.size() != params.b2.size() || grads.b3.size() != params.b3.size())
    throw ShapeError("optimizer_step: gradient shapes do not match parameters");
  if (!grads.all_finite()) throw InvalidArgument("optimizer_step: non-finite gradient");
  if (kind == OptimizerKind::kSgd) {
    params.w1 -= learning_rate * grads.w1;
    params.b1 -= learning_rate * grads.b1;
    params.w2 -= learning_rate * grads.w2;
    params.b2 -= learning_rate * grads.b2;
    params.w3 -= learning_rate * grads.w3;
    params.b3 -= learning_rate * grads.b3;
    return;
  }
  ++state.step;
  const double bc1 = 1.0 - std::pow(AdamConstants::kBeta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(AdamConstants::kBeta2, static_cast<double>(state.step));
  detail::adam_update(params.w1, grads.w1, state.m.w1, state.v.w1, learning_rate, bc1, bc2);
  detail::adam_update(params.b1, grads.b1, state.m.b1, state.v.b1, learning_rate, bc1, bc2);
  detail::adam_update(params.w2, grads.w2, state.m.w2, state.v.w2, learning_rate, bc1, bc2);
  detail::adam_update(params.b2, grads.b2, state.m.b2, state.v.b2, learning_rate, bc1, bc2);
  detail::adam_update(params.w3, grads.w3, state.m.w3, state.v.w3, learning_rate, bc1, bc2);
  detail::adam_update(params.b3, grads.b3, state.m.b3, state.v.b3, learning_rate, bc1, bc2);
}

// ---------------------------------------------------------------------------
// Prediction

/// Per-row argmax; an exact tie goes to label 0.
inline std::vector<int> argmax_labels(const Matrix& logits) {
  std::vector<int> out(static_cast<std::size_t>(logits.rows()));
  for (Eigen::Index i = 0; i < logits.rows(); ++i) out[static_cast<std::size_t>(i)] = logits(i, 1) > logits(i, 0) ? 1 : 0;
  return out;
}

inline std::vector<int> predict(const MlpParams& params, const Matrix& features) {
  return argmax_labels(forward(params, features).logits);
}

/// Softmax probabilities, one row per sample.
inline Matrix predict_proba(const MlpParams& params, const Matrix& features) {
  Matrix logits = forward(params, features).logits;
  Matrix out(logits.rows(), kNumClasses);
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    double m = logits.row(i).maxCoeff();
    double e0 = std::exp(logits(i, 0) - m), e1 = std::exp(logits(i, 1) - m);
    out(i, 0) = e0 / (e0 + e1);
    out(i, 1) = e1 / (e0 + e1);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Training

struct TrainConfig {
  int epochs = 500;
  double learning_rate = 0.001;
  std::size_t batch_size = 32;
  std::uint64_t seed = 0;
  OptimizerKind optimizer = OptimizerKind::kAdam;
  std::size_t hidden1 = 512;
  std::size_t hidden2 = 256;

  void validate() const {
    if (epochs <= 0) throw InvalidArgument("epochs must be > 0");
    if (!(learning_rate > 0.0)) throw InvalidArgument("learning_rate must be > 0");
    if (batch_size < 1) throw InvalidArgument("batch_size must be >= 1");
    if (hidden1 < 1 || hidden2 < 1) throw InvalidArgument("hidden layer sizes must be >= 1");
  }

  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

struct TrainResult {
  MlpParams params;                  // final epoch
  std::vector<double> test_accuracy;  // percent, one per epoch
  std::vector<double> train_loss;     // mean minibatch loss per epoch
  double max_test_accuracy = 0.0;
  int best_epoch = 0;  // 1-based, first epoch attaining the max
};

/// Trains from scratch. All randomness (initialization, then per-epoch
/// shuffles) comes from one generator seeded with config.seed. Test accuracy
/// is evaluated after every epoch and its running maximum recorded.
inline TrainResult train(const Matrix& features, std::span<const int> labels, const Matrix& test_features,
                         std::span<const int> test_labels, const TrainConfig& config) {
  config.validate();
  const auto n = static_cast<std::size_t>(features.rows());
  if (n == 0) throw InvalidArgument("train: no training samples");
  if (labels.size() != n) throw ShapeError("train: feature rows and labels differ");
  if (test_features.rows() == 0) throw InvalidArgument("train: no test samples");
  if (static_cast<std::size_t>(test_features.rows()) != test_labels.size())
    throw ShapeError("train: test feature rows and labels differ");
  if (test_features.cols() != features.cols()) throw ShapeError("train: train/test widths differ");
  for (int y : labels)
    if (y != 0 && y != 1) throw InvalidArgument("train: invalid label " + std::to_string(y));

  detail::Rng rng(config.seed);
  LayerSizes sizes{static_cast<std::size_t>(features.cols()), config.hidden1, config.hidden2};
  TrainResult result;
  result.params = init_params(sizes, rng);
  auto state = make_optimizer_state(result.params);

  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  Matrix batch;
  std::vector<int> batch_labels;

  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    rng.shuffle(order);
    double loss_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < n; start += config.batch_size) {
      const std::size_t bs = std::min(config.batch_size, n - start);
      batch.resize(static_cast<Eigen::Index>(bs), features.cols());
      batch_labels.resize(bs);
      for (std::size_t r = 0; r < bs; ++r) {
        batch.row(static_cast<Eigen::Index>(r)) = features.row(static_cast<Eigen::Index>(order[start + r]));
        batch_labels[r] = labels[order[start + r]];
      }
      auto cache = forward(result.params, batch);
      auto loss = cross_entropy(cache.logits, batch_labels);
      if (!std::isfinite(loss.loss)) throw DivergedError(epoch, "non-finite loss");
      auto grads = backward(result.params, cache, loss.dlogits);
      if (!grads.all_finite()) throw DivergedError(epoch, "non-finite gradient");
      optimizer_step(result.params, grads, state, config.optimizer, config.learning_rate);
      loss_sum += loss.loss;
      ++batches;
    }
    result.train_loss.push_back(loss_sum / static_cast<double>(batches));
    double acc = accuracy(predict(result.params, test_features), test_labels);
    result.test_accuracy.push_back(acc);
    if (epoch == 1 || acc > result.max_test_accuracy) {
      result.max_test_accuracy = acc;
      result.best_epoch = epoch;
    }
  }
  return result;
}

}  // namespace emofuse
