#pragma once

// Evaluation protocol: seven channel subsets, repeated seeded runs scored by
// their best test accuracy over epochs, aggregated as mean and sample
// standard deviation, and emitted as a markdown table plus a JSON Lines copy.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <istream>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "emofuse/classifier.hpp"
#include "emofuse/detail/parallel.hpp"
#include "emofuse/domain.hpp"
#include "emofuse/embedding.hpp"
#include "emofuse/embedding_store.hpp"
#include "emofuse/metrics.hpp"

namespace emofuse {

inline constexpr int kDefaultRuns = 5;

/// The seven non-empty channel subsets, in ablation-table row order.
inline std::vector<AblationConfig> enumerate_ablation_configs() {
  return {
      {true, false, false},   // image
      {false, false, true},   // emotion
      {false, true, false},   // description
      {true, false, true},    // image + emotion
      {true, true, false},    // image + description
      {false, true, true},    // emotion + description
      {true, true, true},     // all three
  };
}

struct PublishedResult {
  double mean;
  double std;
};

/// Published DID-Aug accuracies (%) for each ablation row. Reference values
/// only; nothing here is reproduced by this code.
inline std::optional<PublishedResult> published_reference(const AblationConfig& c) {
  const AblationConfig rows[] = {{true, false, false}, {false, false, true}, {false, true, false}, {true, false, true},
                                 {true, true, false},  {false, true, true},  {true, true, true}};
  const PublishedResult values[] = {{94.444, 0.131}, {91.092, 0.108}, {92.592, 0.058}, {95.462, 0.101},
                                    {96.222, 0.107}, {95.185, 0.261}, {96.907, 0.125}};
  for (std::size_t i = 0; i < 7; ++i)
    if (rows[i] == c) return values[i];
  return std::nullopt;
}

// ---------------------------------------------------------------------------
// Features

struct FeatureSet {
  Matrix features;
  std::vector<int> labels;
  std::vector<std::string> ids;
};

/// Reads the enabled channels of every record from the store and fuses them.
/// All missing (id, channel) pairs are reported together.
inline FeatureSet build_features(const EmbeddingStore& store, std::span<const ImageRecord> records,
                                 const AblationConfig& config, const FeatureOptions& options = {}) {
  config.validate();
  const std::size_t dim = store.dim();
  FeatureSet fs;
  fs.features.resize(static_cast<Eigen::Index>(records.size()), static_cast<Eigen::Index>(config.input_dim(dim)));
  std::vector<std::string> missing;
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& rec = records[i];
    ChannelVectors ch;
    bool complete = true;
    for (auto k : kAllKinds) {
      if (!config.uses(k)) continue;
      if (!store.contains(rec.id, k)) {
        missing.push_back(rec.id + "/" + std::string(to_string(k)));
        complete = false;
        continue;
      }
      auto v = store.get(rec.id, k);
      std::vector<double> values(v.values.begin(), v.values.end());
      if (options.normalizes(k)) l2_normalize(values);
      switch (k) {
        case EmbeddingKind::kImage: ch.image = std::move(values); break;
        case EmbeddingKind::kDescription: ch.description = std::move(values); break;
        case EmbeddingKind::kEmotion: ch.emotion = std::move(values); break;
      }
    }
    if (!complete) continue;
    auto fused = fuse(ch, config, dim);
    for (std::size_t j = 0; j < fused.size(); ++j)
      fs.features(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = fused[j];
    fs.labels.push_back(static_cast<int>(rec.label));
    fs.ids.push_back(rec.id);
  }
  if (!missing.empty()) throw MissingEmbeddingError(std::move(missing));
  return fs;
}

// ---------------------------------------------------------------------------
// Reports

struct RunResult {
  std::uint64_t seed = 0;
  double max_test_accuracy = 0.0;  // percent
  int best_epoch = 0;

  friend bool operator==(const RunResult&, const RunResult&) = default;
};

inline double mean_of(std::span<const double> xs) {
  if (xs.empty()) return 0.0;
  double s = 0.0;
  for (double x : xs) s += x;
  return s / static_cast<double>(xs.size());
}

/// Sample standard deviation (n - 1 denominator); 0 for fewer than two values.
inline double sample_std(std::span<const double> xs) {
  if (xs.size() < 2) return 0.0;
  double m = mean_of(xs);
  double ss = 0.0;
  for (double x : xs) ss += (x - m) * (x - m);
  return std::sqrt(ss / static_cast<double>(xs.size() - 1));
}

/// Aggregated runs of one channel configuration. Mean and std are always
/// recomputed from `runs`.
struct TrainReport {
  std::string config_name;
  std::vector<RunResult> runs;

  std::vector<double> accuracies() const {
    std::vector<double> out;
    out.reserve(runs.size());
    for (const auto& r : runs) out.push_back(r.max_test_accuracy);
    return out;
  }
  double mean() const { return mean_of(accuracies()); }
  double std() const { return sample_std(accuracies()); }

  friend bool operator==(const TrainReport&, const TrainReport&) = default;
};

struct ExperimentOptions {
  int n_runs = kDefaultRuns;
  std::uint64_t base_seed = 0;
  FeatureOptions features;
  /// Runs trained concurrently; each run stays single-threaded.
  std::size_t parallel_runs = 1;
};

/// Trains `n_runs` models with seeds base_seed .. base_seed + n_runs - 1 on
/// pre-built features.
inline TrainReport run_experiment(const FeatureSet& train_set, const FeatureSet& test_set, const AblationConfig& config,
                                  const TrainConfig& train_config, const ExperimentOptions& options = {}) {
  if (options.n_runs < 1) throw InvalidArgument("n_runs must be >= 1");
  TrainReport report;
  report.config_name = config.name();
  report.runs.resize(static_cast<std::size_t>(options.n_runs));
  detail::bounded_parallel_for(report.runs.size(), options.parallel_runs, [&](std::size_t i) {
    auto tc = train_config;
    tc.seed = options.base_seed + i;
    auto result = train(train_set.features, train_set.labels, test_set.features, test_set.labels, tc);
    report.runs[i] = RunResult{tc.seed, result.max_test_accuracy, result.best_epoch};
  });
  return report;
}

inline TrainReport run_experiment(const EmbeddingStore& store, const DatasetManifest& manifest,
                                  const AblationConfig& config, const TrainConfig& train_config,
                                  const ExperimentOptions& options = {}) {
  manifest.require_trainable();
  auto train_records = split_view(manifest, Split::kTrain);
  auto test_records = split_view(manifest, Split::kTest);
  auto train_set = build_features(store, train_records, config, options.features);
  auto test_set = build_features(store, test_records, config, options.features);
  return run_experiment(train_set, test_set, config, train_config, options);
}

namespace detail {

inline std::string fixed3(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.3f", v);
  return buf;
}

inline std::size_t table_rank(const std::string& name) {
  auto configs = enumerate_ablation_configs();
  for (std::size_t i = 0; i < configs.size(); ++i)
    if (configs[i].name() == name) return i;
  return configs.size();
}

inline std::optional<AblationConfig> config_by_name(const std::string& name) {
  for (const auto& c : enumerate_ablation_configs())
    if (c.name() == name) return c;
  return std::nullopt;
}

}  // namespace detail

/// Reports sorted into ablation-table row order (unknown names last, stable).
inline std::vector<TrainReport> in_table_order(std::vector<TrainReport> reports) {
  std::stable_sort(reports.begin(), reports.end(), [](const TrainReport& a, const TrainReport& b) {
    return detail::table_rank(a.config_name) < detail::table_rank(b.config_name);
  });
  return reports;
}

inline nlohmann::json to_json(const TrainReport& r) {
  nlohmann::json runs = nlohmann::json::array();
  for (const auto& run : r.runs)
    runs.push_back({{"seed", run.seed}, {"max_test_accuracy", run.max_test_accuracy}, {"best_epoch", run.best_epoch}});
  return {{"config", r.config_name}, {"runs", runs}, {"mean", r.mean()}, {"std", r.std()}};
}

/// Parses one machine-copy line. Stored mean/std must equal the values
/// recomputed from the runs.
inline TrainReport report_from_json(const nlohmann::json& j) {
  TrainReport r;
  r.config_name = j.at("config").get<std::string>();
  for (const auto& run : j.at("runs"))
    r.runs.push_back(RunResult{run.at("seed").get<std::uint64_t>(), run.at("max_test_accuracy").get<double>(),
                               run.at("best_epoch").get<int>()});
  for (const auto& run : r.runs)
    if (run.max_test_accuracy < 0.0 || run.max_test_accuracy > 100.0)
      throw Error("report \"" + r.config_name + "\": accuracy out of range");
  if (j.contains("mean") && j["mean"].get<double>() != r.mean())
    throw Error("report \"" + r.config_name + "\": stored mean disagrees with runs");
  if (j.contains("std") && j["std"].get<double>() != r.std())
    throw Error("report \"" + r.config_name + "\": stored std disagrees with runs");
  return r;
}

inline std::vector<TrainReport> parse_reports(std::istream& in) {
  std::vector<TrainReport> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (detail::trim(line).empty()) continue;
    try {
      out.push_back(report_from_json(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::exception& e) {
      throw Error("report line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

/// Markdown table: one row per configuration with mean ± std to three
/// decimals, the best mean in bold, and the published figure alongside.
inline std::string render_table(const std::vector<TrainReport>& reports) {
  auto rows = in_table_order(reports);
  std::size_t best = 0;
  for (std::size_t i = 1; i < rows.size(); ++i)
    if (rows[i].mean() > rows[best].mean()) best = i;

  std::ostringstream out;
  out << "Test accuracy (%) - ablation study\n\n";
  out << "| Method | Test accuracy (%) | Runs | Published (not reproduced) |\n";
  out << "|---|---|---|---|\n";
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& r = rows[i];
    std::string cell = detail::fixed3(r.mean()) + " ± " + detail::fixed3(r.std());
    std::string name = r.config_name;
    if (i == best) {
      cell = "**" + cell + "**";
      name = "**" + name + "**";
    }
    std::string published = "-";
    if (auto cfg = detail::config_by_name(r.config_name))
      if (auto ref = published_reference(*cfg)) published = detail::fixed3(ref->mean) + " ± " + detail::fixed3(ref->std);
    out << "| " << name << " | " << cell << " | " << r.runs.size() << " | " << published << " |\n";
  }
  return out.str();
}

/// Writes the table to `table_sink` and the JSON Lines copy to `json_sink`
/// (either may be null). Returns the table text.
inline std::string aggregate_and_emit(const std::vector<TrainReport>& reports, std::ostream* table_sink,
                                      std::ostream* json_sink) {
  if (reports.empty()) throw InvalidArgument("aggregate_and_emit: no reports");
  auto table = render_table(reports);
  if (table_sink) {
    *table_sink << table;
    table_sink->flush();
    if (!*table_sink) throw Error("failed writing report table");
  }
  if (json_sink) {
    for (const auto& r : in_table_order(reports)) *json_sink << to_json(r).dump() << '\n';
    json_sink->flush();
    if (!*json_sink) throw Error("failed writing report JSON Lines");
  }
  return table;
}

/// Runs all seven configurations.
inline std::vector<TrainReport> run_ablation(const EmbeddingStore& store, const DatasetManifest& manifest,
                                             const TrainConfig& train_config, const ExperimentOptions& options = {}) {
  std::vector<TrainReport> out;
  for (const auto& c : enumerate_ablation_configs())
    out.push_back(run_experiment(store, manifest, c, train_config, options));
  return out;
}

}  // namespace emofuse
