// emofuse: command-line entry point for every pipeline stage.
//
//   emofuse generate  prompt the LMM for all manifest images (both prompts)
//   emofuse embed     build image/description/emotion embeddings
//   emofuse train     train one channel configuration, write a checkpoint
//   emofuse ablate    all seven configurations x N runs, write the report
//   emofuse classify  classify one image end to end
//   emofuse report    re-emit the table from a JSON Lines report
//   emofuse serve     HTTP endpoint POST /v1/classify
//
// Every option falls back to an EMOFUSE_* environment variable.

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <memory>
#include <string>

#include <CLI11.hpp>

#include "emofuse.hpp"

namespace {

using namespace emofuse;

struct Options {
  // pipeline
  std::string manifest;
  std::string store;
  std::string fixtures;
  bool offline = false;
  std::string adapter_url = "http://127.0.0.1:8000";
  std::uint32_t dim = kDefaultDim;
  std::size_t in_flight = 4;
  std::string responses = "responses.jsonl";
  bool retry_short = false;
  int max_new_tokens = 512;
  double temperature = 0.0;
  std::int64_t decode_seed = 0;
  int retries = 3;

  // training
  std::string config = "all";
  int epochs = 500;
  double lr = 0.001;
  std::size_t batch_size = 32;
  std::string optimizer = "adam";
  std::uint64_t seed = 0;
  int runs = kDefaultRuns;
  std::size_t parallel_runs = 1;
  std::string normalize;
  std::string checkpoint = "model.ckpt";
  std::string out = "ablation_report.md";
  std::string report_json = "ablation_report.jsonl";

  // classify / serve
  std::string image;
  std::string image_id;
  bool json = false;
  std::string host = "127.0.0.1";
  int port = 8080;
};

PipelineConfig pipeline_config(const Options& o) {
  PipelineConfig c;
  c.adapter_base_url = o.adapter_url;
  c.offline = o.offline;
  c.fixture_path = o.fixtures;
  c.store_path = o.store;
  c.manifest_path = o.manifest;
  c.encoder_dim = o.dim;
  c.in_flight_limit = o.in_flight;
  c.retry.max_attempts = o.retries;
  return c;
}

ElicitOptions elicit_options(const Options& o) {
  ElicitOptions e;
  e.decode.max_new_tokens = o.max_new_tokens;
  e.decode.temperature = o.temperature;
  e.decode.seed = o.decode_seed;
  e.retry_short = o.retry_short;
  return e;
}

TrainConfig train_config(const Options& o) {
  TrainConfig t;
  t.epochs = o.epochs;
  t.learning_rate = o.lr;
  t.batch_size = o.batch_size;
  t.optimizer = optimizer_from_string(o.optimizer);
  t.seed = o.seed;
  t.validate();
  return t;
}

FeatureOptions feature_options(const Options& o) {
  FeatureOptions f;
  if (o.normalize.empty() || o.normalize == "none") return f;
  auto c = AblationConfig::parse(o.normalize);
  f.normalize_image = c.use_image;
  f.normalize_description = c.use_description;
  f.normalize_emotion = c.use_emotion;
  return f;
}

void require(const std::string& value, const char* flag) {
  if (value.empty()) throw InvalidArgument(std::string(flag) + " is required");
}

void print_warnings(const std::vector<std::string>& warnings) {
  for (const auto& w : warnings) std::cerr << "warning: " << w << '\n';
}

int cmd_generate(const Options& o) {
  require(o.manifest, "--manifest");
  auto manifest = load_manifest(o.manifest);
  auto client = make_client(pipeline_config(o));
  auto responses = load_responses(o.responses);
  auto summary = generate_all(manifest, *client, responses, o.responses, elicit_options(o), o.in_flight);
  print_warnings(summary.warnings);
  std::cout << "generated " << summary.generated << ", already present " << summary.skipped << ", responses in "
            << o.responses << '\n';
  return 0;
}

int cmd_embed(const Options& o) {
  require(o.manifest, "--manifest");
  require(o.store, "--store");
  auto manifest = load_manifest(o.manifest);
  auto client = make_client(pipeline_config(o));
  auto responses = load_responses(o.responses);
  EmbeddingStore store(o.store, o.dim);
  BuildOptions opts;
  opts.dim = o.dim;
  opts.in_flight = o.in_flight;
  opts.elicit = elicit_options(o);
  auto summary = build_channel_embeddings(manifest, responses, *client, store, opts);
  print_warnings(summary.warnings);
  std::cout << "wrote " << summary.written << " vectors, " << summary.skipped_images << " image(s) already complete, "
            << store.size() << " entries in " << o.store << '\n';
  return 0;
}

int cmd_train(const Options& o) {
  require(o.manifest, "--manifest");
  require(o.store, "--store");
  auto manifest = load_manifest(o.manifest);
  manifest.require_trainable();
  EmbeddingStore store(o.store);
  auto config = AblationConfig::parse(o.config);
  auto tc = train_config(o);
  auto fo = feature_options(o);
  auto train_records = split_view(manifest, Split::kTrain);
  auto test_records = split_view(manifest, Split::kTest);
  auto train_set = build_features(store, train_records, config, fo);
  auto test_set = build_features(store, test_records, config, fo);
  auto result = train(train_set.features, train_set.labels, test_set.features, test_set.labels, tc);

  Checkpoint ckpt{result.params, config, tc, fo, store.dim(), result.best_epoch, result.max_test_accuracy};
  save_checkpoint(ckpt, o.checkpoint);
  std::cout << config.name() << ": max test accuracy " << detail::fixed3(result.max_test_accuracy) << "% at epoch "
            << result.best_epoch << " of " << tc.epochs << "; final-epoch checkpoint written to " << o.checkpoint
            << '\n';
  return 0;
}

int cmd_ablate(const Options& o) {
  require(o.manifest, "--manifest");
  require(o.store, "--store");
  auto manifest = load_manifest(o.manifest);
  EmbeddingStore store(o.store);
  ExperimentOptions eo;
  eo.n_runs = o.runs;
  eo.base_seed = o.seed;
  eo.features = feature_options(o);
  eo.parallel_runs = o.parallel_runs;
  auto reports = run_ablation(store, manifest, train_config(o), eo);

  std::ofstream table(o.out, std::ios::trunc);
  if (!table) throw Error("cannot write " + o.out);
  std::ofstream json(o.report_json, std::ios::trunc);
  if (!json) throw Error("cannot write " + o.report_json);
  auto text = aggregate_and_emit(reports, &table, &json);
  std::cout << text << "\nreport written to " << o.out << " and " << o.report_json << '\n';
  return 0;
}

int cmd_report(const Options& o) {
  std::ifstream in(o.report_json);
  if (!in) throw Error("cannot read " + o.report_json);
  auto reports = parse_reports(in);
  if (o.out.empty() || o.out == "-") {
    aggregate_and_emit(reports, &std::cout, nullptr);
  } else {
    std::ofstream table(o.out, std::ios::trunc);
    if (!table) throw Error("cannot write " + o.out);
    std::cout << aggregate_and_emit(reports, &table, nullptr);
  }
  return 0;
}

int cmd_classify(const Options& o) {
  if (o.image.empty() == o.image_id.empty()) throw InvalidArgument("exactly one of --image or --image-id is required");
  auto ckpt = load_checkpoint(o.checkpoint);
  std::string id, bytes;
  if (!o.image.empty()) {
    id = o.image;
    bytes = detail::read_file_bytes(o.image);
  } else {
    require(o.manifest, "--manifest");
    auto manifest = load_manifest(o.manifest);
    const auto* rec = manifest.find(o.image_id);
    if (!rec) throw InvalidArgument("unknown image id \"" + o.image_id + "\"");
    id = rec->id;
    bytes = detail::read_file_bytes(manifest.resolve_image_path(*rec).string());
  }
  ClassifyPipeline pipeline(std::move(ckpt), make_client(pipeline_config(o)), elicit_options(o));
  auto result = pipeline.classify(id, bytes);
  print_warnings(result.warnings);
  if (o.json) {
    std::cout << to_json(result).dump(2) << '\n';
    return 0;
  }
  std::cout << "label: " << label_name(static_cast<Label>(result.label)) << '\n';
  std::cout << "probability: " << detail::fixed3(result.probability) << '\n';
  std::cout << "descriptions:\n";
  for (std::size_t i = 0; i < result.descriptions.size(); ++i)
    std::cout << "  " << i + 1 << ". " << result.descriptions[i] << '\n';
  std::cout << "emotions:\n";
  for (std::size_t i = 0; i < result.emotions.size(); ++i)
    std::cout << "  " << i + 1 << ". " << result.emotions[i] << '\n';
  return 0;
}

int cmd_serve(const Options& o) {
  auto pipeline = std::make_shared<const ClassifyPipeline>(load_checkpoint(o.checkpoint),
                                                           make_client(pipeline_config(o)), elicit_options(o));
  std::shared_ptr<const DatasetManifest> manifest;
  if (!o.manifest.empty()) manifest = std::make_shared<const DatasetManifest>(load_manifest(o.manifest));
  httplib::Server server;
  mount_classify_routes(server, pipeline, manifest);
  std::cerr << "listening on " << o.host << ':' << o.port << '\n';
  if (!server.listen(o.host, o.port)) throw Error("cannot listen on " + o.host + ":" + std::to_string(o.port));
  return 0;
}

void add_pipeline_options(CLI::App* cmd, Options& o) {
  cmd->add_option("--manifest", o.manifest, "Dataset manifest (JSON Lines)")->envname("EMOFUSE_MANIFEST");
  cmd->add_option("--fixtures", o.fixtures, "Fixture store (JSON Lines); replayed, and recorded when online")
      ->envname("EMOFUSE_FIXTURES");
  cmd->add_flag("--offline", o.offline, "Serve adapter calls from fixtures only")->envname("EMOFUSE_OFFLINE");
  cmd->add_option("--adapter-url", o.adapter_url, "Model adapter base URL")
      ->envname("EMOFUSE_ADAPTER_URL")
      ->capture_default_str();
  cmd->add_option("--dim", o.dim, "Embedding dimension")->envname("EMOFUSE_DIM")->capture_default_str();
  cmd->add_option("--in-flight", o.in_flight, "Concurrent adapter requests")
      ->envname("EMOFUSE_IN_FLIGHT")
      ->capture_default_str();
  cmd->add_option("--responses", o.responses, "Parsed LMM responses (JSON Lines)")
      ->envname("EMOFUSE_RESPONSES")
      ->capture_default_str();
  cmd->add_flag("--retry-short", o.retry_short, "Re-prompt once when a reply has fewer than 10 items")
      ->envname("EMOFUSE_RETRY_SHORT");
  cmd->add_option("--max-new-tokens", o.max_new_tokens)->envname("EMOFUSE_MAX_NEW_TOKENS")->capture_default_str();
  cmd->add_option("--temperature", o.temperature)->envname("EMOFUSE_TEMPERATURE")->capture_default_str();
  cmd->add_option("--decode-seed", o.decode_seed)->envname("EMOFUSE_DECODE_SEED")->capture_default_str();
  cmd->add_option("--retries", o.retries, "Attempts per adapter request")->envname("EMOFUSE_RETRIES")->capture_default_str();
}

void add_training_options(CLI::App* cmd, Options& o) {
  cmd->add_option("--store", o.store, "Embedding store file")->envname("EMOFUSE_STORE");
  cmd->add_option("--epochs", o.epochs)->envname("EMOFUSE_EPOCHS")->capture_default_str();
  cmd->add_option("--lr", o.lr, "Learning rate")->envname("EMOFUSE_LR")->capture_default_str();
  cmd->add_option("--batch-size", o.batch_size)->envname("EMOFUSE_BATCH_SIZE")->capture_default_str();
  cmd->add_option("--optimizer", o.optimizer)
      ->envname("EMOFUSE_OPTIMIZER")
      ->check(CLI::IsMember({"adam", "sgd"}))
      ->capture_default_str();
  cmd->add_option("--seed", o.seed, "Training seed (base seed for repeated runs)")
      ->envname("EMOFUSE_SEED")
      ->capture_default_str();
  cmd->add_option("--normalize", o.normalize, "Channels to L2-normalize, e.g. image,emotion")
      ->envname("EMOFUSE_NORMALIZE");
}

}  // namespace

int main(int argc, char** argv) {
  Options o;
  CLI::App app{"Disturbing-image detection from LMM-elicited descriptions, emotions and image embeddings", "emofuse"};
  app.require_subcommand(1);

  auto* generate = app.add_subcommand("generate", "Prompt the LMM for every manifest image");
  add_pipeline_options(generate, o);

  auto* embed = app.add_subcommand("embed", "Build channel embeddings into the store");
  add_pipeline_options(embed, o);
  embed->add_option("--store", o.store, "Embedding store file")->envname("EMOFUSE_STORE");

  auto* train_cmd = app.add_subcommand("train", "Train one channel configuration");
  train_cmd->add_option("--manifest", o.manifest)->envname("EMOFUSE_MANIFEST");
  add_training_options(train_cmd, o);
  train_cmd->add_option("--config", o.config, "Channels: all or a subset of image,description,emotion")
      ->envname("EMOFUSE_CONFIG")
      ->capture_default_str();
  train_cmd->add_option("--checkpoint", o.checkpoint)->envname("EMOFUSE_CHECKPOINT")->capture_default_str();

  auto* ablate = app.add_subcommand("ablate", "Run all seven channel configurations");
  ablate->add_option("--manifest", o.manifest)->envname("EMOFUSE_MANIFEST");
  add_training_options(ablate, o);
  ablate->add_option("--runs", o.runs)->envname("EMOFUSE_RUNS")->check(CLI::PositiveNumber)->capture_default_str();
  ablate->add_option("--parallel-runs", o.parallel_runs)->envname("EMOFUSE_PARALLEL_RUNS")->capture_default_str();
  ablate->add_option("--out", o.out, "Markdown report")->envname("EMOFUSE_OUT")->capture_default_str();
  ablate->add_option("--report-json", o.report_json, "JSON Lines report")
      ->envname("EMOFUSE_REPORT_JSON")
      ->capture_default_str();

  auto* classify = app.add_subcommand("classify", "Classify one image end to end");
  add_pipeline_options(classify, o);
  classify->add_option("--checkpoint", o.checkpoint)->envname("EMOFUSE_CHECKPOINT")->capture_default_str();
  classify->add_option("--image", o.image, "Image file");
  classify->add_option("--image-id", o.image_id, "Manifest id of the image");
  classify->add_flag("--json", o.json, "Print the endpoint's JSON response");

  auto* report = app.add_subcommand("report", "Re-emit the table from a JSON Lines report");
  report->add_option("--report-json", o.report_json)->envname("EMOFUSE_REPORT_JSON")->capture_default_str();
  report->add_option("--out", o.out, "Markdown output ('-' for stdout only)")->envname("EMOFUSE_OUT");

  auto* serve = app.add_subcommand("serve", "Serve POST /v1/classify");
  add_pipeline_options(serve, o);
  serve->add_option("--checkpoint", o.checkpoint)->envname("EMOFUSE_CHECKPOINT")->capture_default_str();
  serve->add_option("--host", o.host)->envname("EMOFUSE_HOST")->capture_default_str();
  serve->add_option("--port", o.port)->envname("EMOFUSE_PORT")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n\n" << app.help();
    return 2;
  }

  try {
    if (generate->parsed()) return cmd_generate(o);
    if (embed->parsed()) return cmd_embed(o);
    if (train_cmd->parsed()) return cmd_train(o);
    if (ablate->parsed()) return cmd_ablate(o);
    if (classify->parsed()) return cmd_classify(o);
    if (report->parsed()) return cmd_report(o);
    if (serve->parsed()) return cmd_serve(o);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  std::cerr << app.help();
  return 2;
}
