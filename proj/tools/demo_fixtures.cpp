// Writes a small synthetic corpus (images, manifest, adapter fixtures) so the
// whole pipeline can be exercised offline:
//
//   emofuse_demo_fixtures --out demo --train 16 --test 4
//   emofuse generate --manifest demo/manifest.jsonl --fixtures demo/fixtures.jsonl --offline ...

#include <iostream>

#include <CLI11.hpp>

#include "emofuse/testing/synthetic_adapter.hpp"

int main(int argc, char** argv) {
  std::string out = "demo";
  std::size_t n_train = 16, n_test = 4;
  emofuse::testing::SyntheticAdapterOptions options;
  CLI::App app{"Write a synthetic offline corpus", "emofuse_demo_fixtures"};
  app.add_option("--out", out, "Output directory")->capture_default_str();
  app.add_option("--train", n_train)->capture_default_str();
  app.add_option("--test", n_test)->capture_default_str();
  app.add_option("--dim", options.dim)->check(CLI::PositiveNumber)->capture_default_str();
  CLI11_PARSE(app, argc, argv);

  try {
    auto corpus = emofuse::testing::write_fixture_corpus(out, n_train, n_test, options);
    std::cout << "manifest: " << corpus.manifest.string() << "\nfixtures: " << corpus.fixtures.string() << '\n';
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
