#include <sstream>

#include <gtest/gtest.h>

#include "emofuse/domain.hpp"
#include "emofuse/error.hpp"
#include "support/temp_dir.hpp"

using namespace emofuse;

namespace {

std::string line(const std::string& id, const std::string& split, int label) {
  return R"({"id":")" + id + R"(","image_ref":")" + id + R"(.jpg","label":)" + std::to_string(label) +
         R"(,"split":")" + split + "\"}\n";
}

DatasetManifest parse(const std::string& text) {
  std::istringstream in(text);
  return parse_manifest(in);
}

// 30,106 train rows (8,070 positive) and 1,080 test rows (405 positive).
DatasetManifest did_aug_shaped() {
  std::vector<ImageRecord> records;
  records.reserve(30106 + 1080);
  for (int i = 0; i < 30106; ++i)
    records.push_back({"tr" + std::to_string(i), "x.jpg", i < 8070 ? Label::kDisturbing : Label::kNonDisturbing,
                       Split::kTrain});
  for (int i = 0; i < 1080; ++i)
    records.push_back({"te" + std::to_string(i), "x.jpg", i < 405 ? Label::kDisturbing : Label::kNonDisturbing,
                       Split::kTest});
  return DatasetManifest(std::move(records));
}

}  // namespace

TEST(Manifest, TwoLineFile) {
  auto m = parse(line("a", "train", 0) + line("b", "test", 1));
  EXPECT_EQ(m.size(), 2u);
  EXPECT_EQ(m.counts().train, 1u);
  EXPECT_EQ(m.counts().test, 1u);
  EXPECT_EQ(m.counts().test_positive, 1u);
  EXPECT_EQ(m.records()[0].id, "a");
  EXPECT_EQ(m.records()[1].label, Label::kDisturbing);
}

TEST(Manifest, DuplicateIdNamesTheId) {
  try {
    parse(line("a", "train", 0) + line("a", "test", 1));
    FAIL() << "expected DuplicateIdError";
  } catch (const DuplicateIdError& e) {
    EXPECT_NE(std::string(e.what()).find("\"a\""), std::string::npos) << e.what();
    EXPECT_EQ(e.line(), 2u);
  }
}

TEST(Manifest, ConstructorRejectsDuplicates) {
  EXPECT_THROW(DatasetManifest({{"a", "", Label::kNonDisturbing, Split::kTrain},
                                {"a", "", Label::kNonDisturbing, Split::kTest}}),
               DuplicateIdError);
}

TEST(Manifest, DidAugShapedCounts) {
  auto c = did_aug_shaped().counts();
  EXPECT_EQ(c.train, 30106u);
  EXPECT_EQ(c.train_positive, 8070u);
  EXPECT_EQ(c.train_negative(), 22036u);
  EXPECT_EQ(c.test, 1080u);
  EXPECT_EQ(c.test_positive, 405u);
  EXPECT_EQ(c.test_negative(), 675u);
}

TEST(Manifest, RejectsUnknownKeyWithLineNumber) {
  try {
    parse(line("a", "train", 0) + R"({"id":"b","image_ref":"b","label":0,"split":"test","extra":1})" "\n");
    FAIL();
  } catch (const ManifestError& e) {
    EXPECT_EQ(e.line(), 2u);
    EXPECT_NE(std::string(e.what()).find("extra"), std::string::npos);
  }
}

TEST(Manifest, RejectsBadLabelsAndSplits) {
  EXPECT_THROW(parse(line("a", "train", 2)), ManifestError);
  EXPECT_THROW(parse(R"({"id":"a","image_ref":"a","label":"1","split":"train"})"), ManifestError);
  EXPECT_THROW(parse(R"({"id":"a","image_ref":"a","label":true,"split":"train"})"), ManifestError);
  EXPECT_THROW(parse(line("a", "validation", 0)), ManifestError);
  EXPECT_THROW(parse(R"({"id":"a","image_ref":"a","label":0})"), ManifestError);
  EXPECT_THROW(parse("not json"), ManifestError);
  EXPECT_THROW(parse(""), ManifestError);
  EXPECT_THROW(parse(line("", "train", 0)), ManifestError);
}

TEST(Manifest, SkipsBlankLines) {
  auto m = parse("\n" + line("a", "train", 0) + "   \n" + line("b", "test", 1) + "\n");
  EXPECT_EQ(m.size(), 2u);
}

TEST(Manifest, WriteParseRoundTrip) {
  auto m = parse(line("a", "train", 0) + line("b", "test", 1) + line("c", "train", 1));
  std::ostringstream out;
  write_manifest(out, m);
  auto again = parse(out.str());
  EXPECT_EQ(again.records(), m.records());
}

TEST(Manifest, LoadResolvesImagesRelativeToManifest) {
  emofuse::testing::TempDir dir;
  {
    std::ofstream f(dir / "m.jsonl");
    f << line("a", "train", 0);
  }
  auto m = load_manifest(dir / "m.jsonl");
  EXPECT_EQ(m.resolve_image_path(m.records()[0]), dir.path() / "a.jpg");
  EXPECT_THROW(load_manifest(dir / "missing.jsonl"), ManifestError);
}

TEST(SplitView, SelectsInOrder) {
  auto m = parse(line("a", "train", 0) + line("b", "test", 1));
  auto test = split_view(m, Split::kTest);
  ASSERT_EQ(test.size(), 1u);
  EXPECT_EQ(test[0].id, "b");
}

TEST(SplitView, EmptyTestSplit) {
  auto m = parse(line("a", "train", 0));
  EXPECT_TRUE(split_view(m, Split::kTest).empty());
  EXPECT_THROW(m.require_trainable(), ManifestError);
}

TEST(SplitView, DidAugTestView) {
  EXPECT_EQ(split_view(did_aug_shaped(), Split::kTest).size(), 1080u);
}

// Property: train and test views partition the manifest, preserving order.
TEST(SplitView, PartitionProperty) {
  std::mt19937_64 gen(7);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<ImageRecord> records;
    std::size_t n = gen() % 40;
    for (std::size_t i = 0; i < n; ++i)
      records.push_back({"id" + std::to_string(i), "", static_cast<Label>(gen() % 2),
                         gen() % 3 == 0 ? Split::kTest : Split::kTrain});
    DatasetManifest m(records);
    auto train = split_view(m, Split::kTrain), test = split_view(m, Split::kTest);
    ASSERT_EQ(train.size() + test.size(), m.size());
    std::size_t ti = 0, si = 0;
    for (const auto& r : m.records()) {
      if (r.split == Split::kTrain) EXPECT_EQ(train[ti++], r);
      else EXPECT_EQ(test[si++], r);
    }
    auto c = m.counts();
    EXPECT_EQ(c.train, train.size());
    EXPECT_EQ(c.test, test.size());
  }
}

TEST(ResponseSet, JsonRoundTrip) {
  ResponseSet r{"a", {"x", "y"}, {"Fear"}, "1. x\n2. y", "1. Fear"};
  EXPECT_EQ(response_set_from_json(to_json(r)), r);
}
