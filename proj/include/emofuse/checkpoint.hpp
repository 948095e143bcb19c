#pragma once

// Model checkpoints.
//
//   "EMC1" | u32 header_len | header JSON (UTF-8)
//   then one record per tensor, framed like embedding-store records:
//   u16 name_len | name | u8 kind (3 = f64 tensor) | u32 rows | u32 cols |
//   rows*cols f64 (row-major) | u32 crc32 of the preceding record bytes

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>

#include <nlohmann/json.hpp>

#include "emofuse/classifier.hpp"
#include "emofuse/detail/codec.hpp"
#include "emofuse/error.hpp"

namespace emofuse {

struct Checkpoint {
  MlpParams params;
  AblationConfig config;
  TrainConfig train;
  FeatureOptions features;
  std::uint32_t embedding_dim = kDefaultDim;
  int best_epoch = 0;
  double max_test_accuracy = 0.0;
};

namespace detail {

inline constexpr std::uint8_t kTensorKind = 3;

inline nlohmann::json checkpoint_header(const Checkpoint& c) {
  return {{"format", "emofuse-checkpoint/1"},
          {"config", {{"channels", c.config.spec()}, {"name", c.config.name()}}},
          {"train",
           {{"epochs", c.train.epochs},
            {"learning_rate", c.train.learning_rate},
            {"batch_size", c.train.batch_size},
            {"optimizer", std::string(to_string(c.train.optimizer))},
            {"hidden", {c.train.hidden1, c.train.hidden2}}}},
          {"seed", c.train.seed},
          {"input_dim", c.params.input_dim()},
          {"embedding_dim", c.embedding_dim},
          {"normalize",
           {{"image", c.features.normalize_image},
            {"description", c.features.normalize_description},
            {"emotion", c.features.normalize_emotion}}},
          {"best_epoch", c.best_epoch},
          {"max_test_accuracy", c.max_test_accuracy}};
}

template <typename Tensor>
void append_tensor(std::string& out, std::string_view name, const Tensor& t) {
  std::string rec;
  put_u16(rec, static_cast<std::uint16_t>(name.size()));
  rec += name;
  put_u8(rec, kTensorKind);
  put_u32(rec, static_cast<std::uint32_t>(t.rows()));
  put_u32(rec, static_cast<std::uint32_t>(t.cols()));
  for (Eigen::Index r = 0; r < t.rows(); ++r)
    for (Eigen::Index c = 0; c < t.cols(); ++c) put_f64(rec, t(r, c));
  put_u32(rec, crc32(rec));
  out += rec;
}

}  // namespace detail

inline void save_checkpoint(const Checkpoint& c, const std::filesystem::path& path) {
  c.params.check_shapes();
  std::string out = "EMC1";
  auto header = detail::checkpoint_header(c).dump();
  detail::put_u32(out, static_cast<std::uint32_t>(header.size()));
  out += header;
  c.params.for_each([&](const char* name, const auto& t) { detail::append_tensor(out, name, t); });
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw Error("cannot write checkpoint " + tmp.string());
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!f) throw Error("write failure on checkpoint " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::string bytes;
  try {
    bytes = detail::read_file_bytes(path.string());
  } catch (const Error&) {
    throw Error("cannot read checkpoint " + path.string());
  }
  auto fail = [&](const std::string& why) { return Error("bad checkpoint " + path.string() + ": " + why); };
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  if (bytes.size() < 8 || std::memcmp(p, "EMC1", 4) != 0) throw fail("bad magic");
  std::size_t hlen = detail::get_u32(p + 4);
  if (bytes.size() < 8 + hlen) throw fail("truncated header");

  Checkpoint c;
  nlohmann::json h;
  try {
    h = nlohmann::json::parse(bytes.substr(8, hlen));
    c.config = AblationConfig::parse(h.at("config").at("channels").get<std::string>());
    const auto& t = h.at("train");
    c.train.epochs = t.at("epochs").get<int>();
    c.train.learning_rate = t.at("learning_rate").get<double>();
    c.train.batch_size = t.at("batch_size").get<std::size_t>();
    c.train.optimizer = optimizer_from_string(t.at("optimizer").get<std::string>());
    c.train.hidden1 = t.at("hidden").at(0).get<std::size_t>();
    c.train.hidden2 = t.at("hidden").at(1).get<std::size_t>();
    c.train.seed = h.at("seed").get<std::uint64_t>();
    c.embedding_dim = h.at("embedding_dim").get<std::uint32_t>();
    const auto& n = h.at("normalize");
    c.features.normalize_image = n.at("image").get<bool>();
    c.features.normalize_description = n.at("description").get<bool>();
    c.features.normalize_emotion = n.at("emotion").get<bool>();
    c.best_epoch = h.at("best_epoch").get<int>();
    c.max_test_accuracy = h.at("max_test_accuracy").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw fail(std::string("header: ") + e.what());
  }

  std::size_t off = 8 + hlen;
  auto read_tensor = [&](std::string_view expected_name, auto& tensor) {
    if (bytes.size() - off < 2) throw fail("truncated tensor record");
    std::size_t name_len = detail::get_u16(p + off);
    std::size_t fixed = 2 + name_len + 1 + 8;
    if (bytes.size() - off < fixed) throw fail("truncated tensor record");
    std::string_view name(bytes.data() + off + 2, name_len);
    if (name != expected_name) throw fail("expected tensor " + std::string(expected_name) + ", found " + std::string(name));
    if (p[off + 2 + name_len] != detail::kTensorKind) throw fail("unexpected record kind");
    std::size_t rows = detail::get_u32(p + off + 2 + name_len + 1);
    std::size_t cols = detail::get_u32(p + off + 2 + name_len + 5);
    std::size_t len = fixed + 8 * rows * cols + 4;
    if (bytes.size() - off < len) throw fail("truncated tensor " + std::string(name));
    std::uint32_t stored = detail::get_u32(p + off + len - 4);
    if (detail::crc32(std::string_view(bytes).substr(off, len - 4)) != stored)
      throw fail("checksum mismatch in tensor " + std::string(name));
    tensor.resize(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    const unsigned char* vals = p + off + fixed;
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t col = 0; col < cols; ++col)
        tensor(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(col)) = detail::get_f64(vals + 8 * (r * cols + col));
    off += len;
  };
  read_tensor("w1", c.params.w1);
  read_tensor("b1", c.params.b1);
  read_tensor("w2", c.params.w2);
  read_tensor("b2", c.params.b2);
  read_tensor("w3", c.params.w3);
  read_tensor("b3", c.params.b3);
  try {
    c.params.check_shapes();
  } catch (const ShapeError& e) {
    throw fail(e.what());
  }
  if (c.params.input_dim() != c.config.input_dim(c.embedding_dim)) throw fail("input_dim does not match channels");
  return c;
}

}  // namespace emofuse
