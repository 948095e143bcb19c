#pragma once

// Append-only binary store of per-image channel embeddings.
//
// Layout (all integers little-endian):
//   header : "EMB1" | u32 dim
//   record : u16 id_len | id bytes (UTF-8) | u8 kind | dim x f32 | u32 crc32
// The CRC covers every record byte before it. A JSON Lines side index
// ({"id", "kind", "offset"}) is rewritten on open and extended on put; it is
// a cache only and is never read back.

#include <fcntl.h>
#include <sys/stat.h>
#include <unistd.h>

#include <array>
#include <cerrno>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "emofuse/detail/codec.hpp"
#include "emofuse/error.hpp"

namespace emofuse {

enum class EmbeddingKind : std::uint8_t { kImage = 0, kDescription = 1, kEmotion = 2 };

inline constexpr std::array<EmbeddingKind, 3> kAllKinds = {EmbeddingKind::kImage, EmbeddingKind::kDescription,
                                                            EmbeddingKind::kEmotion};

inline std::string_view to_string(EmbeddingKind k) {
  switch (k) {
    case EmbeddingKind::kImage: return "image";
    case EmbeddingKind::kDescription: return "description";
    case EmbeddingKind::kEmotion: return "emotion";
  }
  return "unknown";
}

inline std::optional<EmbeddingKind> kind_from_code(std::uint8_t code) {
  if (code > 2) return std::nullopt;
  return static_cast<EmbeddingKind>(code);
}

/// Default embedding width of the ViT-L/14 encoder pair.
inline constexpr std::uint32_t kDefaultDim = 768;

struct EmbeddingVector {
  std::string image_id;
  EmbeddingKind kind = EmbeddingKind::kImage;
  std::vector<float> values;

  std::size_t dim() const noexcept { return values.size(); }
  friend bool operator==(const EmbeddingVector&, const EmbeddingVector&) = default;
};

inline bool all_finite(std::span<const float> v) {
  for (float x : v)
    if (!std::isfinite(x)) return false;
  return true;
}

namespace detail {

class FileDescriptor {
 public:
  FileDescriptor() = default;
  explicit FileDescriptor(int fd) : fd_(fd) {}
  FileDescriptor(const FileDescriptor&) = delete;
  FileDescriptor& operator=(const FileDescriptor&) = delete;
  FileDescriptor(FileDescriptor&& o) noexcept : fd_(std::exchange(o.fd_, -1)) {}
  FileDescriptor& operator=(FileDescriptor&& o) noexcept {
    if (this != &o) {
      reset();
      fd_ = std::exchange(o.fd_, -1);
    }
    return *this;
  }
  ~FileDescriptor() { reset(); }

  int get() const noexcept { return fd_; }
  explicit operator bool() const noexcept { return fd_ >= 0; }
  void reset() noexcept {
    if (fd_ >= 0) ::close(fd_);
    fd_ = -1;
  }

 private:
  int fd_ = -1;
};

inline void pread_exact(int fd, void* buf, std::size_t n, std::uint64_t offset) {
  auto* p = static_cast<char*>(buf);
  while (n > 0) {
    auto got = ::pread(fd, p, n, static_cast<off_t>(offset));
    if (got < 0) {
      if (errno == EINTR) continue;
      throw StoreError(std::string("read failure: ") + std::strerror(errno));
    }
    if (got == 0) throw StoreError("unexpected end of store file at offset " + std::to_string(offset));
    p += got;
    n -= static_cast<std::size_t>(got);
    offset += static_cast<std::uint64_t>(got);
  }
}

inline void write_all(int fd, std::string_view bytes) {
  while (!bytes.empty()) {
    auto put = ::write(fd, bytes.data(), bytes.size());
    if (put < 0) {
      if (errno == EINTR) continue;
      throw StoreError(std::string("write failure: ") + std::strerror(errno));
    }
    bytes.remove_prefix(static_cast<std::size_t>(put));
  }
}

inline std::string encode_record(const EmbeddingVector& v) {
  std::string rec;
  rec.reserve(2 + v.image_id.size() + 1 + 4 * v.values.size() + 4);
  put_u16(rec, static_cast<std::uint16_t>(v.image_id.size()));
  rec += v.image_id;
  put_u8(rec, static_cast<std::uint8_t>(v.kind));
  for (float x : v.values) put_f32(rec, x);
  put_u32(rec, crc32(rec));
  return rec;
}

}  // namespace detail

class EmbeddingStore {
 public:
  static constexpr char kMagic[4] = {'E', 'M', 'B', '1'};
  static constexpr std::size_t kHeaderSize = 8;

  /// Opens or creates a store. A new file needs `dim`; for an existing file
  /// `dim`, when given, must match the header. Every record's CRC is checked.
  explicit EmbeddingStore(std::filesystem::path path, std::optional<std::uint32_t> dim = std::nullopt)
      : path_(std::move(path)) {
    bool exists = std::filesystem::exists(path_) && std::filesystem::file_size(path_) > 0;
    if (!exists) {
      if (!dim || *dim == 0) throw StoreError("creating store " + path_.string() + " requires a dimension");
      dim_ = *dim;
      detail::FileDescriptor fd(::open(path_.c_str(), O_WRONLY | O_CREAT | O_TRUNC, 0644));
      if (!fd) throw StoreError("cannot create store " + path_.string() + ": " + std::strerror(errno));
      std::string header(kMagic, 4);
      detail::put_u32(header, dim_);
      detail::write_all(fd.get(), header);
      end_ = kHeaderSize;
    }
    reader_ = detail::FileDescriptor(::open(path_.c_str(), O_RDONLY));
    if (!reader_) throw StoreError("cannot open store " + path_.string() + ": " + std::strerror(errno));
    if (exists) {
      scan();
      if (dim && *dim != dim_) throw DimensionMismatch(*dim, dim_, "store " + path_.string());
    }
    writer_ = detail::FileDescriptor(::open(path_.c_str(), O_WRONLY | O_APPEND));
    if (!writer_) throw StoreError("cannot open store for append " + path_.string() + ": " + std::strerror(errno));
    rewrite_side_index();
  }

  EmbeddingStore(const EmbeddingStore&) = delete;
  EmbeddingStore& operator=(const EmbeddingStore&) = delete;

  std::uint32_t dim() const noexcept { return dim_; }
  const std::filesystem::path& path() const noexcept { return path_; }
  std::filesystem::path side_index_path() const { return path_.string() + ".idx.jsonl"; }

  /// Appends a vector. Without `overwrite` an existing (id, kind) is an error;
  /// with it the newer record shadows the older one.
  void put(const EmbeddingVector& v, bool overwrite = false) {
    if (v.image_id.empty()) throw InvalidArgument("embedding id must be non-empty");
    if (v.image_id.size() > 0xFFFF) throw InvalidArgument("embedding id longer than 65535 bytes");
    if (v.values.size() != dim_) throw DimensionMismatch(dim_, v.values.size(), "store put for \"" + v.image_id + "\"");
    if (!all_finite(v.values)) throw InvalidArgument("non-finite value in embedding for \"" + v.image_id + "\"");
    auto rec = detail::encode_record(v);

    std::lock_guard write_lock(write_mutex_);
    Key key{v.image_id, v.kind};
    {
      std::shared_lock lock(index_mutex_);
      if (!overwrite && index_.contains(key))
        throw StoreError("duplicate embedding for (\"" + v.image_id + "\", " + std::string(to_string(v.kind)) + ")");
    }
    std::uint64_t offset = end_;
    detail::write_all(writer_.get(), rec);
    end_ += rec.size();
    {
      std::unique_lock lock(index_mutex_);
      index_[key] = offset;
    }
    append_side_index(key, offset);
  }

  EmbeddingVector get(const std::string& image_id, EmbeddingKind kind) const {
    std::uint64_t offset;
    {
      std::shared_lock lock(index_mutex_);
      auto it = index_.find(Key{image_id, kind});
      if (it == index_.end())
        throw MissingEmbeddingError({image_id + "/" + std::string(to_string(kind))});
      offset = it->second;
    }
    return read_record(offset).first;
  }

  bool contains(const std::string& image_id, EmbeddingKind kind) const {
    std::shared_lock lock(index_mutex_);
    return index_.contains(Key{image_id, kind});
  }

  std::size_t size() const {
    std::shared_lock lock(index_mutex_);
    return index_.size();
  }

  std::vector<std::pair<std::string, EmbeddingKind>> keys() const {
    std::shared_lock lock(index_mutex_);
    std::vector<std::pair<std::string, EmbeddingKind>> out;
    out.reserve(index_.size());
    for (const auto& [k, _] : index_) out.emplace_back(k.first, k.second);
    return out;
  }

 private:
  using Key = std::pair<std::string, EmbeddingKind>;

  std::size_t record_size(std::size_t id_len) const { return 2 + id_len + 1 + 4 * std::size_t{dim_} + 4; }

  std::pair<EmbeddingVector, std::size_t> read_record(std::uint64_t offset) const {
    unsigned char len_buf[2];
    detail::pread_exact(reader_.get(), len_buf, 2, offset);
    std::size_t id_len = detail::get_u16(len_buf);
    std::string buf(record_size(id_len), '\0');
    detail::pread_exact(reader_.get(), buf.data(), buf.size(), offset);
    const auto* p = reinterpret_cast<const unsigned char*>(buf.data());
    std::uint32_t stored = detail::get_u32(p + buf.size() - 4);
    if (detail::crc32(std::string_view(buf).substr(0, buf.size() - 4)) != stored)
      throw StoreError("checksum mismatch in record at offset " + std::to_string(offset) + " of " + path_.string());
    EmbeddingVector v;
    v.image_id.assign(buf.data() + 2, id_len);
    auto kind = kind_from_code(p[2 + id_len]);
    if (!kind) throw StoreError("unknown kind code in record at offset " + std::to_string(offset));
    v.kind = *kind;
    v.values.resize(dim_);
    const unsigned char* vals = p + 2 + id_len + 1;
    for (std::size_t i = 0; i < dim_; ++i) v.values[i] = detail::get_f32(vals + 4 * i);
    return {std::move(v), buf.size()};
  }

  void scan() {
    auto file_size = std::filesystem::file_size(path_);
    if (file_size < kHeaderSize) throw StoreError("store file too short: " + path_.string());
    unsigned char header[kHeaderSize];
    detail::pread_exact(reader_.get(), header, kHeaderSize, 0);
    if (std::memcmp(header, kMagic, 4) != 0) throw StoreError("bad magic in store file " + path_.string());
    dim_ = detail::get_u32(header + 4);
    if (dim_ == 0) throw StoreError("store header declares dimension 0");
    std::uint64_t offset = kHeaderSize;
    while (offset < file_size) {
      if (file_size - offset < 2) throw StoreError("truncated record at offset " + std::to_string(offset));
      unsigned char len_buf[2];
      detail::pread_exact(reader_.get(), len_buf, 2, offset);
      std::size_t len = record_size(detail::get_u16(len_buf));
      if (file_size - offset < len) throw StoreError("truncated record at offset " + std::to_string(offset));
      auto [v, n] = read_record(offset);
      index_[Key{v.image_id, v.kind}] = offset;
      offset += n;
    }
    end_ = offset;
  }

  void rewrite_side_index() const {
    std::ofstream out(side_index_path(), std::ios::trunc);
    if (!out) return;
    for (const auto& [k, off] : index_)
      out << nlohmann::json{{"id", k.first}, {"kind", std::string(to_string(k.second))}, {"offset", off}}.dump() << '\n';
  }

  void append_side_index(const Key& k, std::uint64_t off) const {
    std::ofstream out(side_index_path(), std::ios::app);
    if (!out) return;
    out << nlohmann::json{{"id", k.first}, {"kind", std::string(to_string(k.second))}, {"offset", off}}.dump() << '\n';
  }

  std::filesystem::path path_;
  std::uint32_t dim_ = 0;
  std::uint64_t end_ = 0;
  detail::FileDescriptor reader_;
  detail::FileDescriptor writer_;
  std::mutex write_mutex_;
  mutable std::shared_mutex index_mutex_;
  std::map<Key, std::uint64_t> index_;
};

}  // namespace emofuse
