#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace emofuse {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid argument or violated precondition.
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

class ManifestError : public Error {
 public:
  ManifestError(const std::string& message, std::size_t line = 0)
      : Error(line == 0 ? message
                        : "line " + std::to_string(line) + ": " + message),
        line_(line) {}

  /// 1-based line number of the offending entry, 0 if not line-specific.
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

class DuplicateIdError : public ManifestError {
 public:
  DuplicateIdError(const std::string& id, std::size_t line)
      : ManifestError("duplicate id \"" + id + "\"", line), id_(id) {}
  const std::string& id() const noexcept { return id_; }

 private:
  std::string id_;
};

/// No enumerated item could be recovered from an LMM reply.
class EmptyParseError : public Error {
 public:
  explicit EmptyParseError(std::string raw)
      : Error("no parseable items in reply"), raw_(std::move(raw)) {}
  const std::string& raw() const noexcept { return raw_; }

 private:
  std::string raw_;
};

/// The adapter could not be reached (connection refused, timeout) after
/// exhausting the retry policy.
class TransportError : public Error {
 public:
  TransportError(const std::string& endpoint, int attempts,
                 const std::string& detail)
      : Error("transport error contacting " + endpoint + " after " +
              std::to_string(attempts) + " attempt(s): " + detail),
        endpoint_(endpoint),
        attempts_(attempts) {}
  const std::string& endpoint() const noexcept { return endpoint_; }
  int attempts() const noexcept { return attempts_; }

 private:
  std::string endpoint_;
  int attempts_;
};

/// The adapter answered with an error payload.
class AdapterError : public Error {
 public:
  AdapterError(const std::string& endpoint, int status, const std::string& body)
      : Error("adapter error " + std::to_string(status) + " from " + endpoint +
              ": " + body),
        status_(status) {}
  int status() const noexcept { return status_; }

 private:
  int status_;
};

/// Offline mode and no recorded fixture for the request.
class MissingFixtureError : public Error {
 public:
  MissingFixtureError(const std::string& what, const std::string& digest)
      : Error("no fixture for " + what + " (digest " + digest + ")"),
        digest_(digest) {}
  const std::string& digest() const noexcept { return digest_; }

 private:
  std::string digest_;
};

class MissingEmbeddingError : public Error {
 public:
  explicit MissingEmbeddingError(std::vector<std::string> ids)
      : Error(format(ids)), ids_(std::move(ids)) {}
  const std::vector<std::string>& ids() const noexcept { return ids_; }

 private:
  static std::string format(const std::vector<std::string>& ids) {
    std::string out = "missing embedding for id(s):";
    for (std::size_t i = 0; i < ids.size() && i < 20; ++i) out += " \"" + ids[i] + "\"";
    if (ids.size() > 20) out += " ... (" + std::to_string(ids.size()) + " total)";
    return out;
  }
  std::vector<std::string> ids_;
};

class DimensionMismatch : public Error {
 public:
  DimensionMismatch(std::size_t expected, std::size_t actual,
                    const std::string& context = {})
      : Error("dimension mismatch" + (context.empty() ? "" : " in " + context) +
              ": expected " + std::to_string(expected) + ", got " +
              std::to_string(actual)) {}
};

class StoreError : public Error {
 public:
  using Error::Error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Training produced a non-finite loss or gradient.
class DivergedError : public Error {
 public:
  DivergedError(int epoch, const std::string& what)
      : Error("training diverged at epoch " + std::to_string(epoch) + ": " + what),
        epoch_(epoch) {}
  int epoch() const noexcept { return epoch_; }

 private:
  int epoch_;
};

}  // namespace emofuse
