#pragma once

#include <stdexcept>
#include <string>

namespace affectlab {

/// Broad error categories. The CLI maps them onto exit codes.
enum class ErrorKind { kConfig, kData, kShape, kRuntime };

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  [[nodiscard]] ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

struct ConfigError : Error {
  explicit ConfigError(const std::string& what) : Error(ErrorKind::kConfig, what) {}
};

/// Malformed files, malformed images, misaligned ids, invalid labels.
struct DataError : Error {
  explicit DataError(const std::string& what) : Error(ErrorKind::kData, what) {}
};

struct ShapeError : Error {
  explicit ShapeError(const std::string& what) : Error(ErrorKind::kShape, what) {}
};

struct IncompatibleCheckpoint : Error {
  explicit IncompatibleCheckpoint(const std::string& what) : Error(ErrorKind::kConfig, what) {}
};

/// Raised by the optimizer when a gradient contains NaN or Inf.
struct NonFiniteGradient : Error {
  explicit NonFiniteGradient(const std::string& what) : Error(ErrorKind::kRuntime, what) {}
};

namespace detail {
template <typename E = ShapeError>
inline void require(bool cond, const std::string& msg) {
  if (!cond) throw E(msg);
}
}  // namespace detail

}  // namespace affectlab
