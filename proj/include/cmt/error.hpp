#pragma once

#include <stdexcept>
#include <string>

namespace cmt {

// Base of every error the library throws. `kind()` is a stable short tag used
// by the CLI for its machine-parsable error line.
class Error : public std::runtime_error {
 public:
  Error(std::string kind, const std::string& what)
      : std::runtime_error(what), kind_(std::move(kind)) {}
  const std::string& kind() const noexcept { return kind_; }

 private:
  std::string kind_;
};

struct ShapeError : Error {
  explicit ShapeError(const std::string& what) : Error("shape", what) {}
};

struct ConfigError : Error {
  explicit ConfigError(const std::string& what) : Error("config", what) {}
};

// Malformed, truncated or version-mismatched binary/text artifacts.
struct FormatError : Error {
  FormatError(std::string kind, const std::string& what) : Error(std::move(kind), what) {}
};

struct InvalidArgument : Error {
  explicit InvalidArgument(const std::string& what) : Error("invalid_argument", what) {}
};

}  // namespace cmt
