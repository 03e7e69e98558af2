#pragma once

#include <stdexcept>
#include <string>

namespace ban {

// Base of every error raised by the library. `kind()` is the short
// machine-readable tag the CLI prints in its one-line diagnostics.
class Error : public std::runtime_error {
 public:
  Error(std::string kind, const std::string& what)
      : std::runtime_error(what), kind_(std::move(kind)) {}
  const std::string& kind() const noexcept { return kind_; }

 private:
  std::string kind_;
};

struct DimensionError : Error {
  explicit DimensionError(const std::string& w) : Error("dimension", w) {}
};
struct GeometryError : Error {
  explicit GeometryError(const std::string& w) : Error("geometry", w) {}
};
struct NumericError : Error {
  explicit NumericError(const std::string& w) : Error("numeric", w) {}
};
struct ConfigError : Error {
  explicit ConfigError(const std::string& w) : Error("config", w) {}
};
struct IoError : Error {
  explicit IoError(const std::string& w) : Error("io", w) {}
};
struct EmptyBoxError : GeometryError {
  explicit EmptyBoxError(const std::string& w) : GeometryError(w) {}
};

}  // namespace ban
