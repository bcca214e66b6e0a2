#pragma once

#include <stdexcept>
#include <string>
#include <utility>

namespace fedmobile {

// Error categories used across the library. The CLI prints failures as a
// single line "error: <category>: <message>".
class Error : public std::runtime_error {
 public:
  Error(std::string category, const std::string& message)
      : std::runtime_error(category + ": " + message), category_(std::move(category)) {}
  const std::string& category() const { return category_; }

 private:
  std::string category_;
};

struct DimensionError : Error {
  explicit DimensionError(const std::string& m) : Error("dimension", m) {}
};
struct InputError : Error {
  explicit InputError(const std::string& m) : Error("input", m) {}
};
struct ConfigError : Error {
  explicit ConfigError(const std::string& m) : Error("config", m) {}
};
struct NumericError : Error {
  explicit NumericError(const std::string& m) : Error("numeric", m) {}
};
struct StateError : Error {
  explicit StateError(const std::string& m) : Error("state", m) {}
};
struct AggregationError : Error {
  explicit AggregationError(const std::string& m) : Error("aggregation", m) {}
};
struct RoundError : Error {
  explicit RoundError(const std::string& m) : Error("round", m) {}
};
struct IoError : Error {
  explicit IoError(const std::string& m) : Error("io", m) {}
};

}  // namespace fedmobile
