#pragma once

#include <stdexcept>
#include <string>

namespace dmr {

/// Raised when an input file cannot be decoded.
class ParseError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Raised when a configuration value violates the schema. Carries the
/// dotted path of the offending field so callers can point at it.
class ConfigError : public std::runtime_error {
 public:
  ConfigError(std::string field_path, const std::string& message)
      : std::runtime_error(field_path + ": " + message),
        field_path_(std::move(field_path)) {}
  const std::string& field_path() const { return field_path_; }

 private:
  std::string field_path_;
};

/// Raised when a numeric routine cannot proceed (non-PD covariance,
/// total underflow, degenerate component after reseeding, ...).
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace dmr
