#pragma once

#include <stdexcept>
#include <string>

namespace cardiseg {

/// Tensor or image extents that do not fit the operation.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Invalid hyperparameters or configuration documents. `path()` names the
/// offending JSON location when the error originates from a config file.
class ConfigError : public std::invalid_argument {
 public:
  explicit ConfigError(const std::string& message, std::string path = {})
      : std::invalid_argument(path.empty() ? message : path + ": " + message),
        path_(std::move(path)) {}

  const std::string& path() const noexcept { return path_; }

 private:
  std::string path_;
};

/// Malformed files (NIfTI headers, raw manifests, checkpoints).
class ParseError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Well-formed input whose content violates a domain rule (label set, binary truth).
class ValidationError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Non-finite values encountered during optimisation.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace cardiseg
