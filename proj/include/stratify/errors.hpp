#pragma once

#include <stdexcept>
#include <string>

namespace stratify {

// Invalid user configuration (flags, schema, hyperparameters).
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Input data that cannot be ingested or is inconsistent with its schema.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Linear-algebra or sampler failure that could not be recovered locally.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace stratify

#include <functional>

namespace stratify {

// Receives non-fatal diagnostics (degenerate inputs, rejected covariance
// draws). The default sink writes "warning: ..." lines to stderr.
using WarningSink = std::function<void(const std::string&)>;

void stderr_warning(const std::string& message);

}  // namespace stratify
