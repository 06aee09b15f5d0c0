#pragma once

#include <stdexcept>
#include <string>

namespace hasa {

// Error taxonomy shared across the library. The CLI maps these onto
// process exit codes (config -> 2, numeric -> 3, io -> 4).
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct DimensionError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace hasa
