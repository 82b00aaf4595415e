#pragma once

#include <stdexcept>
#include <string>

namespace layerfit {

// Error taxonomy shared by the library and the CLI exit-code mapping.
struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

struct InputError : std::runtime_error {
  explicit InputError(const std::string& msg) : std::runtime_error(msg) {}
};

struct UsageError : std::runtime_error {
  explicit UsageError(const std::string& msg) : std::runtime_error(msg) {}
};

struct DataError : std::runtime_error {
  explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

struct CheckpointError : std::runtime_error {
  explicit CheckpointError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace layerfit
