#pragma once

#include <stdexcept>
#include <string>

namespace vxc {

// Bad shapes, bad hyperparameters, malformed configs. CLI exit code 2.
class ConfigError : public std::runtime_error {
public:
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// Unreadable / inconsistent data files, truncated checkpoints. CLI exit code 3.
class DataError : public std::runtime_error {
public:
    explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace vxc
