#pragma once

#include <stdexcept>
#include <string>

namespace mdsaf {

// Invalid sizes, dimensions or settings. Maps to CLI exit code 1.
class ConfigError : public std::invalid_argument {
 public:
  explicit ConfigError(const std::string& what) : std::invalid_argument(what) {}
};

// Bad external input: files, audio, positions, signals. Maps to exit code 1.
class InputError : public std::runtime_error {
 public:
  explicit InputError(const std::string& what) : std::runtime_error(what) {}
};

// An internal invariant was violated. Maps to exit code 2.
class InvariantError : public std::logic_error {
 public:
  explicit InvariantError(const std::string& what) : std::logic_error(what) {}
};

}  // namespace mdsaf
