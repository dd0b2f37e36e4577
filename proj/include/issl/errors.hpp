#pragma once

#include <stdexcept>
#include <string>

namespace issl {

/// Bad arguments, malformed configs, shape mismatches. CLI exit code 1.
class ValidationError : public std::runtime_error {
 public:
  explicit ValidationError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Structurally valid input on which the operation is undefined
/// (empty mask, zero median, ...). CLI exit code 2.
class DegenerateInputError : public std::runtime_error {
 public:
  explicit DegenerateInputError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Unreadable or inconsistent on-disk artifacts. CLI exit code 1.
class FormatError : public std::runtime_error {
 public:
  explicit FormatError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace issl
