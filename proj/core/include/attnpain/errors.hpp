#pragma once

#include <stdexcept>

namespace attnpain {

// Contract violations, shape mismatches, bad configuration, malformed values.
// The CLI maps these to exit code 1.
class ValidationError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Filesystem failures: missing, unreadable, unwritable, truncated files.
// The CLI maps these to exit code 2.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A file exists and is readable but does not carry the expected format
// (bad magic, unsupported version, schema mismatch).
class FormatError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

}  // namespace attnpain
