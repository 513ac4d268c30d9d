#pragma once

#include <stdexcept>
#include <string>

namespace weightcorr {

/// Bad argument, shape mismatch or violated precondition.
class UsageError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Non-finite values, failed factorisations, diverged training.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Filesystem failures. The message always names the path.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed dataset, checkpoint or report files.
class FormatError : public std::runtime_error {
 public:
  enum class Kind {
    kBadMagic,
    kTruncated,
    kCountMismatch,
    kRecordSize,
    kLabelRange,
    kVersion,
    kCorrupt,
    kSchema,
  };

  FormatError(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  Kind kind() const noexcept { return kind_; }

 private:
  Kind kind_;
};

/// Experiment configuration problems, reported with the offending field.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace weightcorr
