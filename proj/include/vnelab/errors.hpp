#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace vnelab {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define VNELAB_DEFINE_ERROR(Name)          \
  class Name : public Error {              \
   public:                                 \
    using Error::Error;                    \
  }

VNELAB_DEFINE_ERROR(InsufficientResources);
VNELAB_DEFINE_ERROR(OverRelease);
VNELAB_DEFINE_ERROR(InvariantViolation);
VNELAB_DEFINE_ERROR(MalformedSolution);
VNELAB_DEFINE_ERROR(LimitExceeded);
VNELAB_DEFINE_ERROR(NoPath);
VNELAB_DEFINE_ERROR(NoFeasiblePath);
VNELAB_DEFINE_ERROR(NonConvergence);
VNELAB_DEFINE_ERROR(EpisodeFinished);
VNELAB_DEFINE_ERROR(InvalidAction);
VNELAB_DEFINE_ERROR(ShapeMismatch);
VNELAB_DEFINE_ERROR(MissingGradient);
VNELAB_DEFINE_ERROR(EmptyMask);
VNELAB_DEFINE_ERROR(NonFiniteLoss);
VNELAB_DEFINE_ERROR(EmptyRecord);
VNELAB_DEFINE_ERROR(UsageError);
VNELAB_DEFINE_ERROR(CheckpointError);

#undef VNELAB_DEFINE_ERROR

/// Malformed text input; carries the 1-based line number.
class ParseError : public Error {
 public:
  ParseError(std::size_t line, const std::string& what)
      : Error("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

/// Bad configuration value; carries the offending key.
class ConfigError : public Error {
 public:
  ConfigError(std::string key, const std::string& what)
      : Error("config key '" + key + "': " + what), key_(std::move(key)) {}
  const std::string& key() const noexcept { return key_; }

 private:
  std::string key_;
};

}  // namespace vnelab
