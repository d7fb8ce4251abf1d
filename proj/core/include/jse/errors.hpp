#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace jse {

/// Base class for all toolkit errors. Catching this catches everything the
/// library throws on purpose.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

/// Input matrix does not carry enough independent directions to pin down the
/// requested solution (e.g. rotation fitting with rank-deficient covariance).
class RankDeficientError : public Error {
 public:
  using Error::Error;
};

/// Calibration data was recorded while the joints moved beyond the locked
/// tolerance, violating the rigid-body assumption.
class LockedJointViolationError : public Error {
 public:
  using Error::Error;
};

/// Stream is too short for the requested zero-delay filtering.
class SignalTooShortError : public Error {
 public:
  using Error::Error;
};

/// Filter cutoff outside (0, f_s/2).
class InvalidCutoffError : public Error {
 public:
  using Error::Error;
};

/// A filter covariance diagonal exceeded its configured ceiling.
class CovarianceDivergenceError : public Error {
 public:
  using Error::Error;
};

/// Configuration file problems: syntax, unknown keys, inconsistent values.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Gain search found no stable point at the lower end of its grid.
class NoStableGainError : public Error {
 public:
  using Error::Error;
};

/// Log parsing failures, tagged with the reason and the 1-based line number
/// (0 when no specific line applies).
class LogParseError : public Error {
 public:
  enum class Kind { FormatVersionMismatch, MalformedLine, NonMonotoneTimestamp };

  LogParseError(Kind kind, std::uint64_t line, const std::string& msg)
      : Error(msg), kind_(kind), line_(line) {}

  Kind kind() const { return kind_; }
  std::uint64_t line() const { return line_; }

 private:
  Kind kind_;
  std::uint64_t line_;
};

}  // namespace jse
