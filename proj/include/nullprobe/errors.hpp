#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace nullprobe {

// Caller supplied something malformed: bad config, bad shapes, broken invariants.
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// On-disk data disagrees with its own manifest.
class FormatError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

class UnsupportedVersionError : public FormatError {
 public:
  using FormatError::FormatError;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Base for failures of the statistics themselves (exit code 3 at the CLI).
class StatisticalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DegenerateLabelError : public StatisticalError {
 public:
  using StatisticalError::StatisticalError;
};

class DegenerateFoldError : public StatisticalError {
 public:
  DegenerateFoldError(std::size_t fold, const std::string& what)
      : StatisticalError(what), fold_(fold) {}
  std::size_t fold() const { return fold_; }

 private:
  std::size_t fold_;
};

class DegenerateNullError : public StatisticalError {
 public:
  using StatisticalError::StatisticalError;
};

class UndefinedMetricError : public StatisticalError {
 public:
  using StatisticalError::StatisticalError;
};

class SingularSystemError : public StatisticalError {
 public:
  using StatisticalError::StatisticalError;
};

class ConvergenceError : public StatisticalError {
 public:
  ConvergenceError(double grad_norm, const std::string& what)
      : StatisticalError(what), grad_norm_(grad_norm) {}
  double grad_norm() const { return grad_norm_; }

 private:
  double grad_norm_;
};

// A null replicate failed; carries the replicate index (0 = target run).
class ReplicateError : public StatisticalError {
 public:
  ReplicateError(std::size_t replicate, const std::string& what)
      : StatisticalError(what), replicate_(replicate) {}
  std::size_t replicate() const { return replicate_; }

 private:
  std::size_t replicate_;
};

}  // namespace nullprobe
