#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace advgen {

/// Root of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Bad argument or malformed input; maps to CLI exit code 2.
class ValidationError : public Error {
 public:
  using Error::Error;
};

class DimensionError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

class MissingFilesError : public Error {
 public:
  MissingFilesError(std::string partition, const std::string& detail)
      : Error("missing files for partition '" + partition + "': " + detail),
        partition_(std::move(partition)) {}
  const std::string& partition() const noexcept { return partition_; }

 private:
  std::string partition_;
};

class CorruptRecordError : public Error {
 public:
  CorruptRecordError(std::int64_t index, const std::string& detail)
      : Error("corrupt record " + std::to_string(index) + ": " + detail), index_(index) {}
  std::int64_t index() const noexcept { return index_; }

 private:
  std::int64_t index_;
};

class CheckpointError : public Error {
 public:
  using Error::Error;
};

class CheckpointVersionError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};

/// A loss or gradient evaluated to NaN/Inf. The message carries the component values.
class NonFiniteError : public Error {
 public:
  NonFiniteError(const std::string& what, std::int64_t step = -1)
      : Error(what), step_(step) {}
  std::int64_t step() const noexcept { return step_; }

 private:
  std::int64_t step_;
};

/// Retriable: the caller should fetch fresh state and try again.
class ConflictError : public Error {
 public:
  using Error::Error;
};

class StalePageError : public Error {
 public:
  using Error::Error;
};

}  // namespace advgen
