#pragma once

#include <stdexcept>
#include <string>

namespace mtrack {

/// Base of every error raised by the library. The CLI maps the subclasses
/// onto process exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed, missing or inconsistent input files (exit code 2).
class InputError : public Error {
 public:
  using Error::Error;
};

/// A pipeline stage could not produce a result from valid input (exit code 3).
class PipelineError : public Error {
 public:
  using Error::Error;
};

/// Point at or behind the source plane; the projection denominator collapsed.
class DegenerateGeometryError : public PipelineError {
 public:
  using PipelineError::PipelineError;
};

/// The external segmenter process could not be reached or misbehaved (exit code 4).
class AdapterError : public Error {
 public:
  using Error::Error;
};

}  // namespace mtrack
