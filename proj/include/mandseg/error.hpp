#pragma once

#include <stdexcept>
#include <string>

namespace mandseg {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid argument or violated precondition.
class ArgumentError : public Error {
 public:
  using Error::Error;
};

/// File could not be read, written or parsed.
class IoError : public Error {
 public:
  using Error::Error;
};

/// Recognition could not localize the mandible.
class RecognitionError : public Error {
 public:
  using Error::Error;
};

/// Delineation could not produce an object (no seed, degenerate sigma, ...).
class DelineationError : public Error {
 public:
  using Error::Error;
};

}  // namespace mandseg
