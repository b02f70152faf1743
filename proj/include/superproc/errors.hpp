#pragma once

#include <stdexcept>
#include <string>

namespace superproc {

// Base for every error raised by the library. The CLI maps these to exit code 1.
class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

class DomainError : public Error {
public:
  using Error::Error;
};

class InvalidStateError : public Error {
public:
  using Error::Error;
};

// Population or expected-count caps exceeded.
class ResourceError : public Error {
public:
  using Error::Error;
};

class SolverError : public Error {
public:
  using Error::Error;
};

class UnsupportedError : public Error {
public:
  using Error::Error;
};

// h vanishes where a division by h is required.
class DegenerateTransformError : public Error {
public:
  using Error::Error;
};

// A path segment is too coarse near a flagged singularity of a clock density.
class RefinementError : public Error {
public:
  using Error::Error;
};

class ConfigError : public Error {
public:
  using Error::Error;
};

class MismatchError : public Error {
public:
  using Error::Error;
};

} // namespace superproc
