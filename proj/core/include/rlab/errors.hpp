#pragma once

#include <stdexcept>
#include <string>

namespace rlab {

// Base for every error raised by the library. Callers that only need to
// distinguish "our" failures from std failures can catch this.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Shapes that do not agree (matmul inner dims, image size vs config, ...).
class DimensionError : public Error {
 public:
  using Error::Error;
};

// An index outside its valid range (labels, block indices).
class IndexError : public Error {
 public:
  using Error::Error;
};

// NaN/Inf produced or supplied where finite values are required.
class NumericError : public Error {
 public:
  using Error::Error;
};

// A dataset cannot supply what an episode asks for.
class CapacityError : public Error {
 public:
  using Error::Error;
};

// Too few samples for a statistic (HSIC with N < 2).
class DegenerateInputError : public Error {
 public:
  using Error::Error;
};

// CKA with a zero self-HSIC, i.e. constant features.
class UndefinedSimilarityError : public Error {
 public:
  using Error::Error;
};

// Invalid configuration, detected before any compute.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Binary file errors. Each failure mode has its own type so callers and
// tests can tell them apart.
class FormatError : public Error {
 public:
  using Error::Error;
};

class TruncatedError : public Error {
 public:
  using Error::Error;
};

class VersionError : public Error {
 public:
  using Error::Error;
};

class IntegrityError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace rlab
