#pragma once

#include <stdexcept>
#include <string>

namespace csiloc {

/// Base class for all errors raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed input data (wrong length, non-finite values, out-of-range RSSI).
class ValidationError : public Error {
 public:
  using Error::Error;
};

class InvalidArgument : public Error {
 public:
  using Error::Error;
};

/// A clustering with at least one empty cluster was handed to a scorer.
class DegenerateClustering : public Error {
 public:
  using Error::Error;
};

/// On-disk container could not be decoded (bad magic, version, truncation, checksum).
class FormatError : public Error {
 public:
  using Error::Error;
};

/// Dataset content does not satisfy a pipeline precondition.
class DatasetError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

/// A single online sample was refused (e.g. it carries a magnitude spike).
class RejectedSample : public Error {
 public:
  using Error::Error;
};

}  // namespace csiloc
