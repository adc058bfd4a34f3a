#pragma once

#include <stdexcept>

namespace feddrop {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Invalid architecture, rates, or experiment settings.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Parameter trees or batches whose dimensions do not chain.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// Malformed examples (label out of range, wrong feature width, empty sets).
class DataError : public Error {
 public:
  using Error::Error;
};

// Dropout mapping inconsistent with the architecture it is applied to.
class MappingError : public Error {
 public:
  using Error::Error;
};

// A federated round could not be completed.
class RoundError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace feddrop
