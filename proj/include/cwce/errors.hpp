#pragma once

#include <stdexcept>
#include <string>

namespace cwce {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// bad parameters, invalid distributions, malformed inputs
struct ValidationError : Error {
  using Error::Error;
};

// mismatched vector/matrix lengths
struct DimensionError : Error {
  using Error::Error;
};

// singular systems beyond the jitter ladder, failed factorizations
struct NumericalError : Error {
  using Error::Error;
};

// operation not defined for this kind/measure/time combination
struct UnsupportedError : Error {
  using Error::Error;
};

// configuration files, CLI arguments
struct ConfigError : Error {
  using Error::Error;
};

struct IoError : Error {
  using Error::Error;
};

}  // namespace cwce
