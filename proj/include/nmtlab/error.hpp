#pragma once

#include <stdexcept>
#include <string>

namespace nmtlab {

// Error taxonomy. Each kind maps to a distinct CLI exit code (tools/nmtlab.cpp).
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct DimensionError : Error {
  using Error::Error;
};

struct InputError : Error {
  using Error::Error;
};

struct ContractError : Error {
  using Error::Error;
};

struct ConfigError : Error {
  using Error::Error;
};

struct IoError : Error {
  using Error::Error;
};

struct CompatibilityError : Error {
  using Error::Error;
};

}  // namespace nmtlab
