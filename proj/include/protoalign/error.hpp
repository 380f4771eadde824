#pragma once

#include <stdexcept>
#include <string>

namespace protoalign {

// Base of every error raised by the library. Each subclass maps to one
// failure family so callers (and the CLI exit-code table) can dispatch on it.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class DomainError : public Error {
 public:
  using Error::Error;
};

class UsageError : public Error {
 public:
  using Error::Error;
};

// IPOT underflow: a row or column of the proximal kernel vanished.
class SolverError : public Error {
 public:
  using Error::Error;
};

class ContractError : public Error {
 public:
  using Error::Error;
};

class CapacityError : public Error {
 public:
  using Error::Error;
};

class StateError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class FormatError : public Error {
 public:
  using Error::Error;
};

// A loss term became NaN/Inf during training.
class NumericalError : public Error {
 public:
  using Error::Error;
};

}  // namespace protoalign
