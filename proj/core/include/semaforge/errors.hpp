#pragma once

#include <stdexcept>
#include <string>

namespace semaforge {

// Every library failure derives from Error so callers (the CLI in
// particular) can catch one type and still report the specific kind.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Operand shapes do not fit the operation.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// A documented precondition was violated by the caller.
class ContractError : public Error {
 public:
  using Error::Error;
};

// An object was used in a state that does not allow the call
// (e.g. a second backward over an already consumed graph).
class StateError : public Error {
 public:
  using Error::Error;
};

// A file parsed but carried the wrong content (counts, magic, version).
class FormatError : public Error {
 public:
  using Error::Error;
};

// A file could not be tokenized; message carries the line number.
class ParseError : public Error {
 public:
  using Error::Error;
};

class GeometryError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

// Rejected construction parameters (synthetic geometry, configs).
class ParameterError : public Error {
 public:
  using Error::Error;
};

// A numeric check failed (non-finite value in a forward pass or a
// finite-difference probe).
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace semaforge
