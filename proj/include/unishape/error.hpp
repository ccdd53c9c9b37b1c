#pragma once

#include <stdexcept>
#include <string>

namespace unishape {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed input text (TSV rows, CSV tables, JSON files).
class ParseError : public Error {
 public:
  using Error::Error;
};

/// Inputs that parse but violate a documented precondition.
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// Tensor shapes that do not line up.
class ShapeError : public Error {
 public:
  using Error::Error;
};

}  // namespace unishape
