#pragma once

#include <stdexcept>
#include <string>

namespace socl {

// Base of every error raised by the library. The CLI maps subclasses onto
// process exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Operand shapes disagree (matmul inner dims, concat widths, ...).
class ShapeError : public Error {
 public:
  using Error::Error;
};

// An argument is outside its documented domain (K > N^v, alpha > 1, ...).
class ParameterError : public Error {
 public:
  using Error::Error;
};

// Input is mathematically degenerate, e.g. normalizing a zero vector.
class DegenerateInputError : public Error {
 public:
  using Error::Error;
};

// Bad or unresolvable run configuration. Exit code 2.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Hash mismatch, frozen parameter mutated, artifacts from mixed runs. Exit code 3.
class ContractError : public Error {
 public:
  using Error::Error;
};

// Non-finite loss or gradient during training. Exit code 4.
class NumericError : public Error {
 public:
  using Error::Error;
};

// Malformed file on disk (checkpoint, corpus, volume).
class FormatError : public Error {
 public:
  using Error::Error;
};

}  // namespace socl
