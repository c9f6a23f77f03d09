#pragma once

#include <stdexcept>
#include <string>

namespace cmad {

// Root of every exception raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Caller passed an argument that violates a precondition (shape, range).
class ArgumentError : public Error {
 public:
  using Error::Error;
};

// Malformed on-disk artifact: IDX, dataset manifest, model file, PGM.
class FormatError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

class DecompositionError : public Error {
 public:
  using Error::Error;
};

// Requested sampling cannot be satisfied (e.g. negatives from one class).
class InfeasibleError : public Error {
 public:
  using Error::Error;
};

class DivergenceError : public Error {
 public:
  using Error::Error;
};

class EmptySelectionError : public Error {
 public:
  using Error::Error;
};

// Internal misuse, e.g. a backward pass fed a cache from another encoder.
class ContractError : public Error {
 public:
  using Error::Error;
};

}  // namespace cmad
