#pragma once

#include <stdexcept>
#include <string>

namespace forgeseg {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Tensor or image shapes disagree.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// An input violates a documented precondition (non-binary mask, bad config key, ...).
class ValidationError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

// Checkpoint payload or config hash does not match what was expected.
class IntegrityError : public Error {
 public:
  using Error::Error;
};

// The model lacks a branch the caller needs.
class CapabilityError : public Error {
 public:
  using Error::Error;
};

class NumericalError : public Error {
 public:
  using Error::Error;
};

// A pipeline stage is missing an artifact produced by an earlier stage.
class DependencyError : public Error {
 public:
  using Error::Error;
};

}  // namespace forgeseg
