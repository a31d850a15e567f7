#pragma once

#include <stdexcept>
#include <string>

namespace harmon {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Incompatible or malformed tensor shapes.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// Non-finite values where finite ones are required.
class NumericsError : public Error {
 public:
  using Error::Error;
};

// Optimizer misuse, e.g. stepping a trainable param that never received a gradient.
class OptimError : public Error {
 public:
  using Error::Error;
};

// Word outside the fixed vocabulary.
class TokenizeError : public Error {
 public:
  using Error::Error;
};

// Invalid patch mask (count out of range, empty where non-empty required).
class MaskError : public Error {
 public:
  using Error::Error;
};

// Token sequence exceeds a configured capacity.
class LengthError : public Error {
 public:
  using Error::Error;
};

// Diffusion / generation schedule index out of range.
class ScheduleError : public Error {
 public:
  using Error::Error;
};

// Bad user-supplied configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Evaluation inputs that make the requested metric undefined.
class EvalError : public Error {
 public:
  using Error::Error;
};

// Unreadable or mismatched checkpoint file.
class CheckpointError : public Error {
 public:
  using Error::Error;
};

}  // namespace harmon
