#pragma once

#include <stdexcept>
#include <string>

namespace neurodecode {

// Error categories map 1:1 onto CLI exit codes, see tools/main.cpp.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct DivergenceError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct CheckpointMismatchError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct TrialTooShortError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Shape/precondition violations inside the tensor engine and layers.
struct ShapeError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

}  // namespace neurodecode
