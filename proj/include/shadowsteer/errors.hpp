#pragma once

#include <stdexcept>
#include <string>

namespace shadowsteer {

// Bad argument values: NaN, out-of-range scalars, mismatched shapes.
class InputError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Caller violated an operation's precondition (e.g. light below terrain).
class PreconditionError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// Checkpoint missing, corrupt, wrong version, or bound to another backbone.
class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace shadowsteer
