#pragma once

#include <stdexcept>
#include <string>

namespace emoji {

/// Bad paths, bad flags, unreadable files. Maps to CLI exit code 2.
class InputError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Content that parses but violates a data contract (schema, labels,
/// mapping density, checkpoint layout). Maps to CLI exit code 3.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Non-finite values or misuse of the differentiation engine. Exit code 4.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace emoji
