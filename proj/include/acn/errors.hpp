#pragma once

#include <stdexcept>
#include <string>

namespace acn {

// Shape or dimension mismatch between operands.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Every position of a loss mask was zero.
class EmptyMaskError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Sequence exceeds the model's positional capacity.
class LengthError : public std::length_error {
 public:
  using std::length_error::length_error;
};

// Malformed text or file content. `where` names the marker, line, or field.
class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& where, const std::string& what)
      : std::runtime_error(where + ": " + what), where_(where) {}
  const std::string& where() const noexcept { return where_; }

 private:
  std::string where_;
};

// An internal contract was broken (e.g. a frozen parameter received a gradient).
class InvariantViolation : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

}  // namespace acn
