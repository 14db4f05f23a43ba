#pragma once

#include <stdexcept>
#include <string>

namespace fatcc {

/// Incompatible dimensions between tensors, layers or parameter sets.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A value outside its admissible domain (label >= C, negative epsilon, ...).
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// Malformed on-disk data (bad IDX magic, mismatched CSV schema).
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid or unparsable experiment configuration.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace fatcc
