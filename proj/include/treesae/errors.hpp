#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace treesae {

// Shape disagreement between operands.
class DimensionError : public std::invalid_argument {
  public:
    using std::invalid_argument::invalid_argument;
};

// NaN/Inf encountered where finite values are required.
class NumericError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

class IndexError : public std::out_of_range {
  public:
    using std::out_of_range::out_of_range;
};

// Greedy allocation had no eligible parent for a non-empty child set.
class AllocationError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

// Malformed, truncated or mismatched on-disk artifact.
class FormatError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

class ConfigError : public std::invalid_argument {
  public:
    using std::invalid_argument::invalid_argument;
};

} // namespace treesae
