#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace msl {

/// Shape or dimension mismatch between operands.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Token or class label outside the valid range.
class LabelError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A loss was requested over a batch with no contributing positions.
class DegenerateBatchError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Violated precondition on an API call.
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Invalid configuration value or unknown configuration key.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Malformed or truncated file contents.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Non-finite loss encountered during optimization.
class DivergenceError : public std::runtime_error {
 public:
  DivergenceError(const std::string& what, std::ptrdiff_t step, std::ptrdiff_t episode = -1)
      : std::runtime_error(what), step_(step), episode_(episode) {}

  std::ptrdiff_t step() const { return step_; }
  std::ptrdiff_t episode() const { return episode_; }

 private:
  std::ptrdiff_t step_;
  std::ptrdiff_t episode_;
};

}  // namespace msl
