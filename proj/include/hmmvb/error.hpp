#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace hmmvb {

/// Base class of every exception thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid input or invariant violation. `field()` names the offending entry.
class ValidationError : public Error {
 public:
  ValidationError(std::string field, const std::string& what)
      : Error(field + ": " + what), field_(std::move(field)) {}

  const std::string& field() const noexcept { return field_; }

 private:
  std::string field_;
};

/// Non-finite density, failed factorization or zero-probability point.
/// Block and state are -1 when not applicable.
class NumericalError : public Error {
 public:
  NumericalError(const std::string& what, int block = -1, int state = -1)
      : Error(what), block_(block), state_(state) {}

  int block() const noexcept { return block_; }
  int state() const noexcept { return state_; }

 private:
  int block_;
  int state_;
};

/// The exhaustive mapped-GMM oracle refused a model that is too large.
class GuardError : public Error {
 public:
  GuardError(double component_count, double bound)
      : Error("mapped mixture would have " + format_count(component_count) +
              " components, above the bound " + format_count(bound)),
        component_count_(component_count) {}

  double component_count() const noexcept { return component_count_; }

 private:
  static std::string format_count(double v) {
    if (v < 1e15) return std::to_string(static_cast<long long>(v));
    return std::to_string(v);
  }
  double component_count_;
};

}  // namespace hmmvb
