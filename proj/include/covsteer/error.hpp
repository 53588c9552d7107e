#pragma once

#include <stdexcept>
#include <string>

namespace covsteer {

enum class ErrorKind {
  InvalidArgument,
  Schema,
  DimensionMismatch,
  PositiveDefiniteViolation,
  SingularLyapunov,
  Indeterminate,
  NonFiniteState,
  RiccatiEscape,
  NotControllable,
  Infeasible,
  MaxIterations,
  NoConvergence,
  NotSolved,
  RankDeficientB,
  NotAdmissible,
  NotHurwitz,
  DigestMismatch,
};

const char* to_string(ErrorKind kind);

// Every failure raised by the library carries one of the kinds above so that
// the C API can map it onto a stable status code.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

}  // namespace covsteer
