#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace treeot {

enum class Errc {
  CycleDetected,
  Disconnected,
  DuplicateEdge,
  UnknownNode,
  RootNotLeaf,
  ShapeMismatch,
  EpsilonNonPositive,
  MassMismatch,
  MissingEdgeCost,
  ModeOutOfRange,
  EqualModes,
  EqualNodes,
  MaxSweepsExceeded,
  TooLarge,
  StaleDependency,
  NoConstraints,
  NumericalUnderflow,
  NotConverged,
  NonPositiveEntry,
  IncompatibleRowSums,
  ZeroMassState,
  ProblemMismatch,
  InconsistentCounts,
  SupportViolation,
  InvalidArgument,
};

std::string_view errc_name(Errc code);

class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what)
      : std::runtime_error(std::string(errc_name(code)) + ": " + what), code_(code) {}
  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

// Raised when an iteration runs out of sweeps; carries the last state.
template <class Report>
class NotConvergedError : public Error {
 public:
  NotConvergedError(Errc code, const std::string& what, Report partial)
      : Error(code, what), partial_(std::move(partial)) {}
  const Report& partial() const noexcept { return partial_; }

 private:
  Report partial_;
};

}  // namespace treeot
