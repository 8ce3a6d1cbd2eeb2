#pragma once

#include <stdexcept>
#include <string>

namespace kgbreather {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Precondition on user-supplied parameters failed (mu <= 0, p out of range, ...).
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

/// A runtime smallness or resonance guard tripped; the parameters are outside
/// the regime where the construction is valid.
class GuardViolation : public Error {
 public:
  using Error::Error;
};

/// An iterative solver ran out of iterations or diverged.
class NonConvergence : public Error {
 public:
  NonConvergence(const std::string& what, double last_residual)
      : Error(what), last_residual_(last_residual) {}

  double last_residual() const noexcept { return last_residual_; }

 private:
  double last_residual_;
};

class IoError : public Error {
 public:
  using Error::Error;
};

/// Process exit codes used by the command line tool.
enum class ExitCode : int {
  success = 0,
  guard_violation = 2,
  nonconvergence = 3,
  io = 4,
};

}  // namespace kgbreather
