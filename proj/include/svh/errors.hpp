#pragma once

#include <stdexcept>
#include <string>

namespace svh {

// Base for everything thrown by this library. Catching svh::Error at the top
// of a driver separates our failures from genuine std:: misuse.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Input outside a function's documented domain.
struct DomainError : Error {
  using Error::Error;
};

// A series or iteration failed to reach its stopping criterion.
struct ConvergenceError : Error {
  using Error::Error;
};

// An adaptive algorithm exhausted its panel / node budget before meeting
// tolerance. Carries no partial result on purpose: silent inaccuracy is the
// failure mode this library is built to avoid.
struct BudgetExceeded : Error {
  using Error::Error;
};

// An integrand was still above the truncation threshold at the edge of the
// scan window, so no finite window can be certified.
struct TailError : Error {
  using Error::Error;
};

// Model or contract parameters fail validation.
struct InvalidParams : Error {
  using Error::Error;
};

// A Riccati solution was queried at or past its blow-up time.
struct LifetimeExceeded : Error {
  using Error::Error;
};

// A moment condition needed for a Fourier representation fails, so the
// integral it guards does not exist.
struct IntegrabilityError : Error {
  using Error::Error;
};

// A power moment of the variance process is infinite at the requested order.
struct MomentExplodedError : Error {
  using Error::Error;
};

// Special-function argument hit a pole.
struct PoleError : Error {
  using Error::Error;
};

// Vector or matrix arguments whose sizes do not line up.
struct DimensionMismatch : Error {
  using Error::Error;
};

// Malformed run configuration (missing key, wrong type, unknown model).
struct ConfigError : Error {
  using Error::Error;
};

}  // namespace svh
