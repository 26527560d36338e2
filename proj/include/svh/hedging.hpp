#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

#include "svh/errors.hpp"
#include "svh/heston.hpp"
#include "svh/linalg.hpp"
#include "svh/payoffs.hpp"
#include "svh/quadrature.hpp"
#include "svh/three_halves.hpp"

// Outer layer of the hedge construction. The model headers deliver the
// coefficients of the expected squared hedging error
//   eps(v)^2 = A - 2 v.B + v.C v
// as strip quadratures; this file owns the quadratic problem itself: validate
// the coefficients, solve for the optimal static weights, and evaluate the
// combined dynamic stock position along a state path.

namespace svh {

// The target claim: realized quadratic variation minus a strike, settled at T.
struct VarianceSwapClaim {
  double k_swap = 0.0;  // strike, in units of annualized realized variance
  double T = 0.0;       // horizon in years

  void validate() const {
    if (!(T > 0.0)) throw InvalidParams("variance swap horizon must be positive");
    if (!std::isfinite(k_swap)) throw InvalidParams("variance swap strike must be finite");
  }
};

struct HedgeCoefficients {
  double a = 0.0;            // squared error of the purely dynamic hedge
  std::vector<double> b;     // cross terms swap x claim
  Matrix c{0, 0};            // Gram matrix of the claims' unhedgeable parts
  double imag_diagnostic = 0.0;
  double asym_diagnostic = 0.0;
};

// Exact symmetrization plus the structural checks every downstream consumer
// relies on: A >= 0 and C not significantly indefinite. A negative eigenvalue
// beyond rounding means the quadrature failed, not that the problem is odd.
inline void validate_coefficients(HedgeCoefficients& h) {
  const std::size_t d = h.b.size();
  if (h.c.rows() != d || h.c.cols() != d)
    throw DimensionMismatch("hedge coefficients: B and C disagree on basket size");
  if (!(h.a >= 0.0)) throw InvalidParams("hedge coefficients: A must be nonnegative");

  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = i + 1; j < d; ++j) {
      const double avg = 0.5 * (h.c(i, j) + h.c(j, i));
      h.c(i, j) = avg;
      h.c(j, i) = avg;
    }

  if (d > 0) {
    const SymmetricEigen eig = eigen_symmetric(h.c);
    const double scale = std::max(std::abs(eig.values.front()), std::abs(eig.values.back()));
    if (eig.values.front() < -1e-8 * scale)
      throw InvalidParams("hedge coefficients: C has a materially negative eigenvalue");
  }
}

inline HedgeCoefficients hedge_coefficients(const HestonParams& p,
                                            const std::vector<EuropeanOption>& basket,
                                            const QuadratureSpec& spec = {}) {
  CoeffDiagnostics diag;
  HedgeCoefficients out;
  out.a = coeff_A(p, spec);
  out.b = coeff_B(p, basket, spec, &diag);
  out.c = basket.empty() ? Matrix(0, 0) : coeff_C(p, basket, spec, &diag);
  out.imag_diagnostic = diag.imag_max;
  out.asym_diagnostic = diag.asym_max;
  validate_coefficients(out);
  return out;
}

inline HedgeCoefficients hedge_coefficients(const ThreeHalvesParams& p,
                                            const std::vector<EuropeanOption>& basket,
                                            const QuadratureSpec& spec = {},
                                            const CoeffTuning3H& tune = {}) {
  HedgeCoefficients out;
  out.a = coeff_A(p, spec, tune);
  if (!basket.empty()) {
    const CoeffResult3H r = coeff_BC(p, basket, spec, tune);
    out.b = r.b;
    out.c = r.c;
    out.imag_diagnostic = r.diag.imag_max;
    out.asym_diagnostic = r.diag.asym_max;
  }
  validate_coefficients(out);
  return out;
}

// eps(v)^2 for an arbitrary static position v.
inline double hedging_error2(const HedgeCoefficients& h, const std::vector<double>& v) {
  const std::size_t d = h.b.size();
  if (v.size() != d) throw DimensionMismatch("hedging_error2: weight vector has wrong length");
  double out = h.a;
  for (std::size_t i = 0; i < d; ++i) {
    out -= 2.0 * v[i] * h.b[i];
    for (std::size_t j = 0; j < d; ++j) out += v[i] * h.c(i, j) * v[j];
  }
  return out;
}

enum class SolverKind { direct, pseudo_inverse };

struct HedgeSolution {
  std::vector<double> v_star;
  double eps2_unhedged = 0.0;    // = A
  double eps2_semistatic = 0.0;  // eps(v*)^2
  double variance_reduction = 0.0;
  SolverKind solver = SolverKind::direct;
};

// v* = C^{-1} B through the spectral decomposition; eigenvalues below
// 1e-12 of the largest are truncated, which turns a degenerate C (duplicate
// claims, rho = +-1) into the minimum-norm optimizer instead of an error.
inline HedgeSolution solve(const HedgeCoefficients& h) {
  HedgeSolution out;
  out.eps2_unhedged = h.a;
  const std::size_t d = h.b.size();
  if (d == 0) {
    out.eps2_semistatic = h.a;
    return out;
  }

  const SymmetricSolve sol = solve_symmetric(h.c, h.b);
  out.v_star = sol.x;
  out.solver = sol.used_pseudo_inverse ? SolverKind::pseudo_inverse : SolverKind::direct;
  out.eps2_semistatic = hedging_error2(h, out.v_star);
  // the optimum of a PSD quadratic cannot exceed the v = 0 value; anything
  // past rounding would mean C failed validation upstream
  out.eps2_semistatic = std::min(out.eps2_semistatic, h.a);
  if (out.eps2_semistatic < 0.0 && out.eps2_semistatic > -1e-10 * std::max(1.0, h.a))
    out.eps2_semistatic = 0.0;
  out.variance_reduction =
      (h.a > 0.0) ? std::clamp(1.0 - out.eps2_semistatic / h.a, 0.0, 1.0) : 0.0;
  return out;
}

namespace detail {

// Re Int theta(z) zeta_j(dz) over the claim's strip, parameterized by
// y = Im z. The contour is conjugate-symmetric, so twice the real part of the
// upper half suffices.
template <class Params>
double claim_theta(const Params& p, const EuropeanOption& o, double t, double x, double v,
                   const QuadratureSpec& spec) {
  const StripMeasure m = measure_of(o);
  const double pi = std::acos(-1.0);
  auto f = [&](double y) {
    const cd z(m.abscissa, y);
    return theta_z(p, t, x, v, z) * payoff_transform(o, z) / (2.0 * pi);
  };
  const IntegrationResult r =
      integrate_edges(f, strip_edges(0.0, spec.z_max, 8), spec);
  return 2.0 * r.value.real();
}

}  // namespace detail

// Stock position of the combined semi-static strategy at time t and state
// (s, v): the swap's own dynamic hedge minus the static weights' claim hedges.
inline double dynamic_strategy(const HestonParams& p, const std::vector<EuropeanOption>& basket,
                               const std::vector<double>& v_star, double t, double s, double v,
                               const QuadratureSpec& spec = {}) {
  p.validate();
  if (v_star.size() != basket.size())
    throw DimensionMismatch("dynamic_strategy: weights and basket differ in length");
  if (!(t >= 0.0 && t < p.T)) throw DomainError("dynamic_strategy: t must lie in [0, T)");
  if (!(s > 0.0 && v >= 0.0)) throw DomainError("dynamic_strategy: state out of range");
  const double x = std::log(s);
  double out = theta_swap(p, t, s);
  for (std::size_t j = 0; j < basket.size(); ++j)
    out -= v_star[j] * detail::claim_theta(p, basket[j], t, x, v, spec);
  return out;
}

inline double dynamic_strategy(const ThreeHalvesParams& p,
                               const std::vector<EuropeanOption>& basket,
                               const std::vector<double>& v_star, double t, double s, double v,
                               const QuadratureSpec& spec = {}) {
  p.validate();
  if (v_star.size() != basket.size())
    throw DimensionMismatch("dynamic_strategy: weights and basket differ in length");
  if (!(t >= 0.0 && t < p.T)) throw DomainError("dynamic_strategy: t must lie in [0, T)");
  if (!(s > 0.0 && v > 0.0)) throw DomainError("dynamic_strategy: state out of range");
  const double x = std::log(s);
  double out = theta_swap(p, t, v, s);
  for (std::size_t j = 0; j < basket.size(); ++j)
    out -= v_star[j] * detail::claim_theta(p, basket[j], t, x, v, spec);
  return out;
}

}  // namespace svh
