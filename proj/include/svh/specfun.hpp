#pragma once

#include <cmath>
#include <complex>
#include <cstdint>

#include "svh/errors.hpp"

// Complex special functions needed by the affine and 3/2 transform kernels:
// log-Gamma, Kummer's confluent hypergeometric M, and the modified Bessel
// function of the first kind with complex order. The standard library only
// covers real arguments, and the kernels evaluate these on vertical strips in
// the complex plane, so the implementations live here.

namespace svh {

using cd = std::complex<double>;

namespace detail {

// Lanczos, g = 7, 9 coefficients. Good to ~1e-14 relative over the right
// half-plane, which is the accuracy floor for everything downstream.
inline constexpr double lanczos_g = 7.0;
inline constexpr double lanczos_c[9] = {
    0.99999999999980993,
    676.5203681218851,
    -1259.1392167224028,
    771.32342877765313,
    -176.61502916214059,
    12.507343278686905,
    -0.13857109526572012,
    9.9843695780195716e-6,
    1.5056327351493116e-7,
};

// log(sin(pi z)) without overflow for large |Im z|. Factors out the dominant
// exponential before taking the principal log.
inline cd log_sin_pi(cd z) {
  const cd ipi(0.0, std::acos(-1.0));
  const cd log_2i = cd(std::log(2.0), 0.5 * std::acos(-1.0));
  if (z.imag() > 0.0) {
    // sin(pi z) = e^{-i pi z} (e^{2 i pi z} - 1) / (2i), |e^{2 i pi z}| < 1
    return -ipi * z + std::log(std::exp(2.0 * ipi * z) - 1.0) - log_2i;
  }
  return ipi * z + std::log(1.0 - std::exp(-2.0 * ipi * z)) - log_2i;
}

inline bool near_nonpositive_integer(cd z, double tol) {
  const double n = std::round(z.real());
  if (n > 0.5) return false;
  return std::hypot(z.real() - n, z.imag()) <= tol;
}

}  // namespace detail

// Principal branch of log Gamma(z). Poles at 0, -1, -2, ... raise PoleError
// when approached within 1e-12.
inline cd log_gamma(cd z) {
  if (detail::near_nonpositive_integer(z, 1e-12))
    throw PoleError("log_gamma: argument within 1e-12 of a pole");

  const double pi = std::acos(-1.0);
  if (z.real() < 0.5) {
    // reflection: Gamma(z) Gamma(1-z) = pi / sin(pi z)
    return std::log(pi) - detail::log_sin_pi(z) - log_gamma(1.0 - z);
  }

  cd zz = z - 1.0;
  cd x = detail::lanczos_c[0];
  for (int i = 1; i < 9; ++i) x += detail::lanczos_c[i] / (zz + static_cast<double>(i));
  const cd t = zz + detail::lanczos_g + 0.5;
  return 0.5 * std::log(2.0 * pi) + (zz + 0.5) * std::log(t) - t + std::log(x);
}

inline cd gamma_ratio(cd num, cd den) { return std::exp(log_gamma(num) - log_gamma(den)); }

namespace detail {

// Scaled Taylor series for M(a, b, z) with Re z >= 0. Accumulates in
// rescaled form so sums of magnitude up to e^{|z|} never overflow; returns
// log of the sum. Stops after three consecutive terms below 1e-16 relative.
inline cd kummer_log_series(cd a, cd b, cd z, int max_terms) {
  cd term = 1.0;
  cd sum = 1.0;
  double log_scale = 0.0;
  int calm = 0;
  for (int k = 0; k < max_terms; ++k) {
    term *= (a + static_cast<double>(k)) * z /
            ((b + static_cast<double>(k)) * static_cast<double>(k + 1));
    sum += term;
    const double ts = std::abs(term), ss = std::abs(sum);
    if (ts <= 1e-16 * ss) {
      if (++calm == 3) return std::log(sum) + log_scale;
    } else {
      calm = 0;
    }
    if (ss > 1e250) {
      sum *= 1e-250;
      term *= 1e-250;
      log_scale += 250.0 * std::log(10.0);
    }
  }
  throw ConvergenceError("kummer_m: series did not converge");
}

}  // namespace detail

// log M(a, b, z), principal-branch log of Kummer's function. For Re z < 0 the
// Kummer transform M(a,b,z) = e^z M(b-a, b, -z) moves the series to the
// stable (same-sign) direction. Domain: |z| <= 1e4, |a|, |b| <= 1e3.
inline cd kummer_m_log(cd a, cd b, cd z) {
  if (std::abs(z) > 1e4 || std::abs(a) > 1e3 || std::abs(b) > 1e3)
    throw ConvergenceError("kummer_m: argument outside supported domain");
  if (detail::near_nonpositive_integer(b, 1e-12))
    throw PoleError("kummer_m: b within 1e-12 of a nonpositive integer");
  constexpr int max_terms = 100000;
  if (z.real() < 0.0) return z + detail::kummer_log_series(b - a, b, -z, max_terms);
  return detail::kummer_log_series(a, b, z, max_terms);
}

inline cd kummer_m(cd a, cd b, cd z) {
  const cd lm = kummer_m_log(a, b, z);
  if (lm.real() > 709.0)
    throw ConvergenceError("kummer_m: value overflows double, use kummer_m_log");
  return std::exp(lm);
}

namespace detail {

// Hankel-type large-x expansion of log I_nu(x). Valid when the asymptotic
// series actually decays; the caller checks the tail before trusting it.
inline bool bessel_i_log_asymptotic(cd nu, double x, cd* out) {
  const double pi = std::acos(-1.0);
  const cd mu = 4.0 * nu * nu;
  cd term = 1.0;
  cd sum = 1.0;
  double prev = 1.0;
  for (int k = 1; k <= 14; ++k) {
    const double tk = 2.0 * k - 1.0;
    term *= -(mu - tk * tk) / (8.0 * x * static_cast<double>(k));
    sum += term;
    const double a = std::abs(term);
    if (a > prev) return false;  // series started diverging before converging
    prev = a;
    if (a < 1e-15 * std::abs(sum)) {
      *out = x - 0.5 * std::log(2.0 * pi * x) + std::log(sum);
      return true;
    }
  }
  return false;
}

}  // namespace detail

// log I_nu(x) for real x >= 0 and complex order with Re nu > -1. Ascending
// series accumulated with periodic rescaling; switches to the large-x
// asymptotic expansion when that converges first. For x around 700 and above
// I_nu itself overflows double, which is why the log form is primary.
inline cd bessel_i_log(cd nu, double x) {
  if (!(x >= 0.0)) throw DomainError("bessel_i_log: x must be >= 0");
  if (nu.real() <= -1.0) throw DomainError("bessel_i_log: Re nu must be > -1");
  if (x == 0.0) {
    if (std::abs(nu) == 0.0) return 0.0;
    throw DomainError("bessel_i_log: x = 0 with nu != 0");
  }

  // The expansion parameter is |nu|^2 / x; keeping it below 1/8 makes the
  // 14-term tail provably negligible, and larger orders fall through to the
  // series, which stays accurate (if slower) at any x.
  if (x > 64.0 && std::norm(nu) <= 0.125 * x) {
    cd asym;
    if (detail::bessel_i_log_asymptotic(nu, x, &asym)) return asym;
  }

  const double half = 0.5 * x;
  const cd lead = nu * std::log(half) - log_gamma(nu + 1.0);
  cd term = 1.0;
  cd sum = 1.0;
  double log_scale = 0.0;
  const double h2 = half * half;
  constexpr int max_terms = 200000;
  for (int k = 0; k < max_terms; ++k) {
    term *= h2 / ((static_cast<double>(k) + 1.0) * (nu + static_cast<double>(k + 1)));
    sum += term;
    if (std::abs(term) <= 1e-17 * std::abs(sum))
      return lead + std::log(sum) + log_scale;
    if (std::abs(sum) > 1e250) {
      sum *= 1e-250;
      term *= 1e-250;
      log_scale += 250.0 * std::log(10.0);
    }
  }
  throw ConvergenceError("bessel_i_log: series did not converge");
}

inline cd bessel_i(cd nu, double x) {
  const cd l = bessel_i_log(nu, x);
  if (l.real() > 709.0)
    throw ConvergenceError("bessel_i: value overflows double, use bessel_i_log");
  return std::exp(l);
}

// log of I_nu1(x) / I_nu2(x). Shared argument means the exponential growth
// cancels exactly in log space, so the ratio is usable far past x = 700.
inline cd bessel_i_log_ratio(cd nu1, cd nu2, double x) {
  return bessel_i_log(nu1, x) - bessel_i_log(nu2, x);
}

}  // namespace svh
