#pragma once

#include <cmath>
#include <complex>
#include <vector>

#include "svh/errors.hpp"
#include "svh/linalg.hpp"
#include "svh/payoffs.hpp"
#include "svh/quadrature.hpp"

// Square-root stochastic volatility:
//
//   dX = -V/2 dt + sqrt(V) dW1,   dV = -lambda (V - kappa) dt + sigma sqrt(V) dW2,
//
// with d<W1,W2> = rho dt and S = e^X a martingale. The conditional payoff
// transform is exponentially affine,
//
//   E[e^{z X_T} | F_t] = e^{z X_t} exp(phi_{T-t}(z,0) + psi_{T-t}(z,0) V_t),
//
// where (phi_s, psi_s)(u1, u2) solve the associated Riccati system in s with
// psi_0 = u2, phi_0 = 0. Everything else in this header is bookkeeping on top
// of a careful closed-form evaluation of that pair.

namespace svh {

struct HestonParams {
  double lambda = 0.0;  // mean reversion speed
  double kappa = 0.0;   // long-run variance level
  double sigma = 0.0;   // vol-of-vol
  double rho = 0.0;
  double v0 = 0.0;
  double s0 = 1.0;
  double T = 0.0;

  void validate() const {
    if (!(lambda > 0.0)) throw InvalidParams("heston: lambda must be positive");
    if (!(kappa >= 0.0)) throw InvalidParams("heston: kappa must be nonnegative");
    if (!(sigma > 0.0)) throw InvalidParams("heston: sigma must be positive");
    if (!(rho >= -1.0 && rho <= 1.0)) throw InvalidParams("heston: |rho| must be <= 1");
    if (!(v0 > 0.0)) throw InvalidParams("heston: v0 must be positive");
    if (!(s0 > 0.0)) throw InvalidParams("heston: s0 must be positive");
    if (!(T > 0.0)) throw InvalidParams("heston: T must be positive");
  }
};

struct Riccati {
  cd phi;
  cd psi;
};

struct RiccatiDeriv {
  cd phi;
  cd psi;
  cd dphi_du2;
  cd dpsi_du2;
};

namespace detail {

// Closed-form Riccati solution written in terms of
//   N = btilde - sigma^2 u2 - D,   M = btilde - sigma^2 u2 + D,
// with btilde = lambda - rho sigma u1 and D the principal root of
// btilde^2 - sigma^2 (u1^2 - u1). Then
//   psi_s = u2 + (N M / sigma^2) (1 - e^{-sD}) / (M - N e^{-sD}),
//   phi_s = lambda kappa [ (btilde - D) s / sigma^2 - (2/sigma^2) Log W(s) ],
// where W(s) = (M - N e^{-sD}) / (2D), W(0) = 1, and Log W must be the
// branch that is continuous in s, not the principal value. Continuity is
// enforced by walking s from 0 and accumulating principal argument
// increments over steps refined until each turns by under a quarter circle.
//
// The solution blows up at the first zero of W; evaluation at or past that
// time throws LifetimeExceeded.

struct RiccatiCore {
  cd btilde, delta, d, n, m;
  bool double_root = false;
};

inline RiccatiCore riccati_core(const HestonParams& p, cd u1, cd u2) {
  RiccatiCore c;
  const double s2 = p.sigma * p.sigma;
  c.btilde = p.lambda - p.rho * p.sigma * u1;
  c.delta = c.btilde * c.btilde - s2 * (u1 * u1 - u1);
  c.double_root = std::abs(c.delta) <= 1e-12 * (std::norm(c.btilde) + 1.0);
  if (!c.double_root) {
    c.d = std::sqrt(c.delta);
    c.n = c.btilde - s2 * u2 - c.d;
    c.m = c.btilde - s2 * u2 + c.d;
  }
  return c;
}

// Zeros of s -> M - N e^{-ds} sit at s = -(Log(M/N) + 2 pi i k)/d, so a
// denominator vanishing on (0, t] is decided in closed form rather than by
// hoping a scan lands near it. A zero on the real axis within (0, t] means
// the transform stopped existing before the requested time.
inline void check_denominator_zeros(const RiccatiCore& c, double t) {
  if (!(std::abs(c.n) > 0.0 && std::abs(c.m) > 0.0)) return;
  const double two_pi = 2.0 * std::acos(-1.0);
  const cd base = std::log(c.m / c.n);
  const int kmax = static_cast<int>(std::abs(c.d) * t / two_pi) + 2;
  for (int k = -kmax; k <= kmax; ++k) {
    const cd s = -(base + cd(0.0, two_pi * k)) / c.d;
    if (std::abs(s.imag()) <= 1e-9 * (std::abs(s) + t) && s.real() > 0.0 &&
        s.real() <= t * (1.0 + 1e-12))
      throw LifetimeExceeded("riccati: denominator vanished before requested time");
  }
}

// log W(t) continuous in t along [0, t]. The zero check above guarantees the
// path stays away from the origin on the segment, so the phase is a sum of
// principal increments once every sub-arc is short enough.
inline cd log_denominator_unwrapped(const RiccatiCore& c, double t) {
  check_denominator_zeros(c, t);
  const double pi = std::acos(-1.0);
  const cd two_d = 2.0 * c.d;
  auto w_at = [&](double s) { return (c.m - c.n * std::exp(-c.d * s)) / two_d; };
  auto guard = [&](const cd& w, double s) {
    const double scale =
        (std::abs(c.m) + std::abs(c.n) * std::exp(-c.d.real() * s)) / std::abs(two_d);
    if (std::abs(w) <= 1e-12 * scale)
      throw LifetimeExceeded("riccati: denominator vanished before requested time");
  };

  // Coarse sampling fine enough that e^{-d s} turns at most a quarter circle
  // per step; each step is then bisected until its arc turns by less than a
  // quarter turn, so summing principal arg increments yields the continuous
  // phase even when the path passes close to a zero just outside [0, t].
  const double rot = std::abs(c.d.imag()) * t;
  const int n0 = std::min(1 << 16, static_cast<int>(rot / (0.5 * pi)) + 8);

  double theta = 0.0;
  double s0 = 0.0;
  cd w0 = w_at(0.0);  // equals 1 by construction of m and n
  for (int k = 1; k <= n0; ++k) {
    const double s_next = t * static_cast<double>(k) / n0;
    cd w_next = w_at(s_next);
    guard(w_next, s_next);
    std::vector<std::pair<double, cd>> pending{{s_next, w_next}};
    int splits = 0;
    while (!pending.empty()) {
      const auto [s1, w1] = pending.back();
      const double darg = std::arg(w1 / w0);
      if (std::abs(darg) <= 0.5 * pi || splits > 2000) {
        theta += darg;
        pending.pop_back();
        s0 = s1;
        w0 = w1;
      } else {
        const double sm = 0.5 * (s0 + s1);
        cd wm = w_at(sm);
        guard(wm, sm);
        pending.emplace_back(sm, wm);
        ++splits;
      }
    }
  }
  return cd(std::log(std::abs(w0)), theta);
}

}  // namespace detail

// phi_t(u1, u2), psi_t(u1, u2) with initial condition psi_0 = u2, phi_0 = 0.
inline Riccati riccati(const HestonParams& p, double t, cd u1, cd u2) {
  if (!(t >= 0.0)) throw DomainError("riccati: t must be >= 0");
  if (t == 0.0) return Riccati{0.0, u2};

  const double s2 = p.sigma * p.sigma;
  const double lk = p.lambda * p.kappa;
  detail::RiccatiCore c = detail::riccati_core(p, u1, u2);

  if (c.double_root) {
    const cd psi_hat = c.btilde / s2;  // double root of the Riccati right side
    const cd w = psi_hat - u2;
    if (std::abs(w) > 0.0) {
      const cd t_blow = -2.0 / (s2 * w);
      if (std::abs(t_blow.imag()) <= 1e-13 * std::abs(t_blow) && t_blow.real() > 0.0 &&
          t_blow.real() <= t * (1.0 + 1e-12))
        throw LifetimeExceeded("riccati: denominator vanished before requested time");
    }
    const cd den = 1.0 + 0.5 * s2 * w * t;
    if (std::abs(den) <= 1e-13 * (1.0 + 0.5 * std::abs(s2 * w * t)))
      throw LifetimeExceeded("riccati: denominator vanished at requested time");
    // den traces a straight segment from 1 that does not pass through 0,
    // so the principal log is already the continuous branch
    return Riccati{lk * (psi_hat * t - (2.0 / s2) * std::log(den)),
                   u2 + s2 * w * w * t / (2.0 * den)};
  }

  const cd logw = detail::log_denominator_unwrapped(c, t);
  const cd e = std::exp(-c.d * t);
  const cd den = c.m - c.n * e;
  Riccati out;
  out.psi = u2 + (c.n * c.m / s2) * (1.0 - e) / den;
  out.phi = lk * ((c.btilde - c.d) / s2 * t - (2.0 / s2) * logw);
  return out;
}

// Same solution plus the partial derivatives with respect to the initial
// condition u2, in closed form:
//   dpsi/du2 = 1 - (1 - E)(M^2 - N^2 E) / (M - N E)^2,
//   dphi/du2 = 2 lambda kappa (1 - E) / (M - N E),       E = e^{-tD}.
inline RiccatiDeriv riccati_with_derivative(const HestonParams& p, double t, cd u1, cd u2) {
  if (!(t >= 0.0)) throw DomainError("riccati: t must be >= 0");
  if (t == 0.0) return RiccatiDeriv{0.0, u2, 0.0, 1.0};

  const double s2 = p.sigma * p.sigma;
  const double lk = p.lambda * p.kappa;
  detail::RiccatiCore c = detail::riccati_core(p, u1, u2);
  RiccatiDeriv out;

  if (c.double_root) {
    const Riccati base = riccati(p, t, u1, u2);
    out.phi = base.phi;
    out.psi = base.psi;
    const cd w = c.btilde / s2 - u2;
    const cd den = 2.0 + s2 * w * t;
    out.dpsi_du2 = 1.0 - s2 * t * w * (4.0 + s2 * w * t) / (den * den);
    out.dphi_du2 = 2.0 * lk * t / den;
    return out;
  }

  const Riccati base = riccati(p, t, u1, u2);
  out.phi = base.phi;
  out.psi = base.psi;
  const cd e = std::exp(-c.d * t);
  const cd den = c.m - c.n * e;
  out.dpsi_du2 = 1.0 - (1.0 - e) * (c.m * c.m - c.n * c.n * e) / (den * den);
  out.dphi_du2 = 2.0 * lk * (1.0 - e) / den;
  return out;
}

// First blow-up time of s -> psi_s(u1, 0), or +infinity: the smallest real
// positive denominator zero s_k = -(Log(M/N) + 2 pi i k)/d.
inline double riccati_lifetime(const HestonParams& p, cd u1) {
  const double s2 = p.sigma * p.sigma;
  detail::RiccatiCore c = detail::riccati_core(p, u1, 0.0);

  if (c.double_root) {
    const cd w = c.btilde / s2;
    if (std::abs(w) == 0.0) return std::numeric_limits<double>::infinity();
    const cd t_blow = -2.0 / (s2 * w);
    if (std::abs(t_blow.imag()) <= 1e-13 * std::abs(t_blow) && t_blow.real() > 0.0)
      return t_blow.real();
    return std::numeric_limits<double>::infinity();
  }

  if (!(std::abs(c.n) > 0.0 && std::abs(c.m) > 0.0))
    return std::numeric_limits<double>::infinity();

  const double two_pi = 2.0 * std::acos(-1.0);
  const cd base = std::log(c.m / c.n);
  const double horizon = 100.0 * p.T;
  const int kmax =
      static_cast<int>((std::abs(c.d) * horizon + std::abs(base)) / two_pi) + 2;
  double best = std::numeric_limits<double>::infinity();
  for (int k = -kmax; k <= kmax; ++k) {
    const cd s = -(base + cd(0.0, two_pi * k)) / c.d;
    if (std::abs(s.imag()) <= 1e-9 * (std::abs(s) + p.T) && s.real() > 0.0)
      best = std::min(best, s.real());
  }
  return best;
}

// E[e^{z X_t} | X_0, V_0] transported to time t state (x, v):
// H(z)_t = e^{z x} exp(phi_{T-t}(z, 0) + psi_{T-t}(z, 0) v).
inline cd h_z(const HestonParams& p, double t, double x, double v, cd z) {
  if (!(t >= 0.0 && t <= p.T)) throw DomainError("h_z: t must lie in [0, T]");
  const Riccati r = riccati(p, p.T - t, z, 0.0);
  return std::exp(z * x + r.phi + r.psi * v);
}

// Integrand of the dynamic hedge against a single exponential claim:
// theta(z) = H(z)/S * (z + sigma rho psi_{T-t}(z, 0)).
inline cd theta_z(const HestonParams& p, double t, double x, double v, cd z) {
  const Riccati r = riccati(p, p.T - t, z, 0.0);
  const cd h = std::exp(z * x + r.phi + r.psi * v);
  return h * (z + p.sigma * p.rho * r.psi) / std::exp(x);
}

// Remaining-variance loading alpha(t) = (1 - e^{-lambda (T-t)}) / lambda and
// the variance-swap value decomposition H0_t = [X,X]_t + alpha V_t + beta - k.
inline double swap_alpha(const HestonParams& p, double t) {
  return (1.0 - std::exp(-p.lambda * (p.T - t))) / p.lambda;
}

inline double swap_beta(const HestonParams& p, double t) {
  return p.kappa * ((p.T - t) - swap_alpha(p, t));
}

// Fair variance-swap strike E[[X,X]_T].
inline double expected_quadratic_variation(const HestonParams& p) {
  return p.kappa * p.T + (p.v0 - p.kappa) * swap_alpha(p, 0.0);
}

inline double expected_v(const HestonParams& p, double t) {
  return p.kappa + (p.v0 - p.kappa) * std::exp(-p.lambda * t);
}

// Dynamic hedge of the variance swap itself.
inline double theta_swap(const HestonParams& p, double t, double s) {
  return p.rho * p.sigma * swap_alpha(p, t) / s;
}

// E[V_t H(z1)_t H(z2)_t] at time t, all claims sharing horizon T. With
// r0 = phi_{T-t}(z1,0) + phi_{T-t}(z2,0), r1 = psi_{T-t}(z1,0) + psi_{T-t}(z2,0)
// the product H(z1) H(z2) = e^{(z1+z2) X_t + r0 + r1 V_t}, and the V-weighted
// expectation is the u2-derivative of the affine transform at (z1+z2, r1):
//   E[V e^{u1 X_t + u2 V_t}] = e^{u1 X_0} e^{phi_t + psi_t V_0} (dphi/du2 + V_0 dpsi/du2).
//
// Existence of the strip integrals downstream needs this transform to stay
// finite a little beyond r1; the epsilon-ball probe makes that check explicit
// instead of relying on a later, harder-to-attribute blow-up.
inline cd mixed_moment(const HestonParams& p, double t, cd z1, cd z2,
                       bool check_integrability = true) {
  if (!(t >= 0.0 && t <= p.T)) throw DomainError("mixed_moment: t must lie in [0, T]");
  const double s = p.T - t;
  const Riccati r1 = riccati(p, s, z1, 0.0);
  const Riccati r2 = (z2 == cd(0.0)) ? Riccati{0.0, 0.0} : riccati(p, s, z2, 0.0);
  const cd u1 = z1 + z2;
  const cd u2 = r1.psi + r2.psi;

  if (check_integrability) {
    // |e^{u1 X + u2 V}| is controlled by the transform at the real parts, and
    // only on the real slice can a denominator zero actually be hit, so the
    // epsilon ball is probed there
    constexpr double eps = 1e-4;
    try {
      (void)riccati(p, t, cd(u1.real()), cd(u2.real() + eps));
    } catch (const LifetimeExceeded&) {
      throw IntegrabilityError("mixed_moment: transform explodes within the epsilon ball");
    }
  }

  const RiccatiDeriv rd = riccati_with_derivative(p, t, u1, u2);
  const double x0 = std::log(p.s0);
  return std::exp(u1 * x0 + r1.phi + r2.phi + rd.phi + rd.psi * p.v0) *
         (rd.dphi_du2 + p.v0 * rd.dpsi_du2);
}

struct CoeffDiagnostics {
  double imag_max = 0.0;   // largest |Im| discarded when taking real parts
  double asym_max = 0.0;   // largest |C_ij - C_ji| seen before symmetrization
};

namespace detail {

inline void absorb_imag(cd value, double tol_scale, CoeffDiagnostics* diag,
                        const char* what) {
  const double im = std::abs(value.imag());
  if (im > 1e-6 * (1.0 + std::abs(value.real())) * tol_scale)
    throw Error(std::string(what) + ": imaginary residue exceeds tolerance");
  if (diag) diag->imag_max = std::max(diag->imag_max, im);
}

}  // namespace detail

// Expected squared hedging error of the purely dynamic strategy:
// A = sigma^2 (1 - rho^2) Int_0^T alpha(t)^2 E[V_t] dt.
inline double coeff_A(const HestonParams& p, const QuadratureSpec& spec = {}) {
  p.validate();
  auto f = [&](double t) { return cd(swap_alpha(p, t) * swap_alpha(p, t) * expected_v(p, t), 0.0); };
  QuadratureSpec qs = spec;
  qs.rel_tol = std::min(spec.rel_tol, 1e-11);
  qs.abs_tol = std::min(spec.abs_tol, 1e-14);
  const IntegrationResult r = integrate_edges(f, {0.0, 0.5 * p.T, p.T}, qs);
  return p.sigma * p.sigma * (1.0 - p.rho * p.rho) * r.value.real();
}

// Cross terms B_j = sigma^2 (1-rho^2) Int_0^T alpha(t)
//   Int E[V_t H(z)_t] psi_{T-t}(z,0) zeta_j(dz) dt,
// strip integrals taken over the full contour so the imaginary part of the
// result is an honest symmetry diagnostic rather than zero by construction.
inline std::vector<double> coeff_B(const HestonParams& p,
                                   const std::vector<EuropeanOption>& basket,
                                   const QuadratureSpec& spec = {},
                                   CoeffDiagnostics* diag = nullptr) {
  p.validate();
  std::vector<double> out;
  out.reserve(basket.size());
  const double pref = p.sigma * p.sigma * (1.0 - p.rho * p.rho);

  for (const EuropeanOption& opt : basket) {
    const StripMeasure zeta = measure_of(opt);
    auto time_slice = [&](double t) -> cd {
      const double s = p.T - t;
      // one integrability probe per time, at the real abscissa; |H(z)| on the
      // strip is dominated by its value at Re z, so this covers the contour
      const cd r1_real = riccati(p, s, zeta.abscissa, 0.0).psi;
      try {
        (void)riccati(p, t, cd(zeta.abscissa), r1_real + 1e-4);
      } catch (const LifetimeExceeded&) {
        throw IntegrabilityError("coeff_B: transform explodes within the epsilon ball");
      }
      auto strip_integrand = [&](cd z) {
        const Riccati rr = riccati(p, s, z, 0.0);
        return mixed_moment(p, t, z, 0.0, false) * rr.psi * payoff_transform(opt, z);
      };
      const IntegrationResult inner = integrate_strip(strip_integrand, zeta.abscissa, spec);
      return swap_alpha(p, t) * inner.value;
    };
    QuadratureSpec tq = spec;  // the time direction is smooth; 16 nodes suffice
    tq.points_per_panel = 16;
    const IntegrationResult bt = integrate_edges(time_slice, {0.0, 0.5 * p.T, p.T}, tq);
    const cd value = pref * bt.value;
    detail::absorb_imag(value, 1.0, diag, "coeff_B");
    out.push_back(value.real());
  }
  return out;
}

// Gram matrix C_ij of the static claims' unhedgeable parts. The claim-i leg
// of the double strip integral is hoisted per outer node, and since the pair
// integrand conjugates under (z1, z2) -> (conj z1, conj z2) the outer contour
// is integrated over its upper half and completed by conjugation; the result
// is real by that symmetry, so the cross-entry asymmetry C_ij vs C_ji (two
// genuinely different quadratures) is the correctness diagnostic here. Both
// orders are computed for exactly that reason.
inline Matrix coeff_C(const HestonParams& p, const std::vector<EuropeanOption>& basket,
                      const QuadratureSpec& spec = {}, CoeffDiagnostics* diag = nullptr) {
  p.validate();
  const std::size_t d = basket.size();
  Matrix out(d, d);
  const double pref = p.sigma * p.sigma * (1.0 - p.rho * p.rho);
  const double pi = std::acos(-1.0);
  const double x0 = std::log(p.s0);

  QuadratureSpec inner_spec = spec;
  inner_spec.rel_tol = 0.25 * spec.rel_tol;
  inner_spec.abs_tol = 0.25 * spec.abs_tol;
  QuadratureSpec tq = spec;  // the time direction is smooth; 16 nodes suffice
  tq.points_per_panel = 16;

  for (std::size_t i = 0; i < d; ++i) {
    for (std::size_t j = 0; j < d; ++j) {
      const StripMeasure zi = measure_of(basket[i]);
      const StripMeasure zj = measure_of(basket[j]);
      auto time_slice = [&](double t) -> cd {
        const double s = p.T - t;
        const cd r1_real =
            riccati(p, s, zi.abscissa, 0.0).psi + riccati(p, s, zj.abscissa, 0.0).psi;
        try {
          (void)riccati(p, t, cd(zi.abscissa + zj.abscissa), r1_real + 1e-4);
        } catch (const LifetimeExceeded&) {
          throw IntegrabilityError("coeff_C: transform explodes within the epsilon ball");
        }
        auto outer = [&](double y1) {
          const cd z1(zi.abscissa, y1);
          const Riccati ri = riccati(p, s, z1, 0.0);
          const cd fi = ri.psi * payoff_transform(basket[i], z1);
          auto f2 = [&](double y2) {
            const cd z2(zj.abscissa, y2);
            const Riccati rj = riccati(p, s, z2, 0.0);
            const RiccatiDeriv rd = riccati_with_derivative(p, t, z1 + z2, ri.psi + rj.psi);
            const cd moment =
                std::exp((z1 + z2) * x0 + ri.phi + rj.phi + rd.phi + rd.psi * p.v0) *
                (rd.dphi_du2 + p.v0 * rd.dpsi_du2);
            return moment * fi * rj.psi * payoff_transform(basket[j], z2);
          };
          return integrate_edges(f2, detail::strip_edges(-spec.z_max, spec.z_max, 4),
                                 inner_spec)
              .value;
        };
        const IntegrationResult half =
            integrate_edges(outer, detail::strip_edges(0.0, spec.z_max, 8), spec);
        return (half.value + std::conj(half.value)) / (4.0 * pi * pi);
      };
      const IntegrationResult ct = integrate_edges(time_slice, {0.0, 0.5 * p.T, p.T}, tq);
      const cd value = pref * ct.value;
      detail::absorb_imag(value, 1.0, diag, "coeff_C");
      out(i, j) = value.real();
    }
  }

  if (diag) {
    for (std::size_t i = 0; i < d; ++i)
      for (std::size_t j = i + 1; j < d; ++j)
        diag->asym_max = std::max(diag->asym_max, std::abs(out(i, j) - out(j, i)));
  }
  return out;
}

}  // namespace svh
