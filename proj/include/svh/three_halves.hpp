#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <vector>

#include "svh/errors.hpp"
#include "svh/linalg.hpp"
#include "svh/payoffs.hpp"
#include "svh/quadrature.hpp"
#include "svh/specfun.hpp"

// 3/2 stochastic volatility:
//
//   dX = -V/2 dt + sqrt(V) dW1,   dV = V (lambda - kappa V) dt + sigma V^{3/2} dW2,
//
// d<W1,W2> = rho dt. The reciprocal R = 1/V is a square-root diffusion,
//
//   dR = (kappa + sigma^2 - lambda R) dt - sigma sqrt(R) dW2,
//
// which supplies the transition density of V in closed form. Conditional
// payoff transforms are not exponentially affine here; instead
//
//   E[e^{z X_T} | F_t] = e^{z X_t} g(t, V_t, z)
//
// with g a ratio of Gamma factors times a Kummer function. S = e^X is a true
// martingale iff kappa - rho sigma >= -sigma^2 / 2, which validate() enforces.

namespace svh {

struct ThreeHalvesParams {
  double lambda = 0.0;  // low-variance growth rate
  double kappa = 0.0;   // quadratic mean reversion
  double sigma = 0.0;
  double rho = 0.0;
  double v0 = 0.0;
  double s0 = 1.0;
  double T = 0.0;

  // R = 1/V is a CIR process with level parameter kappa + sigma^2; its index
  // q = 2 kappa / sigma^2 + 1 controls which V-moments exist (eta < q + 1).
  double q() const { return 2.0 * kappa / (sigma * sigma) + 1.0; }

  void validate() const {
    if (!(lambda > 0.0)) throw InvalidParams("three_halves: lambda must be positive");
    if (!(kappa > 0.0)) throw InvalidParams("three_halves: kappa must be positive");
    if (!(sigma > 0.0)) throw InvalidParams("three_halves: sigma must be positive");
    if (!(rho >= -1.0 && rho <= 1.0)) throw InvalidParams("three_halves: |rho| must be <= 1");
    if (!(v0 > 0.0)) throw InvalidParams("three_halves: v0 must be positive");
    if (!(s0 > 0.0)) throw InvalidParams("three_halves: s0 must be positive");
    if (!(T > 0.0)) throw InvalidParams("three_halves: T must be positive");
    if (!(kappa - rho * sigma >= -0.5 * sigma * sigma))
      throw InvalidParams("three_halves: kappa - rho sigma >= -sigma^2/2 required for S to be a martingale");
  }
};

namespace detail {

// CIR transition ingredients for R_t = 1/V_t given V_0:
//   ct = 2 lambda / (sigma^2 (1 - e^{-lambda t})),
//   u = ct e^{-lambda t} / V_0,   w(v) = ct / v,
//   x(v) = 2 sqrt(u w)  (the Bessel argument).
struct CirKernel {
  double ct, u, log_u;

  CirKernel(const ThreeHalvesParams& p, double t) {
    if (!(t > 0.0)) throw DomainError("three_halves: transition time must be > 0");
    const double em = -std::expm1(-p.lambda * t);  // 1 - e^{-lambda t}
    ct = 2.0 * p.lambda / (p.sigma * p.sigma * em);
    u = ct * std::exp(-p.lambda * t) / p.v0;
    log_u = std::log(u);
  }

  double w(double v) const { return ct / v; }
  double bessel_x(double v) const { return 2.0 * std::sqrt(u * w(v)); }
};

// log f_{V_t}(v) with the Bessel factor left out; density = base + log I_q(x)
inline double density_log_base(const CirKernel& k, double q, double v) {
  const double w = k.w(v);
  return std::log(k.ct) - k.u - w + 0.5 * q * (std::log(w) - k.log_u) - 2.0 * std::log(v);
}

// Composite Gauss panels of fixed order appended over [a, b].
inline void append_panel_nodes(double a, double b, int order, int n_panels,
                               std::vector<double>* nodes, std::vector<double>* weights) {
  const GaussLegendre& gl = gauss_legendre(order);
  for (int j = 0; j < n_panels; ++j) {
    const double pa = a + (b - a) * j / n_panels;
    const double pb = a + (b - a) * (j + 1) / n_panels;
    const double c = 0.5 * (pa + pb), h = 0.5 * (pb - pa);
    for (std::size_t i = 0; i < gl.nodes.size(); ++i) {
      nodes->push_back(c + h * gl.nodes[i]);
      weights->push_back(h * gl.weights[i]);
    }
  }
}

}  // namespace detail

// Transition density of V_t. Assembled in log space: the Bessel factor grows
// like e^x while the exponential prefactor decays like e^{-u-w}, and only
// their sum is representable.
inline double v_density(const ThreeHalvesParams& p, double t, double v) {
  p.validate();
  if (!(v > 0.0)) throw DomainError("v_density: v must be positive");
  const detail::CirKernel k(p, t);
  const double q = p.q();
  return std::exp(detail::density_log_base(k, q, v) + bessel_i_log(cd(q), k.bessel_x(v)).real());
}

// E[V_t^eta]. Exists iff eta < q + 1; at and above that order the integral
// against the v^{-(q+2)} density tail diverges.
inline double v_moment(const ThreeHalvesParams& p, double t, double eta) {
  p.validate();
  if (!(p.q() + 1.0 - eta > 0.0))
    throw MomentExplodedError("v_moment: moment of order eta requires eta < q + 1");
  const detail::CirKernel k(p, t);
  const double q = p.q();
  const cd lm = kummer_m_log(cd(q + 1.0 - eta), cd(q + 1.0), cd(k.u));
  const cd lg = log_gamma(cd(q + 1.0 - eta)) - log_gamma(cd(q + 1.0));
  return std::exp(eta * std::log(k.ct) - k.u + lg.real() + lm.real());
}

namespace detail {

// Conditioning e^{z X_t} on the variance path leaves an exponential
// functional of IV = int_0^t V ds = int_0^t ds / R_s. For a square-root
// bridge, tilting by exp(-theta int ds/R) shifts the Bessel index of the
// transition density from q to sqrt(q^2 + 8 theta / sigma^2), so
//
//   nu_z = (2/sigma^2) sqrt(B_z),
//   B_z  = (kappa + sigma^2/2)^2
//          + 2 sigma^2 [ z (1/2 - rho (kappa + sigma^2/2)/sigma) - z^2 (1 - rho^2)/2 ].
//
// nu_0 = q, and for |Im z| large nu_z grows like 2 |Im z| sqrt(1-rho^2)/sigma
// along the real direction, which is what makes the strip integrands decay.
inline cd bessel_order(const ThreeHalvesParams& p, cd z) {
  const double s2 = p.sigma * p.sigma;
  const double khat = p.kappa + 0.5 * s2;
  const cd bz = khat * khat +
                2.0 * s2 * (z * (0.5 - p.rho * khat / p.sigma) - 0.5 * z * z * (1.0 - p.rho * p.rho));
  if (bz.imag() == 0.0 && bz.real() <= 0.0)
    throw DomainError("three_halves: conditional transform order hits the branch cut");
  const cd nu = 2.0 / s2 * std::sqrt(bz);
  if (nu.real() <= -1.0)
    throw DomainError("three_halves: conditional transform outside the Bessel domain");
  return nu;
}

}  // namespace detail

// E[e^{z X_t} | V_t = v], started from (x0, V_0). A ratio of Bessel functions
// of the same argument with orders nu_z and q; the exponential growth in the
// argument cancels in the log-ratio.
inline cd cond_x_given_v(const ThreeHalvesParams& p, double t, double x0, double v, cd z) {
  p.validate();
  if (!(v > 0.0)) throw DomainError("cond_x_given_v: v must be positive");
  const detail::CirKernel k(p, t);
  const cd nu = detail::bessel_order(p, z);
  const cd log_cond = z * x0 - z * p.lambda * p.rho * t / p.sigma +
                      z * p.rho / p.sigma * (std::log(v) - std::log(p.v0)) +
                      bessel_i_log_ratio(nu, cd(p.q()), k.bessel_x(v));
  return std::exp(log_cond);
}

namespace detail {

// Parameters of the conditional transform g(t, v, z) at time-to-maturity s:
//   gamma = 2 lambda / (sigma^2 (e^{lambda s} - 1) v),
//   alpha = -(1/2) - khat_z/sigma^2 + c_z,  beta = 1 + 2 c_z,
//   c_z   = sqrt( (1/2 + khat_z/sigma^2)^2 + (z - z^2)/sigma^2 ),
//   khat_z = kappa - z rho sigma,
// and g = Gamma(beta - alpha)/Gamma(beta) gamma^alpha M(alpha, beta, -gamma).
// The martingale condition makes alpha vanish at z = 0 and z = 1, so g = 1
// there identically.
struct GParams {
  cd alpha, beta, log_gamma_ratio;
};

inline GParams g_params(const ThreeHalvesParams& p, cd z) {
  const double s2 = p.sigma * p.sigma;
  const cd khat = p.kappa - z * p.rho * p.sigma;
  const cd half_term = 0.5 + khat / s2;
  const cd arg = half_term * half_term + (z - z * z) / s2;
  if (arg.imag() == 0.0 && arg.real() <= 0.0)
    throw DomainError("three_halves: conditional transform parameter hits the branch cut");
  const cd c = std::sqrt(arg);
  GParams g;
  g.alpha = -0.5 - khat / s2 + c;
  g.beta = 1.0 + 2.0 * c;
  g.log_gamma_ratio = log_gamma(g.beta - g.alpha) - log_gamma(g.beta);
  return g;
}

inline double g_gamma(const ThreeHalvesParams& p, double s, double v) {
  return 2.0 * p.lambda / (p.sigma * p.sigma * std::expm1(p.lambda * s) * v);
}

struct GPair {
  cd g;
  cd dg;  // partial derivative in v
};

// Above this point the Kummer argument would leave the series' supported
// domain; the expansion of M(a, b, -gamma) in 1/gamma is accurate to ~1e-11
// there, and the leading cancellation in dg is done analytically.
inline constexpr double g_gamma_switch = 6.0e3;

inline GPair g_eval(const GParams& gp, double gamma, double v) {
  GPair out;
  const cd a = gp.alpha, b = gp.beta;
  if (gamma > g_gamma_switch) {
    const cd e1 = 1.0 + a - b;
    const cd t1 = a * e1 / gamma;
    const cd t2 = a * (a + 1.0) * e1 * (2.0 + a - b) / (2.0 * gamma * gamma);
    out.g = 1.0 + t1 + t2;
    out.dg = a / v * (e1 / gamma + (a + 1.0) * e1 * (2.0 + a - b) / (gamma * gamma));
    return out;
  }
  const double lg = std::log(gamma);
  const cd common = gp.log_gamma_ratio + a * lg;
  const cd m0 = std::exp(common + kummer_m_log(a, b, cd(-gamma)));
  const cd m1 = std::exp(common + std::log(gamma / b) + kummer_m_log(a + 1.0, b + 1.0, cd(-gamma)));
  out.g = m0;
  out.dg = a / v * (m1 - m0);
  return out;
}

}  // namespace detail

struct GValue {
  cd g;
  cd dg;
};

// g and its v-derivative in one evaluation (they share all special-function
// work); the building block for strategies and coefficient kernels.
inline GValue g_value(const ThreeHalvesParams& p, double t, double v, cd z) {
  p.validate();
  if (!(t >= 0.0 && t < p.T)) throw DomainError("g_value: t must lie in [0, T)");
  if (!(v > 0.0)) throw DomainError("g_value: v must be positive");
  // alpha = 0 at z = 0 and z = 1 (cash and forward), so g is identically one
  if (z == cd(0.0) || z == cd(1.0)) return {1.0, 0.0};
  const detail::GParams gp = detail::g_params(p, z);
  const detail::GPair pr = detail::g_eval(gp, detail::g_gamma(p, p.T - t, v), v);
  return {pr.g, pr.dg};
}

inline cd g_fn(const ThreeHalvesParams& p, double t, double v, cd z) {
  return g_value(p, t, v, z).g;
}

inline cd g_dv(const ThreeHalvesParams& p, double t, double v, cd z) {
  return g_value(p, t, v, z).dg;
}

inline cd h_z(const ThreeHalvesParams& p, double t, double x, double v, cd z) {
  return std::exp(z * x) * g_fn(p, t, v, z);
}

// theta(z) = (z H(z) + rho sigma V e^{z X} d_v g) / S: the first piece is the
// plain delta of an exponential claim, the second the variance exposure
// picked up through d<X,V> = rho sigma V^2 dt against d<X,X> = V dt.
inline cd theta_z(const ThreeHalvesParams& p, double t, double x, double v, cd z) {
  const GValue gv = g_value(p, t, v, z);
  return std::exp(z * x) * (z * gv.g + p.rho * p.sigma * v * gv.dg) / std::exp(x);
}

// Remaining-variance scale alpha(t) = (e^{lambda (T-t)} - 1) / lambda.
inline double alpha_tilde(const ThreeHalvesParams& p, double t) {
  return std::expm1(p.lambda * (p.T - t)) / p.lambda;
}

// h'(y) for the variance-swap value h(alpha(t) V_t): equal to
//   (2/sigma^2) Int_y^inf e^{2/(sigma^2 u) - 2/(sigma^2 y)} y^pexp u^{-pexp-2} du,
// pexp = 2 kappa / sigma^2. Substituting s = w0 - 2/(sigma^2 u) with
// w0 = 2/(sigma^2 y) turns it into
//   h'(y) = Int_0^{w0} e^{-s} (1 - s/w0)^{pexp} ds,
// a bounded monotone integrand; the range is capped at 60 since e^{-s} is
// dead beyond that. h'(0+) = 1 and h'(y) ~ 2/(sigma^2 (pexp+1) y) at infinity.
inline double h_prime(const ThreeHalvesParams& p, double y) {
  if (!(y >= 0.0)) throw DomainError("h_prime: y must be >= 0");
  if (y == 0.0) return 1.0;
  const double pexp = 2.0 * p.kappa / (p.sigma * p.sigma);
  const double w0 = 2.0 / (p.sigma * p.sigma * y);
  const double hi = std::min(w0, 60.0);
  auto f = [&](double s) {
    if (s >= w0) return cd(0.0, 0.0);
    return cd(std::exp(-s + pexp * std::log1p(-s / w0)), 0.0);
  };
  QuadratureSpec qs;
  qs.rel_tol = 1e-11;
  qs.abs_tol = 1e-15;
  return integrate_finite(f, 0.0, hi, qs).value.real();
}

// h(y) = Int_0^y h'(x) dx by nested quadrature over geometrically grown panels.
inline double h_fn(const ThreeHalvesParams& p, double y) {
  if (!(y >= 0.0)) throw DomainError("h_fn: y must be >= 0");
  if (y == 0.0) return 0.0;
  auto f = [&](double x) { return cd(h_prime(p, x), 0.0); };
  QuadratureSpec qs;
  qs.rel_tol = 1e-10;
  qs.abs_tol = 1e-14;
  std::vector<double> edges{0.0};
  double w = std::min(0.25, y);
  while (edges.back() < y) {
    edges.push_back(std::min(edges.back() + w, y));
    w *= 2.0;
  }
  return integrate_edges(f, edges, qs).value.real();
}

// Fair variance-swap strike: at t = 0 the value decomposition gives
// E[[X,X]_T] = h(alpha(0) V_0) directly.
inline double expected_quadratic_variation(const ThreeHalvesParams& p) {
  p.validate();
  return h_fn(p, alpha_tilde(p, 0.0) * p.v0);
}

inline double theta_swap(const ThreeHalvesParams& p, double t, double v, double s) {
  const double a = alpha_tilde(p, t);
  return p.rho * p.sigma * v * h_prime(p, a * v) * a / s;
}

struct CoeffDiagnostics3H {
  double imag_max = 0.0;  // largest imaginary residue absorbed from a cross term
  double asym_max = 0.0;  // largest |C_ij - C_ji| before symmetrization
};

// Knobs of the fixed coefficient quadrature, exposed so tests can tighten the
// spacings and confirm convergence. Defaults are sized for ~1e-5 relative
// accuracy on the covered parameter ranges; halving lattice_h and doubling the
// panel counts buys roughly another decade.
struct CoeffTuning3H {
  double lattice_h = 0.2;      // strip node spacing (uniform trapezoid lattice)
  int core_panels = 8;         // variance panels across the density core (order 8)
  int tail_panels = 2;         // variance panels per power-law tail (order 16)
  double strip_floor = 16.0;   // never truncate a strip before this height
  double strip_stretch = 1.0;  // scales the probed strip extent
  std::vector<double> t_edges_frac{0.0, 0.15, 0.4, 0.7, 1.0};
  int t_order = 16;
};

struct CoeffResult3H {
  std::vector<double> b;
  Matrix c{0, 0};
  CoeffDiagnostics3H diag;
};

namespace detail {

struct VGrid {
  std::vector<double> v, wv;  // nodes and weights including the dv measure
  double v_peak = 0.0;
};

// Variance quadrature window from a coarse log-space scan of the actual
// integrand envelope, refined around the peak. The envelope carries the h'
// and d_v g factors because the bare density third moment converges far too
// slowly in v to truncate on its own (q + 1 is barely above 3 in the regimes
// of interest).
template <typename LogWeight>
VGrid build_v_grid(const ThreeHalvesParams& p, double t, LogWeight&& lw,
                   const CoeffTuning3H& tune) {
  double peak = -1e300;
  int ipk = 0;
  std::vector<double> mag(121);
  for (int i = 0; i <= 120; ++i) {
    const double u = -30.0 + 0.5 * i;
    double m = -1e300;
    try {
      m = lw(u);
    } catch (...) {
    }
    mag[i] = m;
    if (m > peak) {
      peak = m;
      ipk = i;
    }
  }
  if (!(peak > -1e299)) throw Error("three_halves: variance scan found no mass");
  int lo = ipk, hi = ipk;
  for (int i = 0; i <= 120; ++i) {
    if (mag[i] > peak - 40.0) {
      lo = std::min(lo, i);
      hi = std::max(hi, i);
    }
  }
  double ulo = -30.0 + 0.5 * lo - 1.0;
  double uhi = -30.0 + 0.5 * hi + 1.0;
  double upk = -30.0 + 0.5 * ipk;

  // at short horizons the density is narrower than the scan step; widen by
  // the analytic Gaussian seed around V_0 so the window cannot miss it
  if (t < 0.02) {
    const double sd = p.sigma * std::sqrt(p.v0 * t);
    const double c0 = std::log(p.v0);
    ulo = std::min(ulo, c0 - 12.0 * sd - 0.4);
    uhi = std::max(uhi, c0 + p.lambda * t + 12.0 * sd + 0.4);
  }

  const double clo = std::max(ulo, upk - 4.0);
  const double chi = std::min(uhi, upk + 4.0);
  std::vector<double> un, uw;
  if (ulo < clo - 1e-9) append_panel_nodes(ulo, clo, 16, tune.tail_panels, &un, &uw);
  append_panel_nodes(clo, chi, 8, tune.core_panels, &un, &uw);
  if (uhi > chi + 1e-9) append_panel_nodes(chi, uhi, 16, tune.tail_panels, &un, &uw);

  VGrid g;
  g.v.resize(un.size());
  g.wv.resize(un.size());
  for (std::size_t i = 0; i < un.size(); ++i) {
    g.v[i] = std::exp(un[i]);
    g.wv[i] = uw[i] * g.v[i];  // du measure Jacobian
  }
  g.v_peak = std::exp(upk);
  return g;
}

// Both square roots in the transform parameters are quadratics in z with real
// coefficients; the real parts of their roots are branch points. The lattice
// contours and their pairwise sums must keep a margin from them, both for
// validity and because the trapezoid accuracy is set by that distance.
inline void check_strip_margins(const ThreeHalvesParams& p, const std::vector<double>& res) {
  const double s2 = p.sigma * p.sigma;
  const double a0 = 0.5 + p.kappa / s2;
  const double b0 = -p.rho / p.sigma;
  const double khat = p.kappa + 0.5 * s2;
  const double quads[2][3] = {
      {b0 * b0 - 1.0 / s2, 2.0 * a0 * b0 + 1.0 / s2, a0 * a0},
      {-s2 * (1.0 - p.rho * p.rho), 2.0 * s2 * (0.5 - p.rho * khat / p.sigma), khat * khat}};
  for (const auto& qd : quads) {
    std::vector<double> roots_re;
    if (std::abs(qd[0]) < 1e-14) {
      if (std::abs(qd[1]) > 1e-14) roots_re.push_back(-qd[2] / qd[1]);
    } else {
      const double disc = qd[1] * qd[1] - 4.0 * qd[0] * qd[2];
      if (disc >= 0.0) {
        const double sq = std::sqrt(disc);
        roots_re.push_back((-qd[1] + sq) / (2.0 * qd[0]));
        roots_re.push_back((-qd[1] - sq) / (2.0 * qd[0]));
      } else {
        roots_re.push_back(-qd[1] / (2.0 * qd[0]));
      }
    }
    for (double r : res)
      for (double root : roots_re)
        if (std::abs(r - root) < 0.45)
          throw Error("three_halves: coefficient strip passes too close to a branch point");
  }
}

}  // namespace detail

// A = sigma^2 (1 - rho^2) Int_0^T alpha(t)^2 E[ h'(alpha V_t)^2 V_t^3 ] dt.
inline double coeff_A(const ThreeHalvesParams& p, const QuadratureSpec& spec = {},
                      const CoeffTuning3H& tune_in = {}) {
  p.validate();
  if (1.0 - p.rho * p.rho < 1e-14) return 0.0;
  (void)v_moment(p, 0.5 * p.T, 3.0);  // existence gate for the V^3 weight
  const double q = p.q();

  // the variance integral here is cheap (no strip lattices attached), so run
  // it at twice the panel density the shared tuning asks for
  CoeffTuning3H tune = tune_in;
  tune.core_panels *= 2;
  tune.tail_panels *= 2;

  auto time_slice = [&](double t) -> cd {
    const double a = alpha_tilde(p, t);
    const detail::CirKernel kern(p, t);
    auto log_density = [&](double v) {
      return detail::density_log_base(kern, q, v) + bessel_i_log(cd(q), kern.bessel_x(v)).real();
    };
    auto scan = [&](double u) {
      const double v = std::exp(u);
      const double lhp = std::log(std::max(h_prime(p, a * v), 1e-300));
      return log_density(v) + 4.0 * u + 2.0 * lhp;
    };
    const detail::VGrid grid = detail::build_v_grid(p, t, scan, tune);
    double sum = 0.0;
    for (std::size_t i = 0; i < grid.v.size(); ++i) {
      const double v = grid.v[i];
      const double hp = h_prime(p, a * v);
      sum += grid.wv[i] * hp * hp * v * v * v * std::exp(log_density(v));
    }
    return cd(a * a * sum, 0.0);
  };

  QuadratureSpec qs = spec;
  qs.rel_tol = std::min(spec.rel_tol, 1e-8);
  const IntegrationResult r =
      integrate_edges(time_slice, {0.0, 0.02 * p.T, 0.1 * p.T, 0.3 * p.T, p.T}, qs);
  return p.sigma * p.sigma * (1.0 - p.rho * p.rho) * r.value.real();
}

// Cross vector B and Gram matrix C of the static basket, evaluated together
// since they share every table. Per time node the slice
//
//   * freezes a variance grid from the integrand envelope;
//   * freezes uniform strip lattices (spacing h): claims on the full lattice,
//     offset half-lattices for the first Gram factor so conjugate doubling
//     never lands on y = 0;
//   * tabulates d_v g per distinct contour and (z, v), and the combined
//     kernel density(v) * E[e^{z X} | V = v] on the pair-sum lattice;
//   * sweeps the z1 x z2 pair sums, which touch the kernel only through
//     z1 + z2: on uniform lattices that is a correlation of short arrays,
//     collapsing the quadratic number of kernel evaluations to a linear one.
//
// Uniform trapezoids on these analytic strip-decaying integrands converge
// spectrally in h; the rate is set by the distance to the nearest branch
// point, which check_strip_margins enforces and the clamped internal
// contours keep comfortable. Payoff transforms are contour-independent
// inside the admissible half-planes, so moving a put from Re z = -1 to -1/2
// changes nothing in exact arithmetic.
inline CoeffResult3H coeff_BC(const ThreeHalvesParams& p,
                              const std::vector<EuropeanOption>& basket,
                              const QuadratureSpec& spec = {}, const CoeffTuning3H& tune = {}) {
  p.validate();
  for (const auto& o : basket) o.validate();
  const std::size_t d = basket.size();
  CoeffResult3H out;
  out.b.assign(d, 0.0);
  out.c = Matrix(d, d);
  if (d == 0) return out;
  const double omr2 = 1.0 - p.rho * p.rho;
  if (omr2 < 1e-14) return out;
  (void)v_moment(p, 0.5 * p.T, 3.0);

  std::vector<double> rint(d);
  for (std::size_t j = 0; j < d; ++j)
    rint[j] = basket[j].kind == OptionKind::call
                  ? std::clamp(basket[j].strip_r, 1.5, 2.5)
                  : std::clamp(basket[j].strip_r, -0.7, -0.5);

  auto find_or_add = [](std::vector<double>* xs, double x) {
    for (std::size_t i = 0; i < xs->size(); ++i)
      if (std::abs((*xs)[i] - x) < 1e-12) return i;
    xs->push_back(x);
    return xs->size() - 1;
  };
  std::vector<double> rs;  // distinct claim contours
  std::vector<std::size_t> ri(d);
  for (std::size_t j = 0; j < d; ++j) ri[j] = find_or_add(&rs, rint[j]);
  std::vector<double> rsums;  // distinct pairwise contour sums
  std::vector<std::vector<std::size_t>> si(d, std::vector<std::size_t>(d));
  for (std::size_t a = 0; a < d; ++a)
    for (std::size_t b = 0; b < d; ++b) si[a][b] = find_or_add(&rsums, rint[a] + rint[b]);

  std::vector<double> all_re = rs;
  all_re.insert(all_re.end(), rsums.begin(), rsums.end());
  detail::check_strip_margins(p, all_re);

  const double h = tune.lattice_h;
  const double pi = std::acos(-1.0);
  const double q = p.q();
  const double x0 = std::log(p.s0);
  const double logv0 = std::log(p.v0);

  std::vector<cd> acc_b(d, cd(0.0));
  Matrix acc_c(d, d);

  // time rule: composite Gauss panels crowded toward t = 0, where the
  // conditional law of X_t is nearly degenerate and the strips are widest
  const GaussLegendre& glt = gauss_legendre(tune.t_order);
  std::vector<double> tn, tw;
  for (std::size_t e = 0; e + 1 < tune.t_edges_frac.size(); ++e) {
    const double a = tune.t_edges_frac[e] * p.T, b = tune.t_edges_frac[e + 1] * p.T;
    const double c = 0.5 * (a + b), hw = 0.5 * (b - a);
    for (std::size_t i = 0; i < glt.nodes.size(); ++i) {
      tn.push_back(c + hw * glt.nodes[i]);
      tw.push_back(hw * glt.weights[i]);
    }
  }

  for (std::size_t it = 0; it < tn.size(); ++it) {
    const double t = tn[it];
    const double at = alpha_tilde(p, t);
    const double srem = p.T - t;
    const detail::CirKernel kern(p, t);

    const detail::GParams gp0 = detail::g_params(p, cd(rint[0]));
    auto scan = [&](double u) {
      const double v = std::exp(u);
      const double lhp = std::log(std::max(h_prime(p, at * v), 1e-300));
      const double ldg = std::log(
          std::max(std::abs(detail::g_eval(gp0, detail::g_gamma(p, srem, v), v).dg), 1e-300));
      const double lf =
          detail::density_log_base(kern, q, v) + bessel_i_log(cd(q), kern.bessel_x(v)).real();
      return lf + 4.0 * u + 2.0 * std::max(lhp, ldg);
    };
    const detail::VGrid grid = detail::build_v_grid(p, t, scan, tune);
    const std::size_t nv = grid.v.size();

    // Strip truncation by probing the actual integrand envelope: the Bessel
    // kernel rolls off like exp(-nu^2/2x) in the strip height while the d_v g
    // factor decays like |gamma^alpha / Gamma(beta)| with Re alpha growing
    // linearly in the height. The two mechanisms trade places across the time
    // range (small t: gamma is tiny and d_v g dies fast while the conditional
    // law of X is nearly degenerate and its kernel barely decays; near T the
    // reverse), so neither alone gives a usable bound. Probe at the grid
    // extremes and the density peak, since small v slows the d_v g decay and
    // large v slows the kernel decay, and cut 16 decades below the peak.
    double y_stop = tune.strip_floor;
    for (double r : rs) {
      for (double vp : {grid.v.front(), grid.v_peak, grid.v.back()}) {
        const double xv = kern.bessel_x(vp);
        const double gv = detail::g_gamma(p, srem, vp);
        double best = -1e300, ybest = 0.0;
        for (double y = 0.0; y <= spec.z_max; y += 4.0) {
          const cd z(r, y);
          const double dgm = std::abs(detail::g_eval(detail::g_params(p, z), gv, vp).dg);
          const double env = bessel_i_log(detail::bessel_order(p, z), xv).real() +
                             std::log(std::max(dgm, 1e-300)) - std::log(std::max(1.0, y * y));
          if (env > best) {
            best = env;
            ybest = y;
          }
          if (env < best - 37.0 && y > ybest + 16.0) {
            y_stop = std::max(y_stop, y);
            break;
          }
          if (y + 4.0 > spec.z_max) y_stop = std::max(y_stop, spec.z_max);
        }
      }
    }
    const int K =
        std::min(static_cast<int>(std::ceil(y_stop * tune.strip_stretch / h)) + 12,
                 static_cast<int>(std::ceil(spec.z_max / h)) + 12);

    std::vector<double> gam(nv), hp(nv), wv3(nv), logv(nv), base(nv), bx(nv);
    for (std::size_t i = 0; i < nv; ++i) {
      gam[i] = detail::g_gamma(p, srem, grid.v[i]);
      hp[i] = h_prime(p, at * grid.v[i]);
      wv3[i] = grid.wv[i] * grid.v[i] * grid.v[i] * grid.v[i];
      logv[i] = std::log(grid.v[i]);
      base[i] = detail::density_log_base(kern, q, grid.v[i]);
      bx[i] = kern.bessel_x(grid.v[i]);
    }

    auto weight_row = [&](cd z, std::vector<cd>* row) {
      const cd nu = detail::bessel_order(p, z);
      const cd zfac = z * x0 - z * p.lambda * p.rho * t / p.sigma - z * p.rho / p.sigma * logv0;
      for (std::size_t i = 0; i < nv; ++i)
        (*row)[i] = std::exp(base[i] + zfac + z * p.rho / p.sigma * logv[i] +
                             bessel_i_log(nu, bx[i]));
    };

    // d_v g per distinct contour: full lattice k in [-K, K] and the offset
    // half-lattice y = (k + 1/2) h, k in [0, K). Every strip function here
    // has real Taylor coefficients, so the negative heights are conjugates
    // of the positive ones and only the upper half is evaluated.
    std::vector<std::vector<std::vector<cd>>> dgF(rs.size()), dgH(rs.size());
    for (std::size_t r = 0; r < rs.size(); ++r) {
      dgF[r].assign(2 * K + 1, std::vector<cd>(nv));
      for (int k = 0; k <= K; ++k) {
        const detail::GParams gp = detail::g_params(p, cd(rs[r], k * h));
        auto& row = dgF[r][K + k];
        for (std::size_t i = 0; i < nv; ++i) row[i] = detail::g_eval(gp, gam[i], grid.v[i]).dg;
        if (k > 0)
          for (std::size_t i = 0; i < nv; ++i) dgF[r][K - k][i] = std::conj(row[i]);
      }
      dgH[r].assign(K, std::vector<cd>(nv));
      for (int k = 0; k < K; ++k) {
        const detail::GParams gp = detail::g_params(p, cd(rs[r], (k + 0.5) * h));
        auto& row = dgH[r][k];
        for (std::size_t i = 0; i < nv; ++i) row[i] = detail::g_eval(gp, gam[i], grid.v[i]).dg;
      }
    }

    std::vector<std::vector<cd>> trF(d, std::vector<cd>(2 * K + 1)), trH(d, std::vector<cd>(K));
    for (std::size_t j = 0; j < d; ++j) {
      for (int k = 0; k <= K; ++k) {
        trF[j][K + k] = payoff_transform(basket[j], cd(rint[j], k * h));
        if (k > 0) trF[j][K - k] = std::conj(trF[j][K + k]);
      }
      for (int k = 0; k < K; ++k) trH[j][k] = payoff_transform(basket[j], cd(rint[j], (k + 0.5) * h));
    }

    // cross terms on the claim lattices; the imaginary residue is diagnostic
    std::vector<std::vector<std::vector<cd>>> WF(rs.size());
    for (std::size_t r = 0; r < rs.size(); ++r) {
      WF[r].assign(2 * K + 1, std::vector<cd>(nv));
      for (int k = 0; k <= K; ++k) {
        weight_row(cd(rs[r], k * h), &WF[r][K + k]);
        if (k > 0)
          for (std::size_t i = 0; i < nv; ++i) WF[r][K - k][i] = std::conj(WF[r][K + k][i]);
      }
    }
    for (std::size_t j = 0; j < d; ++j) {
      cd acc = 0.0;
      for (int k = -K; k <= K; ++k) {
        const auto& dgrow = dgF[ri[j]][k + K];
        const auto& wrow = WF[ri[j]][k + K];
        cd inner = 0.0;
        for (std::size_t i = 0; i < nv; ++i) inner += wv3[i] * hp[i] * dgrow[i] * wrow[i];
        acc += trF[j][k + K] * inner;
      }
      acc_b[j] += tw[it] * at * h * acc / (2.0 * pi);
    }

    // kernel on the pair-sum lattice: an offset node plus a full node lies
    // on the offset lattice s = (m - K + 1/2) h, m in [0, 3K); the negative
    // heights (m < K) mirror onto tabulated positive ones
    std::vector<std::vector<std::vector<cd>>> WS(rsums.size());
    for (std::size_t r = 0; r < rsums.size(); ++r) {
      WS[r].assign(3 * K, std::vector<cd>(nv));
      for (int m = K; m < 3 * K; ++m) weight_row(cd(rsums[r], (m - K + 0.5) * h), &WS[r][m]);
      for (int m = 0; m < K; ++m)
        for (std::size_t i = 0; i < nv; ++i) WS[r][m][i] = std::conj(WS[r][2 * K - 1 - m][i]);
    }

    std::vector<cd> ta(K), tb(2 * K + 1), r2(K);
    for (std::size_t a = 0; a < d; ++a) {
      for (std::size_t b = 0; b < d; ++b) {
        const auto& ws = WS[si[a][b]];
        cd acc = 0.0;
        for (std::size_t i = 0; i < nv; ++i) {
          for (int k1 = 0; k1 < K; ++k1) ta[k1] = trH[a][k1] * dgH[ri[a]][k1][i];
          for (int k2 = 0; k2 <= 2 * K; ++k2) tb[k2] = trF[b][k2] * dgF[ri[b]][k2][i];
          for (int k1 = 0; k1 < K; ++k1) {
            cd s = 0.0;
            for (int k2 = 0; k2 <= 2 * K; ++k2) s += tb[k2] * ws[k1 + k2][i];
            r2[k1] = s;
          }
          cd inner = 0.0;
          for (int k1 = 0; k1 < K; ++k1) inner += ta[k1] * r2[k1];
          acc += wv3[i] * inner;
        }
        // conjugate doubling of the offset half-contour makes this exactly
        // the full double contour, and exactly real
        acc_c(a, b) += tw[it] * 2.0 * (h * h * acc / (4.0 * pi * pi)).real();
      }
    }
  }

  const double pref = p.sigma * p.sigma * omr2;
  for (std::size_t j = 0; j < d; ++j) {
    const cd value = pref * acc_b[j];
    const double im = std::abs(value.imag());
    if (im > 1e-6 * (1.0 + std::abs(value.real())))
      throw Error("coeff_BC: imaginary residue exceeds tolerance");
    out.diag.imag_max = std::max(out.diag.imag_max, im);
    out.b[j] = value.real();
  }
  for (std::size_t a = 0; a < d; ++a)
    for (std::size_t b = 0; b < d; ++b) out.c(a, b) = pref * acc_c(a, b);
  for (std::size_t a = 0; a < d; ++a)
    for (std::size_t b = a + 1; b < d; ++b)
      out.diag.asym_max = std::max(out.diag.asym_max, std::abs(out.c(a, b) - out.c(b, a)));
  return out;
}

inline std::vector<double> coeff_B(const ThreeHalvesParams& p,
                                   const std::vector<EuropeanOption>& basket,
                                   const QuadratureSpec& spec = {},
                                   const CoeffTuning3H& tune = {}) {
  return coeff_BC(p, basket, spec, tune).b;
}

inline Matrix coeff_C(const ThreeHalvesParams& p, const std::vector<EuropeanOption>& basket,
                      const QuadratureSpec& spec = {}, const CoeffTuning3H& tune = {}) {
  return coeff_BC(p, basket, spec, tune).c;
}

}  // namespace svh
