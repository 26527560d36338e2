#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <complex>
#include <random>
#include <vector>

#include "svh/errors.hpp"
#include "svh/heston.hpp"
#include "svh/linalg.hpp"
#include "svh/payoffs.hpp"
#include "svh/quadrature.hpp"
#include "svh/specfun.hpp"
#include "svh/three_halves.hpp"

#include "oracles.hpp"

using svh::cd;
using Catch::Approx;

namespace {

svh::HestonParams heston_base() {
  svh::HestonParams p;
  p.lambda = 2.0;
  p.kappa = 0.04;
  p.sigma = 0.5;
  p.rho = -0.7;
  p.v0 = 0.04;
  p.s0 = 1.0;
  p.T = 1.0;
  return p;
}

svh::ThreeHalvesParams th_base() {
  svh::ThreeHalvesParams p;
  p.lambda = 25.0;
  p.kappa = 8.56;
  p.sigma = 4.0;
  p.rho = -0.5;
  p.v0 = 0.06;
  p.s0 = 1.0;
  p.T = 0.5;
  return p;
}

// A in closed form: the t-integral of alpha(t)^2 E[V_t] has an elementary
// antiderivative, worked out by substituting s = T - t and expanding the
// square.
double heston_a_closed_form(const svh::HestonParams& p) {
  const double l = p.lambda;
  const double a = std::exp(-l * p.T);
  const double kterm = p.kappa * (p.T - 2.0 * (1.0 - a) / l + (1.0 - a * a) / (2.0 * l));
  const double vterm =
      (p.v0 - p.kappa) * ((1.0 - a) / l - 2.0 * a * p.T + a * (1.0 - a) / l);
  return p.sigma * p.sigma * (1.0 - p.rho * p.rho) * (kterm + vterm) / (l * l);
}

double max_abs(const svh::Matrix& m) {
  double out = 0.0;
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t j = 0; j < m.cols(); ++j) out = std::max(out, std::abs(m(i, j)));
  return out;
}

}  // namespace

TEST_CASE("affine transform matches an independent ODE integration") {
  const svh::HestonParams p = heston_base();
  std::mt19937_64 eng(20240718ull);
  auto unif = [&](double a, double b) {
    std::uniform_real_distribution<double> d(a, b);
    return d(eng);
  };

  int used = 0, skipped = 0;
  for (int i = 0; i < 150 && used < 60; ++i) {
    const double t = unif(0.05, 2.0);
    const cd u1(unif(-2.5, 3.5), unif(-30.0, 30.0));
    const cd u2(unif(-4.0, 0.5), unif(-3.0, 3.0));

    std::pair<cd, cd> ref;
    try {
      ref = oracle::riccati_ode(p, t, u1, u2);
    } catch (const std::runtime_error&) {
      ++skipped;  // oracle hit a blow-up; draw is outside the comparable set
      continue;
    }
    if (std::abs(ref.second) > 1e3) {
      ++skipped;  // too close to a blow-up to compare at fixed tolerance
      continue;
    }

    svh::Riccati got;
    REQUIRE_NOTHROW(got = svh::riccati(p, t, u1, u2));
    CHECK(std::abs(got.phi - ref.first) < 1e-8);
    CHECK(std::abs(got.psi - ref.second) < 1e-8);
    ++used;
  }
  INFO("skipped " << skipped << " draws near blow-up");
  CHECK(used >= 40);
}

TEST_CASE("affine transform composes as a flow") {
  const svh::HestonParams p = heston_base();
  for (cd z : {cd(2.0, 10.0), cd(-0.5, 3.0), cd(1.5, 0.0)}) {
    for (auto [t1, t2] : {std::pair{0.3, 0.7}, std::pair{0.45, 0.45}}) {
      const svh::Riccati inner = svh::riccati(p, t2, z, 0.0);
      const svh::Riccati outer = svh::riccati(p, t1, z, inner.psi);
      const svh::Riccati full = svh::riccati(p, t1 + t2, z, 0.0);
      CHECK(std::abs(outer.psi - full.psi) < 1e-10);
      CHECK(std::abs(outer.phi + inner.phi - full.phi) < 1e-10);
    }
  }
}

TEST_CASE("affine transform initial-condition derivatives match finite differences") {
  const svh::HestonParams p = heston_base();
  struct Pt {
    double t;
    cd u1, u2;
  };
  for (const Pt& pt : {Pt{0.7, cd(1.2, 4.0), cd(-0.3, 0.2)},
                       Pt{1.5, cd(-0.8, 12.0), cd(0.1, 0.0)},
                       Pt{0.25, cd(2.5, 0.0), cd(-1.0, 1.0)}}) {
    const svh::RiccatiDeriv rd = svh::riccati_with_derivative(p, pt.t, pt.u1, pt.u2);
    const cd fd_phi = oracle::fd_derivative(
        [&](double e) { return svh::riccati(p, pt.t, pt.u1, pt.u2 + e).phi; }, 0.0, 1e-4);
    const cd fd_psi = oracle::fd_derivative(
        [&](double e) { return svh::riccati(p, pt.t, pt.u1, pt.u2 + e).psi; }, 0.0, 1e-4);
    CHECK(std::abs(rd.dphi_du2 - fd_phi) < 1e-7 * (1.0 + std::abs(rd.dphi_du2)));
    CHECK(std::abs(rd.dpsi_du2 - fd_psi) < 1e-7 * (1.0 + std::abs(rd.dpsi_du2)));
  }
}

TEST_CASE("affine transform crosses the degenerate-root locus continuously") {
  const svh::HestonParams p = heston_base();
  // real root of the discriminant: delta(u) = C + B u - A u^2
  const double A = p.sigma * p.sigma * (1.0 - p.rho * p.rho);
  const double B = p.sigma * p.sigma - 2.0 * p.lambda * p.rho * p.sigma;
  const double C = p.lambda * p.lambda;
  const double u_minus = (B - std::sqrt(B * B + 4.0 * A * C)) / (2.0 * A);

  const double t = 0.8;
  const cd u2(-0.5, 0.0);
  const svh::Riccati at = svh::riccati(p, t, u_minus, u2);
  const auto ref = oracle::riccati_ode(p, t, u_minus, u2);
  CHECK(std::abs(at.phi - ref.first) < 1e-8);
  CHECK(std::abs(at.psi - ref.second) < 1e-8);

  for (double du : {-1e-7, 1e-7}) {
    const svh::Riccati near = svh::riccati(p, t, u_minus + du, u2);
    CHECK(std::abs(near.phi - at.phi) < 1e-5);
    CHECK(std::abs(near.psi - at.psi) < 1e-5);
  }
}

TEST_CASE("transform lifetime is infinite inside the stable cone and finite outside") {
  const svh::HestonParams p = heston_base();
  CHECK(std::isinf(svh::riccati_lifetime(p, cd(4.0))));
  CHECK(std::isinf(svh::riccati_lifetime(p, cd(0.5))));

  const double lt = svh::riccati_lifetime(p, cd(16.0));
  CHECK(lt > 3.9);
  CHECK(lt < 3.98);

  CHECK_NOTHROW(svh::riccati(p, 0.95 * lt, cd(16.0), 0.0));
  CHECK_NOTHROW(svh::riccati(p, 0.999 * lt, cd(16.0), 0.0));
  CHECK_THROWS_AS(svh::riccati(p, 1.02 * lt, cd(16.0), 0.0), svh::LifetimeExceeded);

  // the independent integrator brackets the same time
  CHECK_NOTHROW(oracle::riccati_ode(p, 0.95 * lt, cd(16.0), 0.0));
  CHECK_THROWS_AS(oracle::riccati_ode(p, 1.05 * lt, cd(16.0), 0.0), std::runtime_error);
}

TEST_CASE("variance swap decomposition and expected quadratic variation") {
  for (double v0 : {0.04, 0.09}) {
    svh::HestonParams p = heston_base();
    p.v0 = v0;
    const double a0 = (1.0 - std::exp(-p.lambda * p.T)) / p.lambda;
    CHECK(svh::swap_alpha(p, 0.0) == Approx(a0).epsilon(1e-14));
    CHECK(svh::swap_alpha(p, p.T) == Approx(0.0).margin(1e-14));
    CHECK(svh::swap_beta(p, 0.0) == Approx(p.kappa * (p.T - a0)).epsilon(1e-13));

    const double qv = svh::expected_quadratic_variation(p);
    CHECK(qv == Approx(svh::swap_alpha(p, 0.0) * p.v0 + svh::swap_beta(p, 0.0)).epsilon(1e-14));

    const cd integral = oracle::simpson(
        [&](double t) { return cd(svh::expected_v(p, t), 0.0); }, 0.0, p.T, 2000);
    CHECK(qv == Approx(integral.real()).epsilon(1e-12));

    CHECK(svh::theta_swap(p, 0.3, 1.2) ==
          Approx(p.rho * p.sigma * svh::swap_alpha(p, 0.3) / 1.2).epsilon(1e-14));
  }
}

TEST_CASE("variance-weighted transforms reduce to known closed forms") {
  const svh::HestonParams p = heston_base();

  for (double t : {0.2, 0.6, 1.0}) {
    const cd m00 = svh::mixed_moment(p, t, 0.0, 0.0);
    CHECK(m00.real() == Approx(svh::expected_v(p, t)).epsilon(1e-10));
    CHECK(std::abs(m00.imag()) < 1e-14);
  }

  // E[V_t S_t] solves a linear ODE with constant coefficients
  const double drift = p.rho * p.sigma - p.lambda;
  const double c = -p.lambda * p.kappa * p.s0 / drift;
  for (double t : {0.25, 0.7}) {
    const double ref = c + (p.v0 * p.s0 - c) * std::exp(drift * t);
    const cd got = svh::mixed_moment(p, t, 1.0, 0.0);
    CHECK(got.real() == Approx(ref).epsilon(1e-9));
    CHECK(std::abs(got.imag()) < 1e-12);
  }

  const cd z1(1.0, 2.0), z2(0.5, -1.0);
  const cd ab = svh::mixed_moment(p, 0.5, z1, z2);
  const cd ba = svh::mixed_moment(p, 0.5, z2, z1);
  CHECK(std::abs(ab - ba) < 1e-12 * (1.0 + std::abs(ab)));

  // V-weighted |H|^2 is a positive quantity
  const cd sq = svh::mixed_moment(p, 0.5, z1, std::conj(z1));
  CHECK(sq.real() > 0.0);
  CHECK(std::abs(sq.imag()) < 1e-12 * sq.real());

  // horizon long enough that the claim's transform has exploded: the
  // epsilon-ball existence check must reject the request
  svh::HestonParams q = heston_base();
  q.lambda = 0.5;
  q.sigma = 1.2;
  q.rho = 0.5;
  q.T = 0.7;
  CHECK(svh::riccati_lifetime(q, cd(6.0)) < q.T);
  CHECK_THROWS_AS(svh::mixed_moment(q, 0.35, cd(6.0), cd(0.0)), svh::IntegrabilityError);
}

TEST_CASE("purely dynamic hedge error matches the closed-form antiderivative") {
  for (double v0 : {0.04, 0.09}) {
    svh::HestonParams p = heston_base();
    p.v0 = v0;
    CHECK(svh::coeff_A(p) == Approx(heston_a_closed_form(p)).epsilon(1e-10));
  }
  svh::HestonParams corr = heston_base();
  corr.rho = -1.0;
  CHECK(svh::coeff_A(corr) == Approx(0.0).margin(1e-18));
}

TEST_CASE("basket cross-coefficients: structure and contour independence") {
  const svh::HestonParams p = heston_base();
  const std::vector<svh::EuropeanOption> basket{svh::EuropeanOption::call(1.0, 2.0),
                                                svh::EuropeanOption::put(0.9, -1.0)};

  svh::CoeffDiagnostics diag;
  const std::vector<double> b = svh::coeff_B(p, basket, {}, &diag);
  REQUIRE(b.size() == 2);
  CHECK(std::abs(b[0]) > 1e-7);
  CHECK(std::abs(b[1]) > 1e-7);

  // the same number on a different representation strip
  const std::vector<double> b_alt =
      svh::coeff_B(p, {svh::EuropeanOption::put(0.9, -0.4)}, {});
  CHECK(std::abs(b_alt[0] - b[1]) < 3e-6 * std::abs(b[1]));

  svh::CoeffDiagnostics cdiag;
  const svh::Matrix c = svh::coeff_C(p, basket, {}, &cdiag);
  REQUIRE(c.rows() == 2);
  REQUIRE(c.cols() == 2);
  const double scale = max_abs(c);
  CHECK(scale > 0.0);
  CHECK(std::abs(c(0, 1) - c(1, 0)) < 1e-6 * (1.0 + scale));
  CHECK(c(0, 0) > 0.0);
  CHECK(c(1, 1) > 0.0);

  svh::Matrix sym(2, 2);
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 2; ++j) sym(i, j) = 0.5 * (c(i, j) + c(j, i));
  const svh::SymmetricEigen eig = svh::eigen_symmetric(sym);
  const double emax = std::max(std::abs(eig.values.front()), std::abs(eig.values.back()));
  CHECK(eig.values.front() >= -1e-8 * emax);

  // Cauchy-Schwarz ties the three coefficient blocks together
  const double a = svh::coeff_A(p);
  CHECK(b[0] * b[0] <= a * c(0, 0) * (1.0 + 1e-8));
  CHECK(b[1] * b[1] <= a * c(1, 1) * (1.0 + 1e-8));
}

TEST_CASE("reciprocal-variance transition density normalizes and reproduces moments") {
  const svh::ThreeHalvesParams p = th_base();

  for (double t : {0.05, 0.25, 0.5}) {
    const cd norm = svh::integrate_semi_infinite(
                        [&](double v) { return cd(svh::v_density(p, t, v), 0.0); })
                        .value;
    CHECK(norm.real() == Approx(1.0).epsilon(2e-6));

    for (double eta : {1.0, 1.5, -1.0}) {
      const cd m = svh::integrate_semi_infinite([&](double v) {
                     return cd(std::pow(v, eta) * svh::v_density(p, t, v), 0.0);
                   }).value;
      CHECK(m.real() == Approx(svh::v_moment(p, t, eta)).epsilon(3e-6));
    }
  }

  // 1/V is a square-root diffusion whose mean is elementary; this also pins
  // down the confluent series deep in its large-argument regime (small t)
  const double r0 = 1.0 / p.v0;
  const double rbar = (p.kappa + p.sigma * p.sigma) / p.lambda;
  for (double t : {6e-4, 2e-3, 0.01, 0.05, 0.2, 0.5}) {
    const double e = std::exp(-p.lambda * t);
    const double cir_mean = r0 * e + rbar * (1.0 - e);
    CHECK(svh::v_moment(p, t, -1.0) == Approx(cir_mean).epsilon(1e-9));
  }
}

TEST_CASE("variance moments stop existing at the integrability order") {
  const svh::ThreeHalvesParams p = th_base();
  CHECK_NOTHROW(svh::v_moment(p, 0.25, 3.0));
  CHECK_THROWS_AS(svh::v_moment(p, 0.25, p.q() + 1.0), svh::MomentExplodedError);
  CHECK_THROWS_AS(svh::v_moment(p, 0.25, 3.2), svh::MomentExplodedError);

  svh::ThreeHalvesParams b;
  b.lambda = 2.0;
  b.kappa = 1.0;
  b.sigma = std::sqrt(0.2);
  b.rho = -0.5;
  b.v0 = 0.5;
  b.s0 = 1.0;
  b.T = 1.0;
  CHECK(b.q() == Approx(11.0).epsilon(1e-13));
  CHECK_NOTHROW(svh::v_moment(b, 0.5, 11.9));
  CHECK_THROWS_AS(svh::v_moment(b, 0.5, 12.0), svh::MomentExplodedError);
  CHECK_THROWS_AS(svh::v_moment(b, 0.5, 12.5), svh::MomentExplodedError);

  svh::ThreeHalvesParams bad;
  bad.lambda = 1.0;
  bad.kappa = 0.01;
  bad.sigma = 1.0;
  bad.rho = 0.99;
  bad.v0 = 0.1;
  bad.s0 = 1.0;
  bad.T = 1.0;
  CHECK_THROWS_AS(bad.validate(), svh::InvalidParams);
}

TEST_CASE("swap slope matches its defining tail integral") {
  const svh::ThreeHalvesParams p = th_base();
  const double s2 = p.sigma * p.sigma;
  const double pexp = 2.0 * p.kappa / s2;

  CHECK(svh::h_prime(p, 0.0) == Approx(1.0).epsilon(1e-14));

  // direct integral in log-variance; valid where the boundary layer at the
  // lower limit is wide enough for a fixed rule
  double prev = 2.0;
  for (int i = 0; i < 20; ++i) {
    const double y = 0.02 * std::pow(1000.0 / 0.02, i / 19.0);
    const cd direct =
        oracle::simpson(
            [&](double w) {
              return cd(std::exp(2.0 / (s2 * std::exp(w)) - 2.0 / (s2 * y) +
                                 pexp * std::log(y) - (pexp + 1.0) * w),
                        0.0);
            },
            std::log(y), std::log(y) + 30.0, 8000) *
        (2.0 / s2);
    const double got = svh::h_prime(p, y);
    CHECK(got == Approx(direct.real()).epsilon(1e-7));
    CHECK(got < prev);
    prev = got;
  }

  // small-argument expansion: h'(y) = 1 - pexp/w0 + pexp(pexp-1)/w0^2 + ...
  for (double y : {1e-4, 1e-3}) {
    const double w0 = 2.0 / (s2 * y);
    const double expansion = 1.0 - pexp / w0 + pexp * (pexp - 1.0) / (w0 * w0);
    CHECK(svh::h_prime(p, y) == Approx(expansion).epsilon(1e-6));
  }
}

TEST_CASE("swap value function integrates its slope and prices the fair strike") {
  const svh::ThreeHalvesParams p = th_base();

  // the slope has a boundary layer near y = 0, so the oracle integrates in
  // log-y where it is smooth; the sliver below the lower cutoff is the slope's
  // limiting value 1 times the cutoff
  for (double y : {0.5, 5.0, 50.0}) {
    const double y_lo = 1e-6;
    const cd direct = oracle::simpson(
        [&](double u) {
          const double yy = std::exp(u);
          return cd(svh::h_prime(p, yy) * yy, 0.0);
        },
        std::log(y_lo), std::log(y), 4000);
    CHECK(svh::h_fn(p, y) == Approx(direct.real() + y_lo).epsilon(1e-6));
  }

  // expected quadratic variation equals the time integral of E[V_t]; the
  // integral starts at a small offset where the confluent series is still in
  // range, with the missing sliver restored from the local expansion of E[V]
  const double delta = 6e-4;
  const cd tail = oracle::simpson(
      [&](double t) { return cd(svh::v_moment(p, t, 1.0), 0.0); }, delta, p.T, 2048);
  const double sliver =
      p.v0 * delta + (p.lambda * p.v0 - p.kappa * p.v0 * p.v0) * delta * delta / 2.0;
  CHECK(svh::expected_quadratic_variation(p) ==
        Approx(tail.real() + sliver).epsilon(2e-6));
}

TEST_CASE("conditional stock transform: trivial order, martingale slice, tower") {
  const svh::ThreeHalvesParams p = th_base();
  const double x0 = std::log(p.s0);

  for (double t : {0.1, 0.5}) {
    for (double v : {0.02, 0.06, 0.4}) {
      CHECK(std::abs(svh::cond_x_given_v(p, t, x0, v, cd(0.0)) - 1.0) < 1e-13);
    }
    const cd mart = svh::integrate_semi_infinite([&](double v) {
                      return svh::v_density(p, t, v) * svh::cond_x_given_v(p, t, x0, v, cd(1.0));
                    }).value;
    CHECK(std::abs(mart - cd(p.s0)) < 3e-6 * p.s0);
  }

  // integrating the conditional transform against the terminal density must
  // reproduce the unconditional transform
  for (cd z : {cd(2.0, 0.0), cd(-0.5, 0.0), cd(1.0, 3.0)}) {
    const cd lhs = svh::integrate_semi_infinite([&](double v) {
                     return svh::v_density(p, p.T, v) * svh::cond_x_given_v(p, p.T, x0, v, z);
                   }).value;
    const cd rhs = std::exp(z * x0) * svh::g_fn(p, 0.0, p.v0, z);
    CHECK(std::abs(lhs - rhs) < 3e-6 * (1.0 + std::abs(rhs)));
  }
}

TEST_CASE("conditional transform solves its pricing equation") {
  const svh::ThreeHalvesParams p = th_base();
  const double s2 = p.sigma * p.sigma;
  const double ht = 1e-5;

  for (double t : {0.05, 0.2, 0.35}) {
    for (double v : {0.02, 0.06, 0.2, 0.6, 1.5}) {
      const double hv = 1e-4 * v;
      for (cd z : {cd(0.5), cd(2.0), cd(-0.5), cd(1.0, 2.0), cd(0.5, 5.0)}) {
        const cd g = svh::g_fn(p, t, v, z);
        const cd gt =
            (svh::g_fn(p, t + ht, v, z) - svh::g_fn(p, t - ht, v, z)) / (2.0 * ht);
        const cd gp = svh::g_fn(p, t, v + hv, z);
        const cd gm = svh::g_fn(p, t, v - hv, z);
        const cd gv = (gp - gm) / (2.0 * hv);
        const cd gvv = (gp - 2.0 * g + gm) / (hv * hv);

        const cd terms[] = {gt,
                            v * (p.lambda - p.kappa * v) * gv,
                            0.5 * s2 * v * v * v * gvv,
                            z * p.rho * p.sigma * v * v * gv,
                            0.5 * (z * z - z) * v * g};
        cd res = 0.0;
        double scale = std::abs(g);
        for (const cd& term : terms) {
          res += term;
          scale += std::abs(term);
        }
        INFO("t=" << t << " v=" << v << " z=" << z.real() << "+" << z.imag() << "i");
        CHECK(std::abs(res) < 1e-5 * scale);
      }
    }
  }
}

TEST_CASE("conditional transform is exactly one for cash and forward claims") {
  const svh::ThreeHalvesParams p = th_base();
  struct Pt {
    double t, v;
  };
  // covers both the confluent-series branch and the large-argument branch
  for (const Pt& pt : {Pt{0.0, 0.06}, Pt{0.25, 0.5}, Pt{0.4995, 0.04}, Pt{0.4995, 0.0017}}) {
    for (cd z : {cd(0.0), cd(1.0)}) {
      const svh::GValue gv = svh::g_value(p, pt.t, pt.v, z);
      CHECK(std::abs(gv.g - 1.0) < 1e-12);
      CHECK(std::abs(gv.dg) < 1e-10);
    }
  }
}

TEST_CASE("conditional transform branches agree at the switch") {
  const svh::ThreeHalvesParams p = th_base();
  const double t = 0.49;
  const double s = p.T - t;
  const double vmap = 2.0 * p.lambda / (p.sigma * p.sigma * std::expm1(p.lambda * s));

  const std::vector<cd> zs{cd(1.8, 0.0), cd(-0.5, 0.0), cd(0.5, 4.0)};

  // no jump crossing the switch point
  for (cd z : zs) {
    const double vstar = vmap / 6.0e3;
    const double vlo = vstar * (1.0 - 2e-3), vhi = vstar * (1.0 + 2e-3);
    const svh::GValue lo = svh::g_value(p, t, vlo, z);
    const svh::GValue hi = svh::g_value(p, t, vhi, z);
    const cd linear = 0.5 * (lo.dg + hi.dg) * (vhi - vlo);
    CHECK(std::abs((hi.g - lo.g) - linear) < 2e-9 * (1.0 + std::abs(lo.g)));
  }

  // direct comparison where the confluent series still converges
  for (double gamma : {6.5e3, 8.0e3}) {
    const double v = vmap / gamma;
    for (cd z : zs) {
      const svh::detail::GParams gp = svh::detail::g_params(p, z);
      const cd common = gp.log_gamma_ratio + gp.alpha * std::log(gamma);
      const cd m0 = std::exp(common + svh::kummer_m_log(gp.alpha, gp.beta, cd(-gamma)));
      const cd m1 = std::exp(common + std::log(gamma / gp.beta) +
                             svh::kummer_m_log(gp.alpha + 1.0, gp.beta + 1.0, cd(-gamma)));
      const cd dg_series = gp.alpha / v * (m1 - m0);
      const svh::GValue got = svh::g_value(p, t, v, z);
      CHECK(std::abs(got.g - m0) < 1e-9 * std::abs(m0));
      // the derivative's large-argument branch truncates after the 1/gamma^2
      // term, which costs ~1e-7 relative at the switch height
      CHECK(std::abs(got.dg - dg_series) < 2e-7 * std::abs(dg_series));
    }
  }
}

TEST_CASE("conditional transform derivative matches finite differences") {
  const svh::ThreeHalvesParams p = th_base();
  struct Pt {
    double t, v;
    cd z;
  };
  for (const Pt& pt : {Pt{0.1, 0.06, cd(1.8)}, Pt{0.3, 0.5, cd(-0.5)},
                       Pt{0.45, 0.02, cd(1.0, 2.0)}, Pt{0.49, 0.0017, cd(2.2)}}) {
    const cd dg = svh::g_dv(p, pt.t, pt.v, pt.z);
    const cd fd = oracle::fd_derivative(
        [&](double v) { return svh::g_fn(p, pt.t, v, pt.z); }, pt.v, 1e-3 * pt.v);
    REQUIRE(std::abs(dg) > 0.0);
    CHECK(std::abs(fd - dg) < 1e-6 * std::abs(dg));
  }
}

TEST_CASE("strategies recover the terminal payoff at the horizon") {
  const svh::HestonParams hp = heston_base();
  const cd z(1.2, 0.7);
  const double x = 0.3;
  CHECK(std::abs(svh::h_z(hp, hp.T, x, 0.05, z) - std::exp(z * x)) < 1e-13);
  CHECK(std::abs(svh::theta_z(hp, hp.T, x, 0.05, z) - z * std::exp((z - 1.0) * x)) < 1e-13);

  const svh::ThreeHalvesParams tp = th_base();
  CHECK_THROWS_AS(svh::g_fn(tp, tp.T, tp.v0, cd(1.8)), svh::DomainError);
  CHECK(std::abs(svh::g_fn(tp, tp.T - 1e-7, tp.v0, cd(1.8)) - 1.0) < 1e-7);
  CHECK(std::abs(svh::theta_z(tp, tp.T - 1e-7, x, tp.v0, cd(1.8)) -
                 1.8 * std::exp(0.8 * x)) < 1e-6);
}

TEST_CASE("three-halves dynamic hedge error matches a wide-window integration") {
  const svh::ThreeHalvesParams p = th_base();
  const double got = svh::coeff_A(p);

  // independent path: fixed Simpson rules over a moving log-variance window
  // centered on the logistic mean path, with width from the accumulated
  // diffusion variance
  auto vbar = [&](double t) {
    return p.lambda * p.v0 * std::exp(p.lambda * t) /
           (p.lambda + p.kappa * p.v0 * std::expm1(p.lambda * t));
  };
  auto ivbar = [&](double t) {
    return std::log1p(p.kappa * p.v0 * std::expm1(p.lambda * t) / p.lambda) / p.kappa;
  };
  auto slice = [&](double t) {
    const double a = svh::alpha_tilde(p, t);
    if (t <= 0.0) {
      const double hp = svh::h_prime(p, a * p.v0);
      return a * a * p.v0 * p.v0 * p.v0 * hp * hp;
    }
    const double w = std::min(p.sigma * std::sqrt(ivbar(t)), 1.5);
    const double lo = std::log(vbar(t)) - 14.0 * w - 1.0;
    const double hi = std::log(vbar(t)) + 14.0 * w + 1.0;
    const int n = 2 * static_cast<int>((hi - lo) / (0.06 * w)) + 2;
    const cd inner = oracle::simpson(
        [&](double u) {
          const double v = std::exp(u);
          const double hp = svh::h_prime(p, a * v);
          return cd(svh::v_density(p, t, v) * v * v * v * v * hp * hp, 0.0);
        },
        lo, hi, n);
    return a * a * inner.real();
  };

  const int nt = 512;
  const double htt = p.T / nt;
  double acc = slice(0.0) + slice(p.T);
  for (int i = 1; i < nt; ++i) acc += ((i % 2) ? 4.0 : 2.0) * slice(i * htt);
  const double ref = p.sigma * p.sigma * (1.0 - p.rho * p.rho) * acc * htt / 3.0;

  CHECK(got == Approx(ref).epsilon(2e-5));

  // refinement stability of the library path itself, at the accuracy the
  // default tuning is documented to deliver
  svh::QuadratureSpec spec2;
  spec2.rel_tol = 1e-10;
  svh::CoeffTuning3H tune2;
  tune2.core_panels = 16;
  tune2.tail_panels = 4;
  CHECK(svh::coeff_A(p, spec2, tune2) == Approx(got).epsilon(1e-5));

  svh::ThreeHalvesParams corr = th_base();
  corr.rho = 1.0;
  CHECK(svh::coeff_A(corr) == Approx(0.0).margin(1e-18));
}

TEST_CASE("three-halves cross terms: duplicate claims and contour independence") {
  const svh::ThreeHalvesParams p = th_base();

  const svh::CoeffResult3H dup = svh::coeff_BC(
      p, {svh::EuropeanOption::call(1.0, 2.0), svh::EuropeanOption::call(1.0, 2.0)});
  CHECK(std::abs(dup.b[0] - dup.b[1]) < 1e-14 * (1.0 + std::abs(dup.b[0])));
  const double cscale = 1.0 + std::abs(dup.c(0, 0));
  CHECK(std::abs(dup.c(0, 0) - dup.c(0, 1)) < 1e-14 * cscale);
  CHECK(std::abs(dup.c(0, 0) - dup.c(1, 1)) < 1e-14 * cscale);

  const std::vector<double> put_a = svh::coeff_B(p, {svh::EuropeanOption::put(0.95, -0.5)});
  const std::vector<double> put_b = svh::coeff_B(p, {svh::EuropeanOption::put(0.95, -0.68)});
  CHECK(std::abs(put_a[0] - put_b[0]) < 1e-5 * std::abs(put_a[0]));

  const std::vector<double> call_a = svh::coeff_B(p, {svh::EuropeanOption::call(1.1, 2.3)});
  const std::vector<double> call_b = svh::coeff_B(p, {svh::EuropeanOption::call(1.1, 1.6)});
  CHECK(std::abs(call_a[0] - call_b[0]) < 1e-5 * std::abs(call_a[0]));
}

TEST_CASE("three-halves cross-term matrix: structure and refinement") {
  const svh::ThreeHalvesParams p = th_base();
  const std::vector<svh::EuropeanOption> basket{svh::EuropeanOption::call(1.0, 2.0),
                                                svh::EuropeanOption::put(0.95, -0.5)};

  const svh::CoeffResult3H base = svh::coeff_BC(p, basket);
  REQUIRE(base.b.size() == 2);
  REQUIRE(base.c.rows() == 2);

  const double scale = max_abs(base.c);
  CHECK(scale > 0.0);
  CHECK(base.diag.imag_max < 1e-8 * (1.0 + scale));
  CHECK(base.diag.asym_max < 1e-6 * (1.0 + scale));
  CHECK(base.c(0, 0) > 0.0);
  CHECK(base.c(1, 1) > 0.0);

  svh::Matrix sym(2, 2);
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 2; ++j) sym(i, j) = 0.5 * (base.c(i, j) + base.c(j, i));
  const svh::SymmetricEigen eig = svh::eigen_symmetric(sym);
  const double emax = std::max(std::abs(eig.values.front()), std::abs(eig.values.back()));
  CHECK(eig.values.front() >= -1e-10 * emax);

  const double a = svh::coeff_A(p);
  CHECK(base.b[0] * base.b[0] <= a * base.c(0, 0) * (1.0 + 1e-8));
  CHECK(base.b[1] * base.b[1] <= a * base.c(1, 1) * (1.0 + 1e-8));

  svh::CoeffTuning3H tune2;
  tune2.lattice_h = 0.1;
  tune2.core_panels = 16;
  tune2.tail_panels = 4;
  tune2.strip_stretch = 1.25;
  tune2.t_edges_frac = {0.0, 0.06, 0.15, 0.4, 0.7, 1.0};
  const svh::CoeffResult3H fine = svh::coeff_BC(p, basket, {}, tune2);
  for (int j = 0; j < 2; ++j)
    CHECK(std::abs(fine.b[j] - base.b[j]) < 1e-5 * std::abs(base.b[j]));
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 2; ++j)
      CHECK(std::abs(fine.c(i, j) - base.c(i, j)) < 1e-5 * scale);
}
