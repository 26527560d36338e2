#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <complex>
#include <random>

#include "svh/errors.hpp"
#include "svh/linalg.hpp"
#include "svh/payoffs.hpp"
#include "svh/quadrature.hpp"
#include "svh/specfun.hpp"

#include "oracles.hpp"

using svh::cd;
using Catch::Approx;

namespace {
const double pi = std::acos(-1.0);
}

TEST_CASE("gauss-legendre nodes are exact for polynomials") {
  const auto& gl = svh::gauss_legendre(32);
  double wsum = 0.0, x62 = 0.0;
  for (int i = 0; i < 32; ++i) {
    wsum += gl.weights[i];
    x62 += gl.weights[i] * std::pow(gl.nodes[i], 62);
  }
  CHECK(wsum == Approx(2.0).epsilon(1e-14));
  CHECK(x62 == Approx(2.0 / 63.0).epsilon(1e-12));
}

TEST_CASE("adaptive panels integrate smooth and oscillatory integrands") {
  auto exp_f = [](double x) { return cd(std::exp(x), 0.0); };
  auto res = svh::integrate_finite(exp_f, 0.0, 1.0);
  CHECK(res.value.real() == Approx(std::exp(1.0) - 1.0).epsilon(1e-12));

  auto osc = [](double x) { return cd(std::cos(50.0 * x), 0.0); };
  res = svh::integrate_finite(osc, 0.0, 1.0);
  CHECK(res.value.real() == Approx(std::sin(50.0) / 50.0).margin(1e-10));

  auto bump = [](double x) { return cd(std::exp(-1000.0 * (x - 0.3) * (x - 0.3)), 0.0); };
  res = svh::integrate_finite(bump, 0.0, 1.0);
  const double exact = std::sqrt(pi / 1000.0) * 0.5 *
                       (std::erf(std::sqrt(1000.0) * 0.7) + std::erf(std::sqrt(1000.0) * 0.3));
  CHECK(res.value.real() == Approx(exact).epsilon(1e-10));
  CHECK(res.panels_used > 1);
}

TEST_CASE("panel budget exhaustion throws instead of returning junk") {
  svh::QuadratureSpec spec;
  spec.max_panels = 4;
  auto rough = [](double x) { return cd(std::cos(400.0 * x) / std::sqrt(std::abs(x) + 1e-12), 0.0); };
  CHECK_THROWS_AS(svh::integrate_finite(rough, 0.0, 1.0, spec), svh::BudgetExceeded);
}

TEST_CASE("semi-infinite integration locates its window") {
  auto f = [](double v) { return cd(v * v * std::exp(-v), 0.0); };
  auto res = svh::integrate_semi_infinite(f);
  CHECK(res.value.real() == Approx(2.0).epsilon(1e-10));

  // lognormal-style density integrates to one
  auto g = [](double v) {
    const double l = std::log(v);
    return cd(std::exp(-0.5 * l * l) / (v * std::sqrt(2.0 * pi)), 0.0);
  };
  res = svh::integrate_semi_infinite(g);
  CHECK(res.value.real() == Approx(1.0).epsilon(1e-10));

  auto fat = [](double v) { return cd(1.0 / (1.0 + v), 0.0); };
  CHECK_THROWS_AS(svh::integrate_semi_infinite(fat), svh::TailError);
}

TEST_CASE("log_gamma matches known values and satisfies the functional equation") {
  CHECK(svh::log_gamma(cd(5.0)).real() == Approx(std::log(24.0)).epsilon(1e-14));
  CHECK(svh::log_gamma(cd(5.0)).imag() == Approx(0.0).margin(1e-14));
  CHECK(svh::log_gamma(cd(0.5)).real() == Approx(0.5 * std::log(pi)).epsilon(1e-14));

  // literature value of Gamma(1+i)
  const cd g1i = std::exp(svh::log_gamma(cd(1.0, 1.0)));
  CHECK(g1i.real() == Approx(0.4980156681183560).epsilon(1e-12));
  CHECK(g1i.imag() == Approx(-0.1549498283018107).epsilon(1e-12));

  // recurrence and reflection across the cut
  for (cd z : {cd(0.3, 0.4), cd(-2.2, 1.7), cd(4.0, -3.0), cd(-0.5, -0.1)}) {
    const cd lhs = svh::log_gamma(z + 1.0) - svh::log_gamma(z);
    CHECK(std::abs(std::exp(lhs) - z) <= 1e-12 * std::abs(z));
  }
  const cd z(0.3, 0.4);
  const cd refl = svh::log_gamma(z) + svh::log_gamma(1.0 - z);
  const cd rhs = std::log(pi / std::sin(pi * z));
  CHECK(std::abs(std::exp(refl - rhs) - 1.0) < 1e-12);

  CHECK_THROWS_AS(svh::log_gamma(cd(-3.0)), svh::PoleError);
  CHECK_THROWS_AS(svh::log_gamma(cd(0.0)), svh::PoleError);
  CHECK_NOTHROW(svh::log_gamma(cd(-3.0 + 1e-6)));
}

TEST_CASE("kummer_m reproduces elementary special cases") {
  CHECK(svh::kummer_m(cd(1.0), cd(1.0), cd(1.0)).real() == Approx(std::exp(1.0)).epsilon(1e-13));
  CHECK(svh::kummer_m(cd(1.0), cd(2.0), cd(2.0)).real() ==
        Approx((std::exp(2.0) - 1.0) / 2.0).epsilon(1e-13));
  CHECK(svh::kummer_m(cd(2.5), cd(1.3), cd(0.0)).real() == Approx(1.0));

  // negative argument goes through the Kummer transform
  CHECK(svh::kummer_m(cd(1.0), cd(1.0), cd(-3.0)).real() == Approx(std::exp(-3.0)).epsilon(1e-13));

  // M(2,3,z) = 2 (1 + (z-1) e^z) / z^2
  const cd z(1.7, 0.9);
  const cd expect = 2.0 * (1.0 + (z - 1.0) * std::exp(z)) / (z * z);
  CHECK(std::abs(svh::kummer_m(cd(2.0), cd(3.0), z) - expect) < 1e-12 * std::abs(expect));
}

TEST_CASE("kummer_m contiguous relation holds off the real axis") {
  // M(a,b,z) - M(a-1,b,z) = (z/b) M(a,b+1,z)
  for (cd z : {cd(0.9, 0.3), cd(-2.0, 1.0), cd(5.0, -4.0)}) {
    const cd a(1.3, 0.0), b(2.7, 0.0);
    const cd lhs = svh::kummer_m(a, b, z) - svh::kummer_m(a - 1.0, b, z);
    const cd rhs = z / b * svh::kummer_m(a, b + 1.0, z);
    CHECK(std::abs(lhs - rhs) < 1e-9 * (1.0 + std::abs(rhs)));
  }
}

TEST_CASE("kummer_m_log survives arguments whose value overflows double") {
  // M(2,3,800) = 2 (1 + 799 e^800) / 800^2 in closed form
  const double expect = 800.0 + std::log(2.0 * 799.0 / (800.0 * 800.0));
  const cd got = svh::kummer_m_log(cd(2.0), cd(3.0), cd(800.0));
  CHECK(got.real() == Approx(expect).epsilon(1e-12));
  CHECK_THROWS_AS(svh::kummer_m(cd(1.0), cd(1.0), cd(800.0)), svh::ConvergenceError);
}

TEST_CASE("kummer_m rejects out-of-domain and pole arguments") {
  CHECK_THROWS_AS(svh::kummer_m(cd(1.0), cd(2.0), cd(2e4)), svh::ConvergenceError);
  CHECK_THROWS_AS(svh::kummer_m(cd(2e3), cd(2.0), cd(1.0)), svh::ConvergenceError);
  CHECK_THROWS_AS(svh::kummer_m(cd(1.0), cd(0.0), cd(1.0)), svh::PoleError);
  CHECK_THROWS_AS(svh::kummer_m(cd(1.0), cd(-2.0), cd(1.0)), svh::PoleError);
}

TEST_CASE("bessel_i matches half-integer closed forms and the standard library") {
  const double sh = std::sqrt(2.0 / (pi * 1.0)) * std::sinh(1.0);
  const double ch = std::sqrt(2.0 / (pi * 1.0)) * std::cosh(1.0);
  CHECK(svh::bessel_i(cd(0.5), 1.0).real() == Approx(sh).epsilon(1e-13));
  CHECK(svh::bessel_i(cd(-0.5), 1.0).real() == Approx(ch).epsilon(1e-13));

  for (double nu : {0.0, 1.0, 2.0, 2.5, 7.0}) {
    for (double x : {0.1, 1.0, 5.0, 40.0}) {
      const double ref = std::cyl_bessel_i(nu, x);
      CHECK(svh::bessel_i(cd(nu), x).real() == Approx(ref).epsilon(1e-10));
      CHECK(std::abs(svh::bessel_i(cd(nu), x).imag()) < 1e-12 * ref);
    }
  }
}

TEST_CASE("bessel_i recurrence holds for complex order") {
  const cd nu(1.3, 0.7);
  for (double x : {0.5, 3.0, 20.0}) {
    const cd lhs = svh::bessel_i(nu - 1.0, x) - svh::bessel_i(nu + 1.0, x);
    const cd rhs = 2.0 * nu / x * svh::bessel_i(nu, x);
    CHECK(std::abs(lhs - rhs) < 1e-9 * (1.0 + std::abs(rhs)));
  }
}

TEST_CASE("bessel_i_log agrees with an independent long-double series at large x") {
  for (double x : {500.0, 5000.0}) {
    for (double nu : {0.0, 1.0, 3.5}) {
      const double ref = static_cast<double>(oracle::bessel_i_log_ld(nu, x));
      CHECK(svh::bessel_i_log(cd(nu), x).real() == Approx(ref).epsilon(1e-12));
    }
  }
}

TEST_CASE("bessel_i_log_ratio matches the large-x asymptotic expansion") {
  // I_nu(x) ~ e^x/sqrt(2 pi x) [1 - (4nu^2-1)/(8x) + (4nu^2-1)(4nu^2-9)/(2(8x)^2)]
  const double x = 500.0;
  auto asym = [&](double nu) {
    const double m = 4.0 * nu * nu;
    return std::log(1.0 - (m - 1.0) / (8.0 * x) +
                    (m - 1.0) * (m - 9.0) / (2.0 * 64.0 * x * x));
  };
  const double expect = asym(1.0) - asym(0.0);
  const cd got = svh::bessel_i_log_ratio(cd(1.0), cd(0.0), x);
  CHECK(got.real() == Approx(expect).margin(1e-8));
  CHECK(std::abs(got.imag()) < 1e-12);
}

TEST_CASE("bessel_i domain checks") {
  CHECK_THROWS_AS(svh::bessel_i(cd(-1.5), 1.0), svh::DomainError);
  CHECK_THROWS_AS(svh::bessel_i(cd(0.5), -1.0), svh::DomainError);
  CHECK_THROWS_AS(svh::bessel_i(cd(0.0), 2000.0), svh::ConvergenceError);  // overflow guard
  CHECK_NOTHROW(svh::bessel_i_log(cd(0.0), 2000.0));
}

TEST_CASE("payoff transforms match brute-force numerical Laplace transforms") {
  const auto call = svh::EuropeanOption::call(1.2);
  for (cd z : {cd(2.5, 0.0), cd(2.0, 3.0)}) {
    const cd ref = oracle::payoff_transform_numeric(call, z);
    CHECK(std::abs(svh::payoff_transform(call, z) - ref) < 1e-8 * (1.0 + std::abs(ref)));
  }
  const auto put = svh::EuropeanOption::put(0.8);
  for (cd z : {cd(-1.0, 0.0), cd(-0.5, -2.0)}) {
    const cd ref = oracle::payoff_transform_numeric(put, z);
    CHECK(std::abs(svh::payoff_transform(put, z) - ref) < 1e-8 * (1.0 + std::abs(ref)));
  }
}

TEST_CASE("payoff transform rejects the wrong half-plane") {
  const auto call = svh::EuropeanOption::call(1.0);
  CHECK_THROWS_AS(svh::payoff_transform(call, cd(0.5, 0.0)), svh::DomainError);
  const auto put = svh::EuropeanOption::put(1.0);
  CHECK_THROWS_AS(svh::payoff_transform(put, cd(0.5, 0.0)), svh::DomainError);
  CHECK_THROWS_AS(svh::EuropeanOption::call(1.0, 0.5).validate(), svh::InvalidParams);
  CHECK_THROWS_AS(svh::EuropeanOption::put(1.0, 0.5).validate(), svh::InvalidParams);
  CHECK_THROWS_AS(svh::EuropeanOption::call(-1.0).validate(), svh::InvalidParams);
}

TEST_CASE("strip measure density carries the contour normalization") {
  const auto call = svh::EuropeanOption::call(1.0);
  const auto zeta = svh::measure_of(call);
  const cd dens = zeta.density(cd(2.0, 0.0));
  // K^{1-z}/(z(z-1)) = 1/2 at z = 2, divided by 2 pi i
  CHECK(std::abs(dens - cd(0.5) / cd(0.0, 2.0 * pi)) < 1e-15);
}

TEST_CASE("payoff reconstruction from the strip t integral") {
  const auto call = svh::EuropeanOption::call(1.0);
  CHECK(svh::reconstruct_payoff(call, std::log(2.0)) == Approx(1.0).margin(1e-6));
  CHECK(svh::reconstruct_payoff(call, 0.0) == Approx(0.0).margin(1e-6));
  CHECK(svh::reconstruct_payoff(call, -1.0) == Approx(0.0).margin(1e-6));

  const auto put = svh::EuropeanOption::put(1.0);
  const double x = -0.5;
  CHECK(svh::reconstruct_payoff(put, x) == Approx(1.0 - std::exp(x)).margin(1e-6));

  // representation does not depend on the abscissa within the admissible strip
  const auto c1 = svh::EuropeanOption::call(1.0, 1.5);
  const auto c2 = svh::EuropeanOption::call(1.0, 2.5);
  for (double xx : {-1.0, -0.1, 0.0, 0.3, 1.5}) {
    CHECK(svh::reconstruct_payoff(c1, xx) == Approx(svh::reconstruct_payoff(c2, xx)).margin(2e-6));
  }
}

TEST_CASE("jacobi eigensolver and symmetric solve") {
  svh::Matrix m(2, 2);
  m(0, 0) = 2.0;
  m(0, 1) = 1.0;
  m(1, 0) = 1.0;
  m(1, 1) = 2.0;
  const auto eig = svh::eigen_symmetric(m);
  CHECK(eig.values[0] == Approx(1.0).epsilon(1e-13));
  CHECK(eig.values[1] == Approx(3.0).epsilon(1e-13));

  const auto sol = svh::solve_symmetric(m, {1.0, 2.0});
  // inverse of [[2,1],[1,2]] is [[2,-1],[-1,2]]/3
  CHECK(sol.x[0] == Approx(0.0).margin(1e-13));
  CHECK(sol.x[1] == Approx(1.0).epsilon(1e-13));
  CHECK_FALSE(sol.used_pseudo_inverse);

  svh::Matrix s(2, 2);
  s(0, 0) = s(0, 1) = s(1, 0) = s(1, 1) = 1.0;
  const auto psol = svh::solve_symmetric(s, {2.0, 2.0});
  CHECK(psol.used_pseudo_inverse);
  CHECK(psol.x[0] == Approx(1.0).epsilon(1e-12));
  CHECK(psol.x[1] == Approx(1.0).epsilon(1e-12));

  // random symmetric 5x5: eigendecomposition reconstructs the matrix
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  svh::Matrix r(5, 5);
  for (int i = 0; i < 5; ++i)
    for (int j = 0; j <= i; ++j) r(i, j) = r(j, i) = u(rng);
  const auto er = svh::eigen_symmetric(r);
  double worst = 0.0;
  for (int i = 0; i < 5; ++i) {
    for (int j = 0; j < 5; ++j) {
      double acc = 0.0;
      for (int k = 0; k < 5; ++k) acc += er.vectors(i, k) * er.values[k] * er.vectors(j, k);
      worst = std::max(worst, std::abs(acc - r(i, j)));
    }
  }
  CHECK(worst < 1e-12);
}
