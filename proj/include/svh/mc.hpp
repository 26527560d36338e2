#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <thread>
#include <vector>

#include "svh/errors.hpp"
#include "svh/hedging.hpp"
#include "svh/heston.hpp"
#include "svh/linalg.hpp"
#include "svh/payoffs.hpp"
#include "svh/quadrature.hpp"
#include "svh/three_halves.hpp"

// Monte Carlo verification of the closed-form machinery. Paths are simulated
// by full-truncation Euler (the 3/2 model through its reciprocal variance,
// which is square-root affine), and two independent estimators of the hedge
// error coefficients run along them:
//
//   - pathwise: the realized residuals L_T = payoff - price - sum theta dS of
//     the swap and of every basket claim, with A, B, C as sample moments of
//     their products;
//   - instantaneous: the time integral of the residual covariation kernel,
//     sigma^2 (1-rho^2) V (resp. V^3) times the product of the claims'
//     variance loadings, accumulated step by step.
//
// Both target the same expectations, so their agreement checks the strip
// quadratures and the simulation against each other. Standard errors come
// from 32 batch means; paths are laid out in 32 blocks with independent
// substreams, so results are bit-identical for any thread count.

namespace svh {

enum class Scheme { full_truncation_euler };

struct SimPlan {
  long long n_paths = 20000;  // rounded up to a multiple of 2 * 32 blocks
  int steps_per_year = 2000;
  std::uint64_t seed = 1;
  Scheme scheme = Scheme::full_truncation_euler;
  bool antithetic = true;
  int threads = 1;

  void validate() const {
    if (n_paths < 2) throw InvalidParams("sim plan: n_paths must be at least 2");
    if (steps_per_year < 50)
      throw InvalidParams("sim plan: steps_per_year must be at least 50");
    if (threads < 1) throw InvalidParams("sim plan: threads must be positive");
  }
};

inline constexpr int mc_blocks = 32;

struct MeanSe {
  double value = 0.0;
  double se = 0.0;
};

struct ResidualEstimates {
  double a = 0.0, a_se = 0.0;
  std::vector<double> b, b_se;
  Matrix c{0, 0}, c_se{0, 0};
  long long n_effective = 0;
};

struct McVerification {
  ResidualEstimates pathwise;
  ResidualEstimates instantaneous;
  std::vector<MeanSe> residual_mean;  // per slot: swap, claims, optional forward
  MeanSe strike;  // sample mean of the realized quadratic variation
  MeanSe eps2;    // squared residual of the combined hedge, when weights given
  long long paths = 0;
  int steps = 0;
  long long v_clamps = 0;  // 3/2 hedge interpolation hit the edge of its v grid
};

namespace detail {

// 64-bit finalizer used to derive per-block substream seeds. Consecutive
// block indices land in unrelated states.
inline std::uint64_t mix64(std::uint64_t x) {
  x ^= x >> 33;
  x *= 0xff51afd7ed558ccdULL;
  x ^= x >> 33;
  x *= 0xc4ceb9fe1a85ec53ULL;
  x ^= x >> 33;
  return x;
}

inline std::uint64_t block_seed(std::uint64_t seed, int block) {
  return mix64(seed + 0x9e3779b97f4a7c15ULL * static_cast<std::uint64_t>(block + 1));
}

// Reading V off the reciprocal state uses V = 1/max(R, r_floor). The cap
// only shields the readout when an Euler step dives through zero; the state
// itself recovers through the truncated CIR drift. True spells above
// V = 1/r_floor last well under one step at the covered parameter sets, so
// the cap sits far below Monte Carlo resolution, while an uncapped readout
// would let a single artificial excursion dominate every moment.
inline constexpr double recip_v_floor = 1e-3;

// Box-Muller pair per call; the radius uniform is shifted off zero so the log
// is always finite. One call consumes exactly two engine draws.
class GaussStream {
 public:
  explicit GaussStream(std::uint64_t s) : eng_(s) {}

  void pair(double& a, double& b) {
    const double u1 = (static_cast<double>(eng_() >> 11) + 1.0) * 0x1p-53;
    const double u2 = static_cast<double>(eng_() >> 11) * 0x1p-53;
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double w = 2.0 * 3.14159265358979323846 * u2;
    a = r * std::cos(w);
    b = r * std::sin(w);
  }

 private:
  std::mt19937_64 eng_;
};

inline long long pairs_per_block(const SimPlan& plan) {
  const long long per = (plan.n_paths + 2LL * mc_blocks - 1) / (2LL * mc_blocks);
  return per > 0 ? per : 1;
}

// sd of the block means / sqrt(blocks): the batch-means standard error.
inline double block_se(const std::vector<double>& means) {
  const int n = static_cast<int>(means.size());
  double m = 0.0;
  for (double v : means) m += v;
  m /= n;
  double s2 = 0.0;
  for (double v : means) s2 += (v - m) * (v - m);
  return std::sqrt(s2 / (static_cast<double>(n) * (n - 1)));
}

inline MeanSe reduce_means(const std::vector<double>& means) {
  double m = 0.0;
  for (double v : means) m += v;
  m /= static_cast<double>(means.size());
  return MeanSe{m, block_se(means)};
}

// Runs fn(block) across the requested thread count; block order of the
// reduction is fixed by the caller iterating results in index order.
template <class Fn>
void over_blocks(int threads, Fn&& fn) {
  const int nt = std::min(threads, mc_blocks);
  if (nt <= 1) {
    for (int b = 0; b < mc_blocks; ++b) fn(b);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(nt);
  for (int t = 0; t < nt; ++t) {
    pool.emplace_back([&, t] {
      for (int b = t; b < mc_blocks; b += nt) fn(b);
    });
  }
  for (auto& th : pool) th.join();
}

// A claim's strip contour frozen to fixed nodes on its upper half. The
// integrands evaluated through it are conjugate-symmetric in y for real
// state, so the weights fold in both the measure density and the factor 2
// from mirroring (with the 2 pi of the density cancelling to 1/pi).
struct FrozenClaim {
  EuropeanOption opt;
  std::vector<cd> z;
  std::vector<cd> w;
};

template <class Probe>
FrozenClaim freeze_claim(const EuropeanOption& o, double z_cap, Probe&& probe) {
  o.validate();
  QuadratureSpec fs;
  fs.rel_tol = 3e-4;
  fs.abs_tol = 1e-9;
  fs.points_per_panel = 8;
  fs.z_max = z_cap;
  const double pi = std::acos(-1.0);
  auto f = [&](double y) {
    const cd z(o.strip_r, y);
    return probe(z) * payoff_transform(o, z) / (2.0 * pi);
  };
  const PanelRule rule = freeze_rule(f, strip_edges(0.0, z_cap, 4), fs);

  FrozenClaim out;
  out.opt = o;
  out.z.reserve(rule.nodes.size());
  out.w.reserve(rule.nodes.size());
  for (std::size_t i = 0; i < rule.nodes.size(); ++i) {
    const cd z(o.strip_r, rule.nodes[i]);
    out.z.push_back(z);
    out.w.push_back(rule.weights[i] * payoff_transform(o, z) / pi);
  }
  return out;
}

// Residual slot layout shared by both sweeps: slot 0 the swap, then the
// basket claims, then (tests only) a stock forward whose residual telescopes
// to zero and whose variance loading vanishes.
struct SlotAccum {
  int n = 0;                      // residual slots
  std::vector<double> path_sum;   // upper triangle of r r^T, row-major
  std::vector<double> inst_sum;   // same layout for the covariation integrals
  double qv_sum = 0.0;
  double eps2_sum = 0.0;

  explicit SlotAccum(int slots) : n(slots), path_sum(slots * (slots + 1) / 2, 0.0),
                                  inst_sum(slots * (slots + 1) / 2, 0.0) {}

  static int tri(int i, int j, int n_slots) {  // i <= j
    return i * n_slots - i * (i - 1) / 2 + (j - i);
  }
};

inline void finish_estimates(const std::vector<std::vector<double>>& tri_means, int slots,
                             int claims, double scale, ResidualEstimates& out) {
  // tri_means: per upper-triangle entry, the 32 block means
  out.b.assign(claims, 0.0);
  out.b_se.assign(claims, 0.0);
  out.c = Matrix(claims, claims);
  out.c_se = Matrix(claims, claims);
  const auto at = [&](int i, int j) -> const std::vector<double>& {
    return tri_means[SlotAccum::tri(std::min(i, j), std::max(i, j), slots)];
  };
  const auto scaled = [&](const std::vector<double>& m) {
    MeanSe r = reduce_means(m);
    return MeanSe{r.value * scale, r.se * scale};
  };
  {
    const MeanSe r = scaled(at(0, 0));
    out.a = r.value;
    out.a_se = r.se;
  }
  for (int j = 0; j < claims; ++j) {
    const MeanSe r = scaled(at(0, j + 1));
    out.b[j] = r.value;
    out.b_se[j] = r.se;
  }
  for (int i = 0; i < claims; ++i)
    for (int j = i; j < claims; ++j) {
      const MeanSe r = scaled(at(i + 1, j + 1));
      out.c(i, j) = r.value;
      out.c(j, i) = r.value;
      out.c_se(i, j) = r.se;
      out.c_se(j, i) = r.se;
    }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Plain path simulation, for distribution-level checks. States are recorded
// at the grid step nearest each requested time, in block-contiguous path
// order, so callers can form their own batch means.

struct PathRecord {
  double t = 0.0;
  std::vector<double> x, v, qv;
};

struct PathBatch {
  std::vector<PathRecord> at;
  long long paths = 0;
  int blocks = mc_blocks;
};

struct ComplexMeanSe {
  cd value{0.0, 0.0};
  double se_re = 0.0, se_im = 0.0;
};

// Block-means moment of f(x, v) over one recorded slice.
template <class F>
ComplexMeanSe block_moment(const PathRecord& rec, long long paths, int blocks, F&& f) {
  const long long per = paths / blocks;
  std::vector<double> mre(blocks, 0.0), mim(blocks, 0.0);
  for (int b = 0; b < blocks; ++b) {
    cd s{0.0, 0.0};
    for (long long i = b * per; i < (b + 1) * per; ++i) s += f(rec.x[i], rec.v[i]);
    mre[b] = s.real() / static_cast<double>(per);
    mim[b] = s.imag() / static_cast<double>(per);
  }
  ComplexMeanSe out;
  const MeanSe re = detail::reduce_means(mre);
  const MeanSe im = detail::reduce_means(mim);
  out.value = cd(re.value, im.value);
  out.se_re = re.se;
  out.se_im = im.se;
  return out;
}

namespace detail {

template <class StepFn>
PathBatch simulate_grid(double T, int steps_per_year, const SimPlan& plan,
                        std::vector<double> record_times, StepFn&& step) {
  std::sort(record_times.begin(), record_times.end());
  const int steps = std::max(1, static_cast<int>(std::llround(
                                    std::ceil(steps_per_year * T - 1e-9))));
  const double dt = T / steps;

  std::vector<int> rec_step(record_times.size());
  for (std::size_t i = 0; i < record_times.size(); ++i) {
    if (!(record_times[i] >= 0.0 && record_times[i] <= T + 1e-12))
      throw DomainError("simulate: record time outside [0, T]");
    rec_step[i] = std::min(steps, static_cast<int>(std::llround(record_times[i] / dt)));
  }

  const long long ppb = pairs_per_block(plan);
  const long long paths = 2 * ppb * mc_blocks;

  PathBatch out;
  out.paths = paths;
  out.at.resize(record_times.size());
  for (std::size_t i = 0; i < record_times.size(); ++i) {
    out.at[i].t = rec_step[i] * dt;
    out.at[i].x.assign(paths, 0.0);
    out.at[i].v.assign(paths, 0.0);
    out.at[i].qv.assign(paths, 0.0);
  }

  over_blocks(plan.threads, [&](int b) {
    GaussStream rng(block_seed(plan.seed, b));
    const long long npb = 2 * ppb;
    std::vector<double> sx(npb, 0.0), sv(npb, 0.0), qv(npb, 0.0);
    std::vector<double> state2(npb, 0.0);  // model-specific second component
    for (long long i = 0; i < npb; ++i) step(0, -1, 0.0, 0.0, sx[i], state2[i], sv[i], qv[i]);

    auto record = [&](std::size_t ri) {
      const long long base = b * npb;
      for (long long i = 0; i < npb; ++i) {
        out.at[ri].x[base + i] = sx[i];
        out.at[ri].v[base + i] = sv[i];
        out.at[ri].qv[base + i] = qv[i];
      }
    };
    for (std::size_t ri = 0; ri < rec_step.size(); ++ri)
      if (rec_step[ri] == 0) record(ri);

    for (int k = 0; k < steps; ++k) {
      for (long long pr = 0; pr < ppb; ++pr) {
        double z1, z2;
        rng.pair(z1, z2);
        const long long ia = 2 * pr, ib = 2 * pr + 1;
        step(1, k, z1, z2, sx[ia], state2[ia], sv[ia], qv[ia]);
        if (plan.antithetic) {
          step(1, k, -z1, -z2, sx[ib], state2[ib], sv[ib], qv[ib]);
        } else {
          double w1, w2;
          rng.pair(w1, w2);
          step(1, k, w1, w2, sx[ib], state2[ib], sv[ib], qv[ib]);
        }
      }
      for (std::size_t ri = 0; ri < rec_step.size(); ++ri)
        if (rec_step[ri] == k + 1) record(ri);
    }
  });
  return out;
}

}  // namespace detail

// phase 0 initializes a path's state in place; phase 1 advances one step.
inline PathBatch simulate(const HestonParams& p, const SimPlan& plan,
                          std::vector<double> record_times = {}) {
  p.validate();
  plan.validate();
  if (record_times.empty()) record_times = {p.T};
  const double dt_all = p.T / std::max(1, static_cast<int>(std::llround(std::ceil(
                                              plan.steps_per_year * p.T - 1e-9))));
  const double sdt = std::sqrt(dt_all);
  const double rhoc = std::sqrt(std::max(0.0, 1.0 - p.rho * p.rho));
  auto step = [&](int phase, int, double z1, double z2, double& x, double& v2, double& v,
                  double& qv) {
    if (phase == 0) {
      x = std::log(p.s0);
      v2 = p.v0;
      v = p.v0;
      qv = 0.0;
      return;
    }
    const double vp = v2 > 0.0 ? v2 : 0.0;
    const double sq = std::sqrt(vp);
    qv += vp * dt_all;
    x += -0.5 * vp * dt_all + sq * sdt * (p.rho * z2 + rhoc * z1);
    v2 += p.lambda * (p.kappa - vp) * dt_all + p.sigma * sq * sdt * z2;
    v = v2;  // the raw state; consumers clamp where the model requires it
  };
  return detail::simulate_grid(p.T, plan.steps_per_year, plan, std::move(record_times), step);
}

inline PathBatch simulate(const ThreeHalvesParams& p, const SimPlan& plan,
                          std::vector<double> record_times = {}) {
  p.validate();
  plan.validate();
  if (record_times.empty()) record_times = {p.T};
  const double dt_all = p.T / std::max(1, static_cast<int>(std::llround(std::ceil(
                                              plan.steps_per_year * p.T - 1e-9))));
  const double sdt = std::sqrt(dt_all);
  const double rhoc = std::sqrt(std::max(0.0, 1.0 - p.rho * p.rho));
  const double r_floor = detail::recip_v_floor;
  auto step = [&](int phase, int, double z1, double z2, double& x, double& r, double& v,
                  double& qv) {
    if (phase == 0) {
      x = std::log(p.s0);
      r = 1.0 / p.v0;
      v = p.v0;
      qv = 0.0;
      return;
    }
    const double rp = r > 0.0 ? r : 0.0;
    const double vc = 1.0 / (rp > r_floor ? rp : r_floor);
    const double sq = std::sqrt(vc);
    qv += vc * dt_all;
    x += -0.5 * vc * dt_all + sq * sdt * (p.rho * z2 + rhoc * z1);
    r += (p.kappa + p.sigma * p.sigma - p.lambda * rp) * dt_all -
         p.sigma * std::sqrt(rp) * sdt * z2;
    v = 1.0 / (r > r_floor ? r : r_floor);
  };
  return detail::simulate_grid(p.T, plan.steps_per_year, plan, std::move(record_times), step);
}

// ---------------------------------------------------------------------------
// Residual sweeps.

inline McVerification mc_verify(const HestonParams& p, const std::vector<EuropeanOption>& basket,
                                const VarianceSwapClaim& swap, const SimPlan& plan,
                                const QuadratureSpec& spec = {},
                                const std::vector<double>* weights = nullptr,
                                bool with_stock_forward = false) {
  p.validate();
  plan.validate();
  swap.validate();
  if (std::abs(swap.T - p.T) > 1e-12 * (1.0 + p.T))
    throw InvalidParams("mc_verify: swap horizon differs from the model horizon");
  if (weights && weights->size() != basket.size())
    throw DimensionMismatch("mc_verify: weight vector does not match the basket");

  const int steps = std::max(1, static_cast<int>(std::llround(
                                    std::ceil(plan.steps_per_year * p.T - 1e-9))));
  const double dt = p.T / steps, sdt = std::sqrt(dt);
  const double rhoc = std::sqrt(std::max(0.0, 1.0 - p.rho * p.rho));
  const double x0 = std::log(p.s0);
  const double pref = p.sigma * p.sigma * (1.0 - p.rho * p.rho);

  // frozen contours plus the (phi, psi) transform tables on the blockwise
  // shared step grid; the probe is the t = 0 hedge integrand itself
  const std::size_t d = basket.size();
  std::vector<detail::FrozenClaim> rules;
  rules.reserve(d);
  const double z_cap = std::min(spec.z_max, 80.0);
  for (const EuropeanOption& o : basket)
    rules.push_back(detail::freeze_claim(
        o, z_cap, [&](cd z) { return theta_z(p, 0.0, x0, p.v0, z); }));

  std::vector<std::size_t> node_off{0};
  for (const auto& r : rules) node_off.push_back(node_off.back() + r.z.size());
  const std::size_t nodes = node_off.back();

  // per (step, node): transform pair and the two folded coefficients
  std::vector<cd> tb_psi(steps * nodes), tb_wth(steps * nodes), tb_wxi(steps * nodes);
  std::vector<cd> tb_phi(steps * nodes);
  for (int k = 0; k < steps; ++k) {
    const double s = p.T - k * dt;
    for (std::size_t j = 0; j < d; ++j)
      for (std::size_t i = node_off[j]; i < node_off[j + 1]; ++i) {
        const cd z = rules[j].z[i - node_off[j]];
        const Riccati r = riccati(p, s, z, 0.0);
        const cd w = rules[j].w[i - node_off[j]];
        tb_phi[k * nodes + i] = r.phi;
        tb_psi[k * nodes + i] = r.psi;
        tb_wth[k * nodes + i] = w * (z + p.rho * p.sigma * r.psi);
        tb_wxi[k * nodes + i] = w * r.psi;
      }
  }

  std::vector<double> alpha_k(steps);
  for (int k = 0; k < steps; ++k) alpha_k[k] = swap_alpha(p, k * dt);

  // claim prices at t = 0 through the same frozen rules
  std::vector<double> price0(d, 0.0);
  for (std::size_t j = 0; j < d; ++j)
    for (std::size_t i = node_off[j]; i < node_off[j + 1]; ++i) {
      const cd e = std::exp(rules[j].z[i - node_off[j]] * x0 + tb_phi[i] + tb_psi[i] * p.v0);
      price0[j] += (rules[j].w[i - node_off[j]] * e).real();
    }

  const double strike0 = expected_quadratic_variation(p);
  const int claims = static_cast<int>(d) + (with_stock_forward ? 1 : 0);
  const int slots = 1 + claims;
  const int ntri = slots * (slots + 1) / 2;

  const long long ppb = detail::pairs_per_block(plan);
  const long long npb = 2 * ppb;

  std::vector<std::vector<double>> path_means(ntri, std::vector<double>(mc_blocks, 0.0));
  std::vector<std::vector<double>> inst_means(ntri, std::vector<double>(mc_blocks, 0.0));
  std::vector<std::vector<double>> rmean_means(slots, std::vector<double>(mc_blocks, 0.0));
  std::vector<double> qv_means(mc_blocks, 0.0), eps_means(mc_blocks, 0.0);

  detail::over_blocks(plan.threads, [&](int b) {
    detail::GaussStream rng(detail::block_seed(plan.seed, b));
    std::vector<double> sx(npb, x0), sv(npb, p.v0), sp(npb, p.s0), qv(npb, 0.0);
    std::vector<double> gain(slots * npb, 0.0);
    std::vector<double> inst(ntri * npb, 0.0);
    std::vector<double> theta(slots), xi(slots);
    detail::SlotAccum acc(slots);

    for (int k = 0; k < steps; ++k) {
      const cd* ph = tb_phi.data() + k * static_cast<std::size_t>(nodes);
      const cd* ps = tb_psi.data() + k * static_cast<std::size_t>(nodes);
      const cd* wt = tb_wth.data() + k * static_cast<std::size_t>(nodes);
      const cd* wx = tb_wxi.data() + k * static_cast<std::size_t>(nodes);
      const double al = alpha_k[k];
      const double th_fac = p.rho * p.sigma * al;

      for (long long pr = 0; pr < ppb; ++pr) {
        double zn[4];
        rng.pair(zn[0], zn[1]);
        if (plan.antithetic) {
          zn[2] = -zn[0];
          zn[3] = -zn[1];
        } else {
          rng.pair(zn[2], zn[3]);
        }
        for (int m = 0; m < 2; ++m) {
          const long long i = 2 * pr + m;
          const double z1 = zn[2 * m], z2 = zn[2 * m + 1];
          const double vp = sv[i] > 0.0 ? sv[i] : 0.0;

          theta[0] = th_fac / sp[i];
          xi[0] = al;
          for (std::size_t j = 0; j < d; ++j) {
            double th = 0.0, xv = 0.0;
            for (std::size_t n = node_off[j]; n < node_off[j + 1]; ++n) {
              const double ere = rules[j].z[n - node_off[j]].real() * sx[i] + ph[n].real() +
                                 ps[n].real() * vp;
              const double eim = rules[j].z[n - node_off[j]].imag() * sx[i] + ph[n].imag() +
                                 ps[n].imag() * vp;
              const double mag = std::exp(ere);
              const double cr = mag * std::cos(eim), ci = mag * std::sin(eim);
              th += cr * wt[n].real() - ci * wt[n].imag();
              xv += cr * wx[n].real() - ci * wx[n].imag();
            }
            theta[1 + j] = th / sp[i];
            xi[1 + j] = xv;
          }
          if (with_stock_forward) {
            theta[slots - 1] = 1.0;
            xi[slots - 1] = 0.0;
          }

          const double wq = vp * dt;
          double* yi = inst.data() + static_cast<std::size_t>(i) * ntri;
          for (int u = 0, t = 0; u < slots; ++u)
            for (int v = u; v < slots; ++v, ++t) yi[t] += wq * xi[u] * xi[v];

          // advance, then book the hedge gains against the realized move
          const double sq = std::sqrt(vp);
          qv[i] += vp * dt;
          sx[i] += -0.5 * vp * dt + sq * sdt * (p.rho * z2 + rhoc * z1);
          sv[i] += p.lambda * (p.kappa - vp) * dt + p.sigma * sq * sdt * z2;
          const double s_new = std::exp(sx[i]);
          const double ds = s_new - sp[i];
          sp[i] = s_new;
          double* gi = gain.data() + static_cast<std::size_t>(i) * slots;
          for (int u = 0; u < slots; ++u) gi[u] += theta[u] * ds;
        }
      }
    }

    std::vector<double> res(slots), rsum(slots, 0.0);
    for (long long i = 0; i < npb; ++i) {
      const double* gi = gain.data() + static_cast<std::size_t>(i) * slots;
      res[0] = qv[i] - strike0 - gi[0];
      for (std::size_t j = 0; j < d; ++j)
        res[1 + j] = payoff(basket[j], sx[i]) - price0[j] - gi[1 + j];
      if (with_stock_forward) res[slots - 1] = std::exp(sx[i]) - p.s0 - gi[slots - 1];

      const double* yi = inst.data() + static_cast<std::size_t>(i) * ntri;
      for (int u = 0, t = 0; u < slots; ++u)
        for (int v = u; v < slots; ++v, ++t) {
          acc.path_sum[t] += res[u] * res[v];
          acc.inst_sum[t] += yi[t];
        }
      for (int u = 0; u < slots; ++u) rsum[u] += res[u];
      acc.qv_sum += qv[i];
      if (weights) {
        double h = res[0];
        for (std::size_t j = 0; j < d; ++j) h -= (*weights)[j] * res[1 + j];
        acc.eps2_sum += h * h;
      }
    }

    const double inv = 1.0 / static_cast<double>(npb);
    for (int t = 0; t < ntri; ++t) {
      path_means[t][b] = acc.path_sum[t] * inv;
      inst_means[t][b] = acc.inst_sum[t] * inv;
    }
    for (int u = 0; u < slots; ++u) rmean_means[u][b] = rsum[u] * inv;
    qv_means[b] = acc.qv_sum * inv;
    eps_means[b] = acc.eps2_sum * inv;
  });

  McVerification out;
  out.paths = npb * mc_blocks;
  out.steps = steps;
  detail::finish_estimates(path_means, slots, claims, 1.0, out.pathwise);
  detail::finish_estimates(inst_means, slots, claims, pref, out.instantaneous);
  out.pathwise.n_effective = out.paths;
  out.instantaneous.n_effective = out.paths;
  out.residual_mean.resize(slots);
  for (int u = 0; u < slots; ++u) out.residual_mean[u] = detail::reduce_means(rmean_means[u]);
  out.strike = detail::reduce_means(qv_means);
  if (weights) out.eps2 = detail::reduce_means(eps_means);
  return out;
}

inline McVerification mc_verify(const ThreeHalvesParams& p,
                                const std::vector<EuropeanOption>& basket,
                                const VarianceSwapClaim& swap, const SimPlan& plan,
                                const QuadratureSpec& spec = {},
                                const std::vector<double>* weights = nullptr,
                                bool with_stock_forward = false) {
  p.validate();
  plan.validate();
  swap.validate();
  if (std::abs(swap.T - p.T) > 1e-12 * (1.0 + p.T))
    throw InvalidParams("mc_verify: swap horizon differs from the model horizon");
  if (weights && weights->size() != basket.size())
    throw DimensionMismatch("mc_verify: weight vector does not match the basket");

  const int steps = std::max(1, static_cast<int>(std::llround(
                                    std::ceil(plan.steps_per_year * p.T - 1e-9))));
  const double dt = p.T / steps, sdt = std::sqrt(dt);
  const double rhoc = std::sqrt(std::max(0.0, 1.0 - p.rho * p.rho));
  const double x0 = std::log(p.s0);
  const double pref = p.sigma * p.sigma * (1.0 - p.rho * p.rho);
  const double r_floor = detail::recip_v_floor;

  const std::size_t d = basket.size();
  std::vector<detail::FrozenClaim> rules;
  rules.reserve(d);
  const double z_cap = std::min(spec.z_max, 50.0);
  for (const EuropeanOption& o : basket)
    rules.push_back(detail::freeze_claim(
        o, z_cap, [&](cd z) { return theta_z(p, 0.0, x0, p.v0, z); }));

  std::vector<std::size_t> node_off{0};
  for (const auto& r : rules) node_off.push_back(node_off.back() + r.z.size());
  const std::size_t nodes = node_off.back();

  // Hedge tables: the conditional transform factors z g + rho sigma v d_v g
  // (position) and d_v g (variance loading) per node, tabulated on a log
  // lattice over time-to-go and variance, then collapsed to the running
  // step's time slice once per block and cubically interpolated in log v
  // along the paths.
  const int n_s = 48, n_v = 112;
  const double lv_lo = std::log(1e-4), lv_hi = std::log(1e3);
  const double dlv = (lv_hi - lv_lo) / (n_v - 1);
  const double ls_lo = std::log(0.5 * dt), ls_hi = std::log(p.T * (1.0 + 1e-9));
  const double dls = (ls_hi - ls_lo) / (n_s - 1);

  std::vector<cd> tab_c(static_cast<std::size_t>(n_s) * nodes * n_v);
  std::vector<cd> tab_d(static_cast<std::size_t>(n_s) * nodes * n_v);
  for (int a = 0; a < n_s; ++a) {
    const double s = std::exp(ls_lo + a * dls);
    const double t = std::max(0.0, p.T - s);
    for (std::size_t j = 0; j < d; ++j)
      for (std::size_t n = node_off[j]; n < node_off[j + 1]; ++n) {
        const cd z = rules[j].z[n - node_off[j]];
        for (int iv = 0; iv < n_v; ++iv) {
          const double v = std::exp(lv_lo + iv * dlv);
          const GValue g = g_value(p, t, v, z);
          const std::size_t at = (static_cast<std::size_t>(a) * nodes + n) * n_v + iv;
          tab_c[at] = z * g.g + p.rho * p.sigma * v * g.dg;
          tab_d[at] = g.dg;
        }
      }
  }

  // 4-point Lagrange weights on a uniform grid, clamped at the ends
  const auto cubic4 = [](double u, int n, int& i0, double* cw) {
    int i = static_cast<int>(std::floor(u)) - 1;
    i = std::max(0, std::min(n - 4, i));
    const double f = u - (i + 1);
    cw[0] = -f * (f - 1.0) * (f - 2.0) / 6.0;
    cw[1] = (f + 1.0) * (f - 1.0) * (f - 2.0) / 2.0;
    cw[2] = -(f + 1.0) * f * (f - 2.0) / 2.0;
    cw[3] = (f + 1.0) * f * (f - 1.0) / 6.0;
    i0 = i;
  };

  // swap slope table in log y for theta_swap and the swap variance loading
  const int n_y = 512;
  const double ly_lo = std::log(1e-9);
  const double ly_hi = std::log(alpha_tilde(p, 0.0) * std::exp(lv_hi) * 2.0);
  const double dly = (ly_hi - ly_lo) / (n_y - 1);
  std::vector<double> hp_tab(n_y);
  for (int i = 0; i < n_y; ++i) hp_tab[i] = h_prime(p, std::exp(ly_lo + i * dly));

  const auto hp_at = [&](double y) {
    if (y <= 0.0) return 1.0;
    const double u = (std::log(y) - ly_lo) / dly;
    if (u <= 0.0) return 1.0;
    if (u >= n_y - 1) return hp_tab[n_y - 1];
    int i0;
    double cw[4];
    cubic4(u, n_y, i0, cw);
    return cw[0] * hp_tab[i0] + cw[1] * hp_tab[i0 + 1] + cw[2] * hp_tab[i0 + 2] +
           cw[3] * hp_tab[i0 + 3];
  };

  // claim prices at t = 0 by direct transform evaluation on the same nodes
  std::vector<double> price0(d, 0.0);
  for (std::size_t j = 0; j < d; ++j)
    for (std::size_t n = node_off[j]; n < node_off[j + 1]; ++n) {
      const cd z = rules[j].z[n - node_off[j]];
      const cd e = std::exp(z * x0) * g_fn(p, 0.0, p.v0, z);
      price0[j] += (rules[j].w[n - node_off[j]] * e).real();
    }

  const double strike0 = expected_quadratic_variation(p);
  std::vector<double> alpha_k(steps);
  for (int k = 0; k < steps; ++k) alpha_k[k] = alpha_tilde(p, k * dt);

  const int claims = static_cast<int>(d) + (with_stock_forward ? 1 : 0);
  const int slots = 1 + claims;
  const int ntri = slots * (slots + 1) / 2;

  const long long ppb = detail::pairs_per_block(plan);
  const long long npb = 2 * ppb;

  std::vector<std::vector<double>> path_means(ntri, std::vector<double>(mc_blocks, 0.0));
  std::vector<std::vector<double>> inst_means(ntri, std::vector<double>(mc_blocks, 0.0));
  std::vector<std::vector<double>> rmean_means(slots, std::vector<double>(mc_blocks, 0.0));
  std::vector<double> qv_means(mc_blocks, 0.0), eps_means(mc_blocks, 0.0);
  std::vector<long long> clamp_counts(mc_blocks, 0);

  detail::over_blocks(plan.threads, [&](int b) {
    detail::GaussStream rng(detail::block_seed(plan.seed, b));
    std::vector<double> sx(npb, x0), sr(npb, 1.0 / p.v0), sp(npb, p.s0), qv(npb, 0.0);
    std::vector<double> gain(slots * npb, 0.0);
    std::vector<double> inst(ntri * npb, 0.0);
    std::vector<double> theta(slots), xi(slots);
    std::vector<cd> step_c(nodes * n_v), step_d(nodes * n_v);
    detail::SlotAccum acc(slots);
    long long clamps = 0;

    for (int k = 0; k < steps; ++k) {
      // collapse the time direction once for this step
      const double s = p.T - k * dt;
      int a0;
      double aw[4];
      cubic4((std::log(s) - ls_lo) / dls, n_s, a0, aw);
      for (std::size_t e = 0; e < nodes * static_cast<std::size_t>(n_v); ++e) {
        const std::size_t stride = nodes * static_cast<std::size_t>(n_v);
        step_c[e] = aw[0] * tab_c[a0 * stride + e] + aw[1] * tab_c[(a0 + 1) * stride + e] +
                    aw[2] * tab_c[(a0 + 2) * stride + e] + aw[3] * tab_c[(a0 + 3) * stride + e];
        step_d[e] = aw[0] * tab_d[a0 * stride + e] + aw[1] * tab_d[(a0 + 1) * stride + e] +
                    aw[2] * tab_d[(a0 + 2) * stride + e] + aw[3] * tab_d[(a0 + 3) * stride + e];
      }
      const double al = alpha_k[k];

      for (long long pr = 0; pr < ppb; ++pr) {
        double zn[4];
        rng.pair(zn[0], zn[1]);
        if (plan.antithetic) {
          zn[2] = -zn[0];
          zn[3] = -zn[1];
        } else {
          rng.pair(zn[2], zn[3]);
        }
        for (int m = 0; m < 2; ++m) {
          const long long i = 2 * pr + m;
          const double z1 = zn[2 * m], z2 = zn[2 * m + 1];
          const double rp = sr[i] > 0.0 ? sr[i] : 0.0;
          const double vc = 1.0 / (rp > r_floor ? rp : r_floor);

          double lv = std::log(vc);
          if (lv < lv_lo || lv > lv_hi) {
            ++clamps;
            lv = std::min(lv_hi, std::max(lv_lo, lv));
          }
          int i0;
          double cw[4];
          cubic4((lv - lv_lo) / dlv, n_v, i0, cw);

          const double hp = hp_at(al * vc);
          theta[0] = p.rho * p.sigma * vc * hp * al / sp[i];
          xi[0] = al * hp;

          for (std::size_t j = 0; j < d; ++j) {
            const double eax = std::exp(rules[j].z[0].real() * sx[i]);
            double th = 0.0, xv = 0.0;
            for (std::size_t n = node_off[j]; n < node_off[j + 1]; ++n) {
              const cd* rc = step_c.data() + n * static_cast<std::size_t>(n_v) + i0;
              const cd* rd = step_d.data() + n * static_cast<std::size_t>(n_v) + i0;
              const cd tcv = cw[0] * rc[0] + cw[1] * rc[1] + cw[2] * rc[2] + cw[3] * rc[3];
              const cd tdv = cw[0] * rd[0] + cw[1] * rd[1] + cw[2] * rd[2] + cw[3] * rd[3];
              const double w = rules[j].z[n - node_off[j]].imag() * sx[i];
              const double cr = eax * std::cos(w), ci = eax * std::sin(w);
              const cd wn = rules[j].w[n - node_off[j]];
              const double wr = wn.real(), wi = wn.imag();
              th += (cr * tcv.real() - ci * tcv.imag()) * wr -
                    (cr * tcv.imag() + ci * tcv.real()) * wi;
              xv += (cr * tdv.real() - ci * tdv.imag()) * wr -
                    (cr * tdv.imag() + ci * tdv.real()) * wi;
            }
            theta[1 + j] = th / sp[i];
            xi[1 + j] = xv;
          }
          if (with_stock_forward) {
            theta[slots - 1] = 1.0;
            xi[slots - 1] = 0.0;
          }

          const double wq = vc * vc * vc * dt;
          double* yi = inst.data() + static_cast<std::size_t>(i) * ntri;
          for (int u = 0, t = 0; u < slots; ++u)
            for (int v = u; v < slots; ++v, ++t) yi[t] += wq * xi[u] * xi[v];

          const double sq = std::sqrt(vc);
          qv[i] += vc * dt;
          sx[i] += -0.5 * vc * dt + sq * sdt * (p.rho * z2 + rhoc * z1);
          sr[i] += (p.kappa + p.sigma * p.sigma - p.lambda * rp) * dt -
                   p.sigma * std::sqrt(rp) * sdt * z2;
          const double s_new = std::exp(sx[i]);
          const double ds = s_new - sp[i];
          sp[i] = s_new;
          double* gi = gain.data() + static_cast<std::size_t>(i) * slots;
          for (int u = 0; u < slots; ++u) gi[u] += theta[u] * ds;
        }
      }
    }

    std::vector<double> res(slots), rsum(slots, 0.0);
    for (long long i = 0; i < npb; ++i) {
      const double* gi = gain.data() + static_cast<std::size_t>(i) * slots;
      res[0] = qv[i] - strike0 - gi[0];
      for (std::size_t j = 0; j < d; ++j)
        res[1 + j] = payoff(basket[j], sx[i]) - price0[j] - gi[1 + j];
      if (with_stock_forward) res[slots - 1] = std::exp(sx[i]) - p.s0 - gi[slots - 1];

      const double* yi = inst.data() + static_cast<std::size_t>(i) * ntri;
      for (int u = 0, t = 0; u < slots; ++u)
        for (int v = u; v < slots; ++v, ++t) {
          acc.path_sum[t] += res[u] * res[v];
          acc.inst_sum[t] += yi[t];
        }
      for (int u = 0; u < slots; ++u) rsum[u] += res[u];
      acc.qv_sum += qv[i];
      if (weights) {
        double h = res[0];
        for (std::size_t j = 0; j < d; ++j) h -= (*weights)[j] * res[1 + j];
        acc.eps2_sum += h * h;
      }
    }

    const double inv = 1.0 / static_cast<double>(npb);
    for (int t = 0; t < ntri; ++t) {
      path_means[t][b] = acc.path_sum[t] * inv;
      inst_means[t][b] = acc.inst_sum[t] * inv;
    }
    for (int u = 0; u < slots; ++u) rmean_means[u][b] = rsum[u] * inv;
    qv_means[b] = acc.qv_sum * inv;
    eps_means[b] = acc.eps2_sum * inv;
    clamp_counts[b] = clamps;
  });

  McVerification out;
  out.paths = npb * mc_blocks;
  out.steps = steps;
  detail::finish_estimates(path_means, slots, claims, 1.0, out.pathwise);
  detail::finish_estimates(inst_means, slots, claims, pref, out.instantaneous);
  out.pathwise.n_effective = out.paths;
  out.instantaneous.n_effective = out.paths;
  out.residual_mean.resize(slots);
  for (int u = 0; u < slots; ++u) out.residual_mean[u] = detail::reduce_means(rmean_means[u]);
  out.strike = detail::reduce_means(qv_means);
  if (weights) out.eps2 = detail::reduce_means(eps_means);
  for (long long c : clamp_counts) out.v_clamps += c;
  return out;
}

// Narrow entry points for callers that want a single estimator; both cost one
// full sweep each, so ask mc_verify directly when both are needed.
template <class Params>
ResidualEstimates pathwise_residuals(const Params& p, const std::vector<EuropeanOption>& basket,
                                     const VarianceSwapClaim& swap, const SimPlan& plan,
                                     const QuadratureSpec& spec = {}) {
  return mc_verify(p, basket, swap, plan, spec).pathwise;
}

template <class Params>
ResidualEstimates instantaneous_covariation(const Params& p,
                                            const std::vector<EuropeanOption>& basket,
                                            const VarianceSwapClaim& swap, const SimPlan& plan,
                                            const QuadratureSpec& spec = {}) {
  return mc_verify(p, basket, swap, plan, spec).instantaneous;
}

}  // namespace svh
