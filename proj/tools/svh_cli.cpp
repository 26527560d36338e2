// Command-line front end: hedge (closed-form coefficients, optimal basket
// weights, strategy grid), verify (Monte Carlo cross-check of the closed
// forms), reconstruct (payoff recovery from the strip representation).
//
// Exit codes: 0 success, 2 configuration error, 3 numerical failure inside
// the computational modules (the error text is printed verbatim), 4 a verify
// run where some |z| exceeded 3.

#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include <svh/config.hpp>
#include <svh/io.hpp>

namespace {

struct Overrides {
  std::string out;
  int threads = 0;
  long long seed = -1;
};

void apply(const Overrides& ov, svh::RunConfig& c) {
  if (!ov.out.empty()) c.outputs = ov.out;
  if (ov.threads > 0) c.sim.threads = ov.threads;
  if (ov.seed >= 0) c.sim.seed = static_cast<std::uint64_t>(ov.seed);
}

std::string out_path(const svh::RunConfig& c, const char* name) {
  std::filesystem::create_directories(c.outputs);
  return (std::filesystem::path(c.outputs) / name).string();
}

svh::HedgeCoefficients coefficients_of(const svh::RunConfig& c) {
  if (c.model == svh::ModelKind::heston)
    return svh::hedge_coefficients(c.heston, c.basket, c.quadrature);
  return svh::hedge_coefficients(c.three_halves, c.basket, c.quadrature);
}

int cmd_hedge(const svh::RunConfig& c) {
  const svh::OutputHeader head = svh::make_header(c);
  const svh::HedgeCoefficients hc = coefficients_of(c);
  const svh::HedgeSolution sol = svh::solve(hc);
  svh::write_coefficients(out_path(c, "coefficients.json"), head, c, hc);
  svh::write_solution(out_path(c, "solution.json"), head, sol);
  const std::vector<svh::StrategyRow> rows =
      c.model == svh::ModelKind::heston
          ? svh::strategy_table(c.heston, c.basket, sol.v_star, c.quadrature)
          : svh::strategy_table(c.three_halves, c.basket, sol.v_star, c.quadrature);
  svh::write_strategy(out_path(c, "strategy.csv"), head, rows);
  std::printf("hedge: d=%zu  eps2 %.6g -> %.6g  variance reduction %.4f  (%s)\n",
              c.basket.size(), sol.eps2_unhedged, sol.eps2_semistatic,
              sol.variance_reduction, c.outputs.c_str());
  return 0;
}

int cmd_verify(const svh::RunConfig& c) {
  if (!c.has_sim) throw svh::ConfigError("config: verify requires a sim block");
  const svh::OutputHeader head = svh::make_header(c);

  double a_closed = 0.0;
  std::vector<double> b_closed;
  svh::Matrix c_closed;
  double strike_closed = 0.0;
  if (c.model == svh::ModelKind::heston) {
    a_closed = svh::coeff_A(c.heston, c.quadrature);
    strike_closed = svh::expected_quadratic_variation(c.heston);
    if (!c.basket.empty()) {
      b_closed = svh::coeff_B(c.heston, c.basket, c.quadrature);
      c_closed = svh::coeff_C(c.heston, c.basket, c.quadrature);
    }
  } else {
    a_closed = svh::coeff_A(c.three_halves, c.quadrature);
    strike_closed = svh::expected_quadratic_variation(c.three_halves);
    if (!c.basket.empty()) {
      const svh::CoeffResult3H bc = svh::coeff_BC(c.three_halves, c.basket, c.quadrature);
      b_closed = bc.b;
      c_closed = bc.c;
    }
  }

  const svh::McVerification mc =
      c.model == svh::ModelKind::heston
          ? svh::mc_verify(c.heston, c.basket, c.swap, c.sim, c.quadrature)
          : svh::mc_verify(c.three_halves, c.basket, c.swap, c.sim, c.quadrature);

  std::vector<svh::VerifyRow> rows;
  rows.push_back(svh::verify_row("strike", strike_closed, mc.strike));
  rows.push_back(svh::verify_row("A_pathwise", a_closed,
                                 svh::MeanSe{mc.pathwise.a, mc.pathwise.a_se}));
  rows.push_back(svh::verify_row("A_instantaneous", a_closed,
                                 svh::MeanSe{mc.instantaneous.a, mc.instantaneous.a_se}));
  for (std::size_t j = 0; j < c.basket.size(); ++j) {
    const std::string tag = "B[" + std::to_string(j) + "]";
    rows.push_back(svh::verify_row(tag + "_pathwise", b_closed[j],
                                   svh::MeanSe{mc.pathwise.b[j], mc.pathwise.b_se[j]}));
    rows.push_back(svh::verify_row(tag + "_instantaneous", b_closed[j],
                                   svh::MeanSe{mc.instantaneous.b[j], mc.instantaneous.b_se[j]}));
  }
  for (std::size_t i = 0; i < c.basket.size(); ++i)
    for (std::size_t j = i; j < c.basket.size(); ++j) {
      const std::string tag = "C[" + std::to_string(i) + "][" + std::to_string(j) + "]";
      rows.push_back(svh::verify_row(tag + "_pathwise", c_closed(i, j),
                                     svh::MeanSe{mc.pathwise.c(i, j), mc.pathwise.c_se(i, j)}));
      rows.push_back(
          svh::verify_row(tag + "_instantaneous", c_closed(i, j),
                          svh::MeanSe{mc.instantaneous.c(i, j), mc.instantaneous.c_se(i, j)}));
    }

  svh::write_verify(out_path(c, "verify.csv"), head, rows);

  double worst = 0.0;
  for (const svh::VerifyRow& r : rows) worst = std::max(worst, std::abs(r.z_score));
  std::printf("verify: %zu quantities, %lld paths, %d steps, worst |z| = %.2f  (%s)\n",
              rows.size(), mc.paths, mc.steps, worst, c.outputs.c_str());
  return worst > 3.0 ? 4 : 0;
}

int cmd_reconstruct(const svh::RunConfig& c) {
  const svh::OutputHeader head = svh::make_header(c);
  const auto rows = svh::reconstruction_table(c.basket, c.quadrature);
  double worst = 0.0;
  for (const auto& r : rows) worst = std::max(worst, r.abs_error);
  svh::write_reconstruction(out_path(c, "reconstruction.csv"), head, rows);
  std::printf("reconstruct: %zu claims, max abs error %.3g  (%s)\n", c.basket.size(), worst,
              c.outputs.c_str());
  return 0;
}

int run(const std::string& config_path, const Overrides& ov, int (*cmd)(const svh::RunConfig&)) {
  svh::RunConfig c;
  try {
    c = svh::load_config(config_path);
    apply(ov, c);
  } catch (const svh::ConfigError& e) {
    std::fprintf(stderr, "%s\n", e.what());
    return 2;
  }
  try {
    return cmd(c);
  } catch (const svh::ConfigError& e) {
    std::fprintf(stderr, "%s\n", e.what());
    return 2;
  } catch (const svh::Error& e) {
    std::fprintf(stderr, "%s\n", e.what());
    return 3;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"variance-optimal semi-static hedging of variance swaps"};
  app.require_subcommand(1);

  std::string config_path;
  Overrides ov;
  int which = 0;

  const auto add_common = [&](CLI::App* sub, int id) {
    sub->add_option("config", config_path, "JSON run configuration")->required();
    sub->add_option("--out", ov.out, "output directory (overrides config)");
    sub->add_option("--threads", ov.threads, "simulation thread count (overrides config)");
    sub->add_option("--seed", ov.seed, "simulation seed (overrides config)");
    sub->callback([&which, id] { which = id; });
  };
  add_common(app.add_subcommand("hedge", "closed-form coefficients, weights, strategy grid"), 1);
  add_common(app.add_subcommand("verify", "Monte Carlo cross-check of the closed forms"), 2);
  add_common(app.add_subcommand("reconstruct", "payoff recovery from the strip representation"),
             3);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  switch (which) {
    case 1:
      return run(config_path, ov, cmd_hedge);
    case 2:
      return run(config_path, ov, cmd_verify);
    default:
      return run(config_path, ov, cmd_reconstruct);
  }
}
