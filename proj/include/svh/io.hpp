#pragma once

#include <cstdio>
#include <ctime>
#include <fstream>
#include <string>
#include <vector>

#include "svh/config.hpp"
#include "svh/hedging.hpp"
#include "svh/mc.hpp"
#include "svh/version.hpp"

// Output writers for the command-line front end. Every file carries a header
// with the config hash, library version and a UTC timestamp; the timestamp is
// the only part allowed to differ between reruns of an identical config. CSV
// is comma-separated, decimal point, UTF-8 with LF line ends; the header
// rides in leading comment lines.

namespace svh {

struct OutputHeader {
  std::string config_hash;
  std::string library_version = version_string;
  std::string timestamp;
};

inline std::string utc_timestamp() {
  std::time_t now = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

inline OutputHeader make_header(const RunConfig& c) {
  return OutputHeader{config_hash(c), version_string, utc_timestamp()};
}

namespace detail {

inline nlohmann::json header_json(const OutputHeader& h) {
  return {{"config_hash", h.config_hash},
          {"library_version", h.library_version},
          {"timestamp", h.timestamp}};
}

inline std::string csv_header(const OutputHeader& h) {
  std::string out;
  out += "# config_hash: " + h.config_hash + "\n";
  out += "# library_version: " + h.library_version + "\n";
  out += "# timestamp: " + h.timestamp + "\n";
  return out;
}

// Shortest representation that parses back to the same double; keeps CSV
// reruns bit-identical without dragging 17 digits through every file.
inline std::string fmt_double(double v) {
  char buf[32];
  for (int prec = 1; prec <= 17; ++prec) {
    std::snprintf(buf, sizeof buf, "%.*g", prec, v);
    double back;
    std::sscanf(buf, "%lf", &back);
    if (back == v) break;
  }
  return buf;
}

inline void write_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("io: cannot write \"" + path + "\"");
  out << content;
}

}  // namespace detail

inline void write_coefficients(const std::string& path, const OutputHeader& h,
                               const RunConfig& c, const HedgeCoefficients& hc) {
  nlohmann::json j;
  j["header"] = detail::header_json(h);
  j["model"] = c.model == ModelKind::heston ? "heston" : "three_halves";
  j["A"] = hc.a;
  j["B"] = hc.b;
  nlohmann::json rows = nlohmann::json::array();
  for (std::size_t i = 0; i < hc.c.rows(); ++i) {
    nlohmann::json row = nlohmann::json::array();
    for (std::size_t k = 0; k < hc.c.cols(); ++k) row.push_back(hc.c(i, k));
    rows.push_back(row);
  }
  j["C"] = rows;
  j["diagnostics"] = {{"imag_max", hc.imag_diagnostic}, {"asym_max", hc.asym_diagnostic}};
  detail::write_file(path, j.dump(2) + "\n");
}

inline void write_solution(const std::string& path, const OutputHeader& h,
                           const HedgeSolution& s) {
  nlohmann::json j;
  j["header"] = detail::header_json(h);
  j["v_star"] = s.v_star;
  j["eps2_unhedged"] = s.eps2_unhedged;
  j["eps2_semistatic"] = s.eps2_semistatic;
  j["variance_reduction"] = s.variance_reduction;
  j["solver"] = s.solver == SolverKind::direct ? "direct" : "pseudo_inverse";
  detail::write_file(path, j.dump(2) + "\n");
}

struct StrategyRow {
  double t = 0.0;
  double v = 0.0;
  double theta = 0.0;
};

// theta* on a (t, V) grid at S = S0: the stock position of the combined
// hedge, swap leg minus the optimal basket's claim legs.
template <class Params>
std::vector<StrategyRow> strategy_table(const Params& p, const std::vector<EuropeanOption>& basket,
                                        const std::vector<double>& v_star,
                                        const QuadratureSpec& spec = {}) {
  std::vector<StrategyRow> rows;
  const int nt = 10, nv = 9;
  for (int it = 0; it < nt; ++it) {
    const double t = p.T * (0.95 * it / (nt - 1));
    for (int iv = 0; iv < nv; ++iv) {
      const double v = p.v0 * std::pow(4.0, -1.0 + 2.0 * iv / (nv - 1));
      rows.push_back({t, v, dynamic_strategy(p, basket, v_star, t, p.s0, v, spec)});
    }
  }
  return rows;
}

inline void write_strategy(const std::string& path, const OutputHeader& h,
                           const std::vector<StrategyRow>& rows) {
  std::string out = detail::csv_header(h);
  out += "t,V,theta_star\n";
  for (const StrategyRow& r : rows)
    out += detail::fmt_double(r.t) + "," + detail::fmt_double(r.v) + "," +
           detail::fmt_double(r.theta) + "\n";
  detail::write_file(path, out);
}

struct VerifyRow {
  std::string quantity;
  double closed_form = 0.0;
  double mc_estimate = 0.0;
  double mc_se = 0.0;
  double z_score = 0.0;
};

inline VerifyRow verify_row(std::string quantity, double closed, const MeanSe& mc) {
  VerifyRow r;
  r.quantity = std::move(quantity);
  r.closed_form = closed;
  r.mc_estimate = mc.value;
  r.mc_se = mc.se;
  r.z_score = mc.se > 0.0 ? (mc.value - closed) / mc.se : 0.0;
  return r;
}

inline void write_verify(const std::string& path, const OutputHeader& h,
                         const std::vector<VerifyRow>& rows) {
  std::string out = detail::csv_header(h);
  out += "quantity,closed_form,mc_estimate,mc_se,z_score\n";
  for (const VerifyRow& r : rows)
    out += r.quantity + "," + detail::fmt_double(r.closed_form) + "," +
           detail::fmt_double(r.mc_estimate) + "," + detail::fmt_double(r.mc_se) + "," +
           detail::fmt_double(r.z_score) + "\n";
  detail::write_file(path, out);
}

struct ReconstructionRow {
  double x = 0.0;
  double payoff = 0.0;
  double fourier_value = 0.0;
  double abs_error = 0.0;
};

// One block of 101 points on x in [-2, 2] per claim; blocks are stacked in
// basket order, so a new block is marked by x jumping back to -2.
inline std::vector<ReconstructionRow> reconstruction_table(
    const std::vector<EuropeanOption>& basket, const QuadratureSpec& spec = {}) {
  std::vector<ReconstructionRow> rows;
  for (const EuropeanOption& o : basket)
    for (int i = 0; i <= 100; ++i) {
      const double x = -2.0 + 4.0 * i / 100.0;
      const double exact = payoff(o, x);
      const double rec = reconstruct_payoff(o, x, spec);
      rows.push_back({x, exact, rec, std::abs(rec - exact)});
    }
  return rows;
}

inline void write_reconstruction(const std::string& path, const OutputHeader& h,
                                 const std::vector<ReconstructionRow>& rows) {
  std::string out = detail::csv_header(h);
  out += "x,payoff,fourier_value,abs_error\n";
  for (const ReconstructionRow& r : rows)
    out += detail::fmt_double(r.x) + "," + detail::fmt_double(r.payoff) + "," +
           detail::fmt_double(r.fourier_value) + "," + detail::fmt_double(r.abs_error) + "\n";
  detail::write_file(path, out);
}

}  // namespace svh
