#pragma once

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "svh/errors.hpp"
#include "svh/hedging.hpp"
#include "svh/heston.hpp"
#include "svh/mc.hpp"
#include "svh/payoffs.hpp"
#include "svh/quadrature.hpp"
#include "svh/three_halves.hpp"

// JSON run configuration: model parameters, the swap being hedged, the static
// basket, quadrature and simulation controls. Field names follow the symbols
// used throughout the library (lambda, kappa, sigma, rho, V0, S0, T, k_swap,
// R); rates and times are in years, variance is annualized, strikes share the
// unit of S0. Unknown keys are rejected so typos cannot silently fall back to
// defaults.

namespace svh {

enum class ModelKind { heston, three_halves };

struct RunConfig {
  ModelKind model = ModelKind::heston;
  HestonParams heston;
  ThreeHalvesParams three_halves;
  VarianceSwapClaim swap;
  std::vector<EuropeanOption> basket;
  QuadratureSpec quadrature;
  bool has_sim = false;
  SimPlan sim;
  std::string outputs = "out";

  double horizon() const { return model == ModelKind::heston ? heston.T : three_halves.T; }

  void validate() const {
    if (model == ModelKind::heston)
      heston.validate();
    else
      three_halves.validate();
    swap.validate();
    for (const EuropeanOption& o : basket) o.validate();
    if (has_sim) sim.validate();
    if (std::abs(swap.T - horizon()) > 1e-12 * (1.0 + horizon()))
      throw ConfigError("swap.T must match params.T");
  }
};

namespace detail {

inline std::string json_type_name(const nlohmann::json& j) {
  if (j.is_null()) return "null";
  if (j.is_boolean()) return "boolean";
  if (j.is_number()) return "number";
  if (j.is_string()) return "string";
  if (j.is_array()) return "array";
  return "object";
}

inline const nlohmann::json& require_key(const nlohmann::json& j, const std::string& path,
                                         const char* key) {
  if (!j.contains(key)) throw ConfigError(path + ": missing required key \"" + key + "\"");
  return j.at(key);
}

inline double as_number(const nlohmann::json& j, const std::string& path) {
  if (!j.is_number()) throw ConfigError(path + ": expected number, got " + json_type_name(j));
  return j.get<double>();
}

inline double num_at(const nlohmann::json& j, const std::string& path, const char* key) {
  return as_number(require_key(j, path, key), path + "." + key);
}

inline double num_or(const nlohmann::json& j, const std::string& path, const char* key,
                     double fallback) {
  if (!j.contains(key)) return fallback;
  return as_number(j.at(key), path + "." + key);
}

inline long long as_integer(const nlohmann::json& j, const std::string& path) {
  if (j.is_number_unsigned() || j.is_number_integer()) return j.get<long long>();
  throw ConfigError(path + ": expected integer, got " + json_type_name(j));
}

inline long long int_or(const nlohmann::json& j, const std::string& path, const char* key,
                        long long fallback) {
  if (!j.contains(key)) return fallback;
  return as_integer(j.at(key), path + "." + key);
}

inline std::string str_at(const nlohmann::json& j, const std::string& path, const char* key) {
  const nlohmann::json& v = require_key(j, path, key);
  if (!v.is_string())
    throw ConfigError(path + "." + key + ": expected string, got " + json_type_name(v));
  return v.get<std::string>();
}

inline void check_keys(const nlohmann::json& j, const std::string& path,
                       std::initializer_list<const char*> allowed) {
  if (!j.is_object()) throw ConfigError(path + ": expected object, got " + json_type_name(j));
  for (const auto& item : j.items()) {
    bool ok = false;
    for (const char* k : allowed)
      if (item.key() == k) {
        ok = true;
        break;
      }
    if (!ok) throw ConfigError(path + ": unknown key \"" + item.key() + "\"");
  }
}

inline void line_of_offset(const std::string& text, std::size_t byte, int& line, int& col) {
  line = 1;
  col = 1;
  for (std::size_t i = 0; i < byte && i < text.size(); ++i) {
    if (text[i] == '\n') {
      ++line;
      col = 1;
    } else {
      ++col;
    }
  }
}

}  // namespace detail

inline RunConfig parse_config(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    int line = 0, col = 0;
    detail::line_of_offset(text, e.byte > 0 ? e.byte - 1 : 0, line, col);
    std::ostringstream os;
    os << "config: parse error at line " << line << ", column " << col << ": " << e.what();
    throw ConfigError(os.str());
  }

  RunConfig c;
  detail::check_keys(j, "$",
                     {"model", "params", "swap", "basket", "quadrature", "sim", "outputs"});

  const std::string model = detail::str_at(j, "$", "model");
  if (model == "heston")
    c.model = ModelKind::heston;
  else if (model == "three_halves")
    c.model = ModelKind::three_halves;
  else
    throw ConfigError("$.model: must be \"heston\" or \"three_halves\"");

  const nlohmann::json& pj = detail::require_key(j, "$", "params");
  detail::check_keys(pj, "$.params", {"lambda", "kappa", "sigma", "rho", "V0", "S0", "T"});
  const auto read_params = [&](auto& p) {
    p.lambda = detail::num_at(pj, "$.params", "lambda");
    p.kappa = detail::num_at(pj, "$.params", "kappa");
    p.sigma = detail::num_at(pj, "$.params", "sigma");
    p.rho = detail::num_at(pj, "$.params", "rho");
    p.v0 = detail::num_at(pj, "$.params", "V0");
    p.s0 = detail::num_or(pj, "$.params", "S0", 1.0);
    p.T = detail::num_at(pj, "$.params", "T");
  };
  if (c.model == ModelKind::heston)
    read_params(c.heston);
  else
    read_params(c.three_halves);

  c.swap.T = c.horizon();
  c.swap.k_swap = 0.0;
  if (j.contains("swap")) {
    const nlohmann::json& sj = j.at("swap");
    detail::check_keys(sj, "$.swap", {"k_swap", "T"});
    c.swap.k_swap = detail::num_or(sj, "$.swap", "k_swap", 0.0);
    c.swap.T = detail::num_or(sj, "$.swap", "T", c.horizon());
  }

  if (j.contains("basket")) {
    const nlohmann::json& bj = j.at("basket");
    if (!bj.is_array()) throw ConfigError("$.basket: expected array");
    for (std::size_t i = 0; i < bj.size(); ++i) {
      const std::string path = "$.basket[" + std::to_string(i) + "]";
      const nlohmann::json& oj = bj.at(i);
      detail::check_keys(oj, path, {"kind", "strike", "R"});
      const std::string kind = detail::str_at(oj, path, "kind");
      const double strike = detail::num_at(oj, path, "strike");
      if (kind == "call")
        c.basket.push_back(EuropeanOption::call(strike, detail::num_or(oj, path, "R", 2.0)));
      else if (kind == "put")
        c.basket.push_back(EuropeanOption::put(strike, detail::num_or(oj, path, "R", -1.0)));
      else
        throw ConfigError(path + ".kind: must be \"call\" or \"put\"");
    }
  }

  if (j.contains("quadrature")) {
    const nlohmann::json& qj = j.at("quadrature");
    detail::check_keys(qj, "$.quadrature",
                       {"rel_tol", "abs_tol", "z_max", "max_panels", "points_per_panel"});
    c.quadrature.rel_tol = detail::num_or(qj, "$.quadrature", "rel_tol", c.quadrature.rel_tol);
    c.quadrature.abs_tol = detail::num_or(qj, "$.quadrature", "abs_tol", c.quadrature.abs_tol);
    c.quadrature.z_max = detail::num_or(qj, "$.quadrature", "z_max", c.quadrature.z_max);
    c.quadrature.max_panels = static_cast<int>(
        detail::int_or(qj, "$.quadrature", "max_panels", c.quadrature.max_panels));
    c.quadrature.points_per_panel = static_cast<int>(detail::int_or(
        qj, "$.quadrature", "points_per_panel", c.quadrature.points_per_panel));
  }

  if (j.contains("sim")) {
    const nlohmann::json& sj = j.at("sim");
    detail::check_keys(sj, "$.sim",
                       {"n_paths", "steps_per_year", "seed", "scheme", "antithetic", "threads"});
    c.has_sim = true;
    c.sim.n_paths = detail::as_integer(detail::require_key(sj, "$.sim", "n_paths"),
                                       "$.sim.n_paths");
    c.sim.steps_per_year =
        static_cast<int>(detail::int_or(sj, "$.sim", "steps_per_year", c.sim.steps_per_year));
    if (sj.contains("seed")) {
      const nlohmann::json& sv = sj.at("seed");
      if (sv.is_number_unsigned())
        c.sim.seed = sv.get<std::uint64_t>();
      else if (sv.is_number_integer() && sv.get<long long>() >= 0)
        c.sim.seed = static_cast<std::uint64_t>(sv.get<long long>());
      else
        throw ConfigError("$.sim.seed: expected non-negative integer");
    } else {
      c.sim.seed = 1;
    }
    if (sj.contains("scheme")) {
      const std::string scheme = detail::str_at(sj, "$.sim", "scheme");
      if (scheme != "full_truncation_euler")
        throw ConfigError("$.sim.scheme: only \"full_truncation_euler\" is supported");
    }
    if (sj.contains("antithetic")) {
      if (!sj.at("antithetic").is_boolean()) throw ConfigError("$.sim.antithetic: expected boolean");
      c.sim.antithetic = sj.at("antithetic").get<bool>();
    }
    c.sim.threads = static_cast<int>(detail::int_or(sj, "$.sim", "threads", 1));
  }

  if (j.contains("outputs")) {
    if (!j.at("outputs").is_string()) throw ConfigError("$.outputs: expected string");
    c.outputs = j.at("outputs").get<std::string>();
  }

  try {
    c.validate();
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  return c;
}

inline RunConfig load_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("config: cannot open \"" + path + "\"");
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_config(buf.str());
}

inline nlohmann::json serialize(const RunConfig& c) {
  nlohmann::json j;
  j["model"] = c.model == ModelKind::heston ? "heston" : "three_halves";
  const auto put_params = [&](const auto& p) {
    j["params"] = {{"lambda", p.lambda}, {"kappa", p.kappa}, {"sigma", p.sigma},
                   {"rho", p.rho},       {"V0", p.v0},       {"S0", p.s0},
                   {"T", p.T}};
  };
  if (c.model == ModelKind::heston)
    put_params(c.heston);
  else
    put_params(c.three_halves);
  j["swap"] = {{"k_swap", c.swap.k_swap}, {"T", c.swap.T}};
  j["basket"] = nlohmann::json::array();
  for (const EuropeanOption& o : c.basket)
    j["basket"].push_back({{"kind", o.kind == OptionKind::call ? "call" : "put"},
                           {"strike", o.strike},
                           {"R", o.strip_r}});
  j["quadrature"] = {{"rel_tol", c.quadrature.rel_tol},
                     {"abs_tol", c.quadrature.abs_tol},
                     {"z_max", c.quadrature.z_max},
                     {"max_panels", c.quadrature.max_panels},
                     {"points_per_panel", c.quadrature.points_per_panel}};
  if (c.has_sim)
    j["sim"] = {{"n_paths", c.sim.n_paths},
                {"steps_per_year", c.sim.steps_per_year},
                {"seed", c.sim.seed},
                {"scheme", "full_truncation_euler"},
                {"antithetic", c.sim.antithetic},
                {"threads", c.sim.threads}};
  j["outputs"] = c.outputs;
  return j;
}

// FNV-1a over the canonical dump (nlohmann keeps object keys sorted, so the
// dump is already canonical). The output directory is excluded: the hash
// identifies the computation, and moving the destination does not change any
// payload.
inline std::string config_hash(const RunConfig& c) {
  nlohmann::json j = serialize(c);
  j.erase("outputs");
  const std::string s = j.dump();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return std::string(buf);
}

}  // namespace svh
