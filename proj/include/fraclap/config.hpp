#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "fraclap/mesh.hpp"
#include "fraclap/theory.hpp"
#include "fraclap/timestepping.hpp"

namespace fraclap {

/// Raised on malformed or inconsistent configuration; the message names the
/// offending key so it maps to a distinct process exit status.
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

struct ProblemConfig {
  DomainTag domain = DomainTag::unit_square;
  double alpha = 0.4;
  double T = 1.0;
  bool manufactured_forcing = true;
};

struct DiscretizationConfig {
  int level = 3;        ///< spatial refinement k, h = 2^-k
  int z_intervals = 0;  ///< 0 selects the h-matched default
  GridKind grid = GridKind::uniform;
  double varpi = 2.5;
  int N = 256;
};

struct SolverConfig {
  PropagatorMode propagator = PropagatorMode::trace_reduced;
  SpatialSolverKind type = SpatialSolverKind::direct;
  MgOptions mg;
};

struct MgritConfig {
  Relaxation relaxation = Relaxation::FCF;
  std::vector<int> m = {2};
  double halting = 1e-8;
  int max_iters = 100;
  uint64_t seed = 0;
  bool ideal_coarse = false;
};

struct OutputConfig {
  std::string directory = ".";
  std::string prefix;
};

struct ConvergenceConfig {
  std::vector<double> alphas = {0.4, 1.0, 1.4};
  std::vector<double> taus = {1e-4, 5e-5};
  int N = 100;
  std::vector<int> levels = {2, 3, 4, 5};
};

struct RobustnessConfig {
  std::vector<double> alphas = {0.6, 0.8, 1.0, 1.2, 1.6};
  std::vector<double> taus = {1.0 / 64, 1.0 / 128, 1.0 / 256, 1.0 / 512, 1.0 / 1024};
  int level = 4;
  double T = 0.25;
};

struct BoundsConfig {
  double alpha = 0.4;
  int level = 3;
  double T = 1.0;
  std::vector<int> N = {256};
  std::vector<int> m = {2, 4, 8, 16};
  std::vector<GridKind> grids = {GridKind::uniform, GridKind::graded};
  std::vector<Relaxation> relaxations = {Relaxation::F, Relaxation::FCF};
  double varpi = 2.5;
  uint64_t seed = 0;
};

struct ExperimentConfig {
  ProblemConfig problem;
  DiscretizationConfig discretization;
  SolverConfig solver;
  MgritConfig mgrit;
  OutputConfig output;
  ConvergenceConfig convergence;
  RobustnessConfig robustness;
  BoundsConfig bounds;
};

namespace detail {

using json = nlohmann::json;

[[noreturn]] inline void bad_key(const std::string& path, const std::string& what) {
  throw ConfigError("config: key \"" + path + "\" " + what);
}

inline void expect_known(const json& node, const std::string& path,
                         std::initializer_list<const char*> known) {
  for (const auto& item : node.items()) {
    bool ok = false;
    for (const char* k : known)
      if (item.key() == k) {
        ok = true;
        break;
      }
    if (!ok) bad_key(path.empty() ? item.key() : path + "." + item.key(), "is not recognized");
  }
}

inline double get_number(const json& node, const std::string& path, double fallback) {
  if (!node.contains(path.substr(path.rfind('.') + 1))) return fallback;
  const auto& v = node.at(path.substr(path.rfind('.') + 1));
  if (!v.is_number()) bad_key(path, "must be a number");
  return v.get<double>();
}

inline int get_int(const json& node, const std::string& path, int fallback) {
  if (!node.contains(path.substr(path.rfind('.') + 1))) return fallback;
  const auto& v = node.at(path.substr(path.rfind('.') + 1));
  if (!v.is_number_integer()) bad_key(path, "must be an integer");
  return v.get<int>();
}

inline uint64_t get_u64(const json& node, const std::string& path, uint64_t fallback) {
  if (!node.contains(path.substr(path.rfind('.') + 1))) return fallback;
  const auto& v = node.at(path.substr(path.rfind('.') + 1));
  if (!v.is_number_unsigned() && !v.is_number_integer()) bad_key(path, "must be an integer");
  if (v.is_number_integer() && v.get<long long>() < 0) bad_key(path, "must be nonnegative");
  return v.get<uint64_t>();
}

inline bool get_bool(const json& node, const std::string& path, bool fallback) {
  if (!node.contains(path.substr(path.rfind('.') + 1))) return fallback;
  const auto& v = node.at(path.substr(path.rfind('.') + 1));
  if (!v.is_boolean()) bad_key(path, "must be a boolean");
  return v.get<bool>();
}

inline std::string get_string(const json& node, const std::string& path, std::string fallback) {
  if (!node.contains(path.substr(path.rfind('.') + 1))) return fallback;
  const auto& v = node.at(path.substr(path.rfind('.') + 1));
  if (!v.is_string()) bad_key(path, "must be a string");
  return v.get<std::string>();
}

template <typename T, typename Get>
std::vector<T> get_list(const json& node, const std::string& path, std::vector<T> fallback,
                        Get&& elem) {
  const std::string key = path.substr(path.rfind('.') + 1);
  if (!node.contains(key)) return fallback;
  const auto& v = node.at(key);
  if (!v.is_array()) bad_key(path, "must be a list");
  std::vector<T> out;
  out.reserve(v.size());
  for (const auto& e : v) out.push_back(elem(e, path));
  return out;
}

inline double num_elem(const json& e, const std::string& path) {
  if (!e.is_number()) bad_key(path, "must be a list of numbers");
  return e.get<double>();
}

inline int int_elem(const json& e, const std::string& path) {
  if (!e.is_number_integer()) bad_key(path, "must be a list of integers");
  return e.get<int>();
}

}  // namespace detail

/// Parse a configuration from JSON text; unknown keys and type mismatches are
/// rejected with the offending key named, and every cross-field constraint is
/// checked before any computation starts.
inline ExperimentConfig parse_config(const std::string& text) {
  using detail::bad_key;
  using detail::json;
  json root;
  try {
    root = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config: not valid JSON: ") + e.what());
  }
  if (!root.is_object()) throw ConfigError("config: top level must be an object");
  detail::expect_known(root, "", {"problem", "discretization", "solver", "mgrit", "output",
                                  "convergence", "robustness", "bounds"});

  ExperimentConfig cfg;

  if (root.contains("problem")) {
    const auto& p = root.at("problem");
    if (!p.is_object()) bad_key("problem", "must be an object");
    detail::expect_known(p, "problem", {"domain", "alpha", "T", "manufactured_forcing"});
    const std::string dom = detail::get_string(p, "problem.domain", "unit-square");
    try {
      cfg.problem.domain = parse_domain_tag(dom);
    } catch (const std::invalid_argument& e) {
      bad_key("problem.domain", e.what());
    }
    cfg.problem.alpha = detail::get_number(p, "problem.alpha", cfg.problem.alpha);
    cfg.problem.T = detail::get_number(p, "problem.T", cfg.problem.T);
    cfg.problem.manufactured_forcing =
        detail::get_bool(p, "problem.manufactured_forcing", cfg.problem.manufactured_forcing);
  }
  if (!(cfg.problem.alpha > 0.0 && cfg.problem.alpha < 2.0))
    bad_key("problem.alpha", "must lie in (0, 2)");
  if (!(cfg.problem.T > 0.0)) bad_key("problem.T", "must be positive");

  if (root.contains("discretization")) {
    const auto& d = root.at("discretization");
    if (!d.is_object()) bad_key("discretization", "must be an object");
    detail::expect_known(d, "discretization", {"level", "z_intervals", "grid", "varpi", "N"});
    cfg.discretization.level = detail::get_int(d, "discretization.level", cfg.discretization.level);
    cfg.discretization.z_intervals =
        detail::get_int(d, "discretization.z_intervals", cfg.discretization.z_intervals);
    const std::string g = detail::get_string(d, "discretization.grid", "uniform");
    try {
      cfg.discretization.grid = parse_grid_kind(g);
    } catch (const std::invalid_argument& e) {
      bad_key("discretization.grid", e.what());
    }
    cfg.discretization.varpi = detail::get_number(d, "discretization.varpi", cfg.discretization.varpi);
    cfg.discretization.N = detail::get_int(d, "discretization.N", cfg.discretization.N);
  }
  if (cfg.discretization.level < 1 || cfg.discretization.level > 10)
    bad_key("discretization.level", "must lie in [1, 10]");
  if (cfg.discretization.z_intervals != 0 &&
      (cfg.discretization.z_intervals < 4 || cfg.discretization.z_intervals % 4 != 0))
    bad_key("discretization.z_intervals", "must be 0 (auto) or a positive multiple of 4");
  if (!(cfg.discretization.varpi >= 1.0)) bad_key("discretization.varpi", "must be >= 1");
  if (cfg.discretization.N < 2) bad_key("discretization.N", "must be >= 2");

  if (root.contains("solver")) {
    const auto& s = root.at("solver");
    if (!s.is_object()) bad_key("solver", "must be an object");
    detail::expect_known(s, "solver", {"propagator", "type", "mg_tol_reduction", "mg_max_iters"});
    try {
      cfg.solver.propagator =
          parse_propagator_mode(detail::get_string(s, "solver.propagator", "trace"));
    } catch (const std::invalid_argument& e) {
      bad_key("solver.propagator", e.what());
    }
    try {
      cfg.solver.type = parse_solver_kind(detail::get_string(s, "solver.type", "direct"));
    } catch (const std::invalid_argument& e) {
      bad_key("solver.type", e.what());
    }
    cfg.solver.mg.tol_reduction =
        detail::get_number(s, "solver.mg_tol_reduction", cfg.solver.mg.tol_reduction);
    cfg.solver.mg.max_it = detail::get_int(s, "solver.mg_max_iters", cfg.solver.mg.max_it);
  }
  if (!(cfg.solver.mg.tol_reduction > 1.0)) bad_key("solver.mg_tol_reduction", "must exceed 1");
  if (cfg.solver.mg.max_it < 1) bad_key("solver.mg_max_iters", "must be positive");

  if (root.contains("mgrit")) {
    const auto& m = root.at("mgrit");
    if (!m.is_object()) bad_key("mgrit", "must be an object");
    detail::expect_known(m, "mgrit",
                         {"relaxation", "m", "halting", "max_iters", "seed", "ideal_coarse"});
    try {
      cfg.mgrit.relaxation = parse_relaxation(detail::get_string(m, "mgrit.relaxation", "FCF"));
    } catch (const std::invalid_argument& e) {
      bad_key("mgrit.relaxation", e.what());
    }
    cfg.mgrit.m = detail::get_list<int>(m, "mgrit.m", cfg.mgrit.m, detail::int_elem);
    cfg.mgrit.halting = detail::get_number(m, "mgrit.halting", cfg.mgrit.halting);
    cfg.mgrit.max_iters = detail::get_int(m, "mgrit.max_iters", cfg.mgrit.max_iters);
    cfg.mgrit.seed = detail::get_u64(m, "mgrit.seed", cfg.mgrit.seed);
    cfg.mgrit.ideal_coarse = detail::get_bool(m, "mgrit.ideal_coarse", cfg.mgrit.ideal_coarse);
  }
  if (cfg.mgrit.m.empty()) bad_key("mgrit.m", "must list at least one coarsening factor");
  {
    int steps = cfg.discretization.N;
    for (int mv : cfg.mgrit.m) {
      if (mv < 2) bad_key("mgrit.m", "entries must be >= 2");
      if (steps % mv != 0) bad_key("mgrit.m", "must divide the step count at every level");
      steps /= mv;
    }
  }
  if (!(cfg.mgrit.halting > 0.0)) bad_key("mgrit.halting", "must be positive");
  if (cfg.mgrit.max_iters < 1) bad_key("mgrit.max_iters", "must be positive");

  if (root.contains("output")) {
    const auto& o = root.at("output");
    if (!o.is_object()) bad_key("output", "must be an object");
    detail::expect_known(o, "output", {"directory", "prefix"});
    cfg.output.directory = detail::get_string(o, "output.directory", cfg.output.directory);
    cfg.output.prefix = detail::get_string(o, "output.prefix", cfg.output.prefix);
  }
  if (cfg.output.directory.empty()) bad_key("output.directory", "must not be empty");

  if (root.contains("convergence")) {
    const auto& c = root.at("convergence");
    if (!c.is_object()) bad_key("convergence", "must be an object");
    detail::expect_known(c, "convergence", {"alphas", "taus", "N", "levels"});
    cfg.convergence.alphas =
        detail::get_list<double>(c, "convergence.alphas", cfg.convergence.alphas, detail::num_elem);
    cfg.convergence.taus =
        detail::get_list<double>(c, "convergence.taus", cfg.convergence.taus, detail::num_elem);
    cfg.convergence.N = detail::get_int(c, "convergence.N", cfg.convergence.N);
    cfg.convergence.levels =
        detail::get_list<int>(c, "convergence.levels", cfg.convergence.levels, detail::int_elem);
  }
  for (double a : cfg.convergence.alphas)
    if (!(a > 0.0 && a < 2.0)) bad_key("convergence.alphas", "entries must lie in (0, 2)");
  for (double t : cfg.convergence.taus)
    if (!(t > 0.0)) bad_key("convergence.taus", "entries must be positive");
  if (cfg.convergence.N < 2) bad_key("convergence.N", "must be >= 2");
  for (int l : cfg.convergence.levels)
    if (l < 1 || l > 10) bad_key("convergence.levels", "entries must lie in [1, 10]");

  if (root.contains("robustness")) {
    const auto& r = root.at("robustness");
    if (!r.is_object()) bad_key("robustness", "must be an object");
    detail::expect_known(r, "robustness", {"alphas", "taus", "level", "T"});
    cfg.robustness.alphas =
        detail::get_list<double>(r, "robustness.alphas", cfg.robustness.alphas, detail::num_elem);
    cfg.robustness.taus =
        detail::get_list<double>(r, "robustness.taus", cfg.robustness.taus, detail::num_elem);
    cfg.robustness.level = detail::get_int(r, "robustness.level", cfg.robustness.level);
    cfg.robustness.T = detail::get_number(r, "robustness.T", cfg.robustness.T);
  }
  for (double a : cfg.robustness.alphas)
    if (!(a > 0.0 && a < 2.0)) bad_key("robustness.alphas", "entries must lie in (0, 2)");
  if (!(cfg.robustness.T > 0.0)) bad_key("robustness.T", "must be positive");
  if (cfg.robustness.level < 1 || cfg.robustness.level > 10)
    bad_key("robustness.level", "must lie in [1, 10]");
  for (double t : cfg.robustness.taus) {
    if (!(t > 0.0)) bad_key("robustness.taus", "entries must be positive");
    const double steps = cfg.robustness.T / t;
    if (std::abs(steps - std::round(steps)) > 1e-9 * steps || std::round(steps) < 2)
      bad_key("robustness.taus", "entries must divide T into at least two steps");
  }

  if (root.contains("bounds")) {
    const auto& b = root.at("bounds");
    if (!b.is_object()) bad_key("bounds", "must be an object");
    detail::expect_known(b, "bounds",
                         {"alpha", "level", "T", "N", "m", "grids", "relaxations", "varpi", "seed"});
    cfg.bounds.alpha = detail::get_number(b, "bounds.alpha", cfg.bounds.alpha);
    cfg.bounds.level = detail::get_int(b, "bounds.level", cfg.bounds.level);
    cfg.bounds.T = detail::get_number(b, "bounds.T", cfg.bounds.T);
    cfg.bounds.N = detail::get_list<int>(b, "bounds.N", cfg.bounds.N, detail::int_elem);
    cfg.bounds.m = detail::get_list<int>(b, "bounds.m", cfg.bounds.m, detail::int_elem);
    cfg.bounds.grids = detail::get_list<GridKind>(
        b, "bounds.grids", cfg.bounds.grids, [](const detail::json& e, const std::string& path) {
          if (!e.is_string()) bad_key(path, "must be a list of strings");
          try {
            return parse_grid_kind(e.get<std::string>());
          } catch (const std::invalid_argument& err) {
            bad_key(path, err.what());
          }
        });
    cfg.bounds.relaxations = detail::get_list<Relaxation>(
        b, "bounds.relaxations", cfg.bounds.relaxations,
        [](const detail::json& e, const std::string& path) {
          if (!e.is_string()) bad_key(path, "must be a list of strings");
          try {
            return parse_relaxation(e.get<std::string>());
          } catch (const std::invalid_argument& err) {
            bad_key(path, err.what());
          }
        });
    cfg.bounds.varpi = detail::get_number(b, "bounds.varpi", cfg.bounds.varpi);
    cfg.bounds.seed = detail::get_u64(b, "bounds.seed", cfg.bounds.seed);
  }
  if (!(cfg.bounds.alpha > 0.0 && cfg.bounds.alpha < 2.0))
    bad_key("bounds.alpha", "must lie in (0, 2)");
  if (cfg.bounds.level < 1 || cfg.bounds.level > 10) bad_key("bounds.level", "must lie in [1, 10]");
  if (!(cfg.bounds.T > 0.0)) bad_key("bounds.T", "must be positive");
  if (!(cfg.bounds.varpi >= 1.0)) bad_key("bounds.varpi", "must be >= 1");
  if (cfg.bounds.N.empty()) bad_key("bounds.N", "must list at least one step count");
  if (cfg.bounds.m.empty()) bad_key("bounds.m", "must list at least one coarsening factor");
  if (cfg.bounds.grids.empty()) bad_key("bounds.grids", "must list at least one grid kind");
  if (cfg.bounds.relaxations.empty())
    bad_key("bounds.relaxations", "must list at least one relaxation");
  for (int n : cfg.bounds.N)
    if (n < 2) bad_key("bounds.N", "entries must be >= 2");
  for (int mv : cfg.bounds.m) {
    if (mv < 2) bad_key("bounds.m", "entries must be >= 2");
    for (int n : cfg.bounds.N)
      if (n % mv != 0) bad_key("bounds.m", "entries must divide every bounds.N");
  }

  return cfg;
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot read file \"" + path + "\"");
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

}  // namespace fraclap
