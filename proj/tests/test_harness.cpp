#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "fraclap/cli.hpp"
#include "fraclap/config.hpp"
#include "fraclap/experiments.hpp"

using namespace fraclap;
using Catch::Matchers::ContainsSubstring;

namespace {

namespace fs = std::filesystem;

/// Fresh scratch directory per test case; recreated on entry.
fs::path scratch(const std::string& name) {
  fs::path dir = fs::temp_directory_path() / "fraclap_harness" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& path) {
  std::ifstream in(path);
  REQUIRE(in.good());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void spit(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  out << text;
  REQUIRE(out.good());
}

std::vector<std::string> split_lines(const std::string& text) {
  std::vector<std::string> lines;
  std::istringstream ss(text);
  for (std::string line; std::getline(ss, line);) lines.push_back(line);
  return lines;
}

std::vector<std::string> split_cells(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, ',')) cells.push_back(cell);
  if (!line.empty() && line.back() == ',') cells.push_back("");
  return cells;
}

/// Small but nontrivial bounds protocol: one interior vertex, four time steps.
std::string tiny_bounds_json() {
  return R"({
    "bounds": {"level": 1, "N": [4], "m": [2]},
    "discretization": {"N": 4}
  })";
}

}  // namespace

TEST_CASE("default configuration parses and matches the documented values") {
  auto cfg = parse_config("{}");
  CHECK(cfg.problem.domain == DomainTag::unit_square);
  CHECK(cfg.problem.alpha == 0.4);
  CHECK(cfg.problem.T == 1.0);
  CHECK(cfg.problem.manufactured_forcing);
  CHECK(cfg.discretization.level == 3);
  CHECK(cfg.discretization.z_intervals == 0);
  CHECK(cfg.discretization.grid == GridKind::uniform);
  CHECK(cfg.discretization.varpi == 2.5);
  CHECK(cfg.discretization.N == 256);
  CHECK(cfg.solver.propagator == PropagatorMode::trace_reduced);
  CHECK(cfg.solver.type == SpatialSolverKind::direct);
  CHECK(cfg.mgrit.relaxation == Relaxation::FCF);
  CHECK(cfg.mgrit.m == std::vector<int>{2});
  CHECK(cfg.mgrit.halting == 1e-8);
  CHECK(cfg.mgrit.max_iters == 100);
  CHECK(cfg.mgrit.seed == 0);
  CHECK_FALSE(cfg.mgrit.ideal_coarse);
  CHECK(cfg.output.directory == ".");
  CHECK(cfg.output.prefix.empty());
  CHECK(cfg.convergence.alphas == std::vector<double>{0.4, 1.0, 1.4});
  CHECK(cfg.convergence.taus == std::vector<double>{1e-4, 5e-5});
  CHECK(cfg.convergence.N == 100);
  CHECK(cfg.convergence.levels == std::vector<int>{2, 3, 4, 5});
  CHECK(cfg.robustness.alphas == std::vector<double>{0.6, 0.8, 1.0, 1.2, 1.6});
  CHECK(cfg.robustness.level == 4);
  CHECK(cfg.robustness.T == 0.25);
  CHECK(cfg.bounds.alpha == 0.4);
  CHECK(cfg.bounds.level == 3);
  CHECK(cfg.bounds.T == 1.0);
  CHECK(cfg.bounds.N == std::vector<int>{256});
  CHECK(cfg.bounds.m == std::vector<int>{2, 4, 8, 16});
  CHECK(cfg.bounds.grids == std::vector<GridKind>{GridKind::uniform, GridKind::graded});
  CHECK(cfg.bounds.relaxations == std::vector<Relaxation>{Relaxation::F, Relaxation::FCF});
  CHECK(cfg.bounds.varpi == 2.5);
  CHECK(cfg.bounds.seed == 0);
}

TEST_CASE("explicit configuration values are honored") {
  auto cfg = parse_config(R"({
    "problem": {"domain": "l-shape", "alpha": 1.2, "T": 0.5, "manufactured_forcing": false},
    "discretization": {"level": 2, "z_intervals": 8, "grid": "graded", "varpi": 3.0, "N": 16},
    "solver": {"propagator": "full", "type": "mg", "mg_tol_reduction": 1e6, "mg_max_iters": 40},
    "mgrit": {"relaxation": "F", "m": [4, 2], "halting": 1e-10, "max_iters": 7,
              "seed": 42, "ideal_coarse": true},
    "output": {"directory": "/tmp", "prefix": "run_"},
    "convergence": {"alphas": [0.5], "taus": [0.01], "N": 10, "levels": [1, 2]},
    "robustness": {"alphas": [1.0], "taus": [0.125], "level": 2, "T": 0.25},
    "bounds": {"alpha": 0.9, "level": 2, "T": 2.0, "N": [8], "m": [4],
               "grids": ["graded"], "relaxations": ["F"], "varpi": 4.0, "seed": 9}
  })");
  CHECK(cfg.problem.domain == DomainTag::l_shape);
  CHECK(cfg.problem.alpha == 1.2);
  CHECK(cfg.problem.T == 0.5);
  CHECK_FALSE(cfg.problem.manufactured_forcing);
  CHECK(cfg.discretization.level == 2);
  CHECK(cfg.discretization.z_intervals == 8);
  CHECK(cfg.discretization.grid == GridKind::graded);
  CHECK(cfg.discretization.varpi == 3.0);
  CHECK(cfg.discretization.N == 16);
  CHECK(cfg.solver.propagator == PropagatorMode::full_block);
  CHECK(cfg.solver.type == SpatialSolverKind::mg);
  CHECK(cfg.solver.mg.tol_reduction == 1e6);
  CHECK(cfg.solver.mg.max_it == 40);
  CHECK(cfg.mgrit.relaxation == Relaxation::F);
  CHECK(cfg.mgrit.m == std::vector<int>{4, 2});
  CHECK(cfg.mgrit.halting == 1e-10);
  CHECK(cfg.mgrit.max_iters == 7);
  CHECK(cfg.mgrit.seed == 42);
  CHECK(cfg.mgrit.ideal_coarse);
  CHECK(cfg.output.directory == "/tmp");
  CHECK(cfg.output.prefix == "run_");
  CHECK(cfg.convergence.levels == std::vector<int>{1, 2});
  CHECK(cfg.robustness.taus == std::vector<double>{0.125});
  CHECK(cfg.bounds.grids == std::vector<GridKind>{GridKind::graded});
  CHECK(cfg.bounds.relaxations == std::vector<Relaxation>{Relaxation::F});
  CHECK(cfg.bounds.seed == 9);
}

TEST_CASE("malformed configurations are rejected with the offending key named") {
  auto reject = [](const std::string& text, const std::string& needle) {
    REQUIRE_THROWS_AS(parse_config(text), ConfigError);
    REQUIRE_THROWS_WITH(parse_config(text), ContainsSubstring(needle));
  };

  SECTION("invalid JSON and wrong top-level shape") {
    reject("{", "not valid JSON");
    reject("[1, 2]", "top level must be an object");
  }
  SECTION("unknown keys at every nesting depth") {
    reject(R"({"problema": {}})", "problema");
    reject(R"({"problem": {"alphaa": 1.0}})", "problem.alphaa");
    reject(R"({"mgrit": {"halt": 1e-8}})", "mgrit.halt");
    reject(R"({"bounds": {"grid": ["uniform"]}})", "bounds.grid");
  }
  SECTION("type mismatches") {
    reject(R"({"problem": {"alpha": "big"}})", "problem.alpha");
    reject(R"({"problem": {"alpha": "big"}})", "must be a number");
    reject(R"({"discretization": {"level": 2.5}})", "must be an integer");
    reject(R"({"problem": {"manufactured_forcing": 1}})", "must be a boolean");
    reject(R"({"output": {"prefix": 3}})", "must be a string");
    reject(R"({"mgrit": {"m": 4}})", "must be a list");
    reject(R"({"mgrit": {"m": [2.5]}})", "list of integers");
    reject(R"({"convergence": {"alphas": ["x"]}})", "list of numbers");
    reject(R"({"bounds": {"grids": [3]}})", "list of strings");
    reject(R"({"problem": 7})", "must be an object");
    reject(R"({"mgrit": {"seed": -1}})", "must be nonnegative");
  }
  SECTION("enumeration spellings") {
    reject(R"({"problem": {"domain": "hexagon"}})", "problem.domain");
    reject(R"({"discretization": {"grid": "random"}})", "discretization.grid");
    reject(R"({"solver": {"propagator": "fancy"}})", "solver.propagator");
    reject(R"({"solver": {"type": "cg"}})", "solver.type");
    reject(R"({"mgrit": {"relaxation": "FCFF"}})", "mgrit.relaxation");
    reject(R"({"bounds": {"relaxations": ["CF"]}})", "bounds.relaxations");
  }
  SECTION("range constraints") {
    reject(R"({"problem": {"alpha": 2.5}})", "must lie in (0, 2)");
    reject(R"({"problem": {"alpha": 0.0}})", "problem.alpha");
    reject(R"({"problem": {"T": -1.0}})", "problem.T");
    reject(R"({"discretization": {"level": 0}})", "discretization.level");
    reject(R"({"discretization": {"level": 11}})", "[1, 10]");
    reject(R"({"discretization": {"z_intervals": 6}})", "multiple of 4");
    reject(R"({"discretization": {"varpi": 0.5}})", "discretization.varpi");
    reject(R"({"discretization": {"N": 1}})", "discretization.N");
    reject(R"({"solver": {"mg_tol_reduction": 0.5}})", "must exceed 1");
    reject(R"({"solver": {"mg_max_iters": 0}})", "solver.mg_max_iters");
    reject(R"({"mgrit": {"halting": 0.0}})", "mgrit.halting");
    reject(R"({"mgrit": {"max_iters": 0}})", "mgrit.max_iters");
    reject(R"({"output": {"directory": ""}})", "output.directory");
    reject(R"({"convergence": {"alphas": [2.5]}})", "convergence.alphas");
    reject(R"({"convergence": {"taus": [0.0]}})", "convergence.taus");
    reject(R"({"convergence": {"N": 1}})", "convergence.N");
    reject(R"({"convergence": {"levels": [0]}})", "convergence.levels");
    reject(R"({"robustness": {"alphas": [-0.1]}})", "robustness.alphas");
    reject(R"({"robustness": {"level": 12}})", "robustness.level");
    reject(R"({"robustness": {"T": 0.0}})", "robustness.T");
    reject(R"({"bounds": {"alpha": 2.0}})", "bounds.alpha");
    reject(R"({"bounds": {"level": 0}})", "bounds.level");
    reject(R"({"bounds": {"T": 0.0}})", "bounds.T");
    reject(R"({"bounds": {"varpi": 0.9}})", "bounds.varpi");
    reject(R"({"bounds": {"N": []}})", "bounds.N");
    reject(R"({"bounds": {"N": [1]}})", "bounds.N");
    reject(R"({"bounds": {"m": []}})", "bounds.m");
    reject(R"({"bounds": {"grids": []}})", "bounds.grids");
    reject(R"({"bounds": {"relaxations": []}})", "bounds.relaxations");
  }
  SECTION("cross-field consistency") {
    reject(R"({"mgrit": {"m": []}})", "mgrit.m");
    reject(R"({"mgrit": {"m": [1]}})", "entries must be >= 2");
    reject(R"({"mgrit": {"m": [3]}, "discretization": {"N": 256}})", "must divide");
    reject(R"({"mgrit": {"m": [4, 8]}, "discretization": {"N": 16}})", "must divide");
    reject(R"({"robustness": {"taus": [0.1], "T": 0.25}})", "robustness.taus");
    reject(R"({"robustness": {"taus": [0.25], "T": 0.25}})", "at least two steps");
    reject(R"({"bounds": {"N": [256, 100], "m": [8]}})", "divide every bounds.N");
  }
  SECTION("consistent combinations are accepted") {
    CHECK_NOTHROW(parse_config(R"({"mgrit": {"m": [4, 8]}, "discretization": {"N": 64}})"));
    CHECK_NOTHROW(parse_config(R"({"robustness": {"taus": [0.125, 0.0625], "T": 0.25}})"));
    CHECK_NOTHROW(parse_config(R"({"discretization": {"z_intervals": 12}})"));
  }
}

TEST_CASE("load_config reports unreadable files") {
  REQUIRE_THROWS_AS(load_config("/nonexistent/fraclap.json"), ConfigError);
  REQUIRE_THROWS_WITH(load_config("/nonexistent/fraclap.json"),
                      ContainsSubstring("cannot read file"));
  auto dir = scratch("load_config");
  spit(dir / "cfg.json", R"({"problem": {"alpha": 0.7}})");
  CHECK(load_config((dir / "cfg.json").string()).problem.alpha == 0.7);
}

TEST_CASE("numeric cells round-trip exactly through their text form") {
  const double values[] = {0.0,     1.0,        -1.0,          1.0 / 3.0,    0.1,
                           1e-300,  1e300,      3.5e-17,       -2.718281828, 6.02214076e23,
                           1e-8,    123456789.123456789,       0.49713928962874674};
  for (double v : values) {
    const std::string text = csv::num(v);
    CHECK(std::stod(text) == v);
  }
  CHECK(csv::num(42) == "42");
  CHECK(csv::num(static_cast<long long>(-7)) == "-7");
}

TEST_CASE("bound report is deterministic and thread-count independent") {
  auto cfg = parse_config(tiny_bounds_json());
  auto dir = scratch("bounds_determinism");

  auto rows1 = run_bounds(cfg, 1);
  auto rows2 = run_bounds(cfg, 1);
  auto rows4 = run_bounds(cfg, 4);
  REQUIRE(rows1.size() == 4);  // one N, both grids, one m, both relaxations
  write_bounds_csv(rows1, (dir / "a.csv").string());
  write_bounds_csv(rows2, (dir / "b.csv").string());
  write_bounds_csv(rows4, (dir / "c.csv").string());
  const std::string a = slurp(dir / "a.csv");
  CHECK(a == slurp(dir / "b.csv"));
  CHECK(a == slurp(dir / "c.csv"));

  auto lines = split_lines(a);
  REQUIRE(lines.size() == 5);
  CHECK(lines[0] ==
        "m,N,grid_kind,relaxation,exact_bound,teap_bound,q_norm,combined_bound,rho_observed,"
        "suff_cond_1,suff_cond_2");
  // Row order fixed by the sweep nesting: grid kind outside, relaxation inside.
  CHECK(split_cells(lines[1])[2] == "uniform");
  CHECK(split_cells(lines[1])[3] == "F");
  CHECK(split_cells(lines[2])[3] == "FCF");
  CHECK(split_cells(lines[3])[2] == "graded");
  for (int i = 1; i <= 4; ++i) {
    auto cells = split_cells(lines[i]);
    REQUIRE(cells.size() == 11);
    const double exact = std::stod(cells[4]);
    if (cells[3] == "F") {
      CHECK(cells[5] == "inapplicable");  // the estimate covers FCF relaxation only
    } else if (cells[5] != "inapplicable") {
      const double teap = std::stod(cells[5]);
      CHECK(teap > 0.0);
      if (cells[9] == "true" && cells[10] == "true") CHECK(exact <= teap * (1 + 1e-12));
    }
    const double qn = std::stod(cells[6]);
    const double comb = std::stod(cells[7]);
    CHECK(exact > 0.0);
    CHECK(qn >= 1.0);
    CHECK(comb >= exact * (1 - 1e-12));
  }
}

TEST_CASE("empty sweeps still produce a header-only table") {
  auto cfg = parse_config(R"({"robustness": {"alphas": []}})");
  auto rows = run_robustness_table(cfg);
  CHECK(rows.empty());
  auto dir = scratch("empty_sweep");
  write_robustness_csv(rows, (dir / "robustness.csv").string());
  CHECK(slurp(dir / "robustness.csv") == "alpha,tau,aiter,converged\n");
}

TEST_CASE("command line maps argument and configuration errors to status 2") {
  auto dir = scratch("cli_errors");
  CHECK(cli::run({"definitely-not-a-subcommand"}) == cli::exit_config_error);
  CHECK(cli::run({"spectrum", "--config", (dir / "missing.json").string()}) ==
        cli::exit_config_error);

  spit(dir / "bad_alpha.json", R"({"problem": {"alpha": 3.0}})");
  CHECK(cli::run({"spectrum", "--config", (dir / "bad_alpha.json").string(),
                  "--out", dir.string()}) == cli::exit_config_error);

  spit(dir / "bad_json.json", "{nope");
  CHECK(cli::run({"spectrum", "--config", (dir / "bad_json.json").string(),
                  "--out", dir.string()}) == cli::exit_config_error);

  CHECK(cli::run({"--help"}) == cli::exit_ok);
}

TEST_CASE("spectrum command writes positive eigenvalues and honors the prefix") {
  auto dir = scratch("cli_spectrum");
  spit(dir / "cfg.json", R"({
    "discretization": {"level": 1},
    "output": {"prefix": "tiny_"}
  })");
  REQUIRE(cli::run({"spectrum", "--config", (dir / "cfg.json").string(),
                    "--out", dir.string()}) == cli::exit_ok);
  auto lines = split_lines(slurp(dir / "tiny_spectrum.csv"));
  REQUIRE(lines.size() == 2);  // level 1 has a single interior vertex
  CHECK(lines[0] == "index,sigma");
  auto cells = split_cells(lines[1]);
  REQUIRE(cells.size() == 2);
  CHECK(cells[0] == "0");
  CHECK(std::stod(cells[1]) > 0.0);
}

TEST_CASE("bounds command reruns byte-identically and --seed switches the run") {
  auto dir = scratch("cli_bounds");
  spit(dir / "cfg.json", tiny_bounds_json());
  auto out1 = dir / "run1";
  auto out2 = dir / "run2";
  auto out3 = dir / "run3";
  const std::string cfg_path = (dir / "cfg.json").string();
  REQUIRE(cli::run({"bounds", "--config", cfg_path, "--out", out1.string()}) == cli::exit_ok);
  REQUIRE(cli::run({"bounds", "--config", cfg_path, "--out", out2.string()}) == cli::exit_ok);
  REQUIRE(cli::run({"bounds", "--config", cfg_path, "--out", out3.string(), "--seed", "5"}) ==
          cli::exit_ok);
  const std::string first = slurp(out1 / "bounds.csv");
  CHECK(first == slurp(out2 / "bounds.csv"));

  // The --seed override must reproduce an in-process run with that seed.
  auto cfg = parse_config(tiny_bounds_json());
  cfg.bounds.seed = 5;
  write_bounds_csv(run_bounds(cfg), (dir / "direct.csv").string());
  CHECK(slurp(out3 / "bounds.csv") == slurp(dir / "direct.csv"));
}

TEST_CASE("convergence command emits chained ratio cells and flags failures") {
  auto dir = scratch("cli_convergence");
  spit(dir / "cfg.json", R"({
    "convergence": {"alphas": [1.0], "taus": [0.25], "N": 2, "levels": [1, 2]}
  })");
  REQUIRE(cli::run({"convergence-table", "--config", (dir / "cfg.json").string(),
                    "--out", dir.string()}) == cli::exit_ok);
  auto lines = split_lines(slurp(dir / "convergence.csv"));
  REQUIRE(lines.size() == 3);
  CHECK(lines[0] ==
        "alpha,tau,h,dof,err_final,rate_final,err_max,rate_max,aiter,converged");
  auto first = split_cells(lines[1]);
  auto second = split_cells(lines[2]);
  REQUIRE(first.size() == 10);
  REQUIRE(second.size() == 10);
  CHECK(first[5].empty());   // no predecessor level: ratio cells stay empty
  CHECK(first[7].empty());
  CHECK(std::stod(second[5]) > 0.0);
  CHECK(std::stod(second[7]) > 0.0);
  CHECK(first[9] == "true");
  CHECK(second[9] == "true");

  // Starving the cylinder solver must flag the row and map to status 3,
  // while the table is still written.
  auto fail_dir = scratch("cli_convergence_fail");
  spit(fail_dir / "cfg.json", R"({
    "solver": {"mg_tol_reduction": 1e8, "mg_max_iters": 1},
    "convergence": {"alphas": [1.0], "taus": [0.25], "N": 2, "levels": [2]}
  })");
  CHECK(cli::run({"convergence-table", "--config", (fail_dir / "cfg.json").string(),
                  "--out", fail_dir.string()}) == cli::exit_not_converged);
  auto fail_lines = split_lines(slurp(fail_dir / "convergence.csv"));
  REQUIRE(fail_lines.size() == 2);
  CHECK(split_cells(fail_lines[1])[9] == "false");
}

TEST_CASE("robustness command writes one row per (alpha, tau) pair") {
  auto dir = scratch("cli_robustness");
  spit(dir / "cfg.json", R"({
    "robustness": {"alphas": [1.0], "taus": [0.125, 0.0625], "level": 2, "T": 0.25}
  })");
  REQUIRE(cli::run({"robustness-table", "--config", (dir / "cfg.json").string(),
                    "--out", dir.string()}) == cli::exit_ok);
  auto lines = split_lines(slurp(dir / "robustness.csv"));
  REQUIRE(lines.size() == 3);
  CHECK(lines[0] == "alpha,tau,aiter,converged");
  for (int i = 1; i <= 2; ++i) {
    auto cells = split_cells(lines[i]);
    REQUIRE(cells.size() == 4);
    CHECK(std::stod(cells[0]) == 1.0);
    CHECK(std::stod(cells[2]) >= 1.0);
    CHECK(cells[3] == "true");
  }
}

TEST_CASE("export command dumps the mesh and all four operator factors") {
  auto dir = scratch("cli_export");
  spit(dir / "cfg.json", R"({"discretization": {"level": 1}})");
  auto out = dir / "deep" / "nested";  // output directories are created on demand
  REQUIRE(cli::run({"export", "--config", (dir / "cfg.json").string(),
                    "--out", out.string()}) == cli::exit_ok);

  auto vertices = split_lines(slurp(out / "vertices.csv"));
  REQUIRE(vertices.size() == 10);  // 3x3 lattice at level 1
  CHECK(vertices[0] == "id,x,y,interior");
  int interior = 0;
  for (std::size_t i = 1; i < vertices.size(); ++i) {
    auto cells = split_cells(vertices[i]);
    REQUIRE(cells.size() == 4);
    CHECK(std::stod(cells[1]) >= 0.0);
    CHECK(std::stod(cells[1]) <= 1.0);
    if (cells[3] == "true") ++interior;
  }
  CHECK(interior == 1);

  auto triangles = split_lines(slurp(out / "triangles.csv"));
  REQUIRE(triangles.size() == 9);  // 2 * 4^1 cells
  CHECK(triangles[0] == "v0,v1,v2");

  for (const char* name :
       {"spatial_mass.csv", "spatial_stiffness.csv", "z_mass.csv", "z_stiffness.csv"}) {
    auto lines = split_lines(slurp(out / name));
    REQUIRE(lines.size() >= 2);
    CHECK(lines[0] == "row,col,value");
    for (std::size_t i = 1; i < lines.size(); ++i) {
      auto cells = split_cells(lines[i]);
      REQUIRE(cells.size() == 3);
      CHECK(std::isfinite(std::stod(cells[2])));
    }
  }
}
