#pragma once

#include <exception>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "fraclap/config.hpp"
#include "fraclap/experiments.hpp"

namespace fraclap::cli {

inline constexpr int exit_ok = 0;
inline constexpr int exit_config_error = 2;
inline constexpr int exit_not_converged = 3;

namespace detail {

inline std::string output_stem(const ExperimentConfig& cfg) {
  std::filesystem::path dir(cfg.output.directory);
  std::filesystem::create_directories(dir);
  return (dir / cfg.output.prefix).string();
}

}  // namespace detail

/// Parse arguments, run the selected experiment, and write its CSV artifacts.
/// Returns 0 on success, 2 on configuration errors, 3 when a mandatory row
/// did not converge (artifacts are still written).
inline int run(const std::vector<std::string>& args) {
  CLI::App app{"parallel-in-time solver and two-level bound analyzer for "
               "spectral fractional diffusion"};
  app.require_subcommand(1);
  app.fallthrough();  // global flags may follow the subcommand

  std::string config_path;
  std::string out_dir;
  std::optional<uint64_t> seed;
  int threads = 1;
  app.add_option("--config", config_path, "JSON configuration file")->check(CLI::ExistingFile);
  app.add_option("--out", out_dir, "output directory (overrides output.directory)");
  app.add_option("--seed", seed, "random seed (overrides the configured seeds)");
  app.add_option("--threads", threads, "worker threads for independent sweep points")
      ->check(CLI::PositiveNumber);

  auto* conv = app.add_subcommand("convergence-table", "mesh refinement error sweep");
  auto* robust = app.add_subcommand("robustness-table", "multigrid iteration robustness sweep");
  auto* bounds = app.add_subcommand("bounds", "two-level convergence bounds vs observed factors");
  auto* spec = app.add_subcommand("spectrum", "generalized trace-operator spectrum");
  auto* expo = app.add_subcommand("export", "dump mesh and operator matrices");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? exit_ok : exit_config_error;
  }

  try {
    ExperimentConfig cfg = config_path.empty() ? ExperimentConfig{} : load_config(config_path);
    if (!out_dir.empty()) cfg.output.directory = out_dir;
    if (seed) {
      cfg.mgrit.seed = *seed;
      cfg.bounds.seed = *seed;
    }
    const std::string stem = detail::output_stem(cfg);

    if (conv->parsed()) {
      auto rows = run_convergence_table(cfg, threads);
      write_convergence_csv(rows, stem + "convergence.csv");
      for (const auto& r : rows)
        if (!r.converged) return exit_not_converged;
    } else if (robust->parsed()) {
      auto rows = run_robustness_table(cfg, threads);
      write_robustness_csv(rows, stem + "robustness.csv");
      for (const auto& r : rows)
        if (!r.converged) return exit_not_converged;
    } else if (bounds->parsed()) {
      auto rows = run_bounds(cfg, threads);
      write_bounds_csv(rows, stem + "bounds.csv");
      for (const auto& r : rows)
        if (!r.converged) return exit_not_converged;
    } else if (spec->parsed()) {
      write_spectrum_csv(run_spectrum(cfg), stem + "spectrum.csv");
    } else if (expo->parsed()) {
      run_export(cfg, stem);
    }
  } catch (const ConfigError& e) {
    std::cerr << e.what() << "\n";
    return exit_config_error;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_config_error;
  }
  return exit_ok;
}

inline int run(int argc, char** argv) {
  return run(std::vector<std::string>(argv + 1, argv + argc));
}

}  // namespace fraclap::cli
