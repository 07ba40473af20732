#pragma once

#include <atomic>
#include <cmath>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "fraclap/assembly.hpp"
#include "fraclap/config.hpp"
#include "fraclap/csv.hpp"
#include "fraclap/mesh.hpp"
#include "fraclap/mgrit.hpp"
#include "fraclap/spatial_mg.hpp"
#include "fraclap/theory.hpp"
#include "fraclap/timestepping.hpp"

namespace fraclap {

namespace detail {

/// Run jobs 0..count-1 on a small pool; each job writes only its own slot, so
/// the assembled output is independent of the thread count.
inline void run_indexed(int count, int threads, const std::function<void(int)>& job) {
  if (threads < 1) threads = 1;
  if (threads == 1 || count <= 1) {
    for (int i = 0; i < count; ++i) job(i);
    return;
  }
  std::atomic<int> next{0};
  std::vector<std::thread> pool;
  const int workers = std::min(threads, count);
  pool.reserve(workers);
  std::exception_ptr error;
  std::mutex error_mu;
  for (int w = 0; w < workers; ++w)
    pool.emplace_back([&] {
      for (int i = next.fetch_add(1); i < count; i = next.fetch_add(1)) {
        try {
          job(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(error_mu);
          if (!error) error = std::current_exception();
        }
      }
    });
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// convergence table

struct ConvergenceRow {
  double alpha = 0.0;
  double tau = 0.0;
  int level = 0;
  double h = 0.0;
  long long dof = 0;
  double err_final = 0.0;
  double err_max = 0.0;
  double aiter = 0.0;
  bool converged = true;
};

/// Sequential integration of the manufactured problem on one mesh level with
/// the cylinder multigrid propagator; errors measured in the full H1 norm.
inline ConvergenceRow convergence_row(DomainTag domain, double alpha, double tau, int N,
                                      int level, const MgOptions& mg) {
  auto mesh = build_spatial_mesh(domain, level);
  auto ops = assemble_operators(mesh, build_zmesh(default_z_intervals(mesh.h), alpha), alpha);
  auto engine = std::make_shared<const PropagatorEngine>(ops, PropagatorMode::full_block,
                                                         SpatialSolverKind::mg, mg);
  PropagatorFamily fam(engine, build_temporal_grid(GridKind::uniform, N, tau * N));
  auto forcing = manufactured_forcing_fn(alpha);
  auto traj = sequential_solve(fam, manufactured_interpolant(mesh, 0.0), &forcing);
  auto err = h1_trajectory_error(mesh, traj);
  ConvergenceRow row;
  row.alpha = alpha;
  row.tau = tau;
  row.level = level;
  row.h = mesh.h;
  row.dof = static_cast<long long>(ops.n) * ops.F;
  row.err_final = err.err_final;
  row.err_max = err.err_max;
  row.aiter = traj.avg_iterations;
  row.converged = traj.solver_converged;
  return row;
}

inline std::vector<ConvergenceRow> run_convergence_table(const ExperimentConfig& cfg,
                                                         int threads = 1) {
  const auto& cv = cfg.convergence;
  struct Job {
    double alpha, tau;
    int level;
  };
  std::vector<Job> jobs;
  for (double alpha : cv.alphas)
    for (double tau : cv.taus)
      for (int level : cv.levels) jobs.push_back({alpha, tau, level});
  std::vector<ConvergenceRow> rows(jobs.size());
  detail::run_indexed(static_cast<int>(jobs.size()), threads, [&](int i) {
    rows[i] = convergence_row(cfg.problem.domain, jobs[i].alpha, jobs[i].tau, cv.N, jobs[i].level,
                              cfg.solver.mg);
  });
  return rows;
}

/// Emit rows with refinement ratios; the first level of each (alpha, tau)
/// sweep has no predecessor and leaves the ratio cells empty.
inline void write_convergence_csv(const std::vector<ConvergenceRow>& rows,
                                  const std::string& path) {
  csv::Writer out(path);
  out.row({"alpha", "tau", "h", "dof", "err_final", "rate_final", "err_max", "rate_max", "aiter",
           "converged"});
  const ConvergenceRow* prev = nullptr;
  for (const auto& r : rows) {
    const bool chained = prev && prev->alpha == r.alpha && prev->tau == r.tau;
    out.row({csv::num(r.alpha), csv::num(r.tau), csv::num(r.h), csv::num(r.dof),
             csv::num(r.err_final),
             chained ? csv::num(prev->err_final / r.err_final) : std::string(),
             csv::num(r.err_max), chained ? csv::num(prev->err_max / r.err_max) : std::string(),
             csv::num(r.aiter), r.converged ? "true" : "false"});
    prev = &r;
  }
  out.flush();
}

// ---------------------------------------------------------------------------
// robustness table

struct RobustnessRow {
  double alpha = 0.0;
  double tau = 0.0;
  double aiter = 0.0;
  bool converged = true;
};

inline std::vector<RobustnessRow> run_robustness_table(const ExperimentConfig& cfg,
                                                       int threads = 1) {
  const auto& rb = cfg.robustness;
  struct Job {
    double alpha, tau;
  };
  std::vector<Job> jobs;
  for (double alpha : rb.alphas)
    for (double tau : rb.taus) jobs.push_back({alpha, tau});
  std::vector<RobustnessRow> rows(jobs.size());
  detail::run_indexed(static_cast<int>(jobs.size()), threads, [&](int i) {
    const double alpha = jobs[i].alpha;
    const int N = static_cast<int>(std::llround(rb.T / jobs[i].tau));
    auto mesh = build_spatial_mesh(cfg.problem.domain, rb.level);
    auto ops = assemble_operators(mesh, build_zmesh(default_z_intervals(mesh.h), alpha), alpha);
    auto engine = std::make_shared<const PropagatorEngine>(ops, PropagatorMode::full_block,
                                                           SpatialSolverKind::mg, cfg.solver.mg);
    PropagatorFamily fam(engine, build_temporal_grid(GridKind::uniform, N, rb.T));
    auto forcing = manufactured_forcing_fn(alpha);
    auto traj = sequential_solve(fam, manufactured_interpolant(mesh, 0.0), &forcing);
    rows[i] = {alpha, jobs[i].tau, traj.avg_iterations, traj.solver_converged};
  });
  return rows;
}

inline void write_robustness_csv(const std::vector<RobustnessRow>& rows, const std::string& path) {
  csv::Writer out(path);
  out.row({"alpha", "tau", "aiter", "converged"});
  for (const auto& r : rows)
    out.row({csv::num(r.alpha), csv::num(r.tau), csv::num(r.aiter),
             r.converged ? "true" : "false"});
  out.flush();
}

// ---------------------------------------------------------------------------
// two-level bound report

struct BoundRow {
  int m = 0;
  int N = 0;
  GridKind kind = GridKind::uniform;
  Relaxation relaxation = Relaxation::F;
  double exact_bound = 0.0;
  std::optional<double> teap_bound;  ///< empty when the TEAP premise fails or F-relaxation
  double q_norm = 0.0;
  double combined_bound = 0.0;
  double rho_observed = 0.0;
  bool suff_cond_1 = false;
  bool suff_cond_2 = false;
  bool converged = true;
  int iterations = 0;
};

/// All theoretical bounds plus the observed factor of an actual two-level run
/// for one (N, m, grid kind, relaxation) protocol point.
inline BoundRow bounds_row(const OperatorSet& ops,
                           std::shared_ptr<const PropagatorEngine> engine, const Vec& sigmas,
                           const BoundsConfig& bc, GridKind kind, int N, int m,
                           Relaxation relaxation) {
  auto grid = build_temporal_grid(kind, N, bc.T, bc.varpi, m);

  BoundRow row;
  row.m = m;
  row.N = N;
  row.kind = kind;
  row.relaxation = relaxation;
  row.exact_bound = (relaxation == Relaxation::FCF)
                        ? exact_bound(grid, sigmas)
                        : dense_oracle_norm(grid, sigmas, Relaxation::F);
  auto teap = teap_bound(grid, sigmas);
  row.suff_cond_1 = teap.suff_delta2;
  row.suff_cond_2 = teap.suff_fraction;
  if (relaxation == Relaxation::FCF && teap.applicable) row.teap_bound = teap.bound;
  auto q = q_norm(grid, sigmas);
  row.q_norm = q.exact;
  row.combined_bound = row.exact_bound * q.cap;

  MgritOptions opts;
  opts.relaxation = relaxation;
  opts.m = {m};
  opts.seed = bc.seed;
  MgritSolver solver(std::move(engine), grid, opts);
  auto forcing = manufactured_forcing_fn(ops.alpha);
  auto [traj, stats] = solver.solve(manufactured_interpolant(ops.mesh, 0.0), &forcing);
  row.rho_observed = stats.rho_observed;
  row.converged = stats.converged;
  row.iterations = stats.iterations;
  return row;
}

inline std::vector<BoundRow> run_bounds(const ExperimentConfig& cfg, int threads = 1) {
  const auto& bc = cfg.bounds;
  auto mesh = build_spatial_mesh(cfg.problem.domain, bc.level);
  auto ops =
      assemble_operators(mesh, build_zmesh(default_z_intervals(mesh.h), bc.alpha), bc.alpha);
  auto engine = std::make_shared<const PropagatorEngine>(ops, PropagatorMode::trace_reduced);
  const Vec sigmas = spectrum(engine->trace_operator(), ops.Ms_raw);

  struct Job {
    GridKind kind;
    int N, m;
    Relaxation relaxation;
  };
  std::vector<Job> jobs;
  for (int N : bc.N)
    for (GridKind kind : bc.grids)
      for (int m : bc.m)
        for (Relaxation relaxation : bc.relaxations) jobs.push_back({kind, N, m, relaxation});
  std::vector<BoundRow> rows(jobs.size());
  detail::run_indexed(static_cast<int>(jobs.size()), threads, [&](int i) {
    rows[i] = bounds_row(ops, engine, sigmas, bc, jobs[i].kind, jobs[i].N, jobs[i].m,
                         jobs[i].relaxation);
  });
  return rows;
}

inline void write_bounds_csv(const std::vector<BoundRow>& rows, const std::string& path) {
  csv::Writer out(path);
  out.row({"m", "N", "grid_kind", "relaxation", "exact_bound", "teap_bound", "q_norm",
           "combined_bound", "rho_observed", "suff_cond_1", "suff_cond_2"});
  for (const auto& r : rows)
    out.row({csv::num(r.m), csv::num(r.N), to_string(r.kind), to_string(r.relaxation),
             csv::num(r.exact_bound),
             r.teap_bound ? csv::num(*r.teap_bound) : std::string("inapplicable"),
             csv::num(r.q_norm), csv::num(r.combined_bound), csv::num(r.rho_observed),
             r.suff_cond_1 ? "true" : "false", r.suff_cond_2 ? "true" : "false"});
  out.flush();
}

// ---------------------------------------------------------------------------
// spectrum and raw exports

inline Vec run_spectrum(const ExperimentConfig& cfg) {
  auto mesh = build_spatial_mesh(cfg.problem.domain, cfg.discretization.level);
  const int M = cfg.discretization.z_intervals ? cfg.discretization.z_intervals
                                               : default_z_intervals(mesh.h);
  auto ops = assemble_operators(mesh, build_zmesh(M, cfg.problem.alpha), cfg.problem.alpha);
  return spectrum(schur_complement(ops), ops.Ms_raw);
}

inline void write_spectrum_csv(const Vec& sigmas, const std::string& path) {
  csv::Writer out(path);
  out.row({"index", "sigma"});
  for (int i = 0; i < sigmas.size(); ++i) out.row({csv::num(i), csv::num(sigmas[i])});
  out.flush();
}

inline void write_sparse_csv(const SpMat& A, const std::string& path) {
  csv::Writer out(path);
  out.row({"row", "col", "value"});
  for (int k = 0; k < A.outerSize(); ++k)
    for (SpMat::InnerIterator it(A, k); it; ++it)
      out.row({csv::num(static_cast<int>(it.row())), csv::num(static_cast<int>(it.col())),
               csv::num(it.value())});
  out.flush();
}

/// Dump the mesh and the assembled operators of the configured discretization.
inline void run_export(const ExperimentConfig& cfg, const std::string& stem) {
  auto mesh = build_spatial_mesh(cfg.problem.domain, cfg.discretization.level);
  const int M = cfg.discretization.z_intervals ? cfg.discretization.z_intervals
                                               : default_z_intervals(mesh.h);
  auto ops = assemble_operators(mesh, build_zmesh(M, cfg.problem.alpha), cfg.problem.alpha);

  {
    csv::Writer out(stem + "vertices.csv");
    out.row({"id", "x", "y", "interior"});
    for (int v = 0; v < mesh.n_vertices(); ++v)
      out.row({csv::num(v), csv::num(mesh.vertices[v][0]), csv::num(mesh.vertices[v][1]),
               mesh.is_interior(v) ? "true" : "false"});
    out.flush();
  }
  {
    csv::Writer out(stem + "triangles.csv");
    out.row({"v0", "v1", "v2"});
    for (const auto& t : mesh.triangles)
      out.row({csv::num(t[0]), csv::num(t[1]), csv::num(t[2])});
    out.flush();
  }
  write_sparse_csv(ops.Ms_raw, stem + "spatial_mass.csv");
  write_sparse_csv(ops.As_raw, stem + "spatial_stiffness.csv");
  write_sparse_csv(ops.Mz, stem + "z_mass.csv");
  write_sparse_csv(ops.Az, stem + "z_stiffness.csv");
}

}  // namespace fraclap
