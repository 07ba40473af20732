#pragma once

#include <memory>
#include <random>
#include <stdexcept>
#include <utility>
#include <vector>

#include "fraclap/mesh.hpp"
#include "fraclap/theory.hpp"
#include "fraclap/timestepping.hpp"

namespace fraclap {

struct MgritOptions {
  Relaxation relaxation = Relaxation::FCF;
  std::vector<int> m = {2};     ///< coarsening factor per level transition
  double halting_abs = 1e-8;    ///< absolute space-time residual target
  int max_iters = 100;
  uint64_t seed = 0;            ///< seed for the random initial iterate
  bool ideal_coarse = false;    ///< coarse steps compose the fine steps exactly
};

struct MgritStats {
  std::vector<double> residuals;  ///< history, residuals[0] at the initial iterate
  int iterations = 0;             ///< cycles performed
  bool converged = false;
  double rho_observed = 0.0;      ///< worst per-cycle residual reduction factor
};

/// Multilevel iterative solver over a time grid: blocks of sequential fine
/// steps are relaxed in parallel-in-time fashion and a coarse grid with one
/// point per block absorbs the long-range error.  The coarsest level is
/// integrated by plain forward substitution.
class MgritSolver {
 public:
  MgritSolver(std::shared_ptr<const PropagatorEngine> engine, const TemporalGrid& fine,
              MgritOptions options = {})
      : engine_(std::move(engine)), options_(std::move(options)) {
    if (!engine_) throw std::invalid_argument("mgrit requires a propagator engine");
    if (options_.m.empty()) throw std::invalid_argument("mgrit needs at least one coarsening factor");
    if (options_.max_iters < 1) throw std::invalid_argument("max_iters must be positive");
    if (!(options_.halting_abs > 0.0)) throw std::invalid_argument("halting tolerance must be positive");

    grids_.reserve(options_.m.size() + 1);
    TemporalGrid g = fine;
    for (std::size_t l = 0; l < options_.m.size(); ++l) {
      const int m = options_.m[l];
      if (m < 2) throw std::invalid_argument("coarsening factor must be at least 2");
      if (g.N % m != 0) throw std::invalid_argument("m must divide the number of steps at every level");
      if (g.m != m) {
        g.m = m;
        g.Nc = g.N / m;
        g.build_coarse();
      }
      grids_.push_back(g);
      g = g.coarsen(1);
    }
    grids_.push_back(g);
  }

  int levels() const { return static_cast<int>(grids_.size()); }
  const TemporalGrid& grid(int level) const { return grids_.at(level); }
  const MgritOptions& options() const { return options_; }

  /// Homogeneous step k = 1..N on a level; with ideal coarse steps enabled the
  /// coarse propagator composes the fine steps of its block.
  Vec step(int level, int k, Vec u) const {
    if (!options_.ideal_coarse || level == 0)
      return engine_->advance(grids_[level].tau[k - 1], u, nullptr);
    const TemporalGrid& fine = grids_[level - 1];
    for (int j = (k - 1) * fine.m + 1; j <= k * fine.m; ++j) u = step(level - 1, j, std::move(u));
    return u;
  }

  /// Overwrite every non-block-boundary state with exact propagation from the
  /// state to its left.
  void f_relax(int level, std::vector<Vec>& U, const std::vector<Vec>& G) const {
    const TemporalGrid& g = grids_[level];
    for (int i = 1; i <= g.Nc; ++i)
      for (int k = (i - 1) * g.m + 1; k < i * g.m; ++k) U[k] = step(level, k, U[k - 1]) + G[k];
  }

  /// Overwrite every block-boundary state with exact propagation from its
  /// left neighbour (which block-boundary relaxation never touches).
  void c_relax(int level, std::vector<Vec>& U, const std::vector<Vec>& G) const {
    const TemporalGrid& g = grids_[level];
    for (int i = 1; i <= g.Nc; ++i) {
      const int k = i * g.m;
      U[k] = step(level, k, U[k - 1]) + G[k];
    }
  }

  /// Space-time residual of the all-at-once system on a level; the row of the
  /// initial condition is exactly zero by construction.
  double residual_norm(int level, const std::vector<Vec>& U, const std::vector<Vec>& G) const {
    const TemporalGrid& g = grids_[level];
    double sq = 0.0;
    for (int k = 1; k <= g.N; ++k)
      sq += (G[k] + step(level, k, U[k - 1]) - U[k]).squaredNorm();
    return std::sqrt(sq);
  }

  /// One cycle on a level: relax, restrict the block-boundary residual, solve
  /// the coarse error system, and correct the block boundaries only.  States
  /// in between are updated by the next relaxation.
  void cycle(int level, std::vector<Vec>& U, const std::vector<Vec>& G) const {
    const TemporalGrid& g = grids_[level];
    const int n = engine_->state_size();

    f_relax(level, U, G);
    if (options_.relaxation == Relaxation::FCF) {
      c_relax(level, U, G);
      f_relax(level, U, G);
    }

    std::vector<Vec> R(g.Nc + 1);
    R[0] = Vec::Zero(n);
    for (int i = 1; i <= g.Nc; ++i) {
      const int k = i * g.m;
      R[i] = G[k] + step(level, k, U[k - 1]) - U[k];
    }

    std::vector<Vec> E(g.Nc + 1, Vec::Zero(n));
    if (level + 1 == levels() - 1) {
      for (int i = 1; i <= g.Nc; ++i) E[i] = step(level + 1, i, E[i - 1]) + R[i];
    } else {
      cycle(level + 1, E, R);
      f_relax(level + 1, E, R);
    }

    for (int i = 1; i <= g.Nc; ++i) U[i * g.m] += E[i];
  }

  /// Run cycles from a seeded random initial iterate until the space-time
  /// residual drops below the absolute tolerance.
  std::pair<Trajectory, MgritStats> solve(const Vec& u0, const SpaceTimeFn* forcing) const {
    const TemporalGrid& g = grids_[0];
    const int n = engine_->state_size();
    if (u0.size() != n) throw std::invalid_argument("initial state has the wrong dimension");

    PropagatorFamily fam(engine_, g);
    std::vector<Vec> G(g.N + 1);
    G[0] = u0;
    for (int k = 1; k <= g.N; ++k)
      G[k] = forcing ? fam.source(k, *forcing) : Vec::Zero(n);

    std::vector<Vec> U(g.N + 1);
    U[0] = u0;
    std::mt19937_64 rng(options_.seed);
    std::normal_distribution<double> dist;
    for (int k = 1; k <= g.N; ++k) {
      U[k] = Vec(n);
      for (int i = 0; i < n; ++i) U[k][i] = dist(rng);
    }

    MgritStats stats;
    stats.residuals.push_back(residual_norm(0, U, G));
    stats.converged = stats.residuals.back() < options_.halting_abs;
    while (!stats.converged && stats.iterations < options_.max_iters) {
      cycle(0, U, G);
      f_relax(0, U, G);  // pending block-interior update before measuring
      ++stats.iterations;
      stats.residuals.push_back(residual_norm(0, U, G));
      stats.converged = stats.residuals.back() < options_.halting_abs;
    }
    for (std::size_t i = 0; i + 1 < stats.residuals.size(); ++i)
      if (stats.residuals[i] > 0.0)
        stats.rho_observed = std::max(stats.rho_observed, stats.residuals[i + 1] / stats.residuals[i]);

    Trajectory traj;
    traj.grid = g;
    traj.states = std::move(U);
    traj.solver_converged = stats.converged;
    return {std::move(traj), std::move(stats)};
  }

 private:
  std::shared_ptr<const PropagatorEngine> engine_;
  MgritOptions options_;
  std::vector<TemporalGrid> grids_;
};

}  // namespace fraclap
