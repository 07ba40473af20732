#pragma once

#include <Eigen/Cholesky>

#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <stdexcept>
#include <vector>

#include "fraclap/assembly.hpp"
#include "fraclap/mesh.hpp"
#include "fraclap/spatial_mg.hpp"

namespace fraclap {

enum class PropagatorMode { trace_reduced, full_block };

inline PropagatorMode parse_propagator_mode(const std::string& s) {
  if (s == "trace") return PropagatorMode::trace_reduced;
  if (s == "full") return PropagatorMode::full_block;
  throw std::invalid_argument("propagator: expected \"trace\" or \"full\", got \"" + s + "\"");
}

enum class SpatialSolverKind { direct, mg };

inline SpatialSolverKind parse_solver_kind(const std::string& s) {
  if (s == "direct") return SpatialSolverKind::direct;
  if (s == "mg") return SpatialSolverKind::mg;
  throw std::invalid_argument("solver.type: expected \"direct\" or \"mg\", got \"" + s + "\"");
}

/// Backward-Euler step machinery shared across time grids.  States are trace
/// vectors (interior spatial dofs); the extension layers are either
/// eliminated exactly (trace_reduced) or carried through a cylinder solve per
/// step (full_block).  Factorizations are cached per distinct step size.
class PropagatorEngine {
 public:
  PropagatorEngine(const OperatorSet& ops, PropagatorMode mode,
                   SpatialSolverKind solver = SpatialSolverKind::direct, MgOptions mg_options = {})
      : ops_(&ops), mode_(mode), solver_(solver), mg_options_(mg_options) {
    if (mode_ == PropagatorMode::trace_reduced) {
      Q_ = schur_complement(ops);
      Ms_dense_ = Mat(ops.Ms_raw);
    } else if (solver_ == SpatialSolverKind::mg) {
      mg_ = std::make_unique<MgHierarchy>(ops);
    } else {
      direct_ = std::make_unique<DirectBlockSolver>(ops);
    }
  }

  const OperatorSet& ops() const { return *ops_; }
  PropagatorMode mode() const { return mode_; }
  int state_size() const { return ops_->n; }
  const Mat& trace_operator() const {
    if (mode_ != PropagatorMode::trace_reduced)
      throw std::logic_error("trace operator only available in trace_reduced mode");
    return Q_;
  }
  const MgHierarchy* hierarchy() const { return mg_.get(); }

  /// u -> (M + tau Q)^{-1} (M u + tau load); load may be null for the
  /// homogeneous propagator.
  Vec advance(double tau, const Vec& u, const Vec* load, SolveStats* stats = nullptr) const {
    if (!(tau > 0.0)) throw std::invalid_argument("time step tau must be positive");
    const int n = ops_->n;
    if (mode_ == PropagatorMode::trace_reduced) {
      Vec rhs = Ms_dense_ * u;
      if (load) rhs += tau * (*load);
      Vec x = trace_factor(tau).solve(rhs);
      if (stats) *stats = SolveStats{1, rhs.norm(), 0.0, true};
      return x;
    }
    Vec rhs = Vec::Zero(n * ops_->F);
    rhs.head(n) = ops_->Ms_raw * u / tau;
    if (load) rhs.head(n) += *load;
    Vec x = (solver_ == SpatialSolverKind::mg) ? mg_->solve(tau, rhs, mg_options_, stats)
                                               : direct_->solve(tau, rhs, stats);
    return x.head(n);
  }

 private:
  const Eigen::LLT<Mat>& trace_factor(double tau) const {
    std::lock_guard<std::mutex> lock(mu_);
    auto& slot = trace_cache_[detail::tau_key(tau)];
    if (!slot) {
      slot = std::make_unique<Eigen::LLT<Mat>>(Mat(Ms_dense_ + tau * Q_));
      if (slot->info() != Eigen::Success) throw std::runtime_error("trace step factorization failed");
    }
    return *slot;
  }

  const OperatorSet* ops_;
  PropagatorMode mode_;
  SpatialSolverKind solver_;
  MgOptions mg_options_;
  Mat Q_, Ms_dense_;
  std::unique_ptr<MgHierarchy> mg_;
  std::unique_ptr<DirectBlockSolver> direct_;
  mutable std::mutex mu_;
  mutable std::map<uint64_t, std::unique_ptr<Eigen::LLT<Mat>>> trace_cache_;
};

/// A time grid bound to an engine: the family of step operators
/// Psi_j = (M + tau_j Q)^{-1} M together with their affine source terms.
class PropagatorFamily {
 public:
  PropagatorFamily(std::shared_ptr<const PropagatorEngine> engine, TemporalGrid grid)
      : engine_(std::move(engine)), grid_(std::move(grid)) {}

  const TemporalGrid& grid() const { return grid_; }
  const PropagatorEngine& engine() const { return *engine_; }

  /// Full step j = 1..N from t_{j-1} to t_j.
  Vec step(const Vec& u, int j, const SpaceTimeFn* forcing, SolveStats* stats = nullptr) const {
    if (j < 1 || j > grid_.N) throw std::out_of_range("step index out of range");
    if (!forcing) return engine_->advance(grid_.tau[j - 1], u, nullptr, stats);
    Vec load = assemble_load(engine_->ops().mesh, *forcing, grid_.t[j]);
    return engine_->advance(grid_.tau[j - 1], u, &load, stats);
  }

  /// Homogeneous propagator with an arbitrary step size.
  Vec propagate(double tau, const Vec& u) const { return engine_->advance(tau, u, nullptr); }

  /// Source term of step j: the step applied to zero input.
  Vec source(int j, const SpaceTimeFn& forcing) const {
    Vec load = assemble_load(engine_->ops().mesh, forcing, grid_.t[j]);
    return engine_->advance(grid_.tau[j - 1], Vec::Zero(engine_->state_size()), &load);
  }

 private:
  std::shared_ptr<const PropagatorEngine> engine_;
  TemporalGrid grid_;
};

struct Trajectory {
  TemporalGrid grid;
  std::vector<Vec> states;      ///< N+1 trace vectors
  double avg_iterations = 0.0;  ///< mean spatial-solver iterations per step
  bool solver_converged = true;
};

inline Trajectory sequential_solve(const PropagatorFamily& fam, const Vec& u0,
                                   const SpaceTimeFn* forcing) {
  Trajectory traj;
  traj.grid = fam.grid();
  traj.states.reserve(traj.grid.N + 1);
  traj.states.push_back(u0);
  long long iter_sum = 0;
  for (int j = 1; j <= traj.grid.N; ++j) {
    SolveStats st;
    traj.states.push_back(fam.step(traj.states.back(), j, forcing, &st));
    iter_sum += st.iterations;
    traj.solver_converged = traj.solver_converged && st.converged;
  }
  traj.avg_iterations = static_cast<double>(iter_sum) / traj.grid.N;
  return traj;
}

// ---------------------------------------------------------------------------
// error norms against a smooth reference

using GradientFn = std::function<std::array<double, 2>(double, double, double)>;

namespace detail {

inline std::pair<double, double> error_squares(const SpatialMesh& mesh, const Vec& u,
                                               const SpaceTimeFn& ref, const GradientFn& ref_grad,
                                               double t) {
  double l2 = 0.0, semi = 0.0;
  const int n = mesh.n_interior();
  for (const auto& tri : mesh.triangles) {
    const auto g = tri_geometry(mesh, tri);
    const auto& p0 = mesh.vertices[tri[0]];
    const auto& p1 = mesh.vertices[tri[1]];
    const auto& p2 = mesh.vertices[tri[2]];
    double uv[3], gx = 0.0, gy = 0.0;
    for (int a = 0; a < 3; ++a) {
      uv[a] = (tri[a] < n) ? u[tri[a]] : 0.0;
      gx += uv[a] * g.grad[a][0];
      gy += uv[a] * g.grad[a][1];
    }
    for (const auto& qp : tri_quadrature()) {
      const double l0 = 1.0 - qp.l1 - qp.l2;
      const double x = l0 * p0[0] + qp.l1 * p1[0] + qp.l2 * p2[0];
      const double y = l0 * p0[1] + qp.l1 * p1[1] + qp.l2 * p2[1];
      const double uh = l0 * uv[0] + qp.l1 * uv[1] + qp.l2 * uv[2];
      const double dv = uh - ref(x, y, t);
      const auto rg = ref_grad(x, y, t);
      const double dx = gx - rg[0], dy = gy - rg[1];
      l2 += qp.w * g.area * dv * dv;
      semi += qp.w * g.area * (dx * dx + dy * dy);
    }
  }
  return {l2, semi};
}

}  // namespace detail

/// Full H1-norm error of the P1 function with interior values u at time t.
inline double h1_error(const SpatialMesh& mesh, const Vec& u, const SpaceTimeFn& ref,
                       const GradientFn& ref_grad, double t) {
  auto [l2, semi] = detail::error_squares(mesh, u, ref, ref_grad, t);
  return std::sqrt(l2 + semi);
}

inline double l2_error(const SpatialMesh& mesh, const Vec& u, const SpaceTimeFn& ref, double t) {
  auto zero_grad = [](double, double, double) { return std::array<double, 2>{0.0, 0.0}; };
  auto [l2, semi] = detail::error_squares(mesh, u, ref, zero_grad, t);
  (void)semi;
  return std::sqrt(l2);
}

inline double h1_error_manufactured(const SpatialMesh& mesh, const Vec& u, double t) {
  return h1_error(mesh, u, manufactured_solution, manufactured_gradient, t);
}

struct TrajectoryError {
  double err_final = 0.0;  ///< H1 error at t_N
  double err_max = 0.0;    ///< max H1 error over j = 1..N
};

inline TrajectoryError h1_trajectory_error(const SpatialMesh& mesh, const Trajectory& traj) {
  TrajectoryError out;
  for (int j = 1; j <= traj.grid.N; ++j) {
    const double e = h1_error_manufactured(mesh, traj.states[j], traj.grid.t[j]);
    out.err_max = std::max(out.err_max, e);
    if (j == traj.grid.N) out.err_final = e;
  }
  return out;
}

}  // namespace fraclap
