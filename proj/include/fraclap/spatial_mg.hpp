#pragma once

#include <Eigen/SparseCholesky>

#include <cstring>
#include <map>
#include <memory>
#include <mutex>
#include <stdexcept>
#include <vector>

#include "fraclap/assembly.hpp"
#include "fraclap/mesh.hpp"

namespace fraclap {

struct MgOptions {
  double tol_reduction = 1e8;  ///< stop once the residual drops by this factor
  int max_it = 100;
};

struct SolveStats {
  int iterations = 0;
  double initial_residual = 0.0;
  double final_residual = 0.0;
  bool converged = true;
};

namespace detail {

inline uint64_t tau_key(double tau) {
  uint64_t k;
  std::memcpy(&k, &tau, sizeof k);
  return k;
}

/// Symmetric positive definite tridiagonal solve (Thomas algorithm).
inline void solve_tridiag(const Vec& d, const Vec& e, Vec& rhs) {
  const int n = static_cast<int>(d.size());
  static thread_local std::vector<double> c;
  c.assign(n, 0.0);
  double piv = d[0];
  c[0] = (n > 1) ? e[0] / piv : 0.0;
  rhs[0] /= piv;
  for (int i = 1; i < n; ++i) {
    piv = d[i] - e[i - 1] * c[i - 1];
    if (i < n - 1) c[i] = e[i] / piv;
    rhs[i] = (rhs[i] - e[i - 1] * rhs[i - 1]) / piv;
  }
  for (int i = n - 2; i >= 0; --i) rhs[i] -= c[i] * rhs[i + 1];
}

}  // namespace detail

/// Deterministic greedy coloring of the interior vertex adjacency graph
/// (vertices sharing a triangle conflict).  Classes are independent sets, so
/// the line updates inside one class decouple.
inline std::vector<std::vector<int>> color_interior(const SpatialMesh& mesh) {
  const int n = mesh.n_interior();
  std::vector<std::vector<int>> adj(n);
  for (const auto& tri : mesh.triangles)
    for (int a = 0; a < 3; ++a)
      for (int b = 0; b < 3; ++b)
        if (a != b && tri[a] < n && tri[b] < n) adj[tri[a]].push_back(tri[b]);

  std::vector<int> color(n, -1);
  int ncolors = 0;
  std::vector<char> used;
  for (int v = 0; v < n; ++v) {
    used.assign(ncolors + 1, 0);
    for (int w : adj[v])
      if (color[w] >= 0) used[color[w]] = 1;
    int c = 0;
    while (used[c]) ++c;
    color[v] = c;
    ncolors = std::max(ncolors, c + 1);
  }
  std::vector<std::vector<int>> classes(ncolors);
  for (int v = 0; v < n; ++v) classes[color[v]].push_back(v);
  return classes;
}

/// Interior-to-interior P1 prolongation between two structured levels.
inline SpMat build_prolongation(const SpatialMesh& fine, const SpatialMesh& coarse) {
  std::vector<Eigen::Triplet<double>> trip;
  auto add = [&](int frow, int cgx, int cgy, double w) {
    const int cid = coarse.at(cgx, cgy);
    if (cid < 0) throw std::runtime_error("prolongation parent outside the coarse mesh");
    if (coarse.is_interior(cid)) trip.emplace_back(frow, cid, w);
  };
  for (int v = 0; v < fine.n_interior(); ++v) {
    const auto [gx, gy] = fine.lattice[v];
    const bool ox = gx % 2, oy = gy % 2;
    if (!ox && !oy) {
      add(v, gx / 2, gy / 2, 1.0);
    } else if (ox && !oy) {
      add(v, (gx - 1) / 2, gy / 2, 0.5);
      add(v, (gx + 1) / 2, gy / 2, 0.5);
    } else if (!ox && oy) {
      add(v, gx / 2, (gy - 1) / 2, 0.5);
      add(v, gx / 2, (gy + 1) / 2, 0.5);
    } else {  // midpoint of a SW-NE diagonal edge
      add(v, (gx - 1) / 2, (gy - 1) / 2, 0.5);
      add(v, (gx + 1) / 2, (gy + 1) / 2, 0.5);
    }
  }
  SpMat P(fine.n_interior(), coarse.n_interior());
  P.setFromTriplets(trip.begin(), trip.end());
  return P;
}

/// Cached sparse factorization of the materialised cylinder operator,
/// one factor per distinct step size.
class DirectBlockSolver {
 public:
  explicit DirectBlockSolver(const OperatorSet& ops) : ops_(&ops) {}

  Vec solve(double tau, const Vec& rhs, SolveStats* stats = nullptr) const {
    const auto& f = factor(tau);
    Vec x = f.solve(rhs);
    if (stats) {
      stats->iterations = 1;
      stats->converged = true;
      stats->initial_residual = rhs.norm();
      stats->final_residual = (rhs - BlockSystem(*ops_, tau).apply(x)).norm();
    }
    return x;
  }

  const OperatorSet& ops() const { return *ops_; }

 private:
  const Eigen::SimplicialLDLT<SpMat>& factor(double tau) const {
    std::lock_guard<std::mutex> lock(mu_);
    auto& slot = cache_[detail::tau_key(tau)];
    if (!slot) {
      slot = std::make_unique<Eigen::SimplicialLDLT<SpMat>>(BlockSystem(*ops_, tau).materialize());
      if (slot->info() != Eigen::Success) throw std::runtime_error("cylinder operator factorization failed");
    }
    return *slot;
  }

  const OperatorSet* ops_;
  mutable std::mutex mu_;
  mutable std::map<uint64_t, std::unique_ptr<Eigen::SimplicialLDLT<SpMat>>> cache_;
};

/// Geometric multigrid for the per-step cylinder operator: V(1,1) cycles with
/// a vertical line smoother (one tridiagonal solve in the extension variable
/// per interior vertex, swept color by color), spatial-only coarsening down
/// to the level-1 mesh, and a cached direct solve there.
class MgHierarchy {
 public:
  explicit MgHierarchy(const OperatorSet& fine) {
    levels_.reserve(fine.mesh.level);
    levels_.push_back(Level{fine, color_interior(fine.mesh), {}, {}, {}});
    while (levels_.back().ops.mesh.level > 1) {
      const auto& prev = levels_.back().ops;
      auto coarse_mesh = build_spatial_mesh(prev.mesh.domain, prev.mesh.level - 1);
      auto ops = assemble_operators(coarse_mesh, prev.zmesh, prev.alpha);
      levels_.back().P = build_prolongation(prev.mesh, coarse_mesh);
      levels_.push_back(Level{std::move(ops), color_interior(coarse_mesh), {}, {}, {}});
    }
    for (auto& lvl : levels_) {
      lvl.diag_as = Vec(lvl.ops.n);
      lvl.diag_ms = Vec(lvl.ops.n);
      for (int i = 0; i < lvl.ops.n; ++i) {
        lvl.diag_as[i] = lvl.ops.As_raw.coeff(i, i) / lvl.ops.d_alpha;
        lvl.diag_ms[i] = lvl.ops.Ms_raw.coeff(i, i) / lvl.ops.d_alpha;
      }
    }
    const auto& z = levels_.front().ops;
    mz_d = Vec(z.F);
    az_d = Vec(z.F);
    mz_e = Vec(std::max(0, z.F - 1));
    az_e = Vec(std::max(0, z.F - 1));
    for (int l = 0; l < z.F; ++l) {
      mz_d[l] = z.Mz.coeff(l, l);
      az_d[l] = z.Az.coeff(l, l);
      if (l + 1 < z.F) {
        mz_e[l] = z.Mz.coeff(l, l + 1);
        az_e[l] = z.Az.coeff(l, l + 1);
      }
    }
  }

  int levels() const { return static_cast<int>(levels_.size()); }
  const OperatorSet& ops(int level = 0) const { return levels_[level].ops; }
  const std::vector<std::vector<int>>& colors(int level = 0) const { return levels_[level].colors; }
  const SpMat& prolongation(int level) const { return levels_[level].P; }

  /// One line-smoother pass over a single color class (testing hook).
  void smooth_color(double tau, const std::vector<int>& cls, Vec& x, const Vec& rhs) const {
    sweep_color(0, tau, cls, x, rhs);
  }

  /// Full pre- (forward color order) or post- (reverse) smoothing pass.
  void smooth(double tau, Vec& x, const Vec& rhs, bool reverse = false) const {
    sweep(0, tau, x, rhs, reverse);
  }

  void vcycle(double tau, Vec& x, const Vec& rhs) const { vcycle_level(0, tau, x, rhs); }

  /// Zero-initial-guess solve, halting on a tol_reduction residual drop.
  Vec solve(double tau, const Vec& rhs, const MgOptions& opt = {}, SolveStats* stats = nullptr) const {
    Vec x = Vec::Zero(rhs.size());
    const double r0 = rhs.norm();
    if (stats) {
      stats->initial_residual = r0;
      stats->final_residual = 0.0;
      stats->iterations = 0;
      stats->converged = true;
    }
    if (r0 == 0.0) return x;
    BlockSystem block(levels_[0].ops, tau);
    const double target = r0 / opt.tol_reduction;
    bool converged = false;
    int it = 0;
    double r = r0;
    while (it < opt.max_it) {
      vcycle_level(0, tau, x, rhs);
      ++it;
      r = (rhs - block.apply(x)).norm();
      if (r <= target) {
        converged = true;
        break;
      }
    }
    if (stats) {
      stats->iterations = it;
      stats->final_residual = r;
      stats->converged = converged;
    }
    return x;
  }

 private:
  struct Level {
    OperatorSet ops;
    std::vector<std::vector<int>> colors;
    Vec diag_as, diag_ms;  ///< scaled diagonal entries
    SpMat P;               ///< next-coarser -> this level (empty on coarsest)
  };

  void sweep_color(int l, double tau, const std::vector<int>& cls, Vec& x, const Vec& rhs) const {
    const auto& lvl = levels_[l];
    const int n = lvl.ops.n, F = lvl.ops.F;
    BlockSystem block(lvl.ops, tau);
    Vec resid = rhs - block.apply(x);
    Eigen::Map<const Mat> R(resid.data(), n, F);
    Eigen::Map<Mat> X(x.data(), n, F);
    Vec d(F), line(F);
    for (int i : cls) {
      const double ai = lvl.diag_as[i], mi = lvl.diag_ms[i];
      d = mz_d * ai + az_d * mi;
      d[0] += lvl.ops.Ms_raw.coeff(i, i) / tau;
      Vec e = mz_e * ai + az_e * mi;
      line = R.row(i);
      detail::solve_tridiag(d, e, line);
      X.row(i) += line;
    }
  }

  void sweep(int l, double tau, Vec& x, const Vec& rhs, bool reverse) const {
    const auto& classes = levels_[l].colors;
    if (!reverse)
      for (const auto& cls : classes) sweep_color(l, tau, cls, x, rhs);
    else
      for (auto it = classes.rbegin(); it != classes.rend(); ++it) sweep_color(l, tau, *it, x, rhs);
  }

  void vcycle_level(int l, double tau, Vec& x, const Vec& rhs) const {
    const auto& lvl = levels_[l];
    if (l + 1 == levels()) {
      x = coarse_factor(tau).solve(rhs);
      return;
    }
    sweep(l, tau, x, rhs, false);
    BlockSystem block(lvl.ops, tau);
    Vec resid = rhs - block.apply(x);
    const auto& coarse = levels_[l + 1].ops;
    Eigen::Map<const Mat> R(resid.data(), lvl.ops.n, lvl.ops.F);
    Mat Rc = lvl.P.transpose() * R;
    Vec rc = Vec::Zero(coarse.n * coarse.F);
    Eigen::Map<Mat>(rc.data(), coarse.n, coarse.F) = Rc;
    Vec ec = Vec::Zero(rc.size());
    vcycle_level(l + 1, tau, ec, rc);
    Eigen::Map<Mat> X(x.data(), lvl.ops.n, lvl.ops.F);
    X += lvl.P * Eigen::Map<const Mat>(ec.data(), coarse.n, coarse.F);
    sweep(l, tau, x, rhs, true);
  }

  const Eigen::SimplicialLDLT<SpMat>& coarse_factor(double tau) const {
    std::lock_guard<std::mutex> lock(mu_);
    auto& slot = coarse_factors_[detail::tau_key(tau)];
    if (!slot) {
      slot = std::make_unique<Eigen::SimplicialLDLT<SpMat>>(
          BlockSystem(levels_.back().ops, tau).materialize());
      if (slot->info() != Eigen::Success) throw std::runtime_error("coarse factorization failed");
    }
    return *slot;
  }

  std::vector<Level> levels_;
  Vec mz_d, mz_e, az_d, az_e;  ///< shared extension tridiagonals
  mutable std::mutex mu_;
  mutable std::map<uint64_t, std::unique_ptr<Eigen::SimplicialLDLT<SpMat>>> coarse_factors_;
};

}  // namespace fraclap
