#pragma once

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>

#include <array>
#include <cmath>
#include <functional>
#include <stdexcept>
#include <vector>

#include "fraclap/mesh.hpp"

namespace fraclap {

using SpMat = Eigen::SparseMatrix<double>;
using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

inline double gamma_fn(double x) { return std::tgamma(x); }

/// Scaling constant tying the weighted extension energy to the fractional
/// energy; beta = 1 - alpha is the weight exponent.
inline double normalization_constant(double alpha) {
  if (!(alpha > 0.0 && alpha < 2.0)) throw std::invalid_argument("alpha must lie in (0, 2)");
  const double beta = 1.0 - alpha;
  return std::pow(2.0, beta) * gamma_fn(1.0 - alpha / 2.0) / gamma_fn(alpha / 2.0);
}

// ---------------------------------------------------------------------------
// triangle quadrature (degree 5, 7 points, weights normalised to 1)

struct TriQuadPoint {
  double l1, l2, w;
};

inline const std::array<TriQuadPoint, 7>& tri_quadrature() {
  static const std::array<TriQuadPoint, 7> rule = {{
      {1.0 / 3.0, 1.0 / 3.0, 0.225},
      {0.059715871789770, 0.470142064105115, 0.132394152788506},
      {0.470142064105115, 0.059715871789770, 0.132394152788506},
      {0.470142064105115, 0.470142064105115, 0.132394152788506},
      {0.797426985353087, 0.101286507323456, 0.125939180544827},
      {0.101286507323456, 0.797426985353087, 0.125939180544827},
      {0.101286507323456, 0.101286507323456, 0.125939180544827},
  }};
  return rule;
}

namespace detail {

struct TriGeometry {
  double area;
  std::array<std::array<double, 2>, 3> grad;  ///< P1 basis gradients
};

inline TriGeometry tri_geometry(const SpatialMesh& mesh, const std::array<int, 3>& tri) {
  const auto& p0 = mesh.vertices[tri[0]];
  const auto& p1 = mesh.vertices[tri[1]];
  const auto& p2 = mesh.vertices[tri[2]];
  const double det = (p1[0] - p0[0]) * (p2[1] - p0[1]) - (p2[0] - p0[0]) * (p1[1] - p0[1]);
  if (!(det > 0.0)) throw std::runtime_error("degenerate or inverted triangle");
  TriGeometry g;
  g.area = 0.5 * det;
  g.grad[0] = {(p1[1] - p2[1]) / det, (p2[0] - p1[0]) / det};
  g.grad[1] = {(p2[1] - p0[1]) / det, (p0[0] - p2[0]) / det};
  g.grad[2] = {(p0[1] - p1[1]) / det, (p1[0] - p0[0]) / det};
  return g;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// spatial P1 matrices

struct SpatialMatrices {
  SpMat mass, stiffness;            ///< interior unknowns only
  SpMat mass_full, stiffness_full;  ///< all vertices (diagnostics)
};

inline SpatialMatrices assemble_spatial(const SpatialMesh& mesh) {
  const int n = mesh.n_interior();
  const int nv = mesh.n_vertices();
  std::vector<Eigen::Triplet<double>> tm, tk, tmf, tkf;
  for (const auto& tri : mesh.triangles) {
    const auto g = detail::tri_geometry(mesh, tri);
    for (int a = 0; a < 3; ++a)
      for (int b = 0; b < 3; ++b) {
        const double kab = g.area * (g.grad[a][0] * g.grad[b][0] + g.grad[a][1] * g.grad[b][1]);
        const double mab = g.area / 12.0 * (a == b ? 2.0 : 1.0);
        tmf.emplace_back(tri[a], tri[b], mab);
        tkf.emplace_back(tri[a], tri[b], kab);
        if (tri[a] < n && tri[b] < n) {
          tm.emplace_back(tri[a], tri[b], mab);
          tk.emplace_back(tri[a], tri[b], kab);
        }
      }
  }
  SpatialMatrices out;
  out.mass.resize(n, n);
  out.stiffness.resize(n, n);
  out.mass_full.resize(nv, nv);
  out.stiffness_full.resize(nv, nv);
  out.mass.setFromTriplets(tm.begin(), tm.end());
  out.stiffness.setFromTriplets(tk.begin(), tk.end());
  out.mass_full.setFromTriplets(tmf.begin(), tmf.end());
  out.stiffness_full.setFromTriplets(tkf.begin(), tkf.end());
  return out;
}

// ---------------------------------------------------------------------------
// weighted 1-d matrices in the extension variable

struct ZMatrices {
  SpMat mass, stiffness;  ///< free nodes 0 .. M-1
};

/// Closed-form moments of z^beta against the P1 basis on each interval.
inline ZMatrices assemble_z(const ZMesh& zm, double beta) {
  if (!(beta > -1.0 && beta < 1.0)) throw std::invalid_argument("weight exponent beta must lie in (-1, 1)");
  const int F = zm.free_count();
  std::vector<Eigen::Triplet<double>> tm, tk;
  auto Ipow = [&](double a, double b, double p) {
    return (std::pow(b, p + 1.0) - std::pow(a, p + 1.0)) / (p + 1.0);
  };
  for (int k = 1; k <= zm.M; ++k) {
    const double a = zm.z[k - 1], b = zm.z[k], h = b - a;
    const double I0 = Ipow(a, b, beta), I1 = Ipow(a, b, beta + 1.0), I2 = Ipow(a, b, beta + 2.0);
    const double mLL = (b * b * I0 - 2.0 * b * I1 + I2) / (h * h);
    const double mRR = (I2 - 2.0 * a * I1 + a * a * I0) / (h * h);
    const double mLR = (-a * b * I0 + (a + b) * I1 - I2) / (h * h);
    const double kLL = I0 / (h * h);
    const int L = k - 1, R = k;
    auto add = [&](int r, int c, double mv, double kv) {
      if (r < F && c < F) {
        tm.emplace_back(r, c, mv);
        tk.emplace_back(r, c, kv);
      }
    };
    add(L, L, mLL, kLL);
    add(R, R, mRR, kLL);
    add(L, R, mLR, -kLL);
    add(R, L, mLR, -kLL);
  }
  ZMatrices out;
  out.mass.resize(F, F);
  out.stiffness.resize(F, F);
  out.mass.setFromTriplets(tm.begin(), tm.end());
  out.stiffness.setFromTriplets(tk.begin(), tk.end());
  return out;
}

// ---------------------------------------------------------------------------
// combined operator set for one discretisation

struct OperatorSet {
  SpatialMesh mesh;
  ZMesh zmesh;
  double alpha = 1.0, beta = 0.0, d_alpha = 1.0;
  int n = 0;  ///< interior spatial unknowns
  int F = 0;  ///< free extension nodes

  SpMat Ms_raw, As_raw;  ///< unscaled spatial matrices (interior)
  SpMat Ms, As;          ///< scaled by 1/d_alpha
  SpMat Mz, Az;          ///< weighted extension matrices
};

inline OperatorSet assemble_operators(const SpatialMesh& mesh, const ZMesh& zm, double alpha) {
  OperatorSet ops;
  ops.mesh = mesh;
  ops.zmesh = zm;
  ops.alpha = alpha;
  ops.beta = 1.0 - alpha;
  ops.d_alpha = normalization_constant(alpha);
  ops.n = mesh.n_interior();
  ops.F = zm.free_count();
  auto sm = assemble_spatial(mesh);
  ops.Ms_raw = std::move(sm.mass);
  ops.As_raw = std::move(sm.stiffness);
  ops.Ms = ops.Ms_raw / ops.d_alpha;
  ops.As = ops.As_raw / ops.d_alpha;
  auto zmat = assemble_z(zm, ops.beta);
  ops.Mz = std::move(zmat.mass);
  ops.Az = std::move(zmat.stiffness);
  return ops;
}

/// Backward-Euler cylinder operator for one time step of size tau,
///   (1/tau) E00 (x) Ms_raw + Mz (x) As + Az (x) Ms,
/// acting on states stored layer-major with the trace layer first
/// (entry (i, l) of the n-by-F state block sits at index l*n + i).
class BlockSystem {
 public:
  BlockSystem(const OperatorSet& ops, double tau) : ops_(&ops), tau_(tau) {
    if (!(tau > 0.0)) throw std::invalid_argument("time step tau must be positive");
  }

  int rows() const { return ops_->n * ops_->F; }
  double tau() const { return tau_; }
  const OperatorSet& ops() const { return *ops_; }

  /// Structured application through the factored form; never materialises.
  Vec apply(const Vec& x) const {
    const auto& o = *ops_;
    Eigen::Map<const Mat> U(x.data(), o.n, o.F);
    Mat Y = o.As * (U * o.Mz) + o.Ms * (U * o.Az);
    Y.col(0) += (o.Ms_raw * U.col(0)) / tau_;
    Vec out(rows());
    Eigen::Map<Mat>(out.data(), o.n, o.F) = Y;
    return out;
  }

  /// Explicit sparse form (direct factorisation and diagnostics).
  SpMat materialize() const {
    const auto& o = *ops_;
    std::vector<Eigen::Triplet<double>> trip;
    trip.reserve(static_cast<std::size_t>(o.Mz.nonZeros()) * o.As.nonZeros() / o.F + 16);
    auto add_kron = [&](const SpMat& Z, const SpMat& S) {
      for (int lc = 0; lc < Z.outerSize(); ++lc)
        for (SpMat::InnerIterator zit(Z, lc); zit; ++zit)
          for (int sc = 0; sc < S.outerSize(); ++sc)
            for (SpMat::InnerIterator sit(S, sc); sit; ++sit)
              trip.emplace_back(zit.row() * o.n + sit.row(), zit.col() * o.n + sit.col(),
                                zit.value() * sit.value());
    };
    add_kron(o.Mz, o.As);
    add_kron(o.Az, o.Ms);
    for (int sc = 0; sc < o.Ms_raw.outerSize(); ++sc)
      for (SpMat::InnerIterator it(o.Ms_raw, sc); it; ++it)
        trip.emplace_back(it.row(), it.col(), it.value() / tau_);
    SpMat B(rows(), rows());
    B.setFromTriplets(trip.begin(), trip.end());
    return B;
  }

 private:
  const OperatorSet* ops_;
  double tau_;
};

/// Dense trace-space operator obtained by eliminating the extension layers
/// from the steady cylinder operator: Q = B00 - B0a Kaa^{-1} Ba0.  The time
/// term never touches the eliminated layers, so Q is step independent.
inline Mat schur_complement(const OperatorSet& ops) {
  const int n = ops.n, F = ops.F;
  if (F == 1) return Mat(ops.Mz.coeff(0, 0) * ops.As + ops.Az.coeff(0, 0) * ops.Ms);

  const int na = n * (F - 1);
  std::vector<Eigen::Triplet<double>> ta;
  auto add_kron_shift = [&](const SpMat& Z, const SpMat& S) {
    for (int lc = 0; lc < Z.outerSize(); ++lc)
      for (SpMat::InnerIterator zit(Z, lc); zit; ++zit) {
        if (zit.row() == 0 || zit.col() == 0) continue;
        for (int sc = 0; sc < S.outerSize(); ++sc)
          for (SpMat::InnerIterator sit(S, sc); sit; ++sit)
            ta.emplace_back((zit.row() - 1) * n + sit.row(), (zit.col() - 1) * n + sit.col(),
                            zit.value() * sit.value());
      }
  };
  add_kron_shift(ops.Mz, ops.As);
  add_kron_shift(ops.Az, ops.Ms);
  SpMat Kaa(na, na);
  Kaa.setFromTriplets(ta.begin(), ta.end());
  Eigen::SimplicialLDLT<SpMat> solver(Kaa);
  if (solver.info() != Eigen::Success) throw std::runtime_error("interior extension block is singular");

  // coupling block: only the first eliminated layer talks to the trace
  Mat B0a_cols(na, n);  // columns of Ba0 (= rows of B0a by symmetry)
  B0a_cols.setZero();
  const Mat As_d = Mat(ops.As), Ms_d = Mat(ops.Ms);
  for (int l = 1; l < F; ++l) {
    const double mz = ops.Mz.coeff(l, 0), az = ops.Az.coeff(l, 0);
    if (mz == 0.0 && az == 0.0) continue;
    B0a_cols.middleRows((l - 1) * n, n) += mz * As_d + az * Ms_d;
  }
  Mat Q = ops.Mz.coeff(0, 0) * As_d + ops.Az.coeff(0, 0) * Ms_d;
  for (int j = 0; j < n; ++j) {
    Vec x = solver.solve(B0a_cols.col(j));
    Q.col(j) -= B0a_cols.transpose() * x;
  }
  return Q;
}

// ---------------------------------------------------------------------------
// load vectors and the manufactured reference problem

using SpaceTimeFn = std::function<double(double, double, double)>;

/// Interior load vector (f(., t), phi_i) by the degree-5 triangle rule.
inline Vec assemble_load(const SpatialMesh& mesh, const SpaceTimeFn& f, double t) {
  Vec out = Vec::Zero(mesh.n_interior());
  for (const auto& tri : mesh.triangles) {
    const auto g = detail::tri_geometry(mesh, tri);
    const auto& p0 = mesh.vertices[tri[0]];
    const auto& p1 = mesh.vertices[tri[1]];
    const auto& p2 = mesh.vertices[tri[2]];
    for (const auto& qp : tri_quadrature()) {
      const double l0 = 1.0 - qp.l1 - qp.l2;
      const double x = l0 * p0[0] + qp.l1 * p1[0] + qp.l2 * p2[0];
      const double y = l0 * p0[1] + qp.l1 * p1[1] + qp.l2 * p2[1];
      const double fv = qp.w * g.area * f(x, y, t);
      const double lam[3] = {l0, qp.l1, qp.l2};
      for (int a = 0; a < 3; ++a)
        if (tri[a] < mesh.n_interior()) out[tri[a]] += fv * lam[a];
    }
  }
  return out;
}

/// Separable reference solution exp(-t) sin(pi x) sin(pi y); it is a Dirichlet
/// eigenfunction on both example domains, so the fractional operator acts as
/// multiplication by (2 pi^2)^(alpha/2).
inline double manufactured_solution(double x, double y, double t) {
  return std::exp(-t) * std::sin(M_PI * x) * std::sin(M_PI * y);
}

inline std::array<double, 2> manufactured_gradient(double x, double y, double t) {
  const double e = std::exp(-t);
  return {e * M_PI * std::cos(M_PI * x) * std::sin(M_PI * y),
          e * M_PI * std::sin(M_PI * x) * std::cos(M_PI * y)};
}

inline double manufactured_forcing(double alpha, double x, double y, double t) {
  return (-1.0 + std::pow(2.0 * M_PI * M_PI, alpha / 2.0)) * manufactured_solution(x, y, t);
}

inline SpaceTimeFn manufactured_forcing_fn(double alpha) {
  return [alpha](double x, double y, double t) { return manufactured_forcing(alpha, x, y, t); };
}

/// Nodal interpolant of the reference solution at time t (interior dofs).
inline Vec manufactured_interpolant(const SpatialMesh& mesh, double t) {
  Vec u(mesh.n_interior());
  for (int i = 0; i < mesh.n_interior(); ++i)
    u[i] = manufactured_solution(mesh.vertices[i][0], mesh.vertices[i][1], t);
  return u;
}

}  // namespace fraclap
