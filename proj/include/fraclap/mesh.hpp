#pragma once

#include <array>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

namespace fraclap {

enum class DomainTag { unit_square, l_shape };

inline DomainTag parse_domain_tag(const std::string& s) {
  if (s == "unit-square") return DomainTag::unit_square;
  if (s == "l-shape") return DomainTag::l_shape;
  throw std::invalid_argument("domain: expected \"unit-square\" or \"l-shape\", got \"" + s + "\"");
}

inline std::string to_string(DomainTag d) {
  return d == DomainTag::unit_square ? "unit-square" : "l-shape";
}

/// Structured conforming triangulation of the unit square or of the L-shaped
/// domain (-1,1)^2 \ [0,1)^2, built on a uniform lattice of spacing h = 2^-k.
/// Every lattice square is split along its SW-NE diagonal.  Interior vertices
/// receive the ids 0 .. n_interior()-1 (lattice scan order), boundary vertices
/// follow.
struct SpatialMesh {
  DomainTag domain = DomainTag::unit_square;
  int level = 0;
  double h = 0.0;

  std::vector<std::array<double, 2>> vertices;  ///< coordinates, interior first
  std::vector<std::array<int, 3>> triangles;    ///< CCW vertex triples
  int interior_count = 0;

  // Lattice metadata used by intergrid transfer and vertex lookup.
  int nx = 0, ny = 0;          ///< lattice point counts per axis
  double x0 = 0.0, y0 = 0.0;   ///< coordinates of lattice point (0, 0)
  std::vector<int> lattice_id;              ///< nx*ny entries, vertex id or -1
  std::vector<std::array<int, 2>> lattice;  ///< lattice coordinates per vertex

  int n_interior() const { return interior_count; }
  int n_vertices() const { return static_cast<int>(vertices.size()); }

  /// Vertex id at lattice point (gx, gy), or -1 if absent.
  int at(int gx, int gy) const {
    if (gx < 0 || gy < 0 || gx >= nx || gy >= ny) return -1;
    return lattice_id[static_cast<std::size_t>(gy) * nx + gx];
  }

  bool is_interior(int v) const { return v >= 0 && v < interior_count; }
};

inline SpatialMesh build_spatial_mesh(DomainTag domain, int k) {
  if (k < 1) throw std::invalid_argument("mesh level k must be >= 1");
  SpatialMesh mesh;
  mesh.domain = domain;
  mesh.level = k;
  mesh.h = std::ldexp(1.0, -k);

  const int K = 1 << k;  // lattice points per unit length
  const bool lshape = (domain == DomainTag::l_shape);
  const int cells = lshape ? 2 * K : K;  // cells per axis
  mesh.nx = mesh.ny = cells + 1;
  mesh.x0 = mesh.y0 = lshape ? -1.0 : 0.0;

  auto vertex_present = [&](int gx, int gy) {
    if (!lshape) return true;
    return !(gx > K && gy > K);
  };
  auto vertex_boundary = [&](int gx, int gy) {
    if (gx == 0 || gy == 0 || gx == cells || gy == cells) return true;
    if (!lshape) return false;
    return (gx == K && gy >= K) || (gy == K && gx >= K);
  };
  auto cell_present = [&](int cx, int cy) {
    if (!lshape) return true;
    return !(cx >= K && cy >= K);
  };

  mesh.lattice_id.assign(static_cast<std::size_t>(mesh.nx) * mesh.ny, -1);
  auto slot = [&](int gx, int gy) -> int& {
    return mesh.lattice_id[static_cast<std::size_t>(gy) * mesh.nx + gx];
  };

  // Two passes so that interior vertices occupy a contiguous leading block.
  for (int pass = 0; pass < 2; ++pass) {
    const bool want_boundary = (pass == 1);
    for (int gy = 0; gy < mesh.ny; ++gy)
      for (int gx = 0; gx < mesh.nx; ++gx) {
        if (!vertex_present(gx, gy)) continue;
        if (vertex_boundary(gx, gy) != want_boundary) continue;
        slot(gx, gy) = static_cast<int>(mesh.vertices.size());
        mesh.vertices.push_back({mesh.x0 + gx * mesh.h, mesh.y0 + gy * mesh.h});
        mesh.lattice.push_back({gx, gy});
      }
    if (pass == 0) mesh.interior_count = static_cast<int>(mesh.vertices.size());
  }

  for (int cy = 0; cy < cells; ++cy)
    for (int cx = 0; cx < cells; ++cx) {
      if (!cell_present(cx, cy)) continue;
      const int v00 = mesh.at(cx, cy), v10 = mesh.at(cx + 1, cy);
      const int v01 = mesh.at(cx, cy + 1), v11 = mesh.at(cx + 1, cy + 1);
      mesh.triangles.push_back({v00, v10, v11});
      mesh.triangles.push_back({v00, v11, v01});
    }
  return mesh;
}

/// One uniform refinement step; each triangle splits into four and every
/// coarse vertex persists at the same coordinates.
inline SpatialMesh refine(const SpatialMesh& mesh) {
  return build_spatial_mesh(mesh.domain, mesh.level + 1);
}

/// Graded 1-d mesh on [0, Z] for the extension variable: an algebraically
/// graded leading section (exponent mu) blended into a uniform tail, with the
/// switch at node 3M/4.  Nodes z_0 = 0 < ... < z_M = Z; the free unknowns are
/// the nodes 0 .. M-1 (the cap z_M carries the homogeneous condition).
struct ZMesh {
  std::vector<double> z;
  int M = 0;
  double Z = 1.0;
  double grading = 0.0;  ///< exponent mu
  double z_star = 0.0;   ///< relative switch height

  int free_count() const { return M; }
};

inline ZMesh build_zmesh(int M, double alpha, double Z = 1.0) {
  if (M < 4 || M % 4 != 0) throw std::invalid_argument("z intervals M must be a positive multiple of 4");
  if (!(alpha > 0.0 && alpha < 2.0)) throw std::invalid_argument("alpha must lie in (0, 2)");
  if (!(Z > 0.0)) throw std::invalid_argument("Z must be positive");

  ZMesh zm;
  zm.M = M;
  zm.Z = Z;
  zm.grading = 3.0 / alpha + 0.01;
  zm.z_star = 1.0 / (1.0 + zm.grading / 3.0);
  zm.z.resize(M + 1);
  const int switch_node = 3 * M / 4;
  for (int j = 0; j <= M; ++j) {
    if (j <= switch_node)
      zm.z[j] = zm.z_star * Z * std::pow(4.0 * j / (3.0 * M), zm.grading);
    else
      zm.z[j] = Z * ((1.0 - zm.z_star) * (4.0 * j / M - 3.0) + zm.z_star);
  }
  return zm;
}

/// Default extension resolution tied to the spatial mesh width.
inline int default_z_intervals(double h) {
  return 4 * static_cast<int>(std::ceil(1.0 / (2.0 * h)));
}

enum class GridKind { uniform, graded };

inline GridKind parse_grid_kind(const std::string& s) {
  if (s == "uniform") return GridKind::uniform;
  if (s == "graded") return GridKind::graded;
  throw std::invalid_argument("grid_kind: expected \"uniform\" or \"graded\", got \"" + s + "\"");
}

inline std::string to_string(GridKind g) {
  return g == GridKind::uniform ? "uniform" : "graded";
}

/// Time grid 0 = t_0 < ... < t_N = T together with the coarse grid induced by
/// a coarsening factor m (every m-th point).  tau[j-1] = t_j - t_{j-1}; the
/// coarse steps tauc are partial sums of tau so that refinements of the same
/// grid share step values bit for bit.
struct TemporalGrid {
  GridKind kind = GridKind::uniform;
  int N = 0;
  double T = 0.0;
  double varpi = 1.0;  ///< grading exponent (graded kind only)
  int m = 1;
  int Nc = 0;

  std::vector<double> t;     ///< N+1 points
  std::vector<double> tau;   ///< N fine steps
  std::vector<double> tc;    ///< Nc+1 coarse points
  std::vector<double> tauc;  ///< Nc coarse steps

  /// Grid induced on the coarse points, keeping the kind and grading; the
  /// result uses coarsening factor m_next for its own coarse level.
  TemporalGrid coarsen(int m_next) const {
    if (m_next < 1 || Nc % m_next != 0)
      throw std::invalid_argument("m must divide the number of steps at every level");
    TemporalGrid g;
    g.kind = kind;
    g.N = Nc;
    g.T = T;
    g.varpi = varpi;
    g.m = m_next;
    g.Nc = Nc / m_next;
    g.t = tc;
    g.tau = tauc;
    g.build_coarse();
    return g;
  }

  void build_coarse() {
    tc.resize(Nc + 1);
    tauc.resize(Nc);
    for (int i = 0; i <= Nc; ++i) tc[i] = t[static_cast<std::size_t>(i) * m];
    for (int i = 0; i < Nc; ++i) {
      double s = 0.0;
      for (int j = i * m; j < (i + 1) * m; ++j) s += tau[j];
      tauc[i] = s;
    }
  }
};

inline TemporalGrid build_temporal_grid(GridKind kind, int N, double T, double varpi = 1.0, int m = 1) {
  if (N < 2) throw std::invalid_argument("time steps N must be >= 2");
  if (!(T > 0.0)) throw std::invalid_argument("final time T must be positive");
  if (m < 1 || N % m != 0) throw std::invalid_argument("coarsening factor m must divide N");
  if (kind == GridKind::graded && !(varpi >= 1.0))
    throw std::invalid_argument("grading exponent varpi must be >= 1");

  TemporalGrid g;
  g.kind = kind;
  g.N = N;
  g.T = T;
  g.varpi = (kind == GridKind::graded) ? varpi : 1.0;
  g.m = m;
  g.Nc = N / m;
  g.t.resize(N + 1);
  g.tau.resize(N);
  if (kind == GridKind::uniform) {
    const double dt = T / N;
    for (int k = 0; k <= N; ++k) g.t[k] = T * (static_cast<double>(k) / N);
    for (int j = 0; j < N; ++j) g.tau[j] = dt;  // identical bit patterns
  } else {
    for (int k = 0; k <= N; ++k) g.t[k] = T * std::pow(static_cast<double>(k) / N, g.varpi);
    for (int j = 0; j < N; ++j) g.tau[j] = g.t[j + 1] - g.t[j];
  }
  g.t[N] = T;
  g.build_coarse();
  return g;
}

}  // namespace fraclap
