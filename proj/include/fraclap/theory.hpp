#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "fraclap/assembly.hpp"
#include "fraclap/mesh.hpp"

namespace fraclap {

enum class Relaxation { F, FCF };

inline Relaxation parse_relaxation(const std::string& s) {
  if (s == "F") return Relaxation::F;
  if (s == "FCF") return Relaxation::FCF;
  throw std::invalid_argument("relaxation: expected \"F\" or \"FCF\", got \"" + s + "\"");
}

inline std::string to_string(Relaxation r) { return r == Relaxation::F ? "F" : "FCF"; }

/// Generalized eigenvalues of (Q, M), ascending.  Both inputs must be
/// symmetric and M positive definite; the pencil must be positive.
inline Vec spectrum(const Mat& Q, const Mat& M) {
  Eigen::GeneralizedSelfAdjointEigenSolver<Mat> es(Q, M);
  if (es.info() != Eigen::Success)
    throw std::runtime_error("generalized eigensolver failed; mass matrix must be SPD");
  Vec s = es.eigenvalues();
  if (!(s.minCoeff() > 0.0))
    throw std::runtime_error("trace operator pencil must be positive definite");
  return s;
}

inline Vec spectrum(const Mat& Q, const SpMat& M) { return spectrum(Q, Mat(M)); }

// ---------------------------------------------------------------------------
// per-mode step amplification factors

namespace modal {

/// Fine-step factor products over the coarse intervals: pi[s] for s = 1..Nc
/// (index 0 unused), pi[s] = prod_{j=(s-1)m+1}^{sm} (1 + tau_j sigma).
inline std::vector<double> interval_products(const TemporalGrid& g, double sigma) {
  std::vector<double> pi(g.Nc + 1, 1.0);
  for (int s = 1; s <= g.Nc; ++s) {
    double p = 1.0;
    for (int j = (s - 1) * g.m; j < s * g.m; ++j) p *= 1.0 + g.tau[j] * sigma;
    pi[s] = p;
  }
  return pi;
}

inline double lambda_fine(const TemporalGrid& g, int j, double sigma) {  // j = 1..N
  return 1.0 / (1.0 + g.tau[j - 1] * sigma);
}

inline double mu_coarse(const TemporalGrid& g, int s, double sigma) {  // s = 1..Nc
  return 1.0 / (1.0 + g.tauc[s - 1] * sigma);
}

/// Expansion of the fine-step product over coarse interval s about the
/// identity: prod_j (1 + tau_j sigma) = 1 + lin + gap with lin the first-order
/// sum and gap >= 0 collecting every higher-order term.  Both parts accumulate
/// positive contributions only, so the tiny gap of a short interval keeps full
/// relative accuracy where the direct difference of near-equal numbers loses
/// every digit.
struct IntervalExpansion {
  double lin = 0.0, gap = 0.0;
};

inline IntervalExpansion interval_expansion(const TemporalGrid& g, int s, double sigma) {
  IntervalExpansion e;
  for (int j = (s - 1) * g.m + 1; j <= s * g.m; ++j) {
    const double x = g.tau[j - 1] * sigma;
    e.gap = e.gap * (1.0 + x) + e.lin * x;
    e.lin += x;
  }
  return e;
}

}  // namespace modal

// ---------------------------------------------------------------------------
// specialised symmetric tridiagonal form of the normal equations

struct TridiagForm {
  Vec diag;  ///< dimension Nc - 1 (empty when Nc < 2)
  Vec off;
  bool exact_coarse = false;  ///< coarse step reproduces the fine product; mode propagates nothing
};

inline TridiagForm build_tridiag(const TemporalGrid& g, double sigma) {
  TridiagForm out;
  const int Nc = g.Nc;
  if (Nc < 2) return out;
  const auto pi = modal::interval_products(g, sigma);
  std::vector<double> one_tc(Nc + 1, 0.0), pit(Nc + 1, 0.0);
  for (int s = 2; s <= Nc; ++s) {
    one_tc[s] = 1.0 + g.tauc[s - 1] * sigma;
    // |one_tc - pi| without cancellation; every use below is even in the sign
    const double gap = modal::interval_expansion(g, s, sigma).gap;
    if (!(gap > 0.0) || !std::isfinite(gap)) {
      out.exact_coarse = true;
      return out;
    }
    pit[s] = 1.0 / gap;
  }
  auto zeta = [&](int e) {
    const double v = pi[e - 1] * pi[e] * one_tc[e] * pit[e];
    return v * v;
  };
  auto rho = [&](int s) {
    return pi[s - 1] * pi[s] * pi[s] * pi[s] * one_tc[s] * pit[s] * pit[s];
  };
  auto theta = [&](int s) {
    const double v = pi[s] * pi[s] * pit[s];
    return v * v;
  };
  out.diag.resize(Nc - 1);
  out.off.resize(std::max(0, Nc - 2));
  out.diag[0] = zeta(2);
  for (int r = 1; r <= Nc - 2; ++r) out.diag[r] = theta(r + 1) + zeta(r + 2);
  for (int r = 0; r <= Nc - 3; ++r) out.off[r] = -rho(r + 2);
  return out;
}

/// Smallest eigenvalue of a symmetric tridiagonal matrix by Sturm bisection.
inline double min_eig_sym_tridiag(const Vec& diag, const Vec& off) {
  const int n = static_cast<int>(diag.size());
  if (n == 0) throw std::invalid_argument("empty tridiagonal matrix");
  if (off.size() != n - 1) throw std::invalid_argument("off-diagonal must have size n-1");
  if (n == 1) return diag[0];

  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (int i = 0; i < n; ++i) {
    const double r = (i > 0 ? std::abs(off[i - 1]) : 0.0) + (i < n - 1 ? std::abs(off[i]) : 0.0);
    lo = std::min(lo, diag[i] - r);
    hi = std::max(hi, diag[i] + r);
  }
  auto count_below = [&](double x) {
    int cnt = 0;
    double q = diag[0] - x;
    if (q < 0.0) ++cnt;
    for (int i = 1; i < n; ++i) {
      const double denom = (q == 0.0) ? 1e-300 : q;
      q = diag[i] - x - off[i - 1] * off[i - 1] / denom;
      if (q < 0.0) ++cnt;
    }
    return cnt;
  };
  // Converge relative to the bracket itself, not the (possibly enormous)
  // initial enclosure; stop once the midpoint can no longer move.
  for (int it = 0; it < 4096; ++it) {
    const double scale = std::max({std::abs(lo), std::abs(hi), 1e-300});
    if (hi - lo <= 4e-16 * scale) break;
    const double mid = 0.5 * (lo + hi);
    if (mid <= lo || mid >= hi) break;
    if (count_below(mid) >= 1)
      hi = mid;
    else
      lo = mid;
  }
  return 0.5 * (lo + hi);
}

// ---------------------------------------------------------------------------
// dense per-mode oracles

/// Two-level error propagator of one mode as a dense (Nc+1)^2 matrix.
inline Mat dense_error_propagator(const TemporalGrid& g, double sigma, Relaxation relax) {
  const int Nc = g.Nc;
  if (Nc > 4096) throw std::runtime_error("dense propagator limited to Nc <= 4096");
  std::vector<double> b(Nc), mu(Nc), bm(Nc);
  {
    const auto pi = modal::interval_products(g, sigma);
    for (int s = 1; s <= Nc; ++s) {
      b[s - 1] = 1.0 / pi[s];
      mu[s - 1] = modal::mu_coarse(g, s, sigma);
      // b - mu = (one_tc - pi) / (pi one_tc), with the difference kept stable
      const double one_tc = 1.0 + g.tauc[s - 1] * sigma;
      bm[s - 1] = -modal::interval_expansion(g, s, sigma).gap / (pi[s] * one_tc);
    }
  }
  Mat TF = Mat::Zero(Nc + 1, Nc + 1);
  for (int eps = 1; eps <= Nc; ++eps) {
    double tail = 1.0;  // prod_{l=i+1}^{eps-1} mu_l, built from i = eps-1 down
    for (int i = eps - 1; i >= 0; --i) {
      TF(eps, i) = bm[eps - 1] * tail;
      if (i > 0) tail *= mu[i - 1];
    }
  }
  if (relax == Relaxation::F) return TF;
  Mat T = Mat::Zero(Nc + 1, Nc + 1);
  for (int eps = 1; eps <= Nc; ++eps)
    for (int i = 0; i <= eps - 2; ++i) T(eps, i) = TF(eps, i + 1) * b[i];
  return T;
}

/// Moore-Penrose pseudoinverse of the FCF propagator of one mode.
inline Mat dense_pseudoinverse(const TemporalGrid& g, double sigma) {
  const int Nc = g.Nc;
  std::vector<double> b(Nc), mu(Nc), bm(Nc);
  const auto pi = modal::interval_products(g, sigma);
  for (int s = 1; s <= Nc; ++s) {
    b[s - 1] = 1.0 / pi[s];
    mu[s - 1] = modal::mu_coarse(g, s, sigma);
    const double one_tc = 1.0 + g.tauc[s - 1] * sigma;
    bm[s - 1] = -modal::interval_expansion(g, s, sigma).gap / (pi[s] * one_tc);
  }
  Mat P = Mat::Zero(Nc + 1, Nc + 1);
  for (int l = 2; l <= Nc; ++l) P(l - 2, l) = 1.0 / (b[l - 2] * bm[l - 1]);
  for (int s = 2; s <= Nc - 1; ++s) P(s - 1, s) = -mu[s - 1] / (b[s - 1] * bm[s - 1]);
  return P;
}

/// Spectral norm of one mode's dense propagator.
inline double dense_mode_norm(const TemporalGrid& g, double sigma, Relaxation relax) {
  Mat T = dense_error_propagator(g, sigma, relax);
  Eigen::SelfAdjointEigenSolver<Mat> es(T.transpose() * T, Eigen::EigenvaluesOnly);
  return std::sqrt(std::max(0.0, es.eigenvalues().maxCoeff()));
}

/// Spectral norm of the dense propagator, maximised over the modes.
inline double dense_oracle_norm(const TemporalGrid& g, const Vec& sigmas, Relaxation relax) {
  double worst = 0.0;
  for (int w = 0; w < sigmas.size(); ++w)
    worst = std::max(worst, dense_mode_norm(g, sigmas[w], relax));
  return worst;
}

/// Sharp two-level norm of the FCF error propagator: the reciprocal square
/// root of the smallest eigenvalue of the tridiagonal form, maximised over
/// the modes.  Modes whose coarse step is exact contribute nothing.
inline double exact_bound(const TemporalGrid& g, const Vec& sigmas) {
  if (g.Nc < 2) return 0.0;
  double worst = 0.0;
  for (int w = 0; w < sigmas.size(); ++w) {
    auto tf = build_tridiag(g, sigmas[w]);
    if (tf.exact_coarse) continue;
    // The diagonal carries the squared reciprocal interval gaps.  Once its
    // span outgrows what the Sturm recurrence can resolve in double
    // precision, the smallest eigenvalue is no longer determined by the
    // tridiagonal entries; the propagator norm stays entrywise moderate,
    // so evaluate that mode densely instead.
    const double dmax = tf.diag.maxCoeff(), dmin = tf.diag.minCoeff();
    const double nrm = dmax > 1e8 * dmin
                           ? dense_mode_norm(g, sigmas[w], Relaxation::FCF)
                           : 1.0 / std::sqrt(min_eig_sym_tridiag(tf.diag, tf.off));
    worst = std::max(worst, nrm);
  }
  return worst;
}

// ---------------------------------------------------------------------------
// a-priori bound via equality-attaining row deltas and a Gershgorin sweep

/// Per-interval deltas (index s = 2..Nc at position s-2), or nullopt when a
/// denominator is nonpositive and the bound does not apply to this mode.
inline std::optional<Vec> teap_deltas(const TemporalGrid& g, double sigma) {
  const int Nc = g.Nc;
  Vec dl(std::max(0, Nc - 1));
  const auto pi = modal::interval_products(g, sigma);
  for (int s = 2; s <= Nc; ++s) {
    const double one_tc = 1.0 + g.tauc[s - 1] * sigma;
    const auto cur = modal::interval_expansion(g, s, sigma);
    const double diff = cur.gap / (pi[s] * one_tc);  // |1/pi - mu|, kept stable
    const double num = diff * diff;
    if (num == 0.0) {
      dl[s - 2] = 0.0;
      continue;
    }
    // pi[s-1]^2 - mu pi[s] pi[s-1], with the inner difference expanded so the
    // two near-equal products never meet: pi[s-1] - mu pi[s]
    //   = (one_tc (pi[s-1] - 1) - (pi[s] - one_tc)) / one_tc.
    const auto prev = modal::interval_expansion(g, s - 1, sigma);
    const double den = pi[s - 1] * (one_tc * (prev.lin + prev.gap) - cur.gap) / one_tc;
    if (!(den > 0.0)) return std::nullopt;
    dl[s - 2] = num / den;
  }
  return dl;
}

struct TeapResult {
  bool applicable = false;
  double bound = std::numeric_limits<double>::quiet_NaN();
  bool suff_delta2 = false;   ///< delta_2 < 1 for every mode
  bool suff_fraction = false; ///< every Gershgorin fraction < 1
};

inline TeapResult teap_bound(const TemporalGrid& g, const Vec& sigmas) {
  TeapResult out;
  out.applicable = true;
  out.suff_delta2 = true;
  out.suff_fraction = true;
  const int Nc = g.Nc;
  if (Nc < 2) {
    out.bound = 0.0;
    return out;
  }
  double worst = 0.0;
  for (int w = 0; w < sigmas.size(); ++w) {
    const double sigma = sigmas[w];
    auto dopt = teap_deltas(g, sigma);
    if (!dopt) {
      out.applicable = false;
      out.suff_delta2 = out.suff_fraction = false;
      out.bound = std::numeric_limits<double>::quiet_NaN();
      return out;
    }
    const Vec& dl = *dopt;
    const auto pi = modal::interval_products(g, sigma);
    auto delta = [&](int s) { return dl[s - 2]; };
    worst = std::max(worst, delta(2));
    if (!(delta(2) < 1.0)) out.suff_delta2 = false;
    for (int s = 2; s <= Nc - 1; ++s) {
      const double one_tc = 1.0 + g.tauc[s - 1] * sigma;
      const double num = delta(s + 1) * delta(s) * one_tc * pi[s - 1];
      if (num == 0.0) continue;
      const double den = delta(s) * one_tc * pi[s - 1] - delta(s + 1) * pi[s];
      if (!(den > 0.0)) {
        out.applicable = false;
        out.suff_delta2 = out.suff_fraction = false;
        out.bound = std::numeric_limits<double>::quiet_NaN();
        return out;
      }
      const double frac = num / den;
      if (!(frac < 1.0)) out.suff_fraction = false;
      worst = std::max(worst, frac);
    }
  }
  out.bound = std::sqrt(worst);
  return out;
}

// ---------------------------------------------------------------------------
// norm of the residual-to-error map across one coarse interval

struct QNorm {
  double exact = 1.0;      ///< max over modes and intervals
  double cap = 1.0;        ///< sqrt(m)
};

inline QNorm q_norm(const TemporalGrid& g, const Vec& sigmas) {
  QNorm out;
  out.cap = std::sqrt(static_cast<double>(g.m));
  double worst = 0.0;
  for (int w = 0; w < sigmas.size(); ++w) {
    for (int k = 1; k <= g.Nc; ++k) {
      double s = 1.0, p = 1.0;
      for (int i = 1; i <= g.m - 1; ++i) {
        const double lam = modal::lambda_fine(g, k * g.m - i + 1, sigmas[w]);
        p *= lam * lam;
        s += p;
      }
      worst = std::max(worst, s);
    }
  }
  out.exact = std::sqrt(worst);
  return out;
}

// ---------------------------------------------------------------------------
// uniform-grid eigenvalue bracket

struct DOmegaBracket {
  double lower = 0.0, upper = 0.0, lambda_min = 0.0;
};

/// Smallest eigenvalue of the uniform-grid comparison tridiagonal
/// D = tridiag(-mu, 1 + mu^2, -mu) with first diagonal entry 1 (dimension
/// Nc - 1), together with its closed-form enclosure.
inline DOmegaBracket d_omega_bracket(double mu, int Nc) {
  if (!(mu > 0.0 && mu < 1.0)) throw std::invalid_argument("mu must lie in (0, 1)");
  if (Nc < 3) throw std::invalid_argument("bracket requires Nc >= 3");
  const int n = Nc - 1;
  Vec diag = Vec::Constant(n, 1.0 + mu * mu);
  diag[0] = 1.0;
  Vec off = Vec::Constant(n - 1, -mu);
  DOmegaBracket out;
  out.lambda_min = min_eig_sym_tridiag(diag, off);
  const double base = (1.0 - mu) * (1.0 - mu);
  const double shift = M_PI * M_PI * mu / (static_cast<double>(Nc - 1) * (Nc - 1));
  out.lower = base + shift / 6.0;
  out.upper = base + shift;
  return out;
}

}  // namespace fraclap
