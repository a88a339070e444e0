#ifndef DVCM_KERNELS_HPP
#define DVCM_KERNELS_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "dvcm/index_point.hpp"
#include "dvcm/linalg.hpp"
#include "dvcm/rng.hpp"

namespace dvcm {

enum class KernelFamily { Exponential, Gneiting };

inline std::size_t arity(KernelFamily f) { return f == KernelFamily::Exponential ? 1 : 3; }

inline std::string to_string(KernelFamily f) {
  return f == KernelFamily::Exponential ? "exponential" : "gneiting";
}

inline KernelFamily parse_kernel_family(const std::string& s) {
  if (s == "exponential" || s == "exp") return KernelFamily::Exponential;
  if (s == "gneiting") return KernelFamily::Gneiting;
  throw std::invalid_argument("unknown kernel family '" + s + "'");
}

/// Correlation-function parameters. Exponential: (phi). Gneiting: (phi, psi, kappa).
struct KernelParams {
  KernelFamily family = KernelFamily::Exponential;
  std::vector<double> values{1.0};

  static KernelParams exponential(double phi) {
    KernelParams k{KernelFamily::Exponential, {phi}};
    k.validate();
    return k;
  }
  static KernelParams gneiting(double phi, double psi, double kappa) {
    KernelParams k{KernelFamily::Gneiting, {phi, psi, kappa}};
    k.validate();
    return k;
  }

  double phi() const { return values[0]; }
  double psi() const { return values.at(1); }
  double kappa() const { return values.at(2); }

  void validate() const {
    if (values.size() != arity(family))
      throw std::invalid_argument("kernel parameter count does not match family arity");
    if (!(values[0] > 0.0)) throw std::invalid_argument("kernel phi must be positive");
    if (family == KernelFamily::Gneiting) {
      if (!(values[1] > 0.0)) throw std::invalid_argument("Gneiting psi must be positive");
      if (!(values[2] >= 0.0 && values[2] <= 1.0))
        throw std::invalid_argument("Gneiting kappa must lie in [0,1]");
    }
  }

  bool operator==(const KernelParams&) const = default;
};

/// Component-wise bounds of the uniform prior on a kernel's parameters.
struct PriorRange {
  std::vector<double> lower;
  std::vector<double> upper;

  void validate(KernelFamily family) const {
    if (lower.size() != arity(family) || upper.size() != arity(family))
      throw std::invalid_argument("prior range size does not match kernel arity");
    for (std::size_t i = 0; i < lower.size(); ++i) {
      if (!(lower[i] > 0.0 && lower[i] < upper[i]))
        throw std::invalid_argument("prior range requires 0 < lower < upper");
    }
    if (family == KernelFamily::Gneiting && upper[2] > 1.0)
      throw std::invalid_argument("Gneiting kappa prior upper bound must be <= 1");
  }

  bool contains_strictly(const KernelParams& k) const {
    for (std::size_t i = 0; i < k.values.size(); ++i)
      if (!(k.values[i] > lower[i] && k.values[i] < upper[i])) return false;
    return true;
  }

  KernelParams midpoint(KernelFamily family) const {
    KernelParams k{family, {}};
    for (std::size_t i = 0; i < lower.size(); ++i) k.values.push_back(0.5 * (lower[i] + upper[i]));
    return k;
  }
};

// ---------------------------------------------------------------------------
// Scalar evaluation

inline double eval_exponential(const IndexPoint& u, const IndexPoint& u2, double phi) {
  if (!(phi > 0.0)) throw std::invalid_argument("eval_exponential: phi must be positive");
  if (u.dim() != u2.dim()) throw std::invalid_argument("eval_exponential: dimension mismatch");
  double d2 = 0.0;
  for (std::size_t i = 0; i < u.dim(); ++i) d2 += (u[i] - u2[i]) * (u[i] - u2[i]);
  return std::exp(-phi * std::sqrt(d2));
}

namespace detail {

inline double gneiting_from_lags(double space, double time_sq, double phi, double psi,
                                 double kappa) {
  const double g = psi * time_sq + 1.0;
  return std::pow(g, -kappa) * std::exp(-phi * space / std::pow(g, 0.5 * kappa));
}

}  // namespace detail

/// Space-time correlation for u = (h1, h2, t).
inline double eval_gneiting(const IndexPoint& u, const IndexPoint& u2, const KernelParams& params) {
  if (params.family != KernelFamily::Gneiting)
    throw std::invalid_argument("eval_gneiting: parameters are not Gneiting");
  params.validate();
  if (u.dim() != 3 || u2.dim() != 3)
    throw std::invalid_argument("eval_gneiting: index points must be (h1, h2, t)");
  const double dh = std::hypot(u[0] - u2[0], u[1] - u2[1]);
  const double dt = u[2] - u2[2];
  return detail::gneiting_from_lags(dh, dt * dt, params.phi(), params.psi(), params.kappa());
}

inline double eval_kernel(const IndexPoint& u, const IndexPoint& u2, const KernelParams& k) {
  return k.family == KernelFamily::Exponential ? eval_exponential(u, u2, k.phi())
                                               : eval_gneiting(u, u2, k);
}

// ---------------------------------------------------------------------------
// Lag matrices. Distances depend only on the points, so chains compute them
// once and re-evaluate kernels for every new parameter value.

struct Lags {
  KernelFamily family = KernelFamily::Exponential;
  Matrix space;    // Euclidean distance (all coordinates for exponential, h-part for Gneiting)
  Matrix time_sq;  // squared time lag, Gneiting only
};

inline Lags compute_lags(const Matrix& a, const Matrix& b, KernelFamily family) {
  if (a.cols() != b.cols()) throw std::invalid_argument("lags: dimension mismatch");
  Lags out;
  out.family = family;
  out.space.resize(a.rows(), b.rows());
  if (family == KernelFamily::Exponential) {
    for (Eigen::Index j = 0; j < b.rows(); ++j)
      for (Eigen::Index i = 0; i < a.rows(); ++i)
        out.space(i, j) = (a.row(i) - b.row(j)).norm();
  } else {
    if (a.cols() != 3) throw std::invalid_argument("Gneiting kernel requires d = 3 (h1, h2, t)");
    out.time_sq.resize(a.rows(), b.rows());
    for (Eigen::Index j = 0; j < b.rows(); ++j)
      for (Eigen::Index i = 0; i < a.rows(); ++i) {
        out.space(i, j) = std::hypot(a(i, 0) - b(j, 0), a(i, 1) - b(j, 1));
        const double dt = a(i, 2) - b(j, 2);
        out.time_sq(i, j) = dt * dt;
      }
  }
  return out;
}

inline Matrix kernel_from_lags(const Lags& lags, const KernelParams& k) {
  if (k.family != lags.family) throw std::invalid_argument("kernel family does not match lags");
  if (k.family == KernelFamily::Exponential)
    return (-k.phi() * lags.space.array()).exp().matrix();
  const Eigen::ArrayXXd g = k.psi() * lags.time_sq.array() + 1.0;
  return (g.pow(-k.kappa()) * (-k.phi() * lags.space.array() / g.pow(0.5 * k.kappa())).exp())
      .matrix();
}

// ---------------------------------------------------------------------------
// Dense correlation matrices

/// Correlation matrix with its (possibly jittered) Cholesky factor.
/// `entries` is the un-jittered matrix; the factor is of entries + jitter * I.
struct CorrMatrix {
  Matrix entries;
  double jitter = 0.0;
  JitteredCholesky factor;

  Eigen::Index dim() const { return entries.rows(); }
  Matrix jittered() const {
    Matrix m = entries;
    m.diagonal().array() += jitter;
    return m;
  }
};

inline CorrMatrix make_corr_matrix(Matrix entries, const JitterPolicy& policy = {}) {
  CorrMatrix c;
  c.factor = factor_with_jitter(entries, policy);
  c.jitter = c.factor.jitter;
  c.entries = std::move(entries);
  return c;
}

inline CorrMatrix build_corr_matrix(const std::vector<IndexPoint>& points, const KernelParams& kernel,
                                    const JitterPolicy& policy = {}) {
  if (points.empty()) throw std::invalid_argument("build_corr_matrix: no points");
  kernel.validate();
  const Matrix pm = to_matrix(points);
  return make_corr_matrix(kernel_from_lags(compute_lags(pm, pm, kernel.family), kernel), policy);
}

inline Matrix build_cross_corr(const std::vector<IndexPoint>& train,
                               const std::vector<IndexPoint>& test, const KernelParams& kernel) {
  if (train.empty() || test.empty()) throw std::invalid_argument("build_cross_corr: empty point list");
  kernel.validate();
  return kernel_from_lags(compute_lags(to_matrix(train), to_matrix(test), kernel.family), kernel);
}

// ---------------------------------------------------------------------------
// Logit transform between the prior box and R^k

inline std::vector<double> to_unconstrained(const KernelParams& theta, const PriorRange& range) {
  if (theta.values.size() != range.lower.size())
    throw std::invalid_argument("to_unconstrained: size mismatch");
  std::vector<double> z(theta.values.size());
  for (std::size_t i = 0; i < z.size(); ++i) {
    const double t = theta.values[i], lo = range.lower[i], hi = range.upper[i];
    if (!(t > lo && t < hi))
      throw std::invalid_argument("to_unconstrained: parameter on or outside its prior range");
    z[i] = std::log((t - lo) / (hi - t));
  }
  return z;
}

inline KernelParams from_unconstrained(const std::vector<double>& z, const PriorRange& range,
                                       KernelFamily family) {
  if (z.size() != range.lower.size() || z.size() != arity(family))
    throw std::invalid_argument("from_unconstrained: size mismatch");
  KernelParams k{family, std::vector<double>(z.size())};
  for (std::size_t i = 0; i < z.size(); ++i) {
    if (!std::isfinite(z[i])) throw std::invalid_argument("from_unconstrained: non-finite input");
    const double lo = range.lower[i], hi = range.upper[i];
    double t = lo + (hi - lo) / (1.0 + std::exp(-z[i]));
    // the logistic saturates in floating point; keep the value strictly interior
    if (t >= hi) t = std::nextafter(hi, lo);
    if (t <= lo) t = std::nextafter(lo, hi);
    k.values[i] = t;
  }
  return k;
}

/// log |d theta / d z| for the logit transform, summed over components.
inline double log_jacobian(const std::vector<double>& z, const PriorRange& range) {
  double s = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    const double a = std::abs(z[i]);
    s += std::log(range.upper[i] - range.lower[i]) - a - 2.0 * std::log1p(std::exp(-a));
  }
  return s;
}

// ---------------------------------------------------------------------------
// FITC low-rank approximation

enum class InducingSelection { RandomSubsample, Grid };

/// K ~= cross * Kzz^{-1} * cross^T + diag(diag_correction).
/// `v` caches L^{-1} cross^T (r x n) where Kzz + jitter = L L^T. Solves and
/// determinants act on the approximation plus `nugget * I`.
struct FitcFactor {
  std::vector<IndexPoint> inducing_points;
  Matrix cross;
  CorrMatrix inducing_corr;
  Vector diag_correction;
  double nugget = 1e-8;

  Matrix v;
  Vector diag_eff;
  JitteredCholesky capacitance;  // I + V D^{-1} V^T

  Eigen::Index size() const { return cross.rows(); }
  Eigen::Index rank() const { return cross.cols(); }

  Matrix reconstruct() const {
    Matrix k = v.transpose() * v;
    k.diagonal() += diag_correction;
    return k;
  }

  double log_det() const { return diag_eff.array().log().sum() + capacitance.log_det(); }

  Vector solve(const Vector& b) const {
    const Vector db = b.cwiseQuotient(diag_eff);
    const Vector w = capacitance.solve(v * db);
    return db - (v.transpose() * w).cwiseQuotient(diag_eff);
  }

  double quad_form(const Vector& x) const {
    const Vector dx = x.cwiseQuotient(diag_eff);
    const Vector w = v * dx;
    return x.dot(dx) - w.dot(capacitance.solve(w));
  }

  Vector multiply(const Vector& x) const {
    return v.transpose() * (v * x) + diag_eff.cwiseProduct(x);
  }

  Vector sample(Rng& rng) const {
    const Vector z1 = standard_normal(rank(), rng);
    const Vector z2 = standard_normal(size(), rng);
    return v.transpose() * z1 + diag_eff.cwiseSqrt().cwiseProduct(z2);
  }
};

/// Assembles a FitcFactor from kernel blocks: `cross` is n x r, `kzz` is r x r.
inline FitcFactor make_fitc(Matrix cross, Matrix kzz, const JitterPolicy& policy = {},
                            double nugget = 1e-8) {
  FitcFactor f;
  f.nugget = nugget;
  f.inducing_corr = make_corr_matrix(std::move(kzz), policy);
  f.v = f.inducing_corr.factor.llt.matrixL().solve(cross.transpose());
  f.diag_correction = (1.0 - f.v.colwise().squaredNorm().transpose().array()).cwiseMax(0.0).matrix();
  f.diag_eff = f.diag_correction.array() + nugget;
  Matrix cap = f.v * f.diag_eff.cwiseInverse().asDiagonal() * f.v.transpose();
  cap.diagonal().array() += 1.0;
  f.capacitance = factor_with_jitter(cap, policy);
  f.cross = std::move(cross);
  return f;
}

inline std::vector<std::size_t> select_inducing(std::size_t n, std::size_t r, std::uint64_t seed) {
  if (r < 1 || r > n) throw std::invalid_argument("FITC rank must satisfy 1 <= r <= n");
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  Rng rng(derive_seed(seed, 0xF17C));
  // partial Fisher-Yates
  for (std::size_t i = 0; i < r; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, n - 1);
    std::swap(idx[i], idx[pick(rng)]);
  }
  idx.resize(r);
  std::sort(idx.begin(), idx.end());
  return idx;
}

/// r points on a regular grid covering [0,1]^d (cell centres, row-major, truncated to r).
inline std::vector<IndexPoint> grid_points(std::size_t r, std::size_t d) {
  std::size_t g = 1;
  while (static_cast<std::size_t>(std::pow(static_cast<double>(g), static_cast<double>(d))) < r) ++g;
  std::vector<IndexPoint> out;
  std::vector<std::size_t> counter(d, 0);
  while (out.size() < r) {
    std::vector<double> c(d);
    for (std::size_t k = 0; k < d; ++k) c[k] = (static_cast<double>(counter[k]) + 0.5) / static_cast<double>(g);
    out.emplace_back(std::move(c));
    for (std::size_t k = 0; k < d; ++k) {
      if (++counter[k] < g) break;
      counter[k] = 0;
    }
  }
  return out;
}

inline FitcFactor fitc_approx(const std::vector<IndexPoint>& points, const KernelParams& kernel,
                              std::size_t r, std::uint64_t selection_seed,
                              InducingSelection selection = InducingSelection::RandomSubsample,
                              const JitterPolicy& policy = {}) {
  if (points.empty()) throw std::invalid_argument("fitc_approx: no points");
  kernel.validate();
  std::vector<IndexPoint> inducing;
  if (selection == InducingSelection::RandomSubsample) {
    for (std::size_t i : select_inducing(points.size(), r, selection_seed)) inducing.push_back(points[i]);
  } else {
    if (r < 1) throw std::invalid_argument("FITC rank must be positive");
    inducing = grid_points(r, points.front().dim());
  }
  const Matrix pm = to_matrix(points), zm = to_matrix(inducing);
  FitcFactor f = make_fitc(kernel_from_lags(compute_lags(pm, zm, kernel.family), kernel),
                           kernel_from_lags(compute_lags(zm, zm, kernel.family), kernel), policy);
  f.inducing_points = std::move(inducing);
  return f;
}

}  // namespace dvcm

#endif  // DVCM_KERNELS_HPP
