#ifndef DVCM_DIAGNOSTICS_HPP
#define DVCM_DIAGNOSTICS_HPP

#include <algorithm>
#include <cmath>
#include <iostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "dvcm/combiner.hpp"
#include "dvcm/linalg.hpp"

namespace dvcm {

struct MetricReport {
  double mse = 0.0;
  double mspe = 0.0;
  double coverage = 0.0;        // beta, 95% equal-tailed
  double mean_ci_length = 0.0;  // beta
  double y_coverage = 0.0;
  double mean_pi_length = 0.0;
  double tau2_lower = 0.0;
  double tau2_upper = 0.0;
  double tau2_mean = 0.0;
  double comp_efficiency = 0.0;
  double ess_total = 0.0;
  double wall_hours = 0.0;
};

namespace detail {

inline void check_same_shape(const Matrix& a, const Matrix& b, const char* what) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw std::invalid_argument(std::string(what) + ": shape mismatch");
}

}  // namespace detail

/// Rows are test points, columns are coefficients.
inline double mse(const Matrix& beta_hat, const Matrix& beta_true) {
  detail::check_same_shape(beta_hat, beta_true, "mse");
  if (beta_hat.rows() == 0) throw std::invalid_argument("mse: no test points");
  return (beta_hat - beta_true).squaredNorm() / static_cast<double>(beta_hat.rows());
}

inline double mspe(const Matrix& y_hat, const Matrix& y_true) {
  detail::check_same_shape(y_hat, y_true, "mspe");
  if (y_hat.rows() == 0) throw std::invalid_argument("mspe: no test points");
  return (y_hat - y_true).squaredNorm() / static_cast<double>(y_hat.rows());
}

/// Flat-vector variant: `n_points` test points whose quantities are laid out
/// contiguously (ragged responses are fine).
inline double mse(const Vector& est, const Vector& truth, Eigen::Index n_points) {
  if (est.size() != truth.size()) throw std::invalid_argument("mse: shape mismatch");
  if (n_points < 1) throw std::invalid_argument("mse: no test points");
  return (est - truth).squaredNorm() / static_cast<double>(n_points);
}

/// Per-quantity point estimate and equal-tailed interval.
struct IntervalSummary {
  Vector estimate;
  Vector lower;
  Vector upper;
};

inline IntervalSummary summarize_draws(const Matrix& draws, double level = 0.95) {
  if (draws.rows() < 2) throw std::invalid_argument("summarize_draws: need at least two draws");
  if (!(level > 0.0 && level < 1.0)) throw std::invalid_argument("summarize_draws: level must be in (0,1)");
  const double a = 0.5 * (1.0 - level);
  IntervalSummary s{draws.colwise().mean().transpose(), Vector(draws.cols()), Vector(draws.cols())};
  std::vector<double> col(static_cast<std::size_t>(draws.rows()));
  for (Eigen::Index c = 0; c < draws.cols(); ++c) {
    for (Eigen::Index r = 0; r < draws.rows(); ++r) col[static_cast<std::size_t>(r)] = draws(r, c);
    std::sort(col.begin(), col.end());
    s.lower[c] = quantile_sorted(col, a);
    s.upper[c] = quantile_sorted(col, 1.0 - a);
  }
  return s;
}

inline IntervalSummary summarize_quantiles(const QuantileSummary& q, double level = 0.95) {
  const double a = 0.5 * (1.0 - level);
  const auto lo = static_cast<Eigen::Index>(q.grid_index(a));
  const auto hi = static_cast<Eigen::Index>(q.grid_index(1.0 - a));
  return {q.mean, q.quantiles.row(lo).transpose(), q.quantiles.row(hi).transpose()};
}

struct CoverageResult {
  double coverage = 0.0;
  double mean_length = 0.0;
};

inline CoverageResult coverage_of(const IntervalSummary& s, const Vector& truth) {
  if (truth.size() != s.lower.size()) throw std::invalid_argument("coverage: shape mismatch");
  if (truth.size() == 0) throw std::invalid_argument("coverage: no quantities");
  double hits = 0.0;
  for (Eigen::Index i = 0; i < truth.size(); ++i)
    if (truth[i] >= s.lower[i] && truth[i] <= s.upper[i]) hits += 1.0;
  const auto n = static_cast<double>(truth.size());
  return {hits / n, (s.upper - s.lower).sum() / n};
}

/// Columns are scalar quantities.
inline CoverageResult coverage_and_length(const Matrix& draws, const Vector& truth, double level = 0.95) {
  if (draws.rows() == 0) throw std::invalid_argument("coverage_and_length: empty draws");
  return coverage_of(summarize_draws(draws, level), truth);
}

/// Geyer initial-positive-sequence estimate, clipped to (0, T]. A constant
/// chain has no defined autocorrelation and gives 0.
inline double effective_sample_size(const Vector& chain, bool warn = true) {
  const Eigen::Index t = chain.size();
  if (t < 10) throw std::invalid_argument("effective_sample_size: need at least 10 draws");
  const Vector c = chain.array() - chain.mean();
  const double n = static_cast<double>(t);
  auto autocov = [&](Eigen::Index lag) { return c.head(t - lag).dot(c.tail(t - lag)) / n; };
  const double g0 = autocov(0);
  if (!(g0 > 0.0) || g0 < 1e-300) {
    if (warn) std::cerr << "warning: constant chain, effective sample size set to 0\n";
    return 0.0;
  }
  double sum_pairs = 0.0;
  for (Eigen::Index k = 0; 2 * k + 1 < t; ++k) {
    const double pair = autocov(2 * k) + autocov(2 * k + 1);
    if (pair <= 0.0) break;
    sum_pairs += pair;
  }
  const double tau = std::max(-1.0 + 2.0 * sum_pairs / g0, 1e-12);
  return std::min(n / tau, n);
}

/// Sum of per-column effective sample sizes, where rows are partitioned into
/// independent chains of the given lengths (each chain's ESS adds up).
inline double total_effective_sample_size(const Matrix& draws, const std::vector<Eigen::Index>& chain_lengths) {
  Eigen::Index total = 0;
  for (auto l : chain_lengths) total += l;
  if (total != draws.rows()) throw std::invalid_argument("total_effective_sample_size: chain lengths do not cover draws");
  double ess = 0.0;
  for (Eigen::Index c = 0; c < draws.cols(); ++c) {
    Eigen::Index row = 0;
    for (auto l : chain_lengths) {
      ess += effective_sample_size(draws.col(c).segment(row, l), false);
      row += l;
    }
  }
  return ess;
}

/// log2(ESS) per hour of wall time.
inline double computational_efficiency(double ess_total, double wall_hours) {
  if (!(wall_hours > 0.0)) throw std::invalid_argument("computational_efficiency: wall time must be positive");
  if (!(ess_total > 0.0)) throw std::invalid_argument("computational_efficiency: ESS must be positive");
  return std::log2(ess_total) / wall_hours;
}

}  // namespace dvcm

#endif  // DVCM_DIAGNOSTICS_HPP
