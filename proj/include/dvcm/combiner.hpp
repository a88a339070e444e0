#ifndef DVCM_COMBINER_HPP
#define DVCM_COMBINER_HPP

#include <algorithm>
#include <cmath>
#include <iostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "dvcm/linalg.hpp"

namespace dvcm {

enum class CombineMethod { AMC, DPMC, WASP, PIE, CMC };

inline std::string to_string(CombineMethod m) {
  switch (m) {
    case CombineMethod::AMC: return "amc";
    case CombineMethod::DPMC: return "dpmc";
    case CombineMethod::WASP: return "wasp";
    case CombineMethod::PIE: return "pie";
    case CombineMethod::CMC: return "cmc";
  }
  return "?";
}

inline CombineMethod parse_combine_method(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
  if (s == "amc") return CombineMethod::AMC;
  if (s == "dpmc") return CombineMethod::DPMC;
  if (s == "wasp") return CombineMethod::WASP;
  if (s == "pie") return CombineMethod::PIE;
  if (s == "cmc") return CombineMethod::CMC;
  throw std::invalid_argument("unknown combination method '" + s + "'");
}

struct SubsetMoments {
  Vector mean;
  Matrix covariance;
  Eigen::Index draw_count = 0;
};

/// Empirical mean and covariance with divisor T.
inline SubsetMoments subset_moments(const Matrix& draws) {
  if (draws.rows() < 2) throw std::invalid_argument("subset_moments: need at least two draws");
  SubsetMoments m;
  m.draw_count = draws.rows();
  m.mean = draws.colwise().mean().transpose();
  const Matrix centered = draws.rowwise() - m.mean.transpose();
  m.covariance = symmetrize(centered.transpose() * centered / static_cast<double>(draws.rows()));
  return m;
}

inline std::vector<SubsetMoments> subset_moments(const std::vector<Matrix>& draws) {
  std::vector<SubsetMoments> out;
  out.reserve(draws.size());
  for (const auto& d : draws) out.push_back(subset_moments(d));
  return out;
}

struct CombinedDraws {
  CombineMethod method = CombineMethod::AMC;
  Matrix draws;
  Vector combined_mean;
  Matrix combined_cov;
};

/// Coordinate groups combined independently of each other.
using CoordinateBlocks = std::vector<std::vector<Eigen::Index>>;

inline CoordinateBlocks joint_block(Eigen::Index dim) {
  CoordinateBlocks b(1);
  for (Eigen::Index i = 0; i < dim; ++i) b[0].push_back(i);
  return b;
}

namespace detail {

inline void check_inputs(const std::vector<Matrix>& draws) {
  if (draws.empty()) throw std::invalid_argument("combine: no subsets");
  for (const auto& d : draws)
    if (d.cols() != draws.front().cols()) throw std::invalid_argument("combine: subsets differ in dimension");
}

inline Matrix take_columns(const Matrix& m, const std::vector<Eigen::Index>& cols) {
  Matrix out(m.rows(), static_cast<Eigen::Index>(cols.size()));
  for (std::size_t c = 0; c < cols.size(); ++c) out.col(static_cast<Eigen::Index>(c)) = m.col(cols[c]);
  return out;
}

inline Eigen::Index total_rows(const std::vector<Matrix>& draws) {
  Eigen::Index n = 0;
  for (const auto& d : draws) n += d.rows();
  return n;
}

struct BlockResult {
  Matrix draws;
  Vector mean;
  Matrix cov;
};

/// Applies `fn` to each block and scatters the results back.
template <typename Fn>
CombinedDraws blockwise(CombineMethod method, const std::vector<Matrix>& draws,
                        const CoordinateBlocks& blocks, Eigen::Index out_rows, Fn&& fn) {
  check_inputs(draws);
  const Eigen::Index dim = draws.front().cols();
  CombinedDraws out;
  out.method = method;
  out.draws = Matrix::Zero(out_rows, dim);
  out.combined_mean = Vector::Zero(dim);
  out.combined_cov = Matrix::Zero(dim, dim);
  for (const auto& blk : blocks) {
    std::vector<Matrix> sub;
    sub.reserve(draws.size());
    for (const auto& d : draws) sub.push_back(take_columns(d, blk));
    const BlockResult r = fn(sub);
    for (std::size_t c = 0; c < blk.size(); ++c) {
      const auto ci = static_cast<Eigen::Index>(c);
      out.draws.col(blk[c]) = r.draws.col(ci);
      out.combined_mean[blk[c]] = r.mean[ci];
      for (std::size_t c2 = 0; c2 < blk.size(); ++c2) out.combined_cov(blk[c], blk[c2]) = r.cov(ci, static_cast<Eigen::Index>(c2));
    }
  }
  return out;
}

/// Maps every subset's draws by xi -> mu + S^{1/2} Sigma_j^{-1/2} (xi - mu_j).
inline Matrix recenter_rescale(const std::vector<Matrix>& draws, const std::vector<SubsetMoments>& mom,
                               const Vector& mu, const Matrix* target_cov) {
  Matrix out(total_rows(draws), draws.front().cols());
  Matrix s_half;
  if (target_cov) s_half = symmetric_sqrt(*target_cov);
  Eigen::Index row = 0;
  for (std::size_t j = 0; j < draws.size(); ++j) {
    Matrix centered = draws[j].rowwise() - mom[j].mean.transpose();
    if (target_cov) {
      const Matrix a = s_half * symmetric_roots(mom[j].covariance).inv_sqrt;
      centered = centered * a.transpose();
    }
    out.middleRows(row, draws[j].rows()) = centered.rowwise() + mu.transpose();
    row += draws[j].rows();
  }
  return out;
}

inline Vector mean_of_means(const std::vector<SubsetMoments>& mom) {
  Vector mu = Vector::Zero(mom.front().mean.size());
  for (const auto& m : mom) mu += m.mean;
  return mu / static_cast<double>(mom.size());
}

inline Matrix mean_of_covs(const std::vector<SubsetMoments>& mom) {
  Matrix s = Matrix::Zero(mom.front().covariance.rows(), mom.front().covariance.cols());
  for (const auto& m : mom) s += m.covariance;
  return s / static_cast<double>(mom.size());
}

}  // namespace detail

/// Arithmetic-mean covariance combination.
inline CombinedDraws amc_combine(const std::vector<Matrix>& draws, const CoordinateBlocks& blocks) {
  return detail::blockwise(CombineMethod::AMC, draws, blocks, detail::total_rows(draws),
                           [](const std::vector<Matrix>& sub) {
                             const auto mom = subset_moments(sub);
                             detail::BlockResult r;
                             r.mean = detail::mean_of_means(mom);
                             r.cov = detail::mean_of_covs(mom);
                             r.draws = detail::recenter_rescale(sub, mom, r.mean, &r.cov);
                             return r;
                           });
}

inline CombinedDraws amc_combine(const std::vector<Matrix>& draws) {
  detail::check_inputs(draws);
  return amc_combine(draws, joint_block(draws.front().cols()));
}

/// Recentering only: xi -> mu + (xi - mu_j).
inline CombinedDraws dpmc_combine(const std::vector<Matrix>& draws, const CoordinateBlocks& blocks) {
  return detail::blockwise(CombineMethod::DPMC, draws, blocks, detail::total_rows(draws),
                           [](const std::vector<Matrix>& sub) {
                             const auto mom = subset_moments(sub);
                             detail::BlockResult r;
                             r.mean = detail::mean_of_means(mom);
                             r.draws = detail::recenter_rescale(sub, mom, r.mean, nullptr);
                             const Matrix c = r.draws.rowwise() - r.mean.transpose();
                             r.cov = symmetrize(c.transpose() * c / static_cast<double>(c.rows()));
                             return r;
                           });
}

inline CombinedDraws dpmc_combine(const std::vector<Matrix>& draws) {
  detail::check_inputs(draws);
  return dpmc_combine(draws, joint_block(draws.front().cols()));
}

struct BarycenterResult {
  Matrix cov;
  int iterations = 0;
  bool converged = false;
  std::vector<double> residuals;  // Frobenius change per iteration
};

/// Covariance of the Wasserstein-2 barycenter of centred Gaussians, by the
/// fixed-point iteration S <- S^{-1/2} (mean_j (S^{1/2} C_j S^{1/2})^{1/2})^2 S^{-1/2}
/// started at the arithmetic mean. Stops at the tolerance or after max_iter
/// iterations, whichever comes first; the latter is flagged and warned about.
inline BarycenterResult wasserstein_barycenter(const std::vector<Matrix>& covs, double tol = 1e-8,
                                               int max_iter = 100) {
  if (covs.empty()) throw std::invalid_argument("wasserstein_barycenter: no covariances");
  BarycenterResult res;
  Matrix s = Matrix::Zero(covs.front().rows(), covs.front().cols());
  for (const auto& c : covs) s += c;
  s /= static_cast<double>(covs.size());
  for (int it = 1; it <= max_iter; ++it) {
    const SymmetricRoots roots = symmetric_roots(s);
    Matrix acc = Matrix::Zero(s.rows(), s.cols());
    for (const auto& c : covs) acc += symmetric_sqrt(roots.sqrt * c * roots.sqrt);
    acc /= static_cast<double>(covs.size());
    const Matrix next = symmetrize(roots.inv_sqrt * acc * acc * roots.inv_sqrt);
    const double change = (next - s).norm();
    res.residuals.push_back(change);
    s = next;
    res.iterations = it;
    if (change <= tol) {
      res.converged = true;
      break;
    }
  }
  if (!res.converged)
    std::cerr << "warning: Wasserstein barycenter stopped after " << max_iter << " iterations, last change "
              << res.residuals.back() << "\n";
  res.cov = s;
  return res;
}

inline CombinedDraws wasp_combine(const std::vector<Matrix>& draws, const CoordinateBlocks& blocks) {
  return detail::blockwise(CombineMethod::WASP, draws, blocks, detail::total_rows(draws),
                           [](const std::vector<Matrix>& sub) {
                             const auto mom = subset_moments(sub);
                             std::vector<Matrix> covs;
                             for (const auto& m : mom) covs.push_back(m.covariance);
                             detail::BlockResult r;
                             r.mean = detail::mean_of_means(mom);
                             r.cov = wasserstein_barycenter(covs).cov;
                             r.draws = detail::recenter_rescale(sub, mom, r.mean, &r.cov);
                             return r;
                           });
}

inline CombinedDraws wasp_combine(const std::vector<Matrix>& draws) {
  detail::check_inputs(draws);
  return wasp_combine(draws, joint_block(draws.front().cols()));
}

/// Consensus rule on paired draws: (sum_j L_j)^{-1} sum_j L_j xi_j^(t), L_j = Sigma_j^{-1}.
inline CombinedDraws cmc_combine(const std::vector<Matrix>& draws, const CoordinateBlocks& blocks,
                                 const JitterPolicy& policy = {}) {
  detail::check_inputs(draws);
  Eigen::Index t = draws.front().rows();
  for (const auto& d : draws) t = std::min(t, d.rows());
  return detail::blockwise(CombineMethod::CMC, draws, blocks, t, [&](const std::vector<Matrix>& sub) {
    const auto mom = subset_moments(sub);
    const Eigen::Index dim = sub.front().cols();
    std::vector<Matrix> prec;
    Matrix total = Matrix::Zero(dim, dim);
    for (const auto& m : mom) {
      const JitteredCholesky c = factor_with_jitter(m.covariance, policy, std::max(m.covariance.trace() / static_cast<double>(dim), 1e-300));
      prec.push_back(symmetrize(c.solve(Matrix::Identity(dim, dim))));
      total += prec.back();
    }
    JitteredCholesky tf;
    try {
      tf = factor_with_jitter(total, policy);
    } catch (const NumericalError&) {
      throw NumericalError("cmc_combine: singular precision sum");
    }
    detail::BlockResult r;
    Matrix acc = Matrix::Zero(t, dim);
    for (std::size_t j = 0; j < sub.size(); ++j) acc += sub[j].topRows(t) * prec[j];  // rows: xi^T L_j
    r.draws = tf.solve(acc.transpose()).transpose();
    r.mean = r.draws.colwise().mean().transpose();
    const Matrix c = r.draws.rowwise() - r.mean.transpose();
    r.cov = symmetrize(c.transpose() * c / static_cast<double>(c.rows()));
    return r;
  });
}

inline CombinedDraws cmc_combine(const std::vector<Matrix>& draws) {
  detail::check_inputs(draws);
  return cmc_combine(draws, joint_block(draws.front().cols()));
}

// ---------------------------------------------------------------------------
// PIE: averaged quantile functions, per scalar coordinate

/// Type-7 (linear interpolation) empirical quantile of sorted data.
inline double quantile_sorted(const std::vector<double>& sorted, double prob) {
  if (sorted.empty()) throw std::invalid_argument("quantile of empty sample");
  const double h = (static_cast<double>(sorted.size()) - 1.0) * prob;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

/// Probability grid {0.005, 0.010, ..., 0.995}.
inline std::vector<double> pie_grid() {
  std::vector<double> g;
  for (int i = 1; i <= 199; ++i) g.push_back(0.005 * i);
  return g;
}

struct QuantileSummary {
  std::vector<double> grid;
  Matrix quantiles;  // grid x dim
  Vector mean;

  std::size_t grid_index(double prob) const {
    for (std::size_t i = 0; i < grid.size(); ++i)
      if (std::abs(grid[i] - prob) < 1e-9) return i;
    throw std::invalid_argument("probability " + std::to_string(prob) + " is not on the quantile grid");
  }
  double quantile(Eigen::Index coord, double prob) const {
    return quantiles(static_cast<Eigen::Index>(grid_index(prob)), coord);
  }
};

inline QuantileSummary empirical_quantiles(const Matrix& draws, const std::vector<double>& grid) {
  QuantileSummary s{grid, Matrix(static_cast<Eigen::Index>(grid.size()), draws.cols()), Vector()};
  std::vector<double> col(static_cast<std::size_t>(draws.rows()));
  for (Eigen::Index c = 0; c < draws.cols(); ++c) {
    for (Eigen::Index r = 0; r < draws.rows(); ++r) col[static_cast<std::size_t>(r)] = draws(r, c);
    std::sort(col.begin(), col.end());
    for (std::size_t g = 0; g < grid.size(); ++g) s.quantiles(static_cast<Eigen::Index>(g), c) = quantile_sorted(col, grid[g]);
  }
  s.mean = s.quantiles.colwise().mean().transpose();
  return s;
}

inline QuantileSummary pie_combine(const std::vector<Matrix>& draws) {
  detail::check_inputs(draws);
  const auto grid = pie_grid();
  QuantileSummary out{grid, Matrix::Zero(static_cast<Eigen::Index>(grid.size()), draws.front().cols()), Vector()};
  for (const auto& d : draws) {
    if (d.rows() < 1) throw std::invalid_argument("pie_combine: empty subset draws");
    out.quantiles += empirical_quantiles(d, grid).quantiles;
  }
  out.quantiles /= static_cast<double>(draws.size());
  out.mean = out.quantiles.colwise().mean().transpose();
  return out;
}

inline Vector tau2_from_log_draws(const Vector& log_tau2) {
  if (!log_tau2.allFinite()) throw std::invalid_argument("tau2_from_log_draws: non-finite input");
  return log_tau2.array().exp().matrix();
}

/// Draw-emitting methods through one entry point.
inline CombinedDraws combine(CombineMethod method, const std::vector<Matrix>& draws,
                             const CoordinateBlocks& blocks) {
  switch (method) {
    case CombineMethod::AMC: return amc_combine(draws, blocks);
    case CombineMethod::DPMC: return dpmc_combine(draws, blocks);
    case CombineMethod::WASP: return wasp_combine(draws, blocks);
    case CombineMethod::CMC: return cmc_combine(draws, blocks);
    case CombineMethod::PIE: break;
  }
  throw std::invalid_argument("combine: PIE yields quantile summaries; use pie_combine");
}

}  // namespace dvcm

#endif  // DVCM_COMBINER_HPP
