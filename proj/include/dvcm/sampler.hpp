#ifndef DVCM_SAMPLER_HPP
#define DVCM_SAMPLER_HPP

#include <array>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <iostream>
#include <limits>
#include <numbers>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "dvcm/kernels.hpp"
#include "dvcm/linalg.hpp"
#include "dvcm/model.hpp"
#include "dvcm/rng.hpp"

namespace dvcm {

struct ChainConfig {
  std::size_t n_iterations = 10000;
  std::size_t burn_in = 5000;
  std::size_t thin = 5;
  double delta = 1.0;
  double ess_prior_scale = 2.0;
  std::uint64_t rng_seed = 0;

  bool impute_latents = true;  // step (a); off only for conjugacy checks with fixed latents
  bool update_theta = true;    // step (d)
  bool joint_theta = true;     // one ESS over all stacked kernel parameters vs one per coefficient
  JitterPolicy jitter{};
  JitterPolicy ridge{};

  void validate() const {
    if (burn_in >= n_iterations) throw std::invalid_argument("chain config requires burn_in < n_iterations");
    if (thin < 1) throw std::invalid_argument("chain config requires thin >= 1");
    if (!(delta >= 1.0)) throw std::invalid_argument("chain config requires delta >= 1");
    if (!(ess_prior_scale > 0.0)) throw std::invalid_argument("ESS prior scale must be positive");
  }

  std::size_t stored_draws() const { return (n_iterations - burn_in) / thin; }

  bool stores(std::size_t iteration) const {  // iteration is 1-based
    return iteration > burn_in && (iteration - burn_in) % thin == 0;
  }
};

struct DrawMetadata {
  int subset_id = -1;  // -1 for the full-data chain
  std::size_t n_observations = 0;
  double wall_seconds = 0.0;
  ChainConfig config;
};

/// Post burn-in, thinned draws at the test indices. beta_draws columns are
/// ordered (test point, coefficient); y_draws columns are the responses of
/// each test point in turn.
struct DrawStore {
  Matrix beta_draws;
  Matrix y_draws;
  Vector log_tau2_draws;
  Matrix theta_draws;
  Matrix b_draws;  // (alpha, vec Gamma)
  std::vector<IndexPoint> test_points;
  std::vector<Eigen::Index> test_response_dims;
  std::size_t p = 0;
  DrawMetadata metadata;

  Eigen::Index draws() const { return log_tau2_draws.size(); }

  /// (beta, y) stacked per draw.
  Matrix stacked_beta_y() const {
    Matrix out(beta_draws.rows(), beta_draws.cols() + y_draws.cols());
    out << beta_draws, y_draws;
    return out;
  }
};

// ---------------------------------------------------------------------------
// Latent correlation operators (dense or FITC)

struct LatentCorrelation {
  std::optional<CorrMatrix> dense;
  std::optional<FitcFactor> fitc;

  Eigen::Index size() const { return dense ? dense->dim() : fitc->size(); }

  double log_det() const { return dense ? dense->factor.log_det() : fitc->log_det(); }

  double quad_form(const Vector& x) const {
    if (dense) {
      const Vector h = dense->factor.llt.matrixL().solve(x);
      return h.squaredNorm();
    }
    return fitc->quad_form(x);
  }

  Vector multiply(const Vector& x) const {
    if (dense) return dense->entries * x + dense->jitter * x;
    return fitc->multiply(x);
  }

  Vector sample(Rng& rng) const {
    const Vector z = standard_normal(size(), rng);
    if (dense) return dense->factor.llt.matrixL() * z;
    const Vector z2 = standard_normal(fitc->rank(), rng);
    return fitc->v.transpose() * z2 + fitc->diag_eff.cwiseSqrt().cwiseProduct(z);
  }

  /// The matrix the sampler actually uses (jitter / nugget included).
  Matrix matrix() const {
    if (dense) return dense->jittered();
    Matrix k = fitc->reconstruct();
    k.diagonal().array() += fitc->nugget;
    return k;
  }
};

/// Lags between training points, test points, and (for FITC) inducing points,
/// computed once per chain and shared by every kernel-parameter value.
struct ChainGeometry {
  std::array<std::optional<Lags>, 2> train, train_test, test;
  std::array<std::optional<Lags>, 2> train_inducing, inducing, test_inducing;
  std::optional<FitcOptions> fitc;
  double nugget = 1e-8;

  static std::size_t slot(KernelFamily f) { return f == KernelFamily::Exponential ? 0 : 1; }

  static ChainGeometry build(const Matrix& train_pts, const Matrix& test_pts,
                             const std::vector<KernelFamily>& families,
                             const std::optional<FitcOptions>& fitc, std::uint64_t seed) {
    ChainGeometry g;
    g.fitc = fitc;
    Matrix inducing_pts;
    if (fitc) {
      g.nugget = fitc->nugget;
      if (fitc->selection == InducingSelection::RandomSubsample) {
        const auto r = std::min<std::size_t>(fitc->rank, static_cast<std::size_t>(train_pts.rows()));
        const auto idx = select_inducing(static_cast<std::size_t>(train_pts.rows()), r, seed);
        inducing_pts.resize(static_cast<Eigen::Index>(idx.size()), train_pts.cols());
        for (std::size_t i = 0; i < idx.size(); ++i)
          inducing_pts.row(static_cast<Eigen::Index>(i)) = train_pts.row(static_cast<Eigen::Index>(idx[i]));
      } else {
        inducing_pts = to_matrix(grid_points(fitc->rank, static_cast<std::size_t>(train_pts.cols())));
      }
    }
    for (auto f : families) {
      const auto s = slot(f);
      if (g.train_test[s]) continue;
      if (test_pts.rows() > 0) {
        g.train_test[s] = compute_lags(train_pts, test_pts, f);
        g.test[s] = compute_lags(test_pts, test_pts, f);
      }
      if (fitc) {
        g.train_inducing[s] = compute_lags(train_pts, inducing_pts, f);
        g.inducing[s] = compute_lags(inducing_pts, inducing_pts, f);
        if (test_pts.rows() > 0) g.test_inducing[s] = compute_lags(test_pts, inducing_pts, f);
      } else {
        g.train[s] = compute_lags(train_pts, train_pts, f);
      }
      if (!g.train_test[s]) g.train_test[s] = Lags{f, Matrix(train_pts.rows(), 0), Matrix(train_pts.rows(), 0)};
    }
    return g;
  }

  LatentCorrelation correlation(const KernelParams& k, const JitterPolicy& policy) const {
    const auto s = slot(k.family);
    LatentCorrelation c;
    if (fitc) {
      c.fitc = make_fitc(kernel_from_lags(*train_inducing[s], k), kernel_from_lags(*inducing[s], k),
                         policy, nugget);
    } else {
      c.dense = make_corr_matrix(kernel_from_lags(*train[s], k), policy);
    }
    return c;
  }
};

// ---------------------------------------------------------------------------
// Step (a): latent imputation

namespace detail {

/// g_a = Z Gamma_a on every stacked row; column a of the result.
inline Matrix loadings(const StackedObservations& st, const Matrix& gamma) {
  const Eigen::Index q = gamma.rows();
  return st.x.leftCols(q) * gamma;
}

inline std::vector<Eigen::Index> row_owner(const StackedObservations& st) {
  std::vector<Eigen::Index> owner(static_cast<std::size_t>(st.s_tilde()));
  for (Eigen::Index i = 0; i < st.m(); ++i)
    for (Eigen::Index r = st.offset[i]; r < st.offset[i + 1]; ++r) owner[static_cast<std::size_t>(r)] = i;
  return owner;
}

/// Z~_a v : m -> s_tilde
inline Vector expand(const StackedObservations& st, const Vector& g, const Vector& v) {
  Vector out(st.s_tilde());
  for (Eigen::Index i = 0; i < st.m(); ++i)
    for (Eigen::Index r = st.offset[i]; r < st.offset[i + 1]; ++r) out[r] = g[r] * v[i];
  return out;
}

/// Z~_a^T w : s_tilde -> m
inline Vector contract(const StackedObservations& st, const Vector& g, const Vector& w) {
  Vector out = Vector::Zero(st.m());
  for (Eigen::Index i = 0; i < st.m(); ++i)
    for (Eigen::Index r = st.offset[i]; r < st.offset[i + 1]; ++r) out[i] += g[r] * w[r];
  return out;
}

/// Solver for C = sum_a Z~_a R_a Z~_a^T + tau2 I.
class ResponseCovariance {
 public:
  ResponseCovariance(const StackedObservations& st, const Matrix& g,
                     const std::vector<LatentCorrelation>& corr, double tau2,
                     const JitterPolicy& policy)
      : st_(st) {
    const Eigen::Index n = st.s_tilde();
    const auto q = static_cast<Eigen::Index>(corr.size());
    low_rank_ = corr.front().fitc.has_value();
    if (!low_rank_) {
      const auto owner = row_owner(st);
      Matrix c = Matrix::Zero(n, n);
      for (Eigen::Index a = 0; a < q; ++a) {
        const Matrix r = corr[static_cast<std::size_t>(a)].matrix();
        const Vector ga = g.col(a);
        for (Eigen::Index j = 0; j < n; ++j) {
          const auto oj = owner[static_cast<std::size_t>(j)];
          const double gj = ga[j];
          for (Eigen::Index i = j; i < n; ++i)
            c(i, j) += ga[i] * gj * r(owner[static_cast<std::size_t>(i)], oj);
        }
      }
      c.diagonal().array() += tau2;
      c = c.selfadjointView<Eigen::Lower>();
      dense_ = factor_with_jitter(c, policy);
      return;
    }
    // C = B + L L^T, B block diagonal per observation.
    Eigen::Index rank = 0;
    for (const auto& cr : corr) rank += cr.fitc->rank();
    Matrix lmat(n, rank);
    Eigen::Index col = 0;
    for (Eigen::Index a = 0; a < q; ++a) {
      const auto& f = *corr[static_cast<std::size_t>(a)].fitc;
      for (Eigen::Index i = 0; i < st.m(); ++i)
        for (Eigen::Index r = st.offset[i]; r < st.offset[i + 1]; ++r)
          lmat.row(r).segment(col, f.rank()) = g(r, a) * f.v.col(i).transpose();
      col += f.rank();
    }
    blocks_.resize(static_cast<std::size_t>(st.m()));
    binv_l_.resize(n, rank);
    for (Eigen::Index i = 0; i < st.m(); ++i) {
      const Eigen::Index o = st.offset[i], s = st.rows_of(i);
      Matrix b = Matrix::Identity(s, s) * tau2;
      for (Eigen::Index a = 0; a < q; ++a) {
        const double d = corr[static_cast<std::size_t>(a)].fitc->diag_eff[i];
        const Vector ga = g.col(a).segment(o, s);
        b.noalias() += d * ga * ga.transpose();
      }
      blocks_[static_cast<std::size_t>(i)].compute(b);
      binv_l_.middleRows(o, s) = blocks_[static_cast<std::size_t>(i)].solve(lmat.middleRows(o, s));
    }
    Matrix cap = lmat.transpose() * binv_l_;
    cap.diagonal().array() += 1.0;
    capacitance_ = factor_with_jitter(symmetrize(cap), policy);
  }

  Vector solve(const Vector& v) const {
    if (!low_rank_) return dense_.solve(v);
    Vector bv(v.size());
    for (Eigen::Index i = 0; i < st_.m(); ++i) {
      const Eigen::Index o = st_.offset[i], s = st_.rows_of(i);
      bv.segment(o, s) = blocks_[static_cast<std::size_t>(i)].solve(v.segment(o, s));
    }
    return bv - binv_l_ * capacitance_.solve(binv_l_.transpose() * v);
  }

 private:
  const StackedObservations& st_;
  bool low_rank_ = false;
  JitteredCholesky dense_;
  std::vector<Eigen::LLT<Matrix>> blocks_;
  Matrix binv_l_;
  JitteredCholesky capacitance_;
};

}  // namespace detail

/// Mean (stacked a-major, length m q) and covariance of nu~ given the data and
/// parameters, assembled block by block. Dense; intended for small problems
/// and verification.
struct GaussianMoments {
  Vector mean;
  Matrix cov;
};

inline GaussianMoments latent_conditional(const StackedObservations& st, const ParamState& params,
                                          const std::vector<LatentCorrelation>& corr,
                                          const JitterPolicy& policy = {}) {
  const auto q = static_cast<Eigen::Index>(corr.size());
  const Eigen::Index m = st.m(), n = st.s_tilde();
  const Matrix g = detail::loadings(st, params.gamma);
  std::vector<Matrix> zt(static_cast<std::size_t>(q));  // Z~_a, n x m
  std::vector<Matrix> r(static_cast<std::size_t>(q));
  Matrix c = Matrix::Identity(n, n) * params.tau2;
  for (Eigen::Index a = 0; a < q; ++a) {
    Matrix z = Matrix::Zero(n, m);
    for (Eigen::Index i = 0; i < m; ++i)
      for (Eigen::Index row = st.offset[i]; row < st.offset[i + 1]; ++row) z(row, i) = g(row, a);
    r[static_cast<std::size_t>(a)] = corr[static_cast<std::size_t>(a)].matrix();
    c += z * r[static_cast<std::size_t>(a)] * z.transpose();
    zt[static_cast<std::size_t>(a)] = std::move(z);
  }
  const JitteredCholesky cf = factor_with_jitter(symmetrize(c), policy);
  const Vector resid = st.y - st.x * params.alpha;
  const Vector cres = cf.solve(resid);
  GaussianMoments out{Vector(m * q), Matrix(m * q, m * q)};
  std::vector<Matrix> h(static_cast<std::size_t>(q));  // C^{-1} Z~_b R_b
  for (Eigen::Index b = 0; b < q; ++b)
    h[static_cast<std::size_t>(b)] = cf.solve(zt[static_cast<std::size_t>(b)] * r[static_cast<std::size_t>(b)]);
  for (Eigen::Index a = 0; a < q; ++a) {
    const Matrix lhs = r[static_cast<std::size_t>(a)].transpose() * zt[static_cast<std::size_t>(a)].transpose();
    out.mean.segment(a * m, m) = lhs * cres;
    for (Eigen::Index b = 0; b < q; ++b) {
      Matrix blk = -lhs * h[static_cast<std::size_t>(b)];
      if (a == b) blk += r[static_cast<std::size_t>(a)];
      out.cov.block(a * m, b * m, m, m) = blk;
    }
  }
  return out;
}

/// The pathwise (Matheron) correction
/// nu = nu0 + R Z~^T C^{-1} (y - X alpha - Z~ nu0 - eps).
/// With nu0 ~ N(0, R) and eps ~ N(0, tau2 I) the result has exactly the full
/// conditional law of nu~; it is affine in (nu0, eps).
inline LatentState matheron_update(const StackedObservations& st, const ParamState& params,
                                   const std::vector<LatentCorrelation>& corr, const Matrix& nu0,
                                   const Vector& eps, const JitterPolicy& policy = {}) {
  const auto q = static_cast<Eigen::Index>(corr.size());
  if (params.gamma.rows() != q) throw std::invalid_argument("impute_latents: Gamma/kernel count mismatch");
  if (nu0.rows() != st.m() || nu0.cols() != q || eps.size() != st.s_tilde())
    throw std::invalid_argument("matheron_update: dimension mismatch");
  const Matrix g = detail::loadings(st, params.gamma);
  const detail::ResponseCovariance cov(st, g, corr, params.tau2, policy);
  LatentState out{nu0};
  Vector resid = st.y - st.x * params.alpha - eps;
  for (Eigen::Index a = 0; a < q; ++a) resid -= detail::expand(st, g.col(a), nu0.col(a));
  const Vector w = cov.solve(resid);
  for (Eigen::Index a = 0; a < q; ++a)
    out.nu.col(a) += corr[static_cast<std::size_t>(a)].multiply(detail::contract(st, g.col(a), w));
  return out;
}

/// One exact draw of nu~ from its full conditional.
inline LatentState impute_latents(const StackedObservations& st, const ParamState& params,
                                  const std::vector<LatentCorrelation>& corr, Rng& rng,
                                  const JitterPolicy& policy = {}) {
  if (st.m() == 0) throw std::invalid_argument("impute_latents: empty subset");
  if (!(params.tau2 > 0.0)) throw std::invalid_argument("impute_latents: tau2 must be positive");
  const auto q = static_cast<Eigen::Index>(corr.size());
  Matrix nu0(st.m(), q);
  for (Eigen::Index a = 0; a < q; ++a) nu0.col(a) = corr[static_cast<std::size_t>(a)].sample(rng);
  const Vector eps = std::sqrt(params.tau2) * standard_normal(st.s_tilde(), rng);
  return matheron_update(st, params, corr, nu0, eps, policy);
}

// ---------------------------------------------------------------------------
// Steps (b), (c): tau^2 and b = (alpha, vec Gamma)

struct LeastSquares {
  JitteredCholesky gram;  // W^T W (+ ridge)
  Vector b_hat;
  double rss = 0.0;
};

inline LeastSquares least_squares(const Matrix& w, const Vector& y, const JitterPolicy& ridge = {}) {
  if (w.rows() != y.size()) throw std::invalid_argument("least_squares: dimension mismatch");
  LeastSquares ls;
  const Matrix wtw = w.transpose() * w;
  const double scale = std::max(wtw.trace() / static_cast<double>(wtw.rows()), 1e-300);
  try {
    ls.gram = factor_with_jitter(wtw, ridge, scale);
  } catch (const NumericalError&) {
    throw NumericalError("W^T W is rank deficient beyond the ridge policy");
  }
  ls.b_hat = ls.gram.solve(w.transpose() * y);
  ls.rss = (y - w * ls.b_hat).squaredNorm();
  return ls;
}

/// delta * rss / chi^2_{delta s~ - p - q^2}
inline double draw_tau2(double residual_norm_sq, Eigen::Index s_tilde, double delta, std::size_t p,
                        std::size_t q, Rng& rng) {
  const double df = delta * static_cast<double>(s_tilde) - static_cast<double>(p + q * q);
  if (!(df > 0.0))
    throw std::invalid_argument("draw_tau2: non-positive degrees of freedom (subset too small for delta, p, q)");
  if (!(residual_norm_sq >= 0.0)) throw std::invalid_argument("draw_tau2: negative residual norm");
  if (residual_norm_sq == 0.0) {
    std::cerr << "warning: zero residual in tau2 draw, returning 1e-12\n";
    return 1e-12;
  }
  std::chi_squared_distribution<double> chi(df);
  return delta * residual_norm_sq / chi(rng);
}

/// b ~ N(b_hat, (tau2 / delta) (W^T W)^{-1}).
inline Vector draw_b(const LeastSquares& ls, double tau2, double delta, Rng& rng) {
  if (!(tau2 > 0.0)) throw std::invalid_argument("draw_b: tau2 must be positive");
  const Vector z = standard_normal(ls.b_hat.size(), rng);
  const Vector e = ls.gram.llt.matrixU().solve(z);
  return ls.b_hat + std::sqrt(tau2 / delta) * e;
}

inline Vector draw_b(const Matrix& w, const Vector& y, double tau2, double delta, Rng& rng,
                     const JitterPolicy& ridge = {}) {
  return draw_b(least_squares(w, y, ridge), tau2, delta, rng);
}

// ---------------------------------------------------------------------------
// Step (d): kernel parameters by elliptical slice sampling

/// One elliptical slice sampling transition for a target proportional to
/// exp(log_lik(f)) N(f; 0, scale^2 I). Returns the new state and its log_lik.
template <typename LogLik>
std::pair<Vector, double> elliptical_slice(const Vector& f, double current_ll, double scale,
                                           LogLik&& log_lik, Rng& rng) {
  const Vector nu = scale * standard_normal(f.size(), rng);
  const double log_y = current_ll + std::log(uniform01(rng));
  constexpr double two_pi = 2.0 * std::numbers::pi;
  double angle = two_pi * uniform01(rng);
  double lo = angle - two_pi, hi = angle;
  for (int guard = 0; guard < 10000; ++guard) {
    const Vector prop = f * std::cos(angle) + nu * std::sin(angle);
    const double ll = log_lik(prop);
    if (ll > log_y) return {prop, ll};
    if (angle < 0.0) lo = angle; else hi = angle;
    angle = lo + (hi - lo) * uniform01(rng);
  }
  return {f, current_ll};
}

struct ThetaUpdate {
  std::vector<KernelParams> theta;
  std::vector<LatentCorrelation> correlations;
};

/// Tempered GP log-likelihood of latent columns under the given correlations.
inline double latent_log_likelihood(const Matrix& nu, const std::vector<LatentCorrelation>& corr,
                                    double delta) {
  constexpr double log_2pi = 1.8378770664093454836;
  double ll = 0.0;
  for (std::size_t a = 0; a < corr.size(); ++a) {
    ll += -0.5 * static_cast<double>(nu.rows()) * log_2pi - 0.5 * corr[a].log_det() -
          0.5 * corr[a].quad_form(nu.col(static_cast<Eigen::Index>(a)));
  }
  return delta * ll;
}

/// Updates all kernel parameters given the latents. The sampler moves in the
/// logit-transformed space; the Gaussian reference N(0, s^2 I) is divided out
/// of the likelihood so the stationary law is the tempered likelihood times
/// the uniform prior on the box. `current` holds the correlations at `theta`.
inline ThetaUpdate ess_update_theta(const LatentState& latents, const std::vector<KernelParams>& theta,
                                    const std::vector<LatentCorrelation>& current,
                                    const std::vector<PriorRange>& ranges, double delta,
                                    double ess_prior_scale, const ChainGeometry& geometry, Rng& rng,
                                    bool joint = true, const JitterPolicy& policy = {}) {
  if (latents.nu.rows() == 0) throw std::invalid_argument("ess_update_theta: no latent values");
  const std::size_t q = theta.size();
  if (ranges.size() != q || current.size() != q || static_cast<std::size_t>(latents.nu.cols()) != q)
    throw std::invalid_argument("ess_update_theta: dimension mismatch");
  const double inv_2s2 = 0.5 / (ess_prior_scale * ess_prior_scale);
  constexpr double log_2pi = 1.8378770664093454836;
  const auto m = static_cast<double>(latents.nu.rows());

  ThetaUpdate out{theta, current};

  auto coefficient_ll = [&](std::size_t a, const LatentCorrelation& c) {
    return delta * (-0.5 * m * log_2pi - 0.5 * c.log_det() -
                    0.5 * c.quad_form(latents.nu.col(static_cast<Eigen::Index>(a))));
  };

  std::vector<std::vector<std::size_t>> groups;
  if (joint) {
    groups.emplace_back();
    for (std::size_t a = 0; a < q; ++a) groups.back().push_back(a);
  } else {
    for (std::size_t a = 0; a < q; ++a) groups.push_back({a});
  }

  for (const auto& grp : groups) {
    std::vector<double> zcur;
    double cur_ll = 0.0;
    for (std::size_t a : grp) {
      const auto za = to_unconstrained(out.theta[a], ranges[a]);
      zcur.insert(zcur.end(), za.begin(), za.end());
      cur_ll += coefficient_ll(a, out.correlations[a]) + log_jacobian(za, ranges[a]);
    }
    const Vector cur = Eigen::Map<const Vector>(zcur.data(), static_cast<Eigen::Index>(zcur.size()));
    cur_ll += cur.squaredNorm() * inv_2s2;
    if (!std::isfinite(cur_ll))
      throw NumericalError("ess_update_theta: non-finite log-likelihood at the current state");

    std::vector<KernelParams> th_try(q);
    std::vector<LatentCorrelation> corr_try(q);
    auto log_lik = [&](const Vector& zz) {
      double ll = zz.squaredNorm() * inv_2s2;
      Eigen::Index off = 0;
      try {
        for (std::size_t a : grp) {
          const auto k = static_cast<Eigen::Index>(arity(theta[a].family));
          const std::vector<double> za(zz.data() + off, zz.data() + off + k);
          off += k;
          th_try[a] = from_unconstrained(za, ranges[a], theta[a].family);
          corr_try[a] = geometry.correlation(th_try[a], policy);
          ll += coefficient_ll(a, corr_try[a]) + log_jacobian(za, ranges[a]);
        }
      } catch (const NumericalError&) {
        return -std::numeric_limits<double>::infinity();
      }
      return std::isfinite(ll) ? ll : -std::numeric_limits<double>::infinity();
    };
    auto [next, next_ll] = elliptical_slice(cur, cur_ll, ess_prior_scale, log_lik, rng);
    if (next_ll != cur_ll || next != cur) {
      // the last likelihood evaluation was the accepted proposal
      for (std::size_t a : grp) {
        out.theta[a] = std::move(th_try[a]);
        out.correlations[a] = std::move(corr_try[a]);
      }
    }
  }
  return out;
}

/// Convenience form that builds the current correlations itself.
inline ThetaUpdate ess_update_theta(const LatentState& latents, const std::vector<KernelParams>& theta,
                                    const std::vector<PriorRange>& ranges, double delta,
                                    double ess_prior_scale, const ChainGeometry& geometry, Rng& rng,
                                    bool joint = true, const JitterPolicy& policy = {}) {
  std::vector<LatentCorrelation> current;
  for (const auto& t : theta) current.push_back(geometry.correlation(t, policy));
  return ess_update_theta(latents, theta, current, ranges, delta, ess_prior_scale, geometry, rng, joint,
                          policy);
}

// ---------------------------------------------------------------------------
// Steps (e), (f): prediction at test indices

/// Conditional law of nu_a at test points given nu_a at training points.
inline GaussianMoments predictive_moments(const LatentCorrelation& corr, const Vector& nu_a,
                                          const Matrix& cross_k, const Matrix& test_k,
                                          const Matrix& test_inducing_k = Matrix()) {
  GaussianMoments out;
  if (corr.dense) {
    const auto& llt = corr.dense->factor.llt;
    const Matrix h = llt.matrixL().solve(cross_k);  // m x l
    out.mean = h.transpose() * llt.matrixL().solve(nu_a);
    out.cov = test_k - h.transpose() * h;
  } else {
    const auto& f = *corr.fitc;
    const Matrix vs = f.inducing_corr.factor.llt.matrixL().solve(test_inducing_k.transpose());  // r x l
    const Vector dv = nu_a.cwiseQuotient(f.diag_eff);
    out.mean = vs.transpose() * f.capacitance.solve(f.v * dv);
    out.cov = vs.transpose() * f.capacitance.solve(vs);
    const Vector d_star = (1.0 - vs.colwise().squaredNorm().transpose().array()).cwiseMax(0.0) + f.nugget;
    out.cov.diagonal() += d_star;
  }
  out.cov = symmetrize(out.cov);
  return out;
}

inline Vector draw_gaussian(const GaussianMoments& g, Rng& rng, const JitterPolicy& policy = {}) {
  const JitteredCholesky c = factor_with_jitter(g.cov, policy);
  return g.mean + c.llt.matrixL() * standard_normal(g.mean.size(), rng);
}

/// Draws nu at the test indices for every coefficient; result is l x q.
inline Matrix predict_latents(const LatentState& latents, const std::vector<KernelParams>& theta,
                              const std::vector<LatentCorrelation>& corr, const ChainGeometry& geometry,
                              Rng& rng, const JitterPolicy& policy = {}) {
  const std::size_t q = theta.size();
  const auto s0 = ChainGeometry::slot(theta.front().family);
  const Eigen::Index l = geometry.train_test[s0]->space.cols();
  Matrix out(l, static_cast<Eigen::Index>(q));
  for (std::size_t a = 0; a < q; ++a) {
    const auto s = ChainGeometry::slot(theta[a].family);
    const Matrix cross = kernel_from_lags(*geometry.train_test[s], theta[a]);
    const Matrix test = kernel_from_lags(*geometry.test[s], theta[a]);
    Matrix ti;
    if (geometry.fitc) ti = kernel_from_lags(*geometry.test_inducing[s], theta[a]);
    const GaussianMoments mom =
        predictive_moments(corr[a], latents.nu.col(static_cast<Eigen::Index>(a)), cross, test, ti);
    out.col(static_cast<Eigen::Index>(a)) = draw_gaussian(mom, rng, policy);
  }
  return out;
}

/// Point-list convenience form (dense kernels).
inline Matrix predict_latents(const LatentState& latents, const std::vector<KernelParams>& theta,
                              const std::vector<IndexPoint>& train, const std::vector<IndexPoint>& test,
                              Rng& rng, const JitterPolicy& policy = {}) {
  std::vector<KernelFamily> fams;
  for (const auto& t : theta) fams.push_back(t.family);
  const ChainGeometry g = ChainGeometry::build(to_matrix(train), to_matrix(test), fams, std::nullopt, 0);
  std::vector<LatentCorrelation> corr;
  for (const auto& t : theta) corr.push_back(g.correlation(t, policy));
  return predict_latents(latents, theta, corr, g, rng, policy);
}

inline Vector predict_response(const Matrix& x_star, const Vector& beta_star, double tau2, Rng& rng) {
  if (x_star.cols() != beta_star.size()) throw std::invalid_argument("predict_response: dimension mismatch");
  if (!(tau2 > 0.0)) throw std::invalid_argument("predict_response: tau2 must be positive");
  return mean_response(x_star, beta_star) + std::sqrt(tau2) * standard_normal(x_star.rows(), rng);
}

// ---------------------------------------------------------------------------
// Chain driver

/// Optional starting state; also used to hold latents fixed (with
/// impute_latents = false) for conjugacy checks.
struct ChainInit {
  std::optional<ParamState> params;
  std::optional<LatentState> latents;
};

inline ParamState default_initial_state(const StackedObservations& st, const ModelSpec& spec) {
  ParamState ps;
  const auto p = static_cast<Eigen::Index>(spec.p), q = static_cast<Eigen::Index>(spec.q);
  LeastSquares ls = least_squares(st.x, st.y);
  ps.alpha = ls.b_hat;
  ps.gamma = Matrix::Identity(q, q);
  const double dof = std::max<double>(1.0, static_cast<double>(st.s_tilde() - p));
  ps.tau2 = std::max(ls.rss / dof, 1e-8);
  for (std::size_t a = 0; a < spec.q; ++a) ps.theta.push_back(spec.priors[a].midpoint(spec.kernels[a]));
  return ps;
}

/// Runs the data-augmentation sampler with likelihood power config.delta
/// (delta = 1 is the full-data sampler).
inline DrawStore run_chain(const std::vector<Observation>& data, const ModelSpec& spec,
                           const ChainConfig& config, const std::vector<Observation>& test,
                           const ChainInit& init = {}, int subset_id = -1) {
  spec.validate();
  config.validate();
  if (data.empty()) throw std::invalid_argument("run_chain: empty subset");
  if (test.empty()) throw std::invalid_argument("run_chain: no test points");
  const auto t_start = std::chrono::steady_clock::now();

  const StackedObservations st = stack_observations(data);
  if (static_cast<std::size_t>(st.x.cols()) != spec.p) throw std::invalid_argument("run_chain: covariate count != p");
  const auto p = static_cast<Eigen::Index>(spec.p), q = static_cast<Eigen::Index>(spec.q);
  const double df = config.delta * static_cast<double>(st.s_tilde()) - static_cast<double>(spec.p + spec.q * spec.q);
  if (!(df > 0.0)) throw std::invalid_argument("run_chain: subset too small for delta, p and q");

  std::vector<IndexPoint> test_pts;
  std::vector<Eigen::Index> test_dims;
  Eigen::Index y_cols = 0;
  for (const auto& o : test) {
    test_pts.push_back(o.u);
    test_dims.push_back(o.x.rows());
    y_cols += o.x.rows();
    if (o.x.cols() != p) throw std::invalid_argument("run_chain: test covariates have wrong width");
  }
  const auto l = static_cast<Eigen::Index>(test.size());

  Rng rng(config.rng_seed);
  const ChainGeometry geometry =
      ChainGeometry::build(st.points, to_matrix(test_pts), spec.kernels, spec.fitc, derive_seed(config.rng_seed, 7));

  ParamState state = init.params ? *init.params : default_initial_state(st, spec);
  LatentState latents = init.latents ? *init.latents : LatentState{Matrix::Zero(st.m(), q)};
  if (latents.nu.rows() != st.m() || latents.nu.cols() != q)
    throw std::invalid_argument("run_chain: initial latents have wrong shape");
  std::vector<LatentCorrelation> corr;
  for (std::size_t a = 0; a < spec.q; ++a) corr.push_back(geometry.correlation(state.theta[a], config.jitter));

  const std::size_t t_store = config.stored_draws();
  DrawStore store;
  store.p = spec.p;
  store.test_points = test_pts;
  store.test_response_dims = test_dims;
  store.beta_draws.resize(static_cast<Eigen::Index>(t_store), l * p);
  store.y_draws.resize(static_cast<Eigen::Index>(t_store), y_cols);
  store.log_tau2_draws.resize(static_cast<Eigen::Index>(t_store));
  store.theta_draws.resize(static_cast<Eigen::Index>(t_store), static_cast<Eigen::Index>(spec.theta_dim()));
  store.b_draws.resize(static_cast<Eigen::Index>(t_store), p + q * q);
  store.metadata.subset_id = subset_id;
  store.metadata.n_observations = data.size();
  store.metadata.config = config;

  Eigen::Index row = 0;
  for (std::size_t it = 1; it <= config.n_iterations; ++it) {
    try {
      if (config.impute_latents) latents = impute_latents(st, state, corr, rng, config.jitter);  // (a)
      const Matrix w = build_design_W(data, latents.nu, spec.p, spec.q);
      const LeastSquares ls = least_squares(w, st.y, config.ridge);
      state.tau2 = draw_tau2(ls.rss, st.s_tilde(), config.delta, spec.p, spec.q, rng);  // (b)
      state.set_b(draw_b(ls, state.tau2, config.delta, rng), spec.p, spec.q);           // (c)
      if (config.update_theta) {                                                         // (d)
        ThetaUpdate up = ess_update_theta(latents, state.theta, corr, spec.priors, config.delta,
                                          config.ess_prior_scale, geometry, rng, config.joint_theta,
                                          config.jitter);
        state.theta = std::move(up.theta);
        corr = std::move(up.correlations);
      }
      // (e) and (f) do not feed back into the chain, so they only run when
      // the iteration is stored.
      if (!config.stores(it)) continue;
      const Matrix nu_star = predict_latents(latents, state.theta, corr, geometry, rng, config.jitter);  // (e)
      Eigen::Index ycol = 0;
      for (Eigen::Index i = 0; i < l; ++i) {
        const Vector beta = beta_from_state(state.alpha, state.gamma, nu_star.row(i).transpose());
        const Vector ystar = predict_response(test[static_cast<std::size_t>(i)].x, beta, state.tau2, rng);  // (f)
        store.beta_draws.row(row).segment(i * p, p) = beta.transpose();
        store.y_draws.row(row).segment(ycol, ystar.size()) = ystar.transpose();
        ycol += ystar.size();
      }
      store.log_tau2_draws[row] = std::log(state.tau2);
      store.b_draws.row(row) = state.b().transpose();
      Eigen::Index c = 0;
      for (const auto& th : state.theta)
        for (double v : th.values) store.theta_draws(row, c++) = v;
      ++row;
    } catch (const NumericalError& e) {
      throw NumericalError("iteration " + std::to_string(it) + ": " + e.what());
    }
  }
  store.metadata.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
  return store;
}

}  // namespace dvcm

#endif  // DVCM_SAMPLER_HPP
