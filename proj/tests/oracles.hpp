#ifndef DVCM_TESTS_ORACLES_HPP
#define DVCM_TESTS_ORACLES_HPP

// Independent reference computations. They rebuild every matrix with plain
// loops and use LU / QR / LDLT decompositions, so they share no numerical
// path with the library code they check.

#include <boost/math/distributions/students_t.hpp>
#include <boost/math/special_functions/gamma.hpp>

#include <algorithm>
#include <cmath>
#include <vector>

#include "dvcm/combiner.hpp"
#include "dvcm/sampler.hpp"
#include "support.hpp"

namespace dvcm::oracle {

struct Moments {
  Vector mean;
  Matrix cov;
};

inline Matrix exp_kernel(const std::vector<IndexPoint>& a, const std::vector<IndexPoint>& b, double phi) {
  Matrix k(static_cast<Eigen::Index>(a.size()), static_cast<Eigen::Index>(b.size()));
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < b.size(); ++j) {
      double d2 = 0.0;
      for (std::size_t c = 0; c < a[i].dim(); ++c) d2 += (a[i][c] - b[j][c]) * (a[i][c] - b[j][c]);
      k(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = std::exp(-phi * std::sqrt(d2));
    }
  return k;
}

/// x | y for (x, y) jointly Gaussian.
inline Moments condition(const Vector& mx, const Matrix& sxx, const Matrix& sxy, const Vector& my, const Matrix& syy,
                         const Vector& y) {
  const Eigen::FullPivLU<Matrix> lu(syy);
  return {mx + sxy * lu.solve(y - my), sxx - sxy * lu.solve(sxy.transpose())};
}

/// Z~ (s_tilde x m q): row r of observation i, column a m + i holds x_r[0..q) . Gamma[:, a].
inline Matrix latent_design(const std::vector<Observation>& obs, const Matrix& gamma) {
  const Eigen::Index q = gamma.rows(), m = static_cast<Eigen::Index>(obs.size());
  Eigen::Index rows = 0;
  for (const auto& o : obs) rows += o.y.size();
  Matrix z = Matrix::Zero(rows, m * q);
  Eigen::Index r = 0;
  for (Eigen::Index i = 0; i < m; ++i) {
    const auto& o = obs[static_cast<std::size_t>(i)];
    for (Eigen::Index s = 0; s < o.y.size(); ++s, ++r)
      for (Eigen::Index a = 0; a < q; ++a) {
        double v = 0.0;
        for (Eigen::Index c = 0; c < q; ++c) v += o.x(s, c) * gamma(c, a);
        z(r, a * m + i) = v;
      }
  }
  return z;
}

inline Matrix block_diagonal(const std::vector<Matrix>& blocks) {
  Eigen::Index n = 0;
  for (const auto& b : blocks) n += b.rows();
  Matrix out = Matrix::Zero(n, n);
  Eigen::Index o = 0;
  for (const auto& b : blocks) {
    out.block(o, o, b.rows(), b.cols()) = b;
    o += b.rows();
  }
  return out;
}

/// nu~ | y from the explicit joint Gaussian of (nu~, y).
inline Moments latent_posterior(const std::vector<Observation>& obs, const ParamState& ps, const std::vector<Matrix>& r) {
  const Matrix z = latent_design(obs, ps.gamma);
  const Matrix sxx = block_diagonal(r);
  Vector y(z.rows()), xa(z.rows());
  Eigen::Index row = 0;
  for (const auto& o : obs)
    for (Eigen::Index s = 0; s < o.y.size(); ++s, ++row) {
      y[row] = o.y[s];
      xa[row] = o.x.row(s).dot(ps.alpha);
    }
  Matrix syy = z * sxx * z.transpose();
  syy.diagonal().array() += ps.tau2;
  return condition(Vector::Zero(sxx.rows()), sxx, sxx * z.transpose(), xa, syy, y);
}

/// Law implied by the pathwise imputation, read off its affine map.
inline Moments matheron_moments(const StackedObservations& st, const ParamState& ps,
                                const std::vector<LatentCorrelation>& corr) {
  const Eigen::Index m = st.m(), q = static_cast<Eigen::Index>(corr.size()), n = st.s_tilde();
  auto flat = [](const LatentState& l) { return Vector(Eigen::Map<const Vector>(l.nu.data(), l.nu.size())); };
  const Vector base = flat(matheron_update(st, ps, corr, Matrix::Zero(m, q), Vector::Zero(n)));
  Matrix a_nu(m * q, m * q), a_eps(m * q, n);
  for (Eigen::Index j = 0; j < m * q; ++j) {
    Matrix e = Matrix::Zero(m, q);
    e(j % m, j / m) = 1.0;
    a_nu.col(j) = flat(matheron_update(st, ps, corr, e, Vector::Zero(n))) - base;
  }
  for (Eigen::Index j = 0; j < n; ++j)
    a_eps.col(j) = flat(matheron_update(st, ps, corr, Matrix::Zero(m, q), Vector::Unit(n, j))) - base;
  std::vector<Matrix> r;
  for (const auto& c : corr) r.push_back(c.matrix());
  return {base, a_nu * block_diagonal(r) * a_nu.transpose() + ps.tau2 * a_eps * a_eps.transpose()};
}

struct ConditioningErrors {
  double impute_mean = 0.0, impute_cov = 0.0;
  double conditional_mean = 0.0, conditional_cov = 0.0;
  double predict_mean = 0.0, predict_cov = 0.0;
  Eigen::Index dimension = 0;  // s_tilde + m q
};

inline double max_abs(const Matrix& a) { return a.size() ? a.cwiseAbs().maxCoeff() : 0.0; }

/// Random instance (m observations of s responses, q latents, l test points).
/// Dense when fitc_rank is 0, otherwise FITC with grid inducing points.
inline ConditioningErrors conditioning_errors(std::size_t m, std::size_t q, Eigen::Index s, std::size_t l,
                                              std::uint64_t seed, std::size_t fitc_rank = 0) {
  const std::size_t p = q + 1;
  const Dataset ds = test_support::random_dataset(m, p, q, 2, s, seed);
  const Dataset test = test_support::random_dataset(l, p, q, 2, 1, seed + 1);
  Rng rng(seed + 2);
  ParamState ps;
  ps.alpha = standard_normal(static_cast<Eigen::Index>(p), rng);
  ps.gamma = standard_normal(static_cast<Eigen::Index>(q), static_cast<Eigen::Index>(q), rng);
  ps.tau2 = 0.3;
  std::vector<KernelFamily> fams(q, KernelFamily::Exponential);
  std::optional<FitcOptions> fitc;
  if (fitc_rank) fitc = FitcOptions{fitc_rank, InducingSelection::Grid, 1e-8};
  const StackedObservations st = stack_observations(ds.observations);
  const ChainGeometry g = ChainGeometry::build(st.points, to_matrix(test.points()), fams, fitc, 0);
  std::vector<LatentCorrelation> corr;
  std::vector<Matrix> r;
  for (std::size_t a = 0; a < q; ++a) {
    ps.theta.push_back(KernelParams::exponential(1.0 + 2.0 * static_cast<double>(a)));
    corr.push_back(g.correlation(ps.theta.back(), {}));
    r.push_back(corr.back().matrix());
  }
  ConditioningErrors e;
  e.dimension = st.s_tilde() + st.m() * static_cast<Eigen::Index>(q);
  const Moments truth = latent_posterior(ds.observations, ps, r);
  const Moments path = matheron_moments(st, ps, corr);
  e.impute_mean = max_abs(path.mean - truth.mean);
  e.impute_cov = max_abs(path.cov - truth.cov);
  if (!fitc_rank) {
    const GaussianMoments lc = latent_conditional(st, ps, corr);
    e.conditional_mean = max_abs(lc.mean - truth.mean);
    e.conditional_cov = max_abs(lc.cov - truth.cov);
  }

  // prediction of every latent at the test points given a latent draw
  const std::vector<IndexPoint> tp = test.points(), trp = ds.points();
  const Matrix nu = standard_normal(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(q), rng);
  for (std::size_t a = 0; a < q; ++a) {
    const double phi = ps.theta[a].phi();
    const Matrix kfs = exp_kernel(trp, tp, phi), kss = exp_kernel(tp, tp, phi);
    Matrix prior_train, prior_cross, prior_test;
    Matrix tz;
    if (!fitc_rank) {
      prior_train = exp_kernel(trp, trp, phi);
      prior_train.diagonal().array() += corr[a].dense->jitter;
      prior_cross = kfs;
      prior_test = kss;
    } else {
      const auto& f = *corr[a].fitc;
      const std::vector<IndexPoint> zp = grid_points(fitc_rank, 2);
      Matrix kzz = exp_kernel(zp, zp, phi);
      kzz.diagonal().array() += f.inducing_corr.jitter;
      const Eigen::FullPivLU<Matrix> lu(kzz);
      const Matrix kfz = exp_kernel(trp, zp, phi);
      tz = exp_kernel(tp, zp, phi);
      prior_train = kfz * lu.solve(kfz.transpose());
      for (Eigen::Index i = 0; i < prior_train.rows(); ++i) prior_train(i, i) = std::max(prior_train(i, i), 1.0) + f.nugget;
      prior_cross = kfz * lu.solve(tz.transpose());
      prior_test = tz * lu.solve(tz.transpose());
      for (Eigen::Index i = 0; i < prior_test.rows(); ++i) prior_test(i, i) = std::max(prior_test(i, i), 1.0) + f.nugget;
    }
    const Moments want = condition(Vector::Zero(static_cast<Eigen::Index>(l)), prior_test, prior_cross.transpose(),
                                   Vector::Zero(static_cast<Eigen::Index>(m)), prior_train,
                                   nu.col(static_cast<Eigen::Index>(a)));
    const GaussianMoments got = predictive_moments(corr[a], nu.col(static_cast<Eigen::Index>(a)), kfs, kss, tz);
    e.predict_mean = std::max(e.predict_mean, max_abs(got.mean - want.mean));
    e.predict_cov = std::max(e.predict_cov, max_abs(got.cov - want.cov));
  }
  return e;
}

// ---------------------------------------------------------------------------
// Conjugate (b, tau^2) update against the closed-form Normal-Inverse-Gamma

struct NigCheck {
  std::vector<double> ks;            // b coordinates, then tau^2
  std::vector<double> mean_rel_err;  // same order
  std::size_t draws = 0;
};

inline NigCheck nig_conjugacy(std::size_t draws, double delta, std::uint64_t seed) {
  const std::size_t m = 60, p = 2, q = 1;
  Dataset ds = test_support::random_dataset(m, p, q, 2, 2, seed);
  Rng rng(seed + 1);
  const std::vector<IndexPoint> pts = ds.points();
  Matrix k = exp_kernel(pts, pts, 3.0);
  const Eigen::LLT<Matrix> kl(k);
  const Matrix nu = kl.matrixL() * standard_normal(static_cast<Eigen::Index>(m), 1, rng);
  for (std::size_t i = 0; i < m; ++i) {
    auto& o = ds.observations[i];
    Vector beta(2);
    beta << -2.0 + 1.5 * nu(static_cast<Eigen::Index>(i), 0), 2.0;
    o.y = o.x * beta + std::sqrt(0.1) * standard_normal(o.y.size(), rng);
  }

  // closed form from the stacked regression y = W b + e
  const Eigen::Index nb = static_cast<Eigen::Index>(p + q * q);
  Eigen::Index rows = 0;
  for (const auto& o : ds.observations) rows += o.y.size();
  Matrix w(rows, nb);
  Vector y(rows);
  Eigen::Index r = 0;
  for (std::size_t i = 0; i < m; ++i) {
    const auto& o = ds.observations[i];
    for (Eigen::Index s = 0; s < o.y.size(); ++s, ++r) {
      w(r, 0) = o.x(s, 0);
      w(r, 1) = o.x(s, 1);
      w(r, 2) = nu(static_cast<Eigen::Index>(i), 0) * o.x(s, 0);
      y[r] = o.y[s];
    }
  }
  const Vector b_hat = w.householderQr().solve(y);
  const double rss = (y - w * b_hat).squaredNorm();
  const Matrix g_inv = (w.transpose() * w).inverse();
  const double df = delta * static_cast<double>(rows) - static_cast<double>(nb);
  const double shape = 0.5 * df, rate = 0.5 * delta * rss;

  ModelSpec spec{p, q, 2, {KernelFamily::Exponential}, {PriorRange{{0.1}, {10.0}}}, delta, std::nullopt};
  ChainConfig cfg;
  cfg.n_iterations = draws;
  cfg.burn_in = 0;
  cfg.thin = 1;
  cfg.delta = delta;
  cfg.rng_seed = seed + 2;
  cfg.impute_latents = false;
  cfg.update_theta = false;
  ParamState init;
  init.alpha = Vector::Zero(2);
  init.gamma = Matrix::Ones(1, 1);
  init.tau2 = 1.0;
  init.theta = {KernelParams::exponential(3.0)};
  const DrawStore store =
      run_chain(ds.observations, spec, cfg, {ds.observations.front()}, ChainInit{init, LatentState{nu}});

  NigCheck out;
  out.draws = static_cast<std::size_t>(store.draws());
  const boost::math::students_t t(df);
  for (Eigen::Index j = 0; j < nb; ++j) {
    const double scale = std::sqrt(g_inv(j, j) * rss / df);
    const double centre = b_hat[j];
    out.ks.push_back(test_support::ks_one_sample(test_support::to_std(store.b_draws.col(j)),
                                            [&](double x) { return boost::math::cdf(t, (x - centre) / scale); }));
    out.mean_rel_err.push_back(std::abs(store.b_draws.col(j).mean() - centre) / std::abs(centre));
  }
  const Vector tau2 = store.log_tau2_draws.array().exp();
  out.ks.push_back(test_support::ks_one_sample(test_support::to_std(tau2),
                                          [&](double x) { return boost::math::gamma_q(shape, rate / x); }));
  const double tau2_mean = rate / (shape - 1.0);
  out.mean_rel_err.push_back(std::abs(tau2.mean() - tau2_mean) / tau2_mean);
  return out;
}

// ---------------------------------------------------------------------------
// Elliptical slice sampling of a 1-D range parameter against grid quadrature

struct EssGridCheck {
  double ks = 1.0;
  double grid_mean = 0.0;
  double chain_mean = 0.0;
  double chain_variance = 0.0;
};

inline EssGridCheck ess_grid(std::size_t draws, double delta, std::uint64_t seed) {
  const std::vector<IndexPoint> pts{{0.1, 0.2}, {0.4, 0.5}, {0.8, 0.1}, {0.3, 0.9}, {0.6, 0.6}};
  Vector nu(5);
  nu << 0.5, -0.3, 1.2, 0.1, -0.8;
  const double lo = 0.1, hi = 10.0;

  // unnormalized log target on a midpoint grid
  const int cells = 20000;
  const double h = (hi - lo) / cells;
  std::vector<double> logp(cells);
  double top = -1e300;
  for (int i = 0; i < cells; ++i) {
    const Eigen::LDLT<Matrix> ldlt(exp_kernel(pts, pts, lo + (i + 0.5) * h));
    logp[static_cast<std::size_t>(i)] =
        delta * (-0.5 * ldlt.vectorD().array().log().sum() - 0.5 * nu.dot(ldlt.solve(nu)));
    top = std::max(top, logp[static_cast<std::size_t>(i)]);
  }
  std::vector<double> cum(cells + 1, 0.0);
  double mean = 0.0;
  for (int i = 0; i < cells; ++i) {
    const double w = std::exp(logp[static_cast<std::size_t>(i)] - top);
    cum[static_cast<std::size_t>(i) + 1] = cum[static_cast<std::size_t>(i)] + w;
    mean += w * (lo + (i + 0.5) * h);
  }
  const double total = cum.back();
  auto cdf = [&](double x) {
    const double pos = std::clamp((x - lo) / h, 0.0, static_cast<double>(cells));
    const auto i = static_cast<std::size_t>(std::min(pos, cells - 1.0));
    return (cum[i] + (pos - static_cast<double>(i)) * (cum[i + 1] - cum[i])) / total;
  };

  const ChainGeometry g = ChainGeometry::build(to_matrix(pts), Matrix(0, 2), {KernelFamily::Exponential}, std::nullopt, 0);
  const PriorRange range{{lo}, {hi}};
  const LatentState latents{nu};
  Rng rng(seed);
  std::vector<KernelParams> theta{KernelParams::exponential(5.0)};
  std::vector<LatentCorrelation> corr{g.correlation(theta[0], {})};
  std::vector<double> chain;
  chain.reserve(draws);
  for (std::size_t i = 0; i < draws; ++i) {
    ThetaUpdate up = ess_update_theta(latents, theta, corr, {range}, delta, 2.0, g, rng);
    theta = std::move(up.theta);
    corr = std::move(up.correlations);
    chain.push_back(theta[0].phi());
  }
  EssGridCheck out;
  out.grid_mean = mean / total;
  const Vector cv = Eigen::Map<const Vector>(chain.data(), static_cast<Eigen::Index>(chain.size()));
  out.chain_mean = cv.mean();
  out.chain_variance = (cv.array() - out.chain_mean).square().mean();
  out.ks = test_support::ks_one_sample(chain, cdf);
  return out;
}

// ---------------------------------------------------------------------------
// Combiner algebra

struct CombinerAlgebra {
  double identity = 0.0;          // k = 1, every method, max abs deviation
  double mean_of_means = 0.0;     // AMC / DPMC / WASP combined mean
  double amc_covariance = 0.0;
  double wasp_1d = 0.0;
  double wasp_commuting = 0.0;
};

inline CombinerAlgebra combiner_algebra(std::uint64_t seed) {
  Rng rng(seed);
  CombinerAlgebra out;
  auto draws_from = [&](const Vector& mu, const Matrix& root, Eigen::Index t) {
    Matrix d = standard_normal(t, mu.size(), rng) * root.transpose();
    return Matrix(d.rowwise() + mu.transpose());
  };
  const Eigen::Index dim = 3, t = 400;
  std::vector<Matrix> subsets;
  for (int j = 0; j < 4; ++j) {
    Matrix root = standard_normal(dim, dim, rng);
    subsets.push_back(draws_from(standard_normal(dim, rng) * 3.0, root, t));
  }

  auto moments = [](const Matrix& d) {
    const Vector mu = d.colwise().mean().transpose();
    const Matrix c = d.rowwise() - mu.transpose();
    return std::pair<Vector, Matrix>{mu, c.transpose() * c / static_cast<double>(d.rows())};
  };

  const std::vector<Matrix> one{subsets[0]};
  for (auto method : {CombineMethod::AMC, CombineMethod::DPMC, CombineMethod::WASP, CombineMethod::CMC})
    out.identity = std::max(out.identity, max_abs(combine(method, one, joint_block(dim)).draws - subsets[0]));
  const QuantileSummary pie1 = pie_combine(one);
  const QuantileSummary emp = empirical_quantiles(subsets[0], pie_grid());
  out.identity = std::max(out.identity, max_abs(pie1.quantiles - emp.quantiles));

  Vector mm = Vector::Zero(dim);
  Matrix mc = Matrix::Zero(dim, dim);
  for (const auto& s : subsets) {
    const auto [mu, c] = moments(s);
    mm += mu / 4.0;
    mc += c / 4.0;
  }
  for (auto method : {CombineMethod::AMC, CombineMethod::DPMC, CombineMethod::WASP}) {
    const CombinedDraws c = combine(method, subsets, joint_block(dim));
    out.mean_of_means = std::max(out.mean_of_means, max_abs(moments(c.draws).first - mm));
  }
  out.amc_covariance = max_abs(moments(amc_combine(subsets).draws).second - mc);

  // 1-D: barycenter variance is the squared mean standard deviation
  std::vector<Matrix> covs;
  double sd_sum = 0.0;
  for (double v : {0.5, 2.0, 7.0, 1.3}) {
    covs.push_back(Matrix::Constant(1, 1, v));
    sd_sum += std::sqrt(v);
  }
  out.wasp_1d = std::abs(wasserstein_barycenter(covs).cov(0, 0) - std::pow(sd_sum / 4.0, 2));

  // commuting: shared eigenvectors, barycenter eigenvalues are squared mean root eigenvalues
  const Matrix qmat = Eigen::HouseholderQR<Matrix>(standard_normal(dim, dim, rng)).householderQ();
  std::vector<Matrix> ccovs;
  Vector root_mean = Vector::Zero(dim);
  for (int j = 0; j < 3; ++j) {
    const Vector ev = (standard_normal(dim, rng).array().square() + 0.2).matrix();
    ccovs.push_back(qmat * ev.asDiagonal() * qmat.transpose());
    root_mean += ev.cwiseSqrt() / 3.0;
  }
  const Matrix want = qmat * root_mean.cwiseAbs2().asDiagonal() * qmat.transpose();
  out.wasp_commuting = max_abs(wasserstein_barycenter(ccovs).cov - want);
  return out;
}

}  // namespace dvcm::oracle

#endif  // DVCM_TESTS_ORACLES_HPP
