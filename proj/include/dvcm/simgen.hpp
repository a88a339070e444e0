#ifndef DVCM_SIMGEN_HPP
#define DVCM_SIMGEN_HPP

#include <cstdint>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "dvcm/kernels.hpp"
#include "dvcm/model.hpp"
#include "dvcm/rng.hpp"

namespace dvcm {

/// Ground truth of a synthetic dataset. Rows of nu0 / beta0 cover the training
/// indices first, then the test indices.
struct SimTruth {
  Vector alpha0;
  Matrix gamma0;
  double tau2_0 = 0.1;
  std::vector<double> phi0;
  Matrix nu0;
  Matrix beta0;
  std::uint64_t seed = 0;
  std::size_t n_train = 0;

  Matrix beta_test() const { return beta0.bottomRows(beta0.rows() - static_cast<Eigen::Index>(n_train)); }
};

struct SimulationOptions {
  std::size_t s = 2;
  std::vector<double> alpha0{-2.0, 2.0, -2.0};
  std::vector<double> phi{1.0, 2.0, 3.0};
  double gamma_upper = 3.0;
  double tau2 = 0.1;
  std::size_t d = 2;
  std::size_t dense_cap = 6000;  // largest n + n_test for the exact joint draw
};

struct Simulation {
  Dataset train;
  Dataset test;
  SimTruth truth;
};

/// Uniform indices in [0,1]^d, X ~ N(0,1) entrywise, Gamma0 ~ U(0, gamma_upper),
/// nu_a a zero-mean GP with exponential correlation exp(-phi_a ||u - u'||),
/// drawn jointly over training and test indices, and
/// y(u) = X(u) beta0(u) + eps, eps ~ N(0, tau2 I).
inline Simulation generate_simulation(std::size_t n, std::size_t n_test, std::uint64_t seed,
                                      const SimulationOptions& opt = {}) {
  if (n < 1 || n_test < 1) throw std::invalid_argument("generate_simulation: need n >= 1 and n_test >= 1");
  if (n + n_test > opt.dense_cap)
    throw std::invalid_argument("generate_simulation: n + n_test = " + std::to_string(n + n_test) +
                                " exceeds the dense cap " + std::to_string(opt.dense_cap));
  const std::size_t q = opt.phi.size();
  const std::size_t p = opt.alpha0.size();
  if (q < 1 || q > p) throw std::invalid_argument("generate_simulation: need 1 <= q <= p");
  if (!(opt.tau2 > 0.0)) throw std::invalid_argument("generate_simulation: tau2 must be positive");
  const auto P = static_cast<Eigen::Index>(p), Q = static_cast<Eigen::Index>(q);
  const std::size_t total = n + n_test;

  Rng rng_u = make_rng(seed, 0), rng_gamma = make_rng(seed, 1), rng_nu = make_rng(seed, 2),
      rng_x = make_rng(seed, 3), rng_eps = make_rng(seed, 4);

  std::vector<IndexPoint> pts;
  pts.reserve(total);
  for (std::size_t i = 0; i < total; ++i) {
    std::vector<double> c(opt.d);
    for (auto& v : c) v = uniform01(rng_u);
    pts.emplace_back(std::move(c));
  }

  SimTruth truth;
  truth.seed = seed;
  truth.n_train = n;
  truth.tau2_0 = opt.tau2;
  truth.phi0 = opt.phi;
  truth.alpha0 = Eigen::Map<const Vector>(opt.alpha0.data(), P);
  truth.gamma0.resize(Q, Q);
  std::uniform_real_distribution<double> ug(0.0, opt.gamma_upper);
  for (Eigen::Index j = 0; j < Q; ++j)
    for (Eigen::Index i = 0; i < Q; ++i) truth.gamma0(i, j) = ug(rng_gamma);

  truth.nu0.resize(static_cast<Eigen::Index>(total), Q);
  for (std::size_t a = 0; a < q; ++a) {
    const CorrMatrix r = build_corr_matrix(pts, KernelParams::exponential(opt.phi[a]));
    truth.nu0.col(static_cast<Eigen::Index>(a)) =
        r.factor.llt.matrixL() * standard_normal(static_cast<Eigen::Index>(total), rng_nu);
  }
  truth.beta0.resize(static_cast<Eigen::Index>(total), P);
  for (std::size_t i = 0; i < total; ++i) {
    const auto ii = static_cast<Eigen::Index>(i);
    truth.beta0.row(ii) = beta_from_state(truth.alpha0, truth.gamma0, truth.nu0.row(ii).transpose()).transpose();
  }

  Simulation sim;
  sim.train = Dataset{{}, p, q, opt.d};
  sim.test = Dataset{{}, p, q, opt.d};
  const auto S = static_cast<Eigen::Index>(opt.s);
  const double sd = std::sqrt(opt.tau2);
  for (std::size_t i = 0; i < total; ++i) {
    Observation o;
    o.u = pts[i];
    o.x = standard_normal(S, P, rng_x);
    o.y = o.x * truth.beta0.row(static_cast<Eigen::Index>(i)).transpose() + sd * standard_normal(S, rng_eps);
    (i < n ? sim.train : sim.test).observations.push_back(std::move(o));
  }
  sim.truth = std::move(truth);
  return sim;
}

/// Distinct, deterministic per-replicate seeds.
inline std::vector<std::uint64_t> replicate_runs(std::size_t n_replicates, std::uint64_t base_seed) {
  if (n_replicates < 1) throw std::invalid_argument("replicate_runs: need at least one replicate");
  std::vector<std::uint64_t> seeds;
  std::set<std::uint64_t> seen;
  for (std::uint64_t stream = 0; seeds.size() < n_replicates; ++stream) {
    const std::uint64_t s = derive_seed(base_seed, 1000 + stream);
    if (seen.insert(s).second) seeds.push_back(s);
  }
  return seeds;
}

}  // namespace dvcm

#endif  // DVCM_SIMGEN_HPP
