#ifndef DVCM_MODEL_HPP
#define DVCM_MODEL_HPP

#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "dvcm/index_point.hpp"
#include "dvcm/kernels.hpp"
#include "dvcm/linalg.hpp"

namespace dvcm {

/// One indexed observation: response y (s_i) and covariates X (s_i x p).
/// The first q columns of X act as Z.
struct Observation {
  IndexPoint u;
  Vector y;
  Matrix x;

  Eigen::Index s() const { return y.size(); }
};

struct Dataset {
  std::vector<Observation> observations;
  std::size_t p = 0;
  std::size_t q = 0;
  std::size_t d = 0;

  std::size_t size() const { return observations.size(); }

  void validate() const {
    if (observations.empty()) throw std::invalid_argument("dataset has no observations");
    if (q > p) throw std::invalid_argument("dataset requires q <= p");
    for (std::size_t i = 0; i < observations.size(); ++i) {
      const auto& o = observations[i];
      if (o.y.size() < 1) throw std::invalid_argument("observation " + std::to_string(i) + " has empty response");
      if (o.x.rows() != o.y.size() || static_cast<std::size_t>(o.x.cols()) != p)
        throw std::invalid_argument("observation " + std::to_string(i) + " has inconsistent covariates");
      if (o.u.dim() != d) throw std::invalid_argument("observation " + std::to_string(i) + " has wrong index dimension");
    }
  }

  std::vector<IndexPoint> points() const {
    std::vector<IndexPoint> pts;
    pts.reserve(observations.size());
    for (const auto& o : observations) pts.push_back(o.u);
    return pts;
  }

  Dataset subset(const std::vector<std::size_t>& ids) const {
    Dataset out{{}, p, q, d};
    out.observations.reserve(ids.size());
    for (std::size_t id : ids) out.observations.push_back(observations.at(id));
    return out;
  }
};

struct FitcOptions {
  std::size_t rank = 0;
  InducingSelection selection = InducingSelection::RandomSubsample;
  double nugget = 1e-8;
};

struct ModelSpec {
  std::size_t p = 0;
  std::size_t q = 0;
  std::size_t d = 0;
  std::vector<KernelFamily> kernels;  // one per varying coefficient
  std::vector<PriorRange> priors;     // one per varying coefficient
  double delta = 1.0;                 // likelihood tempering power
  std::optional<FitcOptions> fitc;

  void validate() const {
    if (q < 1 || q > p) throw std::invalid_argument("model spec requires 1 <= q <= p");
    if (d < 1) throw std::invalid_argument("model spec requires d >= 1");
    if (kernels.size() != q || priors.size() != q)
      throw std::invalid_argument("model spec needs one kernel family and prior range per varying coefficient");
    for (std::size_t a = 0; a < q; ++a) {
      priors[a].validate(kernels[a]);
      if (kernels[a] == KernelFamily::Gneiting && d != 3)
        throw std::invalid_argument("Gneiting kernel requires d = 3");
    }
    if (!(delta >= 1.0)) throw std::invalid_argument("tempering power delta must be >= 1");
    if (fitc && fitc->rank < 1) throw std::invalid_argument("FITC rank must be positive");
  }

  std::size_t theta_dim() const {
    std::size_t n = 0;
    for (auto f : kernels) n += arity(f);
    return n;
  }
};

/// Global parameters (alpha, Gamma, tau^2, theta). b = (alpha, vec(Gamma)),
/// with Gamma vectorized column by column.
struct ParamState {
  Vector alpha;
  Matrix gamma;
  double tau2 = 1.0;
  std::vector<KernelParams> theta;

  Vector b() const {
    Vector out(alpha.size() + gamma.size());
    out << alpha, Eigen::Map<const Vector>(gamma.data(), gamma.size());
    return out;
  }

  void set_b(const Vector& b, std::size_t p, std::size_t q) {
    if (static_cast<std::size_t>(b.size()) != p + q * q) throw std::invalid_argument("set_b: size mismatch");
    alpha = b.head(static_cast<Eigen::Index>(p));
    gamma = Eigen::Map<const Matrix>(b.data() + p, static_cast<Eigen::Index>(q), static_cast<Eigen::Index>(q));
  }
};

/// Latent GP values: row i, column a holds nu_a at the i-th index.
struct LatentState {
  Matrix nu;
};

// ---------------------------------------------------------------------------

/// Row block i is [X(u_i) | nu(u_i)^T (x) Z(u_i)].
inline Matrix build_design_W(const std::vector<Observation>& obs, const Matrix& nu, std::size_t p,
                             std::size_t q) {
  if (static_cast<std::size_t>(nu.rows()) != obs.size() || static_cast<std::size_t>(nu.cols()) != q)
    throw std::invalid_argument("build_design_W: latent matrix shape does not match observations");
  Eigen::Index rows = 0;
  for (const auto& o : obs) rows += o.s();
  const auto P = static_cast<Eigen::Index>(p), Q = static_cast<Eigen::Index>(q);
  Matrix w(rows, P + Q * Q);
  Eigen::Index r = 0;
  for (std::size_t i = 0; i < obs.size(); ++i) {
    const auto& o = obs[i];
    if (o.x.cols() != P || o.x.rows() != o.s())
      throw std::invalid_argument("build_design_W: covariate shape mismatch");
    w.block(r, 0, o.s(), P) = o.x;
    for (Eigen::Index c = 0; c < Q; ++c)
      w.block(r, P + c * Q, o.s(), Q) = nu(static_cast<Eigen::Index>(i), c) * o.x.leftCols(Q);
    r += o.s();
  }
  return w;
}

/// beta(u) = (alpha_va + Gamma nu(u), alpha_nv).
inline Vector beta_from_state(const Vector& alpha, const Matrix& gamma, const Vector& nu_at_point) {
  const Eigen::Index q = gamma.rows();
  if (gamma.cols() != q || nu_at_point.size() != q || alpha.size() < q)
    throw std::invalid_argument("beta_from_state: dimension mismatch");
  Vector beta = alpha;
  beta.head(q) += gamma * nu_at_point;
  return beta;
}

inline Vector mean_response(const Matrix& x, const Vector& beta) {
  if (x.cols() != beta.size()) throw std::invalid_argument("mean_response: dimension mismatch");
  return x * beta;
}

/// Observations flattened into stacked vectors for the samplers.
struct StackedObservations {
  Vector y;                            // s_tilde
  Matrix x;                            // s_tilde x p
  std::vector<Eigen::Index> offset;    // size m + 1
  Matrix points;                       // m x d

  Eigen::Index m() const { return points.rows(); }
  Eigen::Index s_tilde() const { return y.size(); }
  Eigen::Index rows_of(Eigen::Index i) const { return offset[i + 1] - offset[i]; }
};

inline StackedObservations stack_observations(const std::vector<Observation>& obs) {
  if (obs.empty()) throw std::invalid_argument("no observations to stack");
  StackedObservations st;
  Eigen::Index rows = 0;
  st.offset.push_back(0);
  for (const auto& o : obs) {
    rows += o.s();
    st.offset.push_back(rows);
  }
  const Eigen::Index p = obs.front().x.cols();
  st.y.resize(rows);
  st.x.resize(rows, p);
  std::vector<IndexPoint> pts;
  for (std::size_t i = 0; i < obs.size(); ++i) {
    if (obs[i].x.cols() != p) throw std::invalid_argument("inconsistent covariate count");
    st.y.segment(st.offset[i], obs[i].s()) = obs[i].y;
    st.x.middleRows(st.offset[i], obs[i].s()) = obs[i].x;
    pts.push_back(obs[i].u);
  }
  st.points = to_matrix(pts);
  return st;
}

}  // namespace dvcm

#endif  // DVCM_MODEL_HPP
