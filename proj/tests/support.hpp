#ifndef DVCM_TESTS_SUPPORT_HPP
#define DVCM_TESTS_SUPPORT_HPP

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "dvcm/model.hpp"
#include "dvcm/rng.hpp"

namespace dvcm::test_support {

/// sup |F_n - F| for a continuous reference cdf.
inline double ks_one_sample(std::vector<double> x, const std::function<double(double)>& cdf) {
  std::sort(x.begin(), x.end());
  const double n = static_cast<double>(x.size());
  double d = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double f = cdf(x[i]);
    d = std::max({d, (static_cast<double>(i) + 1.0) / n - f, f - static_cast<double>(i) / n});
  }
  return d;
}

inline double ks_two_sample(std::vector<double> a, std::vector<double> b) {
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  const double na = static_cast<double>(a.size()), nb = static_cast<double>(b.size());
  std::size_t i = 0, j = 0;
  double d = 0.0;
  while (i < a.size() && j < b.size()) {
    const double v = std::min(a[i], b[j]);
    while (i < a.size() && a[i] <= v) ++i;
    while (j < b.size() && b[j] <= v) ++j;
    d = std::max(d, std::abs(static_cast<double>(i) / na - static_cast<double>(j) / nb));
  }
  return d;
}

inline std::vector<double> to_std(const Vector& v) { return {v.data(), v.data() + v.size()}; }

/// Random observations with uniform indices and N(0,1) covariates and responses.
inline Dataset random_dataset(std::size_t n, std::size_t p, std::size_t q, std::size_t d, Eigen::Index s,
                              std::uint64_t seed) {
  Rng rng(seed);
  Dataset ds{{}, p, q, d};
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> c(d);
    for (auto& v : c) v = uniform01(rng);
    ds.observations.push_back(
        Observation{IndexPoint(c), standard_normal(s, rng), standard_normal(s, static_cast<Eigen::Index>(p), rng)});
  }
  return ds;
}

}  // namespace dvcm::test_support

#endif  // DVCM_TESTS_SUPPORT_HPP
