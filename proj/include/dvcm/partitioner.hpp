#ifndef DVCM_PARTITIONER_HPP
#define DVCM_PARTITIONER_HPP

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <istream>
#include <numeric>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "dvcm/model.hpp"
#include "dvcm/rng.hpp"

namespace dvcm {

struct SubsetPlan {
  std::size_t k = 0;
  std::size_t m = 0;
  std::uint64_t seed = 0;
  std::vector<std::vector<std::size_t>> assignments;

  bool operator==(const SubsetPlan&) const = default;
};

/// Draws k independent without-replacement samples of size m from {0..n-1}.
/// Each subset has its own RNG stream (seed, j) and is stored in ascending
/// order, so k = 1, m = n reproduces the original observation order.
inline SubsetPlan make_subsets(std::size_t n, std::size_t k, std::size_t m, std::uint64_t seed) {
  if (k < 1) throw std::invalid_argument("make_subsets: k must be positive");
  if (m < 1 || m > n) throw std::invalid_argument("make_subsets: need 1 <= m <= n");
  SubsetPlan plan{k, m, seed, std::vector<std::vector<std::size_t>>(k)};
  std::vector<std::size_t> pool(n);
  for (std::size_t j = 0; j < k; ++j) {
    std::iota(pool.begin(), pool.end(), 0);
    Rng rng = make_rng(seed, j);
    for (std::size_t i = 0; i < m; ++i) {
      std::uniform_int_distribution<std::size_t> pick(i, n - 1);
      std::swap(pool[i], pool[pick(rng)]);
    }
    plan.assignments[j].assign(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(m));
    std::sort(plan.assignments[j].begin(), plan.assignments[j].end());
  }
  return plan;
}

inline SubsetPlan make_subsets(const Dataset& data, std::size_t k, std::size_t m, std::uint64_t seed) {
  return make_subsets(data.size(), k, m, seed);
}

inline void write_manifest(std::ostream& os, const SubsetPlan& plan) {
  os << "# k=" << plan.k << " m=" << plan.m << " seed=" << plan.seed << '\n';
  for (const auto& subset : plan.assignments) {
    for (std::size_t i = 0; i < subset.size(); ++i) os << (i ? " " : "") << subset[i];
    os << '\n';
  }
}

inline SubsetPlan read_manifest(std::istream& is) {
  SubsetPlan plan;
  std::string line;
  if (!std::getline(is, line) || line.rfind("# k=", 0) != 0)
    throw std::runtime_error("subset manifest: missing header");
  if (std::sscanf(line.c_str(), "# k=%zu m=%zu seed=%lu", &plan.k, &plan.m,
                  reinterpret_cast<unsigned long*>(&plan.seed)) != 3)
    throw std::runtime_error("subset manifest: malformed header");
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::vector<std::size_t> ids;
    std::size_t id;
    while (ls >> id) ids.push_back(id);
    plan.assignments.push_back(std::move(ids));
  }
  if (plan.assignments.size() != plan.k) throw std::runtime_error("subset manifest: wrong number of subsets");
  return plan;
}

}  // namespace dvcm

#endif  // DVCM_PARTITIONER_HPP
