#ifndef DVCM_RNG_HPP
#define DVCM_RNG_HPP

#include <cstdint>
#include <random>

#include "dvcm/linalg.hpp"

namespace dvcm {

using Rng = std::mt19937_64;

/// splitmix64 finalizer; mixes a base seed with a stream id so that every
/// (seed, stream) pair gets an independent-looking generator.
inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream) {
  std::uint64_t z = base + 0x9E3779B97F4A7C15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

inline Rng make_rng(std::uint64_t base, std::uint64_t stream) {
  return Rng(derive_seed(base, stream));
}

inline Vector standard_normal(Eigen::Index n, Rng& rng) {
  std::normal_distribution<double> dist(0.0, 1.0);
  Vector z(n);
  for (Eigen::Index i = 0; i < n; ++i) z[i] = dist(rng);
  return z;
}

inline Matrix standard_normal(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
  std::normal_distribution<double> dist(0.0, 1.0);
  Matrix z(rows, cols);
  for (Eigen::Index j = 0; j < cols; ++j)
    for (Eigen::Index i = 0; i < rows; ++i) z(i, j) = dist(rng);
  return z;
}

inline double uniform01(Rng& rng) {
  return std::uniform_real_distribution<double>(0.0, 1.0)(rng);
}

}  // namespace dvcm

#endif  // DVCM_RNG_HPP
