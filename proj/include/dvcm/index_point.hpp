#ifndef DVCM_INDEX_POINT_HPP
#define DVCM_INDEX_POINT_HPP

#include <cstddef>
#include <initializer_list>
#include <stdexcept>
#include <string>
#include <vector>

#include "dvcm/linalg.hpp"

namespace dvcm {

/// A location in the indexing space [0,1]^d.
class IndexPoint {
 public:
  IndexPoint() = default;
  explicit IndexPoint(std::vector<double> coords) : coords_(std::move(coords)) { validate(); }
  IndexPoint(std::initializer_list<double> coords) : coords_(coords) { validate(); }

  std::size_t dim() const { return coords_.size(); }
  double operator[](std::size_t i) const { return coords_[i]; }
  const std::vector<double>& coords() const { return coords_; }

  bool operator==(const IndexPoint&) const = default;

 private:
  void validate() const {
    if (coords_.empty()) throw std::invalid_argument("IndexPoint: dimension must be at least 1");
    for (double c : coords_) {
      if (!(c >= 0.0 && c <= 1.0))
        throw std::invalid_argument("IndexPoint: coordinate " + std::to_string(c) +
                                    " outside [0,1]");
    }
  }

  std::vector<double> coords_;
};

/// Row-per-point matrix view used by the numerical kernels.
inline Matrix to_matrix(const std::vector<IndexPoint>& points) {
  if (points.empty()) return Matrix(0, 0);
  const auto d = static_cast<Eigen::Index>(points.front().dim());
  Matrix m(static_cast<Eigen::Index>(points.size()), d);
  for (std::size_t i = 0; i < points.size(); ++i) {
    if (static_cast<Eigen::Index>(points[i].dim()) != d)
      throw std::invalid_argument("index points have inconsistent dimensions");
    for (Eigen::Index k = 0; k < d; ++k) m(static_cast<Eigen::Index>(i), k) = points[i][k];
  }
  return m;
}

}  // namespace dvcm

#endif  // DVCM_INDEX_POINT_HPP
