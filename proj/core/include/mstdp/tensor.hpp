#pragma once

#include <Eigen/Dense>
#include <Eigen/SparseCore>

#include "mstdp/rng.hpp"

namespace mstdp {

using Tensor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using SparseTensor = Eigen::SparseMatrix<double, Eigen::RowMajor>;

inline Tensor xavier_uniform(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
  double limit = std::sqrt(6.0 / static_cast<double>(rows + cols));
  std::uniform_real_distribution<double> u(-limit, limit);
  Tensor t(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) t(r, c) = u(rng);
  return t;
}

inline Tensor gaussian(Eigen::Index rows, Eigen::Index cols, double stddev, Rng& rng) {
  std::normal_distribution<double> n(0.0, stddev);
  Tensor t(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) t(r, c) = n(rng);
  return t;
}

} // namespace mstdp
