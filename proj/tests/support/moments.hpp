#pragma once

#include <cmath>

#include <Eigen/Dense>

#include "statdiff/kds.hpp"

namespace statdiff::testing {

struct ColumnMoments {
  Eigen::VectorXd mean;
  Eigen::VectorXd variance;  // unbiased
};

inline ColumnMoments column_moments(const Samples& D) {
  const auto n = static_cast<double>(D.rows());
  ColumnMoments m;
  m.mean = D.colwise().mean().transpose();
  m.variance = (D.rowwise() - m.mean.transpose()).array().square().colwise().sum().transpose() /
               (n - 1.0);
  return m;
}

// Standard errors for roughly independent samples: sqrt(var / n) for the mean,
// sqrt(2 / (n - 1)) var for the variance of a Gaussian column.
inline double mean_se(double variance, Eigen::Index n) {
  return std::sqrt(variance / static_cast<double>(n));
}

inline double variance_se(double variance, Eigen::Index n) {
  return variance * std::sqrt(2.0 / static_cast<double>(n - 1));
}

}  // namespace statdiff::testing
