// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "depthmesh/numerics.hpp"
#include "depthmesh/rotation.hpp"

#include <cmath>
#include <functional>
#include <random>

namespace depthmesh::testing {

inline Matrix random_matrix(Eigen::Index rows, Eigen::Index cols, Rng& rng, double sigma = 1.0) {
  std::normal_distribution<double> n(0.0, sigma);
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
  return m;
}

inline double uniform(Rng& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

inline Vec3 random_unit(Rng& rng) {
  Vec3 v = random_matrix(3, 1, rng);
  return v.normalized();
}

inline UnitQuaternion random_rotation(Rng& rng, double max_angle = 3.1) {
  return quat_from_axis_angle(random_unit(rng), uniform(rng, 0.0, max_angle));
}

/// Central-difference gradient of a scalar function of a matrix.
inline Matrix numeric_gradient(const std::function<double(const Matrix&)>& f, Matrix x,
                               double step = 1e-6) {
  Matrix g(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double saved = x.data()[i];
    x.data()[i] = saved + step;
    const double plus = f(x);
    x.data()[i] = saved - step;
    const double minus = f(x);
    x.data()[i] = saved;
    g.data()[i] = (plus - minus) / (2.0 * step);
  }
  return g;
}

inline double max_rel_error(const Matrix& a, const Matrix& b) {
  double worst = 0.0;
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    const double denom = std::max({std::abs(a.data()[i]), std::abs(b.data()[i]), 1e-8});
    worst = std::max(worst, std::abs(a.data()[i] - b.data()[i]) / denom);
  }
  return worst;
}

}  // namespace depthmesh::testing
