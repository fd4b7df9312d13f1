#pragma once

#include "symkp/symkp.hpp"

#include <random>

namespace testutil {

inline symkp::Points random_points(std::size_t n, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  symkp::Points p(static_cast<Eigen::Index>(n), 3);
  for (Eigen::Index i = 0; i < p.rows(); ++i)
    for (int c = 0; c < 3; ++c) p(i, c) = u(rng);
  return p;
}

inline symkp::Vec3 random_unit(std::mt19937_64& rng) {
  std::normal_distribution<double> g;
  symkp::Vec3 v(g(rng), g(rng), g(rng));
  return v.normalized();
}

inline symkp::Mat3 random_rotation(std::mt19937_64& rng) {
  std::normal_distribution<double> g;
  Eigen::Quaterniond q(g(rng), g(rng), g(rng), g(rng));
  return q.normalized().toRotationMatrix();
}

inline symkp::Points pts(std::initializer_list<std::array<double, 3>> rows) {
  symkp::Points p(static_cast<Eigen::Index>(rows.size()), 3);
  Eigen::Index i = 0;
  for (const auto& r : rows) {
    p.row(i++) << r[0], r[1], r[2];
  }
  return p;
}

inline double max_abs_diff(const symkp::Points& a, const symkp::Points& b) { return (a - b).cwiseAbs().maxCoeff(); }

}  // namespace testutil
