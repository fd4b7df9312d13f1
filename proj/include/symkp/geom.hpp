#pragma once

#include "symkp/types.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <vector>

namespace symkp {

/// Reflective symmetry plane through the origin, stored by its unit normal.
class SymmetryPlane {
 public:
  explicit SymmetryPlane(const Vec3& normal) : normal_(normal) {
    if (!normal.allFinite() || std::abs(normal.norm() - 1.0) > 1e-9)
      throw Error("symmetry plane normal must be unit length");
  }
  const Vec3& normal() const noexcept { return normal_; }

 private:
  Vec3 normal_;
};

struct SimilarityTransform {
  double scale = 1.0;
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();

  Vec3 apply(const Vec3& p) const { return scale * (rotation * p) + translation; }
  Points apply(const Points& pts) const {
    Points out(pts.rows(), 3);
    for (Eigen::Index i = 0; i < pts.rows(); ++i)
      out.row(i) = apply(Vec3(pts.row(i).transpose())).transpose();
    return out;
  }
};

inline double squared_distance(const Points& a, Eigen::Index i, const Points& b, Eigen::Index j) {
  return (a.row(i) - b.row(j)).squaredNorm();
}

/// Farthest point sampling starting from a fixed first index. Ties go to the
/// smallest index.
inline IndexList farthest_point_sampling_from(const Points& points, Index n, Index first) {
  const auto m = static_cast<Index>(points.rows());
  if (n > m) throw Error("farthest_point_sampling: n=" + std::to_string(n) + " exceeds point count " + std::to_string(m));
  if (n == 0) return {};
  if (first >= m) throw Error("farthest_point_sampling: first index out of range");
  IndexList selected;
  selected.reserve(n);
  std::vector<double> min_d(m, std::numeric_limits<double>::infinity());
  Index current = first;
  for (Index s = 0; s < n; ++s) {
    selected.push_back(current);
    min_d[current] = -1.0;
    const Vec3 c = row(points, current);
    Index best = m;
    double best_d = -std::numeric_limits<double>::infinity();
    for (Index i = 0; i < m; ++i) {
      if (min_d[i] < 0.0) continue;
      const double d = (points.row(static_cast<Eigen::Index>(i)).transpose() - c).squaredNorm();
      if (d < min_d[i]) min_d[i] = d;
      if (min_d[i] > best_d) {
        best_d = min_d[i];
        best = i;
      }
    }
    current = best;
  }
  return selected;
}

/// Farthest point sampling; the first index is drawn from `seed`.
inline IndexList farthest_point_sampling(const Points& points, Index n, std::uint64_t seed) {
  if (n > static_cast<Index>(points.rows()))
    throw Error("farthest_point_sampling: n=" + std::to_string(n) + " exceeds point count " +
                std::to_string(points.rows()));
  if (n == 0) return {};
  std::mt19937_64 rng(seed);
  const Index first = static_cast<Index>(rng() % static_cast<std::uint64_t>(points.rows()));
  return farthest_point_sampling_from(points, n, first);
}

/// Nearest node for every point (squared Euclidean, ties to the smallest node index).
inline IndexList point_to_node_grouping(const Points& points, const Points& nodes) {
  if (nodes.rows() < 1) throw Error("point_to_node_grouping: no nodes");
  IndexList out(static_cast<Index>(points.rows()));
  for (Eigen::Index i = 0; i < points.rows(); ++i) {
    Eigen::Index best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (Eigen::Index j = 0; j < nodes.rows(); ++j) {
      const double d = squared_distance(points, i, nodes, j);
      if (d < best_d) {
        best_d = d;
        best = j;
      }
    }
    out[static_cast<Index>(i)] = static_cast<Index>(best);
  }
  return out;
}

/// k nearest references per query, ascending distance, ties by index.
/// Result is row-major Q×k.
inline IndexList knn(const Points& queries, const Points& refs, Index k) {
  const auto r = static_cast<Index>(refs.rows());
  if (k > r) throw Error("knn: k=" + std::to_string(k) + " exceeds reference count " + std::to_string(r));
  IndexList out;
  out.reserve(static_cast<Index>(queries.rows()) * k);
  std::vector<std::pair<double, Index>> d(r);
  for (Eigen::Index q = 0; q < queries.rows(); ++q) {
    for (Index j = 0; j < r; ++j) d[j] = {squared_distance(queries, q, refs, static_cast<Eigen::Index>(j)), j};
    std::partial_sort(d.begin(), d.begin() + static_cast<std::ptrdiff_t>(k), d.end());
    for (Index j = 0; j < k; ++j) out.push_back(d[j].second);
  }
  return out;
}

inline Vec3 bbox_extent(const Points& points) {
  if (points.rows() == 0) throw Error("bbox of empty point set");
  return (points.colwise().maxCoeff() - points.colwise().minCoeff()).transpose();
}

inline double bbox_volume(const Points& points) {
  const Vec3 e = bbox_extent(points);
  return e.x() * e.y() * e.z();
}

/// Householder reflection I - 2 n n^T.
inline Mat3 reflection_from_normal(const SymmetryPlane& plane) {
  const Vec3& n = plane.normal();
  return Mat3::Identity() - 2.0 * n * n.transpose();
}

/// Proper rotation about +z.
inline Mat3 rotation_about_up(double angle) {
  const double c = std::cos(angle), s = std::sin(angle);
  Mat3 r;
  r << c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0;
  return r;
}

inline Points rotate(const Points& pts, const Mat3& r) { return pts * r.transpose(); }

/// Sum over `a` of the squared distance to the nearest point of `b`.
inline double one_sided_chamfer(const Points& a, const Points& b) {
  if (a.rows() == 0 || b.rows() == 0) throw Error("chamfer of empty set");
  double total = 0.0;
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    double best = std::numeric_limits<double>::infinity();
    for (Eigen::Index j = 0; j < b.rows(); ++j) best = std::min(best, squared_distance(a, i, b, j));
    total += best;
  }
  return total;
}

/// Symmetric Chamfer distance as a plain sum of both directions.
inline double chamfer(const Points& a, const Points& b) { return one_sided_chamfer(a, b) + one_sided_chamfer(b, a); }

/// Closed-form least-squares similarity mapping src onto dst (Umeyama).
/// Returns nullopt when the cross-covariance is rank deficient.
inline std::optional<SimilarityTransform> similarity_registration(const Points& src, const Points& dst) {
  if (src.rows() != dst.rows()) throw Error("similarity_registration: point count mismatch");
  if (src.rows() < 3) throw Error("similarity_registration: need at least 3 correspondences");
  const double n = static_cast<double>(src.rows());
  const Eigen::RowVector3d mu_s = src.colwise().mean();
  const Eigen::RowVector3d mu_d = dst.colwise().mean();
  const Points sc = src.rowwise() - mu_s;
  const Points dc = dst.rowwise() - mu_d;
  const double var_s = sc.squaredNorm() / n;
  const Mat3 cov = (dc.transpose() * sc) / n;

  Eigen::JacobiSVD<Mat3> svd(cov, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Vec3 sv = svd.singularValues();
  if (var_s <= 0.0 || sv(0) <= 0.0 || sv(1) <= 1e-10 * sv(0)) return std::nullopt;

  Vec3 d = Vec3::Ones();
  if (svd.matrixU().determinant() * svd.matrixV().determinant() < 0.0) d(2) = -1.0;
  SimilarityTransform t;
  t.rotation = svd.matrixU() * d.asDiagonal() * svd.matrixV().transpose();
  t.scale = sv.dot(d) / var_s;
  t.translation = mu_d.transpose() - t.scale * t.rotation * mu_s.transpose();
  return t;
}

/// Angle (radians) of the relative rotation a * b^T.
inline double rotation_angle_between(const Mat3& a, const Mat3& b) {
  const double c = std::clamp(((a * b.transpose()).trace() - 1.0) / 2.0, -1.0, 1.0);
  return std::acos(c);
}

/// Category-level non-maximal suppression over ordered keypoint sets.
///
/// The mean of every keypoint index is taken over all sets; means are then
/// visited in index order and each retained index suppresses every later index
/// whose mean lies closer than `radius`. The same subset applies to all
/// instances, so ordering survives. Per-coordinate sums are taken over sorted
/// values, which makes the result independent of the order of the sets.
inline IndexList nms_select(std::span<const Points> keypoint_sets, double radius) {
  if (keypoint_sets.empty()) return {};
  const Eigen::Index n = keypoint_sets.front().rows();
  for (const auto& s : keypoint_sets)
    if (s.rows() != n) throw Error("nms_select: keypoint sets differ in size");
  Points mean(n, 3);
  std::vector<double> vals(keypoint_sets.size());
  for (Eigen::Index j = 0; j < n; ++j)
    for (int c = 0; c < 3; ++c) {
      for (std::size_t s = 0; s < keypoint_sets.size(); ++s) vals[s] = keypoint_sets[s](j, c);
      std::sort(vals.begin(), vals.end());
      mean(j, c) = std::accumulate(vals.begin(), vals.end(), 0.0) / static_cast<double>(vals.size());
    }
  std::vector<bool> suppressed(static_cast<Index>(n), false);
  IndexList retained;
  for (Eigen::Index i = 0; i < n; ++i) {
    if (suppressed[static_cast<Index>(i)]) continue;
    retained.push_back(static_cast<Index>(i));
    for (Eigen::Index j = i + 1; j < n; ++j)
      if (!suppressed[static_cast<Index>(j)] && (mean.row(i) - mean.row(j)).norm() < radius)
        suppressed[static_cast<Index>(j)] = true;
  }
  return retained;
}

inline Points select_rows(const Points& pts, const IndexList& idx) {
  Points out(static_cast<Eigen::Index>(idx.size()), 3);
  for (std::size_t i = 0; i < idx.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = pts.row(static_cast<Eigen::Index>(idx[i]));
  return out;
}

/// Index of the nearest row of `set` to point `p` (ties to smallest index).
inline Index nearest_index(const Points& set, const Vec3& p) {
  Index best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (Eigen::Index j = 0; j < set.rows(); ++j) {
    const double d = (set.row(j).transpose() - p).squaredNorm();
    if (d < best_d) {
      best_d = d;
      best = static_cast<Index>(j);
    }
  }
  return best;
}

}  // namespace symkp
