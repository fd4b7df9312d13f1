#pragma once

#include "symkp/diff.hpp"
#include "symkp/geom.hpp"

namespace symkp {

struct LossWeights {
  double chamfer = 1.0;
  double coverage = 1.0;
  double inclusivity = 2.0;
};

/// Symmetric sum of nearest-neighbour squared distances between nodes and keypoints.
inline diff::Var chamfer_loss(diff::Var nodes, diff::Var keypoints) {
  return diff::add(diff::sum(diff::min_sqdist_to_set(nodes, keypoints)),
                   diff::sum(diff::min_sqdist_to_set(keypoints, nodes)));
}

/// Bounding-box volume of an N×3 set, differentiable through the per-axis
/// extrema.
inline diff::Var bbox_volume(diff::Var points) {
  return diff::prod(diff::sub(diff::max_over_set(points, 0), diff::min_over_set(points, 0)));
}

/// Huber penalty on the gap between node and cloud bounding-box volumes.
inline diff::Var coverage_loss(diff::Var nodes, double cloud_volume, double delta = 1.0) {
  return diff::huber(diff::add_scalar(bbox_volume(nodes), -cloud_volume), delta);
}

inline diff::Var coverage_loss(diff::Var nodes, const Points& cloud, double delta = 1.0) {
  return coverage_loss(nodes, symkp::bbox_volume(cloud), delta);
}

/// One-sided Chamfer from nodes to the cloud; the cloud is held constant.
inline diff::Var inclusivity_loss(diff::Var nodes, const Points& cloud) {
  diff::Var c = nodes.graph().constant(diff::Tensor::from_points(cloud));
  return diff::sum(diff::min_sqdist_to_set(nodes, c));
}

struct LossTerms {
  diff::Var chamfer, coverage, inclusivity, total;
};

inline diff::Var weighted_total(diff::Var chf, diff::Var cov, diff::Var inc, const LossWeights& w) {
  return diff::add(diff::add(diff::scale(chf, w.chamfer), diff::scale(cov, w.coverage)), diff::scale(inc, w.inclusivity));
}

inline LossTerms total_loss(diff::Var nodes, diff::Var keypoints, const Points& cloud, const LossWeights& w,
                            double huber_delta = 1.0) {
  LossTerms t;
  t.chamfer = chamfer_loss(nodes, keypoints);
  t.coverage = coverage_loss(nodes, cloud, huber_delta);
  t.inclusivity = inclusivity_loss(nodes, cloud);
  t.total = weighted_total(t.chamfer, t.coverage, t.inclusivity, w);
  return t;
}

}  // namespace symkp
