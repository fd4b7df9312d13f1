#pragma once

#include "symkp/diff.hpp"
#include "symkp/geom.hpp"
#include "symkp/types.hpp"

#include <cmath>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace symkp {

/// Architecture hyperparameters. Fixed for the lifetime of a CategoryParams.
struct ModelConfig {
  SymmetryMode mode = SymmetryMode::instance;
  std::size_t n_nodes = 16;
  std::size_t n_basis = 8;
  std::size_t knn_k = 8;
  double leaky_slope = 0.1;
  std::vector<std::size_t> cluster_widths{64, 128};
  std::vector<std::size_t> aggregate_widths{256, 256};
  std::vector<std::size_t> offset_widths{128};
  std::vector<std::size_t> pose_widths{256, 128};

  /// Rows of the stored basis: 3N for mode none, 3N/2 otherwise.
  std::size_t basis_rows() const { return mode == SymmetryMode::none ? 3 * n_nodes : 3 * n_nodes / 2; }
  std::size_t head_outputs() const { return 2 + n_basis * (mode == SymmetryMode::deformation ? 2 : 1); }

  void validate() const {
    if (n_nodes < 2) throw Error("model: need at least 2 nodes");
    if (mode != SymmetryMode::none && n_nodes % 2 != 0) throw Error("model: node count must be even in symmetric modes");
    if (n_basis < 1 || n_basis > 32) throw Error("model: basis size K must lie in [1, 32]");
    if (knn_k < 1 || knn_k > n_nodes) throw Error("model: knn_k must lie in [1, n_nodes]");
    if (cluster_widths.empty() || aggregate_widths.empty()) throw Error("model: empty perceptron widths");
  }
};

struct NamedTensor {
  std::string name;
  diff::Tensor tensor;
};

/// Everything learned for one category.
struct CategoryParams {
  ModelConfig config;
  diff::Tensor half_basis;      // basis_rows × K
  diff::Tensor sym_normal;      // 3, unit length
  diff::Tensor category_angle;  // 1, radians
  std::vector<NamedTensor> net_weights;

  /// All trainable tensors in a fixed order (the optimizer and checkpoint order).
  std::vector<diff::Tensor*> tensors() {
    std::vector<diff::Tensor*> out{&half_basis, &sym_normal, &category_angle};
    for (auto& w : net_weights) out.push_back(&w.tensor);
    return out;
  }
  std::vector<const diff::Tensor*> tensors() const {
    std::vector<const diff::Tensor*> out{&half_basis, &sym_normal, &category_angle};
    for (const auto& w : net_weights) out.push_back(&w.tensor);
    return out;
  }
  std::vector<std::string> names() const {
    std::vector<std::string> out{"half_basis", "sym_normal", "category_angle"};
    for (const auto& w : net_weights) out.push_back(w.name);
    return out;
  }
  const diff::Tensor& weight(const std::string& name) const {
    for (const auto& w : net_weights)
      if (w.name == name) return w.tensor;
    throw Error("no network weight named '" + name + "'");
  }
  Vec3 normal() const { return Vec3(sym_normal.values[0], sym_normal.values[1], sym_normal.values[2]); }

  void renormalize_normal() {
    const double n = normal().norm();
    if (!(n > 0.0)) throw Error("symmetry normal collapsed to zero");
    for (double& v : sym_normal.values) v /= n;
  }

  friend bool operator==(const CategoryParams& a, const CategoryParams& b) {
    if (a.half_basis != b.half_basis || a.sym_normal != b.sym_normal || a.category_angle != b.category_angle) return false;
    if (a.net_weights.size() != b.net_weights.size()) return false;
    for (std::size_t i = 0; i < a.net_weights.size(); ++i)
      if (a.net_weights[i].name != b.net_weights[i].name || a.net_weights[i].tensor != b.net_weights[i].tensor) return false;
    return true;
  }
};

struct PoseCoeffs {
  double angle = 0.0;  // (-pi, pi]
  Eigen::VectorXd c;
  std::optional<Eigen::VectorXd> c_prime;
  bool degenerate = false;  // raw (cos, sin) was zero
};

// -------------------------------------------------------------- initialization

namespace detail {

inline void add_layer(std::vector<NamedTensor>& out, const std::string& prefix, std::size_t in, std::size_t outw,
                      double bound, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-bound, bound);
  diff::Tensor w = diff::Tensor::zeros({in, outw});
  if (bound > 0.0)
    for (double& v : w.values) v = u(rng);
  out.push_back({prefix + ".w", std::move(w)});
  out.push_back({prefix + ".b", diff::Tensor::zeros({outw})});
}

/// Hidden layers use Kaiming-uniform bounds for leaky ReLU.
inline std::size_t add_mlp(std::vector<NamedTensor>& out, const std::string& prefix, std::size_t in,
                           const std::vector<std::size_t>& widths, double slope, std::mt19937_64& rng) {
  for (std::size_t l = 0; l < widths.size(); ++l) {
    const double bound = std::sqrt(6.0 / ((1.0 + slope * slope) * static_cast<double>(in)));
    add_layer(out, prefix + "." + std::to_string(l), in, widths[l], bound, rng);
    in = widths[l];
  }
  return in;
}

}  // namespace detail

inline constexpr std::size_t aggregate_geometry_columns = 6;

/// Fresh parameters: basis uniform in [-0.5, 0.5], normal (1,0,0), category
/// angle 0, fan-in scaled weights, zero node-offset output layer.
inline CategoryParams init_category_params(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  CategoryParams p;
  p.config = config;
  std::mt19937_64 rng(seed);
  p.half_basis = diff::Tensor::zeros({config.basis_rows(), config.n_basis});
  std::uniform_real_distribution<double> ub(-0.5, 0.5);
  for (double& v : p.half_basis.values) v = ub(rng);
  p.sym_normal = diff::Tensor({3}, {1.0, 0.0, 0.0});
  p.category_angle = diff::Tensor::scalar(0.0);

  auto& w = p.net_weights;
  const double s = config.leaky_slope;
  const std::size_t f1 = detail::add_mlp(w, "cluster", 3, config.cluster_widths, s, rng);
  const std::size_t f2 = detail::add_mlp(w, "aggregate", f1 + aggregate_geometry_columns, config.aggregate_widths, s, rng);
  const std::size_t f3 = detail::add_mlp(w, "offset", f2, config.offset_widths, s, rng);
  detail::add_layer(w, "offset.out", f3, 3, 0.0, rng);
  const std::size_t f4 = detail::add_mlp(w, "pose", f2, config.pose_widths, s, rng);
  detail::add_layer(w, "pose.out", f4, config.head_outputs(), 1.0 / std::sqrt(static_cast<double>(f4)), rng);
  // Start at angle 0 with a large (cos, sin) radius: the angle then turns
  // slowly while the basis is still random, which keeps the early pose from
  // locking the category onto a rotated (wrong) symmetry plane.
  w.back().tensor.values[0] = 5.0;
  return p;
}

// ------------------------------------------------------------------- decoding

/// Keypoints from category parameters and one instance's pose/coefficients.
///
///   none:        P = R mat(B c)
///   instance:    P = R [mat(B c) | A mat(B c)]
///   deformation: P = R [mat(B c) | mat(B' c')],  B' = A applied to every basis triplet
///
/// with R = R_z(category_angle) R_z(angle) and A the reflection through the
/// plane with normal n. Rows N/2..N-1 mirror rows 0..N/2-1 in instance mode.
inline Points decode_keypoints(const CategoryParams& params, const PoseCoeffs& pose, SymmetryMode mode) {
  const auto& cfg = params.config;
  const auto k = static_cast<Eigen::Index>(cfg.n_basis);
  if (pose.c.size() != k) throw Error("decode: coefficient count " + std::to_string(pose.c.size()) + " != K");
  if (params.half_basis.cols() != cfg.n_basis) throw Error("decode: basis has wrong column count");
  const auto basis = params.half_basis.mat();
  auto half = [&](const Eigen::VectorXd& c) {
    const Eigen::VectorXd flat = basis * c;
    Points out(flat.size() / 3, 3);
    std::copy(flat.data(), flat.data() + flat.size(), out.data());
    return out;
  };
  Points canonical;
  if (mode == SymmetryMode::none) {
    if (params.half_basis.rows() != 3 * cfg.n_nodes) throw Error("decode: full basis must have 3N rows");
    canonical = half(pose.c);
  } else {
    if (params.half_basis.rows() != 3 * cfg.n_nodes / 2) throw Error("decode: half basis must have 3N/2 rows");
    const Mat3 a = reflection_from_normal(SymmetryPlane(params.normal()));
    const Points first = half(pose.c);
    Points second;
    if (mode == SymmetryMode::instance) {
      second = rotate(first, a);
    } else {
      if (!pose.c_prime || pose.c_prime->size() != k) throw Error("decode: deformation mode needs c' with K entries");
      second = rotate(half(*pose.c_prime), a);
    }
    canonical.resize(first.rows() * 2, 3);
    canonical << first, second;
  }
  const Mat3 r = rotation_about_up(params.category_angle.item()) * rotation_about_up(pose.angle);
  return rotate(canonical, r);
}

/// Basis for the second half in deformation mode: every 3-row block of each
/// column reflected by A.
inline diff::Tensor reflected_basis(const diff::Tensor& half_basis, const Vec3& normal) {
  const Mat3 a = reflection_from_normal(SymmetryPlane(normal));
  diff::Tensor out = half_basis;
  const std::size_t k = half_basis.cols();
  for (std::size_t blk = 0; blk < half_basis.rows() / 3; ++blk)
    for (std::size_t col = 0; col < k; ++col) {
      const Vec3 v(half_basis.values[(3 * blk) * k + col], half_basis.values[(3 * blk + 1) * k + col],
                   half_basis.values[(3 * blk + 2) * k + col]);
      const Vec3 r = a * v;
      for (std::size_t d = 0; d < 3; ++d) out.values[(3 * blk + d) * k + col] = r[static_cast<Eigen::Index>(d)];
    }
  return out;
}

/// Interprets the pose head's raw outputs: (cos, sin) normalized to an angle,
/// then K coefficients (and K more in deformation mode).
inline PoseCoeffs pose_from_raw(std::span<const double> raw, const ModelConfig& cfg) {
  if (raw.size() != cfg.head_outputs()) throw Error("pose head output has wrong size");
  PoseCoeffs p;
  const double c = raw[0], s = raw[1];
  if (std::hypot(c, s) < 1e-12) {
    p.angle = 0.0;
    p.degenerate = true;
  } else {
    p.angle = std::atan2(s, c);
  }
  const auto k = static_cast<Eigen::Index>(cfg.n_basis);
  p.c = Eigen::Map<const Eigen::VectorXd>(raw.data() + 2, k);
  if (cfg.mode == SymmetryMode::deformation) p.c_prime = Eigen::Map<const Eigen::VectorXd>(raw.data() + 2 + k, k);
  return p;
}

// ------------------------------------------------------------ network (graph)

/// CategoryParams placed on a Graph as leaves, in CategoryParams::tensors() order.
struct BoundParams {
  std::vector<diff::Var> vars;
  std::vector<std::string> names;
  diff::Var half_basis, sym_normal, category_angle;

  diff::Var operator[](const std::string& name) const {
    for (std::size_t i = 0; i < names.size(); ++i)
      if (names[i] == name) return vars[i];
    throw Error("no bound parameter '" + name + "'");
  }
};

/// Binds graph variables that already hold the tensors of `p`, in
/// CategoryParams::tensors() order.
inline BoundParams bind_vars(const CategoryParams& p, std::vector<diff::Var> vars) {
  BoundParams b;
  b.names = p.names();
  if (vars.size() != b.names.size()) throw Error("bind: expected " + std::to_string(b.names.size()) + " variables");
  b.vars = std::move(vars);
  b.half_basis = b.vars[0];
  b.sym_normal = b.vars[1];
  b.category_angle = b.vars[2];
  return b;
}

inline BoundParams bind(diff::Graph& g, const CategoryParams& p, bool trainable = true) {
  std::vector<diff::Var> vars;
  for (const auto* t : p.tensors()) vars.push_back(trainable ? g.parameter(*t) : g.constant(*t));
  return bind_vars(p, std::move(vars));
}

namespace detail {

inline diff::Var mlp(diff::Var x, const BoundParams& b, const std::string& prefix, std::size_t layers, double slope) {
  for (std::size_t l = 0; l < layers; ++l) {
    const std::string p = prefix + "." + std::to_string(l);
    x = diff::leaky_relu(diff::affine(x, b[p + ".w"], b[p + ".b"]), slope);
  }
  return x;
}

inline diff::Var const_points(diff::Graph& g, const Points& p) { return g.constant(diff::Tensor::from_points(p)); }

}  // namespace detail

struct NodeBranchOutput {
  diff::Var nodes;     // N×3
  diff::Var features;  // N×F per-node features
  Points initial_nodes;
  IndexList assignment;
};

/// FPS seeds, point-to-node clusters in node-relative coordinates, shared
/// perceptron + per-cluster max, kNN aggregation over seed nodes, then a
/// per-node offset added to the seeds.
inline NodeBranchOutput node_branch(diff::Graph& g, const BoundParams& b, const ModelConfig& cfg, const Points& cloud,
                                    std::uint64_t seed) {
  const std::size_t n = cfg.n_nodes;
  if (n > static_cast<std::size_t>(cloud.rows()))
    throw Error("node_branch: node count " + std::to_string(n) + " exceeds cloud size " + std::to_string(cloud.rows()));
  NodeBranchOutput out;
  out.initial_nodes = select_rows(cloud, farthest_point_sampling(cloud, n, seed));
  out.assignment = point_to_node_grouping(cloud, out.initial_nodes);

  Points rel(cloud.rows(), 3);
  for (Eigen::Index i = 0; i < cloud.rows(); ++i)
    rel.row(i) = cloud.row(i) - out.initial_nodes.row(static_cast<Eigen::Index>(out.assignment[static_cast<Index>(i)]));
  diff::Var h = detail::mlp(detail::const_points(g, rel), b, "cluster", cfg.cluster_widths.size(), cfg.leaky_slope);
  diff::Var cluster_feat = diff::segment_max(h, out.assignment, n);

  const std::size_t k = cfg.knn_k;
  const IndexList nbr = knn(out.initial_nodes, out.initial_nodes, k);
  diff::Tensor geo = diff::Tensor::zeros({n * k, aggregate_geometry_columns});
  IndexList group(n * k);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < k; ++j) {
      const std::size_t r = i * k + j;
      group[r] = i;
      for (int c = 0; c < 3; ++c) {
        const auto ci = static_cast<std::size_t>(c);
        geo.values[r * 6 + ci] = out.initial_nodes(static_cast<Eigen::Index>(nbr[r]), c) - out.initial_nodes(static_cast<Eigen::Index>(i), c);
        geo.values[r * 6 + 3 + ci] = out.initial_nodes(static_cast<Eigen::Index>(i), c);
      }
    }
  diff::Var pair_in = diff::concat({diff::gather_rows(cluster_feat, nbr), g.constant(std::move(geo))}, 1);
  diff::Var h2 = detail::mlp(pair_in, b, "aggregate", cfg.aggregate_widths.size(), cfg.leaky_slope);
  out.features = diff::segment_max(h2, group, n);

  diff::Var o = detail::mlp(out.features, b, "offset", cfg.offset_widths.size(), cfg.leaky_slope);
  o = diff::affine(o, b["offset.out.w"], b["offset.out.b"]);
  out.nodes = diff::add(detail::const_points(g, out.initial_nodes), o);
  return out;
}

struct PoseBranchOutput {
  diff::Var raw;       // 1×(2+K[+K])
  diff::Var cos, sin;  // normalized rotation, 1 entry each
  diff::Var c;         // 1×K
  diff::Var c_prime;   // 1×K, deformation mode only
  bool degenerate = false;
};

inline PoseBranchOutput pose_coeff_branch(diff::Graph& g, const BoundParams& b, const ModelConfig& cfg, diff::Var node_features) {
  PoseBranchOutput out;
  diff::Var x = diff::max_over_set(node_features, 0);
  x = detail::mlp(x, b, "pose", cfg.pose_widths.size(), cfg.leaky_slope);
  out.raw = diff::affine(x, b["pose.out.w"], b["pose.out.b"]);
  diff::Var rc = diff::reshape(diff::slice_cols(out.raw, 0, 1), {1});
  diff::Var rs = diff::reshape(diff::slice_cols(out.raw, 1, 2), {1});
  if (std::hypot(rc.value().item(), rs.value().item()) < 1e-12) {
    out.degenerate = true;
    out.cos = g.constant(diff::Tensor::scalar(1.0));
    out.sin = g.constant(diff::Tensor::scalar(0.0));
  } else {
    diff::Var r = diff::sqrt(diff::add(diff::square(rc), diff::square(rs)));
    out.cos = diff::div(rc, r);
    out.sin = diff::div(rs, r);
  }
  const std::size_t k = cfg.n_basis;
  out.c = diff::slice_cols(out.raw, 2, 2 + k);
  if (cfg.mode == SymmetryMode::deformation) out.c_prime = diff::slice_cols(out.raw, 2 + k, 2 + 2 * k);
  return out;
}

/// Graph version of decode_keypoints.
inline diff::Var decode_graph(const BoundParams& b, const ModelConfig& cfg, diff::Var cos_i, diff::Var sin_i, diff::Var c,
                              diff::Var c_prime) {
  const std::size_t k = cfg.n_basis;
  auto half = [&](diff::Var coeffs) {
    diff::Var flat = diff::matmul(b.half_basis, diff::reshape(coeffs, {k, 1}));
    return diff::reshape(flat, {cfg.basis_rows() / 3, 3});
  };
  diff::Var canonical;
  if (cfg.mode == SymmetryMode::none) {
    canonical = half(c);
  } else {
    diff::Var first = half(c);
    diff::Var second = diff::reflect(cfg.mode == SymmetryMode::instance ? first : half(c_prime), b.sym_normal);
    canonical = diff::concat({first, second}, 0);
  }
  diff::Var posed = diff::rotate_up(canonical, cos_i, sin_i);
  return diff::rotate_up(posed, diff::cos(b.category_angle), diff::sin(b.category_angle));
}

struct ForwardOutput {
  NodeBranchOutput node;
  PoseBranchOutput pose;
  diff::Var keypoints;  // N×3
};

inline ForwardOutput forward(diff::Graph& g, const BoundParams& b, const ModelConfig& cfg, const Points& cloud,
                             std::uint64_t seed) {
  ForwardOutput f;
  f.node = node_branch(g, b, cfg, cloud, seed);
  f.pose = pose_coeff_branch(g, b, cfg, f.node.features);
  f.keypoints = decode_graph(b, cfg, f.pose.cos, f.pose.sin, f.pose.c, f.pose.c_prime);
  return f;
}

/// Everything inference produces for one instance.
struct InstancePrediction {
  Points nodes;
  Points keypoints;            // posed
  Points canonical_keypoints;  // R_total^T keypoints
  PoseCoeffs pose;
  Mat3 total_rotation = Mat3::Identity();
};

inline InstancePrediction predict(const CategoryParams& params, const Points& cloud, std::uint64_t seed) {
  diff::Graph g;
  const BoundParams b = bind(g, params, false);
  const ForwardOutput f = forward(g, b, params.config, cloud, seed);
  InstancePrediction out;
  out.nodes = f.node.nodes.value().to_points();
  out.keypoints = f.keypoints.value().to_points();
  out.pose = pose_from_raw(f.pose.raw.value().values, params.config);
  out.total_rotation = rotation_about_up(params.category_angle.item()) * rotation_about_up(out.pose.angle);
  out.canonical_keypoints = rotate(out.keypoints, out.total_rotation.transpose());
  return out;
}

}  // namespace symkp
