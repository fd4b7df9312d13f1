#include "util.hpp"

#include <gtest/gtest.h>

#include <numbers>

using namespace symkp;

namespace {

ModelConfig small_config(SymmetryMode mode) {
  ModelConfig c;
  c.mode = mode;
  c.n_nodes = 8;
  c.n_basis = 3;
  c.knn_k = 3;
  c.cluster_widths = {6, 5};
  c.aggregate_widths = {7};
  c.offset_widths = {4};
  c.pose_widths = {6};
  return c;
}

CategoryParams random_params(SymmetryMode mode, std::uint64_t seed, bool full_size = false) {
  CategoryParams p = init_category_params(full_size ? [&] { ModelConfig c; c.mode = mode; return c; }() : small_config(mode), seed);
  std::mt19937_64 rng(seed + 100);
  const Vec3 n = testutil::random_unit(rng);
  p.sym_normal.values = {n.x(), n.y(), n.z()};
  p.category_angle.values[0] = std::uniform_real_distribution<double>(-3, 3)(rng);
  // non-zero offsets so gradients reach every layer
  for (auto& w : p.net_weights)
    if (w.name.rfind("offset.out", 0) == 0)
      for (double& v : w.tensor.values) v = std::uniform_real_distribution<double>(-0.3, 0.3)(rng);
  // zero biases put node-relative rows exactly on the activation kink
  for (auto& w : p.net_weights)
    if (w.name.size() > 2 && w.name.compare(w.name.size() - 2, 2, ".b") == 0 && w.name.rfind("offset.out", 0) != 0)
      for (double& v : w.tensor.values) v = std::uniform_real_distribution<double>(-0.2, 0.2)(rng);
  return p;
}

PoseCoeffs random_pose(const ModelConfig& c, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-1, 1);
  PoseCoeffs p;
  p.angle = 3 * u(rng);
  p.c = Eigen::VectorXd::NullaryExpr(static_cast<Eigen::Index>(c.n_basis), [&] { return u(rng); });
  if (c.mode == SymmetryMode::deformation)
    p.c_prime = Eigen::VectorXd::NullaryExpr(static_cast<Eigen::Index>(c.n_basis), [&] { return u(rng); });
  return p;
}

}  // namespace

TEST(Init, ShapesAndDefaults) {
  ModelConfig c;
  EXPECT_EQ(c.n_basis, 8u);
  const auto p = init_category_params(c, 1);
  EXPECT_EQ(p.half_basis.shape, (diff::Shape{24, 8}));
  EXPECT_EQ(p.normal(), Vec3(1, 0, 0));
  EXPECT_EQ(p.category_angle.item(), 0.0);
  for (double v : p.half_basis.values) EXPECT_LE(std::abs(v), 0.5);
  for (double v : p.weight("offset.out.w").values) EXPECT_EQ(v, 0.0);
  for (double v : p.weight("offset.out.b").values) EXPECT_EQ(v, 0.0);
  EXPECT_TRUE(init_category_params(c, 1) == p);
  EXPECT_FALSE(init_category_params(c, 2) == p);

  c.mode = SymmetryMode::none;
  EXPECT_EQ(init_category_params(c, 1).half_basis.shape, (diff::Shape{48, 8}));
  c.mode = SymmetryMode::deformation;
  c.n_basis = 6;
  EXPECT_EQ(init_category_params(c, 1).weight("pose.out.b").size(), 14u);
  c.n_nodes = 15;
  EXPECT_THROW(init_category_params(c, 1), Error);
  c.n_nodes = 16;
  c.n_basis = 33;
  EXPECT_THROW(c.validate(), Error);
}

TEST(Decode, IdentityInModeNone) {
  ModelConfig c;
  c.mode = SymmetryMode::none;
  c.n_basis = 1;
  const auto p = init_category_params(c, 3);
  PoseCoeffs pose;
  pose.c = Eigen::VectorXd::Ones(1);
  const Points kp = decode_keypoints(p, pose, c.mode);
  for (Eigen::Index j = 0; j < kp.rows(); ++j)
    for (int k = 0; k < 3; ++k) EXPECT_EQ(kp(j, k), p.half_basis.values[static_cast<std::size_t>(3 * j + k)]);
}

TEST(Decode, MirrorPartnerOnX) {
  ModelConfig c;
  c.n_nodes = 2;
  c.n_basis = 1;
  c.knn_k = 1;
  auto p = init_category_params(c, 0);
  p.half_basis.values = {0.5, 0.2, 0.1};
  PoseCoeffs pose;
  pose.c = Eigen::VectorXd::Ones(1);
  const Points kp = decode_keypoints(p, pose, c.mode);
  EXPECT_EQ(kp, testutil::pts({{0.5, 0.2, 0.1}, {-0.5, 0.2, 0.1}}));
}

TEST(Decode, DeformationWithEqualCoefficientsIsInstanceMode) {
  std::mt19937_64 rng(4);
  for (int t = 0; t < 50; ++t) {
    auto p = random_params(SymmetryMode::deformation, static_cast<std::uint64_t>(t));
    PoseCoeffs pose = random_pose(p.config, rng);
    pose.c_prime = pose.c;
    const Points a = decode_keypoints(p, pose, SymmetryMode::deformation);
    const Points b = decode_keypoints(p, pose, SymmetryMode::instance);
    EXPECT_LT(testutil::max_abs_diff(a, b), 1e-12);
  }
}

TEST(Decode, PoseEquivariance) {
  std::mt19937_64 rng(5);
  for (auto mode : {SymmetryMode::none, SymmetryMode::instance, SymmetryMode::deformation})
    for (int t = 0; t < 30; ++t) {
      const auto p = random_params(mode, static_cast<std::uint64_t>(t));
      PoseCoeffs pose = random_pose(p.config, rng);
      const double a = pose.angle;
      const Points turned = decode_keypoints(p, pose, mode);
      pose.angle = 0.0;
      const Points base = decode_keypoints(p, pose, mode);
      EXPECT_LT(testutil::max_abs_diff(turned, rotate(base, rotation_about_up(a))), 1e-12);
    }
}

TEST(Decode, InstanceModeMirrorPairs) {
  std::mt19937_64 rng(6);
  for (int t = 0; t < 50; ++t) {
    const auto p = random_params(SymmetryMode::instance, static_cast<std::uint64_t>(t));
    const PoseCoeffs pose = random_pose(p.config, rng);
    const Points kp = decode_keypoints(p, pose, SymmetryMode::instance);
    const Mat3 r = rotation_about_up(p.category_angle.item()) * rotation_about_up(pose.angle);
    const Points canon = rotate(kp, r.transpose());
    const Mat3 a = reflection_from_normal(SymmetryPlane(p.normal()));
    const Eigen::Index h = canon.rows() / 2;
    for (Eigen::Index j = 0; j < h; ++j) EXPECT_LT((a * canon.row(j).transpose() - canon.row(j + h).transpose()).norm(), 1e-9);
  }
}

TEST(Decode, ReflectedBasisIsInvolution) {
  std::mt19937_64 rng(7);
  for (int t = 0; t < 20; ++t) {
    const auto p = random_params(SymmetryMode::deformation, static_cast<std::uint64_t>(t));
    const auto twice = reflected_basis(reflected_basis(p.half_basis, p.normal()), p.normal());
    for (std::size_t i = 0; i < twice.size(); ++i) EXPECT_NEAR(twice.values[i], p.half_basis.values[i], 1e-12);
  }
}

TEST(Decode, DimensionMismatch) {
  const auto p = random_params(SymmetryMode::instance, 1);
  PoseCoeffs pose;
  pose.c = Eigen::VectorXd::Ones(2);
  EXPECT_THROW(decode_keypoints(p, pose, SymmetryMode::instance), Error);
  pose.c = Eigen::VectorXd::Ones(3);
  EXPECT_THROW(decode_keypoints(p, pose, SymmetryMode::deformation), Error);
  EXPECT_THROW(decode_keypoints(p, pose, SymmetryMode::none), Error);
}

TEST(PoseRaw, AngleConventions) {
  ModelConfig c = small_config(SymmetryMode::instance);
  std::vector<double> raw{0.0, 5.0, 1, 2, 3};
  auto p = pose_from_raw(raw, c);
  EXPECT_NEAR(p.angle, std::numbers::pi / 2, 1e-15);
  EXPECT_FALSE(p.degenerate);
  EXPECT_EQ(p.c, Eigen::Vector3d(1, 2, 3));
  raw[1] = 0.0;
  p = pose_from_raw(raw, c);
  EXPECT_EQ(p.angle, 0.0);
  EXPECT_TRUE(p.degenerate);
  raw = {-1.0, 0.0, 0, 0, 0};
  EXPECT_NEAR(pose_from_raw(raw, c).angle, std::numbers::pi, 1e-15);

  ModelConfig d;
  d.mode = SymmetryMode::deformation;
  d.n_basis = 6;
  std::vector<double> r2(14, 0.5);
  const auto q = pose_from_raw(r2, d);
  EXPECT_EQ(q.c.size(), 6);
  ASSERT_TRUE(q.c_prime);
  EXPECT_EQ(q.c_prime->size(), 6);
  EXPECT_THROW(pose_from_raw(std::vector<double>(5, 1.0), d), Error);
}

TEST(NodeBranch, UntrainedNodesAreFpsNodes) {
  SyntheticCategorySpec s;
  s.instance_count = 1;
  const auto pc = normalize(generate_synthetic_category(s).clouds[0]);
  const auto params = init_category_params(ModelConfig{}, 5);
  diff::Graph g;
  const auto b = bind(g, params);
  const auto out = node_branch(g, b, params.config, pc.points, 9);
  const Points nodes = out.nodes.value().to_points();
  EXPECT_EQ(nodes.rows(), 16);
  EXPECT_TRUE(nodes.allFinite());
  EXPECT_EQ(nodes, select_rows(pc.points, farthest_point_sampling(pc.points, 16, 9)));
  EXPECT_THROW(node_branch(g, b, params.config, pc.points.topRows(10), 9), Error);
}

TEST(NodeBranch, GroupingFollowsRotation) {
  std::mt19937_64 rng(8);
  const Points cloud = testutil::random_points(300, rng);
  const Mat3 r = testutil::random_rotation(rng);
  const Points turned = rotate(cloud, r);
  const auto a = farthest_point_sampling(cloud, 16, 4), b = farthest_point_sampling(turned, 16, 4);
  EXPECT_EQ(a, b);
  EXPECT_EQ(point_to_node_grouping(cloud, select_rows(cloud, a)), point_to_node_grouping(turned, select_rows(turned, b)));
}

TEST(Forward, GraphDecodeMatchesPlainDecode) {
  std::mt19937_64 rng(9);
  for (auto mode : {SymmetryMode::none, SymmetryMode::instance, SymmetryMode::deformation}) {
    const auto p = random_params(mode, 11);
    const Points cloud = testutil::random_points(120, rng);
    const auto pred = predict(p, cloud, 3);
    EXPECT_LT(testutil::max_abs_diff(pred.keypoints, decode_keypoints(p, pred.pose, mode)), 1e-12);
    EXPECT_LT(testutil::max_abs_diff(rotate(pred.canonical_keypoints, pred.total_rotation), pred.keypoints), 1e-12);
  }
}

TEST(Forward, FullLossGradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(10);
  for (auto mode : {SymmetryMode::none, SymmetryMode::instance, SymmetryMode::deformation}) {
    const auto p = random_params(mode, 21);
    const Points cloud = testutil::random_points(60, rng);
    std::vector<diff::Tensor> leaves;
    for (const auto* t : p.tensors()) leaves.push_back(*t);
    auto build = [&](diff::Graph& g, const std::vector<diff::Var>& v) {
      const auto f = forward(g, bind_vars(p, v), p.config, cloud, 5);
      return total_loss(f.node.nodes, f.keypoints, cloud, LossWeights{}).total;
    };
    EXPECT_LT(diff::grad_check(build, leaves), 1e-4) << to_string(mode);
  }
}
