#include <doctest.h>

#include <numbers>

#include "ktpr/error.hpp"
#include "ktpr/kinematics.hpp"
#include "support.hpp"

using namespace ktpr;
using ktpr::test::Random;

namespace {

constexpr double kPi = std::numbers::pi;

KinematicTree chain(int parts, double length) {
  KinematicTree tree;
  for (int k = 0; k < parts; ++k) {
    tree.parents.push_back(k - 1);
    tree.rest_joints.push_back(Vec3(0, length * k, 0));
    tree.names.push_back("p" + std::to_string(k));
  }
  return tree;
}

// 0 root; 1, 2 children of 0; 3 child of 1; 4 child of 2.
KinematicTree branching() {
  KinematicTree tree;
  tree.parents = {-1, 0, 0, 1, 2};
  tree.rest_joints = {Vec3(0, 0, 0), Vec3(5, 0, 0), Vec3(-5, 0, 0), Vec3(10, 1, 0), Vec3(-10, 1, 0)};
  tree.names = {"a", "b", "c", "d", "e"};
  return tree;
}

Pose random_pose(Random& rng, int parts, double max_angle) {
  Pose p = Pose::zero(parts);
  for (auto& t : p.theta) t = rng.unit_vector() * rng.uniform(0.0, max_angle);
  return p;
}

// Rotation about a pivot as an explicit 4x4 product T(p) R T(-p).
Mat4 pivot_matrix(const Vec3& theta, const Vec3& pivot) {
  Mat4 to = Mat4::Identity(), back = Mat4::Identity(), rot = Mat4::Identity();
  to.topRightCorner<3, 1>() = pivot;
  back.topRightCorner<3, 1>() = -pivot;
  if (theta.norm() > 0) rot.topLeftCorner<3, 3>() = Eigen::AngleAxisd(theta.norm(), theta.normalized()).toRotationMatrix();
  return to * rot * back;
}

}  // namespace

TEST_CASE("tree validation") {
  CHECK_NOTHROW(branching().validate());
  KinematicTree two_roots = branching();
  two_roots.parents[3] = -1;
  CHECK_THROWS_AS(two_roots.validate(), InvalidTree);
  KinematicTree cycle = branching();
  cycle.parents[1] = 3;
  CHECK_THROWS_AS(cycle.validate(), InvalidTree);
  KinematicTree degenerate = branching();
  degenerate.rest_joints[3] = degenerate.rest_joints[1];
  CHECK_THROWS_AS(degenerate.validate(), InvalidTree);
  CHECK(branching().root() == 0);
  CHECK(branching().path_from_root(4) == std::vector<int>{0, 2, 4});
}

TEST_CASE("forward_kinematics examples") {
  const KinematicTree tree = chain(2, 10.0);
  for (const auto& t : forward_kinematics(tree, Pose::zero(2))) CHECK(t.matrix() == Mat4::Identity());

  Pose pose = Pose::zero(2);
  pose.theta[1] = Vec3(0, 0, kPi / 2);
  const auto t = forward_kinematics(tree, pose);
  CHECK((apply(t[1], Vec3(0, 20, 0)) - Vec3(-10, 10, 0)).norm() < 1e-12);
  const Mat4 oracle = pivot_matrix(Vec3::Zero(), tree.rest_joints[0]) * pivot_matrix(pose.theta[1], tree.rest_joints[1]);
  CHECK((t[1].matrix() - oracle).cwiseAbs().maxCoeff() < 1e-12);

  Pose root_only = Pose::zero(5);
  root_only.theta[0] = Vec3(0.2, -0.7, 0.4);
  const auto tr = forward_kinematics(branching(), root_only);
  for (int k = 1; k < 5; ++k) CHECK(tr[k].matrix() == tr[0].matrix());

  CHECK_THROWS_AS(forward_kinematics(tree, Pose::zero(3)), DimensionMismatch);
  Pose big = Pose::zero(2);
  big.theta[0] = Vec3(7.0, 0, 0);
  CHECK_THROWS_AS(forward_kinematics(tree, big), InvalidPose);
}

TEST_CASE("forward_kinematics matches the explicit matrix chain") {
  Random rng(3);
  const KinematicTree tree = branching();
  for (int i = 0; i < 20; ++i) {
    const Pose pose = random_pose(rng, 5, 3.0);
    const auto t = forward_kinematics(tree, pose);
    for (int k = 0; k < 5; ++k) {
      Mat4 oracle = Mat4::Identity();
      for (int j : tree.path_from_root(k)) oracle = oracle * pivot_matrix(pose.theta[j], tree.rest_joints[j]);
      CHECK((t[k].matrix() - oracle).cwiseAbs().maxCoeff() < 1e-12);
    }
  }
}

TEST_CASE("shape_vertices") {
  ShapeBasis basis;
  basis.mean_vertices = Eigen::MatrixX3d::Random(6, 3);
  basis.components = {Eigen::MatrixX3d::Random(6, 3), Eigen::MatrixX3d::Random(6, 3)};
  CHECK(shape_vertices(basis, Eigen::VectorXd::Zero(2)) == basis.mean_vertices);
  CHECK(shape_vertices(basis, Eigen::VectorXd::Unit(2, 0)) == basis.mean_vertices + basis.components[0]);
  Eigen::VectorXd beta(2);
  beta << 0.3, -1.1;
  const Eigen::MatrixX3d off1 = shape_vertices(basis, beta) - basis.mean_vertices;
  const Eigen::MatrixX3d off2 = shape_vertices(basis, 2 * beta) - basis.mean_vertices;
  CHECK((off2 - 2 * off1).cwiseAbs().maxCoeff() < 1e-14);
  CHECK_THROWS_AS(shape_vertices(basis, Eigen::VectorXd::Zero(3)), DimensionMismatch);
}

TEST_CASE("pose_jacobian_check examples") {
  const KinematicTree tree = branching();
  for (int k = 0; k < 5; ++k) CHECK(pose_jacobian_check(tree, Pose::zero(5), k, 1e-5) <= 1e-6);
  Random rng(9);
  for (int i = 0; i < 5; ++i) {
    const Pose pose = random_pose(rng, 5, 1.0);
    for (int k = 0; k < 5; ++k) CHECK(pose_jacobian_check(tree, pose, k, 1e-5) <= 1e-5);
    // Part 3 hangs off 0 -> 1 -> 3; joints 2 and 4 do not move it.
    const auto jac = pose_jacobian(tree, pose, 3);
    for (int j : {2, 4}) {
      for (int c = 0; c < 3; ++c) CHECK(jac[3 * j + c].isZero(0.0));
    }
  }
}

TEST_CASE("property: FK consistent with incrementally posed joints") {
  Random rng(21);
  const KinematicTree tree = branching();
  for (int i = 0; i < 50; ++i) {
    const Pose pose = random_pose(rng, 5, 3.0);
    const auto t = forward_kinematics(tree, pose);
    const auto joints = posed_joints(tree, pose);
    for (int k = 0; k < 5; ++k) CHECK((apply(t[k], tree.rest_joints[k]) - joints[k]).norm() <= 1e-9);
  }
}

TEST_CASE("property: FK equivariant under a global rigid motion") {
  // A global rotation G about the root joint is absorbed by the root angle:
  // posing with theta_0' = log(G R_0) must give G ∘ T_k for every part.
  Random rng(22);
  const KinematicTree tree = branching();
  for (int i = 0; i < 50; ++i) {
    Pose pose = random_pose(rng, 5, 2.0);
    const Mat3 g_rot = Eigen::AngleAxisd(rng.uniform(0.0, 1.0), rng.unit_vector()).toRotationMatrix();
    const RigidTransform g = RigidTransform::about_pivot(g_rot, tree.rest_joints[0]);
    const auto t = forward_kinematics(tree, pose);
    Pose moved = pose;
    moved.theta[0] = so3_log(g_rot * so3_exp(pose.theta[0]));
    const auto tg = forward_kinematics(tree, moved);
    for (int k = 0; k < 5; ++k) CHECK(((g * t[k]).matrix() - tg[k].matrix()).cwiseAbs().maxCoeff() <= 1e-9);
  }
}

TEST_CASE("shape basis orthogonality measure") {
  ShapeBasis basis;
  basis.mean_vertices = Eigen::MatrixX3d::Zero(2, 3);
  Eigen::MatrixX3d a = Eigen::MatrixX3d::Zero(2, 3), b = Eigen::MatrixX3d::Zero(2, 3);
  a(0, 0) = 1;
  b(1, 2) = 2;
  basis.components = {a, b};
  CHECK(basis.max_cross_correlation() == 0.0);
  basis.components.push_back(a + b);
  CHECK(basis.max_cross_correlation() > 0.4);
}

TEST_CASE("pose blend hook is disabled by default") {
  BodyModel model;
  CHECK_FALSE(model.pose_blend.enabled());
}
