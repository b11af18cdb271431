#include "ktpr/kinematics.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <queue>
#include <sstream>

#include "ktpr/error.hpp"

namespace ktpr {

void KinematicTree::validate() const {
  const int k = size();
  if (k == 0) throw InvalidTree("tree has no parts");
  if (static_cast<int>(rest_joints.size()) != k) {
    throw InvalidTree("rest_joints length does not match part count");
  }
  if (!names.empty() && static_cast<int>(names.size()) != k) {
    throw InvalidTree("part_names length does not match part count");
  }
  int roots = 0;
  for (int i = 0; i < k; ++i) {
    const int p = parents[static_cast<std::size_t>(i)];
    if (p == kNoParent) {
      ++roots;
    } else if (p < 0 || p >= k || p == i) {
      std::ostringstream msg;
      msg << "part " << i << " has invalid parent " << p;
      throw InvalidTree(msg.str());
    } else if ((rest_joints[static_cast<std::size_t>(i)] - rest_joints[static_cast<std::size_t>(p)]).norm() <= 1e-6) {
      std::ostringstream msg;
      msg << "part " << i << " joint coincides with its parent's (degenerate bone)";
      throw InvalidTree(msg.str());
    }
  }
  if (roots != 1) {
    std::ostringstream msg;
    msg << "expected exactly one root, found " << roots;
    throw InvalidTree(msg.str());
  }
  if (static_cast<int>(topological_order().size()) != k) {
    throw InvalidTree("parent links contain a cycle");
  }
}

std::vector<int> KinematicTree::topological_order() const {
  const int k = size();
  std::vector<std::vector<int>> children(static_cast<std::size_t>(k));
  std::vector<int> order;
  std::queue<int> frontier;
  for (int i = 0; i < k; ++i) {
    const int p = parents[static_cast<std::size_t>(i)];
    if (p == kNoParent) {
      frontier.push(i);
    } else if (p >= 0 && p < k) {
      children[static_cast<std::size_t>(p)].push_back(i);
    }
  }
  while (!frontier.empty()) {
    const int i = frontier.front();
    frontier.pop();
    order.push_back(i);
    for (int c : children[static_cast<std::size_t>(i)]) frontier.push(c);
  }
  return order;
}

int KinematicTree::root() const {
  for (int i = 0; i < size(); ++i) {
    if (parents[static_cast<std::size_t>(i)] == kNoParent) return i;
  }
  throw InvalidTree("tree has no root");
}

std::vector<int> KinematicTree::path_from_root(int k) const {
  std::vector<int> path;
  for (int i = k; i != kNoParent; i = parents[static_cast<std::size_t>(i)]) {
    path.push_back(i);
    if (static_cast<int>(path.size()) > size()) throw InvalidTree("parent links contain a cycle");
  }
  std::reverse(path.begin(), path.end());
  return path;
}

bool KinematicTree::is_ancestor_or_self(int ancestor, int k) const {
  for (int i = k; i != kNoParent; i = parents[static_cast<std::size_t>(i)]) {
    if (i == ancestor) return true;
  }
  return false;
}

namespace {

void check_pose(const KinematicTree& tree, const Pose& pose) {
  if (pose.size() != tree.size()) {
    std::ostringstream msg;
    msg << "pose has " << pose.size() << " joints, tree has " << tree.size();
    throw DimensionMismatch(msg.str());
  }
  for (int k = 0; k < pose.size(); ++k) {
    if (!(pose.theta[static_cast<std::size_t>(k)].norm() < 2.0 * std::numbers::pi)) {
      std::ostringstream msg;
      msg << "joint " << k << " angle-axis norm must be finite and below 2*pi";
      throw InvalidPose(msg.str());
    }
  }
}

RigidTransform joint_motion(const KinematicTree& tree, const Pose& pose, int k) {
  const auto i = static_cast<std::size_t>(k);
  return RigidTransform::about_pivot(so3_exp(pose.theta[i]), tree.rest_joints[i]);
}

Mat4 joint_matrix(const KinematicTree& tree, const Pose& pose, int k) {
  return joint_motion(tree, pose, k).matrix();
}

}  // namespace

std::vector<RigidTransform> forward_kinematics(const KinematicTree& tree, const Pose& pose) {
  tree.validate();
  check_pose(tree, pose);
  std::vector<RigidTransform> out(static_cast<std::size_t>(tree.size()));
  for (int k : tree.topological_order()) {
    const int p = tree.parents[static_cast<std::size_t>(k)];
    const RigidTransform local = joint_motion(tree, pose, k);
    out[static_cast<std::size_t>(k)] =
        p == KinematicTree::kNoParent ? local : compose(out[static_cast<std::size_t>(p)], local);
  }
  return out;
}

std::vector<Vec3> posed_joints(const KinematicTree& tree, const Pose& pose) {
  tree.validate();
  check_pose(tree, pose);
  // Each joint hangs off its parent by the rest-pose bone vector, rotated by
  // the accumulated parent rotation.
  std::vector<Vec3> joints(static_cast<std::size_t>(tree.size()));
  std::vector<Mat3> rotations(static_cast<std::size_t>(tree.size()));
  for (int k : tree.topological_order()) {
    const auto i = static_cast<std::size_t>(k);
    const int p = tree.parents[i];
    if (p == KinematicTree::kNoParent) {
      joints[i] = tree.rest_joints[i];
      rotations[i] = so3_exp(pose.theta[i]);
    } else {
      const auto pi = static_cast<std::size_t>(p);
      joints[i] = joints[pi] + rotations[pi] * (tree.rest_joints[i] - tree.rest_joints[pi]);
      rotations[i] = rotations[pi] * so3_exp(pose.theta[i]);
    }
  }
  return joints;
}

std::vector<Mat4> pose_jacobian(const KinematicTree& tree, const Pose& pose, int k) {
  tree.validate();
  check_pose(tree, pose);
  const int parts = tree.size();
  if (k < 0 || k >= parts) throw DimensionMismatch("part index out of range");
  std::vector<Mat4> out(static_cast<std::size_t>(3 * parts), Mat4::Zero());

  const std::vector<int> path = tree.path_from_root(k);
  std::vector<Mat4> local(path.size());
  for (std::size_t i = 0; i < path.size(); ++i) local[i] = joint_matrix(tree, pose, path[i]);

  for (std::size_t i = 0; i < path.size(); ++i) {
    const int j = path[i];
    Mat4 before = Mat4::Identity();
    for (std::size_t a = 0; a < i; ++a) before = before * local[a];
    Mat4 after = Mat4::Identity();
    for (std::size_t a = i + 1; a < path.size(); ++a) after = after * local[a];

    const auto ji = static_cast<std::size_t>(j);
    const Vec3& theta = pose.theta[ji];
    const Vec3& pivot = tree.rest_joints[ji];
    const Mat3 r = so3_exp(theta);
    const Mat3 jl = so3_left_jacobian(theta);
    for (int c = 0; c < 3; ++c) {
      // dR/dtheta_c = [J_l(theta) e_c]x R
      const Mat3 dr = skew(jl.col(c)) * r;
      Mat4 dlocal = Mat4::Zero();
      dlocal.topLeftCorner<3, 3>() = dr;
      dlocal.topRightCorner<3, 1>() = -dr * pivot;
      out[static_cast<std::size_t>(3 * j + c)] = before * dlocal * after;
    }
  }
  return out;
}

double pose_jacobian_check(const KinematicTree& tree, const Pose& pose, int k, double epsilon) {
  const std::vector<Mat4> analytic = pose_jacobian(tree, pose, k);
  double worst = 0.0;
  for (int j = 0; j < tree.size(); ++j) {
    for (int c = 0; c < 3; ++c) {
      Pose plus = pose;
      Pose minus = pose;
      plus.theta[static_cast<std::size_t>(j)][c] += epsilon;
      minus.theta[static_cast<std::size_t>(j)][c] -= epsilon;
      const Mat4 tp = forward_kinematics(tree, plus)[static_cast<std::size_t>(k)].matrix();
      const Mat4 tm = forward_kinematics(tree, minus)[static_cast<std::size_t>(k)].matrix();
      const Mat4 fd = (tp - tm) / (2.0 * epsilon);
      worst = std::max(worst, (fd - analytic[static_cast<std::size_t>(3 * j + c)]).cwiseAbs().maxCoeff());
    }
  }
  return worst;
}

double ShapeBasis::max_cross_correlation() const {
  double worst = 0.0;
  for (std::size_t i = 0; i < components.size(); ++i) {
    for (std::size_t j = i + 1; j < components.size(); ++j) {
      const double ni = components[i].norm();
      const double nj = components[j].norm();
      if (ni == 0.0 || nj == 0.0) continue;
      const double dot = (components[i].array() * components[j].array()).sum();
      worst = std::max(worst, std::abs(dot) / (ni * nj));
    }
  }
  return worst;
}

Eigen::MatrixX3d shape_vertices(const ShapeBasis& basis, const Eigen::VectorXd& beta) {
  if (beta.size() != basis.beta_dim()) {
    std::ostringstream msg;
    msg << "beta has length " << beta.size() << ", basis has " << basis.beta_dim() << " components";
    throw DimensionMismatch(msg.str());
  }
  Eigen::MatrixX3d v = basis.mean_vertices;
  for (int j = 0; j < basis.beta_dim(); ++j) {
    if (basis.components[static_cast<std::size_t>(j)].rows() != v.rows()) {
      throw DimensionMismatch("shape component vertex count differs from mean shape");
    }
    v += beta[j] * basis.components[static_cast<std::size_t>(j)];
  }
  return v;
}

Eigen::MatrixX3d PoseBlendShapes::offsets(const Pose& pose, int vertex_count) const {
  Eigen::MatrixX3d out = Eigen::MatrixX3d::Zero(vertex_count, 3);
  if (!enabled()) return out;
  const int k = pose.size();
  if (matrix.rows() != 3 * vertex_count || matrix.cols() != 9 * k) {
    throw DimensionMismatch("pose blend matrix must be 3N x 9K");
  }
  Eigen::VectorXd residual(9 * k);
  for (int j = 0; j < k; ++j) {
    const Mat3 r = so3_exp(pose.theta[static_cast<std::size_t>(j)]) - Mat3::Identity();
    for (int a = 0; a < 3; ++a)
      for (int b = 0; b < 3; ++b) residual[9 * j + 3 * a + b] = r(a, b);
  }
  const Eigen::VectorXd flat = matrix * residual;
  for (int n = 0; n < vertex_count; ++n) out.row(n) = flat.segment<3>(3 * n).transpose();
  return out;
}

}  // namespace ktpr
