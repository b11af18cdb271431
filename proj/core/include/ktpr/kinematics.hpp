#pragma once

// Kinematic tree, angle-axis pose, forward kinematics and the linear shape
// basis.

#include <Eigen/Core>
#include <optional>
#include <string>
#include <vector>

#include "ktpr/geometry.hpp"

namespace ktpr {

/// Rooted tree of rigid parts. Part k rotates about rest_joints[k]; the root
/// has parent == kNoParent.
struct KinematicTree {
  static constexpr int kNoParent = -1;

  std::vector<int> parents;
  std::vector<Vec3> rest_joints;  // mm, canonical (T-pose) coordinates
  std::vector<std::string> names;

  int size() const { return static_cast<int>(parents.size()); }

  /// Throws InvalidTree unless the parents form a single-rooted acyclic tree
  /// with non-degenerate bones.
  void validate() const;
  /// Parents before children.
  std::vector<int> topological_order() const;
  int root() const;
  /// Part indices from the root down to k, inclusive.
  std::vector<int> path_from_root(int k) const;
  bool is_ancestor_or_self(int ancestor, int k) const;
};

/// Angle-axis rotation per part, radians * unit axis.
struct Pose {
  std::vector<Vec3> theta;

  static Pose zero(int parts) { return {std::vector<Vec3>(static_cast<std::size_t>(parts), Vec3::Zero())}; }
  int size() const { return static_cast<int>(theta.size()); }
};

/// Global transform of every part: maps canonical-pose coordinates of part k
/// to posed coordinates. T_k = T_parent(k) ∘ Rot(theta_k about rest_joint_k).
std::vector<RigidTransform> forward_kinematics(const KinematicTree& tree, const Pose& pose);

/// Posed joint locations, chained incrementally from the root.
std::vector<Vec3> posed_joints(const KinematicTree& tree, const Pose& pose);

/// dT_k / dtheta, as 3K 4x4 matrices ordered (part j, component c) -> 3j+c.
/// Matrices for joints off k's root path are exactly zero.
std::vector<Mat4> pose_jacobian(const KinematicTree& tree, const Pose& pose, int k);

/// Max |analytic - central difference| over all entries of dT_k/dtheta.
double pose_jacobian_check(const KinematicTree& tree, const Pose& pose, int k, double epsilon);

/// Linear statistical shape model V(beta) = mean + sum_j beta_j component_j.
struct ShapeBasis {
  Eigen::MatrixX3d mean_vertices;             // N x 3
  std::vector<Eigen::MatrixX3d> components;   // each N x 3

  int vertex_count() const { return static_cast<int>(mean_vertices.rows()); }
  int beta_dim() const { return static_cast<int>(components.size()); }

  /// Largest |<c_i, c_j>| / (|c_i| |c_j|) over distinct pairs.
  double max_cross_correlation() const;
};

Eigen::MatrixX3d shape_vertices(const ShapeBasis& basis, const Eigen::VectorXd& beta);

/// Optional pose-dependent corrective offsets: a (3N x 9K) matrix applied to
/// the flattened rotation residuals (R_k - I). Empty matrix means disabled.
struct PoseBlendShapes {
  Eigen::MatrixXd matrix;

  bool enabled() const { return matrix.size() > 0; }
  Eigen::MatrixX3d offsets(const Pose& pose, int vertex_count) const;
};

/// Tree, optional shape basis and pose blend hook as one serializable unit.
struct BodyModel {
  KinematicTree tree;
  std::optional<ShapeBasis> shape;
  PoseBlendShapes pose_blend;
};

}  // namespace ktpr
