#pragma once

// SE(3) / SO(3) Lie group operations on rotation-matrix rigid transforms.

#include <Eigen/Core>

namespace ktpr {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Mat4 = Eigen::Matrix4d;
using Vec6 = Eigen::Matrix<double, 6, 1>;
using Mat6 = Eigen::Matrix<double, 6, 6>;

/// Default distance from pi (radians) below which the principal log is
/// accepted.
inline constexpr double kDefaultBranchEpsilon = 1e-4;

/// Below this rotation angle exp/log switch to second-order series.
inline constexpr double kSmallAngle = 1e-6;

/// Lie algebra coordinate: rotation (axis * angle) and translation parts.
struct Twist {
  Vec3 omega = Vec3::Zero();
  Vec3 v = Vec3::Zero();

  Twist() = default;
  Twist(const Vec3& omega_, const Vec3& v_) : omega(omega_), v(v_) {}

  static Twist from_vector(const Vec6& xi) { return {xi.head<3>(), xi.tail<3>()}; }
  Vec6 vector() const {
    Vec6 xi;
    xi << omega, v;
    return xi;
  }
};

/// x -> rotation * x + translation.
struct RigidTransform {
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();

  RigidTransform() = default;
  RigidTransform(const Mat3& r, const Vec3& t) : rotation(r), translation(t) {}

  static RigidTransform identity() { return {}; }
  static RigidTransform pure_translation(const Vec3& t) { return {Mat3::Identity(), t}; }
  /// Rotation about a pivot point: x -> R (x - pivot) + pivot.
  static RigidTransform about_pivot(const Mat3& r, const Vec3& pivot) {
    return {r, pivot - r * pivot};
  }

  Mat4 matrix() const;
  /// Takes the rotation block and translation column verbatim.
  static RigidTransform from_matrix(const Mat4& m);

  /// Rotation angle in [0, pi].
  double angle() const;
};

Mat3 skew(const Vec3& w);
Vec3 unskew(const Mat3& m);

/// 4x4 matrix form of a twist (bottom row zero).
Mat4 hat(const Twist& xi);
Twist vee(const Mat4& m);

Mat3 so3_exp(const Vec3& omega);
/// Principal SO(3) log; throws BranchAmbiguity when the angle is within
/// branch_epsilon of pi.
Vec3 so3_log(const Mat3& r, double branch_epsilon = kDefaultBranchEpsilon);

RigidTransform se3_exp(const Twist& xi);
Twist se3_log(const RigidTransform& t, double branch_epsilon = kDefaultBranchEpsilon);

/// (a ∘ b)(x) = a(b(x)).
RigidTransform compose(const RigidTransform& a, const RigidTransform& b);
RigidTransform inverse(const RigidTransform& t);
Vec3 apply(const RigidTransform& t, const Vec3& x);

inline RigidTransform operator*(const RigidTransform& a, const RigidTransform& b) {
  return compose(a, b);
}
inline Vec3 operator*(const RigidTransform& t, const Vec3& x) { return apply(t, x); }

/// Adjoint of a group element acting on (omega, v) coordinates:
/// hat(Ad_T xi) = T hat(xi) T^-1.
Mat6 adjoint(const RigidTransform& t);
/// Adjoint of an algebra element: ad_xi(eta) = [hat(xi), hat(eta)].
Mat6 ad(const Twist& xi);

/// exp(xi + d) = exp(xi) exp(J_r(xi) d) to first order in d.
Mat6 right_jacobian(const Twist& xi);
/// exp(xi + d) = exp(J_l(xi) d) exp(xi) to first order in d.
Mat6 left_jacobian(const Twist& xi);
/// Left Jacobian of SO(3).
Mat3 so3_left_jacobian(const Vec3& omega);

/// Nearest rigid transform to a general 4x4: polar projection of the upper
/// 3x3 block onto SO(3), translation column kept.
RigidTransform nearest_rigid(const Mat4& m);

}  // namespace ktpr
