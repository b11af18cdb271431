#include "ktpr/geometry.hpp"

#include <Eigen/LU>
#include <Eigen/SVD>
#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

#include "ktpr/error.hpp"

namespace ktpr {
namespace {

constexpr double kPi = std::numbers::pi;

// sin(t)/t, (1-cos t)/t^2, (t-sin t)/t^3
struct RodriguesCoefficients {
  double a;
  double b;
  double c;
};

RodriguesCoefficients rodrigues_coefficients(double theta) {
  const double t2 = theta * theta;
  if (theta < kSmallAngle) {
    return {1.0 - t2 / 6.0, 0.5 - t2 / 24.0, 1.0 / 6.0 - t2 / 120.0};
  }
  const double s = std::sin(theta);
  const double c = std::cos(theta);
  return {s / theta, (1.0 - c) / t2, (theta - s) / (t2 * theta)};
}

// Rotation angle from the antisymmetric and trace parts; accurate at both
// ends of [0, pi].
double rotation_angle(const Mat3& r) {
  const double cos_t = std::clamp((r.trace() - 1.0) * 0.5, -1.0, 1.0);
  const double sin_t = 0.5 * unskew(r - r.transpose()).norm();
  return std::atan2(sin_t, cos_t);
}

Mat6 series_jacobian(const Mat6& adx, double sign) {
  // sum_n (sign * ad)^n / (n+1)!
  Mat6 result = Mat6::Identity();
  Mat6 power = Mat6::Identity();
  double factorial = 1.0;
  for (int n = 1; n < 60; ++n) {
    power = (sign * adx) * power;
    factorial *= static_cast<double>(n + 1);
    const Mat6 term = power / factorial;
    result += term;
    if (term.cwiseAbs().maxCoeff() < 1e-18) break;
  }
  return result;
}

}  // namespace

Mat4 RigidTransform::matrix() const {
  Mat4 m = Mat4::Identity();
  m.topLeftCorner<3, 3>() = rotation;
  m.topRightCorner<3, 1>() = translation;
  return m;
}

RigidTransform RigidTransform::from_matrix(const Mat4& m) {
  return {m.topLeftCorner<3, 3>(), m.topRightCorner<3, 1>()};
}

double RigidTransform::angle() const { return rotation_angle(rotation); }

Mat3 skew(const Vec3& w) {
  Mat3 s;
  // clang-format off
  s <<  0.0,  -w.z(),  w.y(),
        w.z(),  0.0,  -w.x(),
       -w.y(),  w.x(),  0.0;
  // clang-format on
  return s;
}

Vec3 unskew(const Mat3& m) { return {m(2, 1), m(0, 2), m(1, 0)}; }

Mat4 hat(const Twist& xi) {
  Mat4 m = Mat4::Zero();
  m.topLeftCorner<3, 3>() = skew(xi.omega);
  m.topRightCorner<3, 1>() = xi.v;
  return m;
}

Twist vee(const Mat4& m) {
  // Average the redundant skew entries so a slightly asymmetric input still
  // maps to the nearest algebra element.
  const Mat3 w = m.topLeftCorner<3, 3>();
  return {0.5 * unskew(w - w.transpose()), m.topRightCorner<3, 1>()};
}

Mat3 so3_exp(const Vec3& omega) {
  const double theta = omega.norm();
  const auto k = rodrigues_coefficients(theta);
  const Mat3 w = skew(omega);
  return Mat3::Identity() + k.a * w + k.b * w * w;
}

Vec3 so3_log(const Mat3& r, double branch_epsilon) {
  const double theta = rotation_angle(r);
  if (theta >= kPi - branch_epsilon) {
    std::ostringstream msg;
    msg << "rotation angle " << theta << " rad is within " << branch_epsilon
        << " of pi; principal logarithm is not unique";
    throw BranchAmbiguity(msg.str());
  }
  const Vec3 axial = unskew(r - r.transpose());  // 2 sin(theta) * axis
  if (theta < kSmallAngle) {
    return (0.5 + theta * theta / 12.0) * axial;
  }
  if (theta <= 0.75 * kPi) {
    return (theta / (2.0 * std::sin(theta))) * axial;
  }
  // Near pi the antisymmetric part vanishes; read the axis from
  // (R + R^T)/2 - cos(theta) I = (1 - cos(theta)) a a^T.
  const double cos_t = std::cos(theta);
  const Mat3 s = 0.5 * (r + r.transpose()) - cos_t * Mat3::Identity();
  Eigen::Index col = 0;
  s.diagonal().maxCoeff(&col);
  Vec3 axis = s.col(col) / std::sqrt(std::max(s(col, col), 0.0) * (1.0 - cos_t));
  axis.normalize();
  if (axis.dot(axial) < 0.0) axis = -axis;
  return theta * axis;
}

RigidTransform se3_exp(const Twist& xi) {
  const double theta = xi.omega.norm();
  const auto k = rodrigues_coefficients(theta);
  const Mat3 w = skew(xi.omega);
  const Mat3 w2 = w * w;
  const Mat3 r = Mat3::Identity() + k.a * w + k.b * w2;
  const Mat3 v = Mat3::Identity() + k.b * w + k.c * w2;
  return {r, v * xi.v};
}

Twist se3_log(const RigidTransform& t, double branch_epsilon) {
  const Vec3 omega = so3_log(t.rotation, branch_epsilon);
  const double theta = omega.norm();
  const Mat3 w = skew(omega);
  // V^-1 = I - W/2 + d W^2, d = (1 - A/(2B)) / theta^2
  double d;
  if (theta < kSmallAngle) {
    d = 1.0 / 12.0 + theta * theta / 720.0;
  } else {
    const double half = 0.5 * theta;
    d = (1.0 - half * std::cos(half) / std::sin(half)) / (theta * theta);
  }
  const Mat3 v_inv = Mat3::Identity() - 0.5 * w + d * w * w;
  return {omega, v_inv * t.translation};
}

RigidTransform compose(const RigidTransform& a, const RigidTransform& b) {
  return {a.rotation * b.rotation, a.rotation * b.translation + a.translation};
}

RigidTransform inverse(const RigidTransform& t) {
  const Mat3 rt = t.rotation.transpose();
  return {rt, -(rt * t.translation)};
}

Vec3 apply(const RigidTransform& t, const Vec3& x) { return t.rotation * x + t.translation; }

Mat6 adjoint(const RigidTransform& t) {
  Mat6 a = Mat6::Zero();
  a.topLeftCorner<3, 3>() = t.rotation;
  a.bottomRightCorner<3, 3>() = t.rotation;
  a.bottomLeftCorner<3, 3>() = skew(t.translation) * t.rotation;
  return a;
}

Mat6 ad(const Twist& xi) {
  Mat6 a = Mat6::Zero();
  const Mat3 w = skew(xi.omega);
  a.topLeftCorner<3, 3>() = w;
  a.bottomRightCorner<3, 3>() = w;
  a.bottomLeftCorner<3, 3>() = skew(xi.v);
  return a;
}

Mat6 right_jacobian(const Twist& xi) { return series_jacobian(ad(xi), -1.0); }

Mat6 left_jacobian(const Twist& xi) { return series_jacobian(ad(xi), 1.0); }

Mat3 so3_left_jacobian(const Vec3& omega) {
  const auto k = rodrigues_coefficients(omega.norm());
  const Mat3 w = skew(omega);
  return Mat3::Identity() + k.b * w + k.c * w * w;
}

RigidTransform nearest_rigid(const Mat4& m) {
  const Mat3 a = m.topLeftCorner<3, 3>();
  Eigen::JacobiSVD<Mat3> svd(a, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Mat3 d = Mat3::Identity();
  if ((svd.matrixU() * svd.matrixV().transpose()).determinant() < 0.0) d(2, 2) = -1.0;
  return {svd.matrixU() * d * svd.matrixV().transpose(), m.topRightCorner<3, 1>()};
}

}  // namespace ktpr
