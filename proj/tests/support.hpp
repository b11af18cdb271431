#pragma once
// Shared fixtures for the test binaries: seeded random draws, small closed
// meshes and independent matrix-function oracles.

#include <Eigen/Dense>
#include <cmath>
#include <filesystem>
#include <random>
#include <string>
#include <unsupported/Eigen/MatrixFunctions>

#include "ktpr/geometry.hpp"
#include "ktpr/mesh.hpp"

namespace ktpr::test {

class Random {
 public:
  explicit Random(std::uint64_t seed) : engine_(seed) {}
  double uniform(double lo = 0.0, double hi = 1.0) { return std::uniform_real_distribution<double>(lo, hi)(engine_); }
  Vec3 unit_vector() {
    Vec3 v;
    do {
      v = Vec3(uniform(-1, 1), uniform(-1, 1), uniform(-1, 1));
    } while (v.norm() < 1e-3 || v.norm() > 1.0);
    return v.normalized();
  }
  Vec3 in_ball(double radius) { return unit_vector() * radius * std::cbrt(uniform()); }
  Vec3 in_box(double half) { return Vec3(uniform(-half, half), uniform(-half, half), uniform(-half, half)); }
  Twist twist(double max_angle, double max_translation) {
    return {unit_vector() * uniform(0.0, max_angle), in_ball(max_translation)};
  }
  RigidTransform rigid(double max_angle, double max_translation) {
    return {Eigen::AngleAxisd(uniform(0.0, max_angle), unit_vector()).toRotationMatrix(), in_ball(max_translation)};
  }

 private:
  std::mt19937_64 engine_;
};

// Padé / Schur-Parlett matrix exponential and logarithm of the 4x4 forms.
inline Mat4 matrix_exp(const Mat4& m) { return m.exp(); }
inline Mat4 matrix_log(const Mat4& m) { return m.log(); }

inline Mat4 to_matrix(const RigidTransform& t) { return t.matrix(); }

// Regular tetrahedron centred on the origin, outward-oriented.
inline SurfaceMesh regular_tetrahedron(double scale = 1.0) {
  SurfaceMesh mesh;
  mesh.vertices.resize(4, 3);
  mesh.vertices << 1, 1, 1, 1, -1, -1, -1, 1, -1, -1, -1, 1;
  mesh.vertices *= scale;
  mesh.faces.resize(4, 3);
  mesh.faces << 0, 1, 2, 0, 3, 1, 0, 2, 3, 1, 3, 2;
  if (mesh.volume() < 0.0) mesh.faces.col(1).swap(mesh.faces.col(2));
  return mesh;
}

// Axis-aligned box [lo, hi], two triangles per side.
inline SurfaceMesh box_mesh(const Vec3& lo, const Vec3& hi) {
  SurfaceMesh mesh;
  mesh.vertices.resize(8, 3);
  for (int n = 0; n < 8; ++n) {
    mesh.vertices.row(n) << ((n & 1) ? hi.x() : lo.x()), ((n & 2) ? hi.y() : lo.y()), ((n & 4) ? hi.z() : lo.z());
  }
  mesh.faces.resize(12, 3);
  // clang-format off
  mesh.faces << 0, 2, 3,  0, 3, 1,   // z = lo
                4, 5, 7,  4, 7, 6,   // z = hi
                0, 1, 5,  0, 5, 4,   // y = lo
                2, 6, 7,  2, 7, 3,   // y = hi
                0, 4, 6,  0, 6, 2,   // x = lo
                1, 3, 7,  1, 7, 5;   // x = hi
  // clang-format on
  return mesh;
}

// Icosphere: icosahedron subdivided `levels` times, projected to the sphere.
SurfaceMesh icosphere(int levels, double radius = 1.0);

// Scratch directory unique to the test binary, wiped on construction.
inline std::filesystem::path scratch_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("ktpr_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace ktpr::test
