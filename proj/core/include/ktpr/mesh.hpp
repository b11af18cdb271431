#pragma once

// Closed triangle meshes: validation, closest-point queries, inside tests
// and voxelization.

#include <Eigen/Core>
#include <array>
#include <cstdint>
#include <vector>

#include "ktpr/geometry.hpp"
#include "ktpr/volume.hpp"

namespace ktpr {

struct SurfaceMesh {
  Eigen::MatrixX3d vertices;  // N x 3, mm
  Eigen::MatrixX3i faces;     // F x 3, zero-based, counter-clockwise seen from outside

  int vertex_count() const { return static_cast<int>(vertices.rows()); }
  int face_count() const { return static_cast<int>(faces.rows()); }
  Vec3 vertex(int n) const { return vertices.row(n).transpose(); }

  /// Throws BadIndex, OpenMesh (edge not shared by exactly two opposite
  /// half-edges) or InvalidMesh (face area <= 1e-12 mm^2).
  void validate() const;

  double bounding_box_diagonal() const;
  /// Signed enclosed volume (positive for outward orientation).
  double volume() const;
};

struct ClosestPoint {
  Vec3 point;
  Vec3 barycentric;  // weights of the face's three vertices
  double distance2 = 0.0;
  int face = -1;
};

/// Closest point on triangle (a, b, c) to p with its barycentric weights.
ClosestPoint closest_point_on_triangle(const Vec3& p, const Vec3& a, const Vec3& b, const Vec3& c);

/// Uniform-bucket accelerator for nearest-surface-point queries. Exact ties
/// go to the smallest face index.
class TriangleLocator {
 public:
  explicit TriangleLocator(const SurfaceMesh& mesh, double cell_size = 0.0);
  ClosestPoint closest(const Vec3& p) const;

 private:
  const SurfaceMesh* mesh_;
  Vec3 lo_;
  double cell_;
  std::array<int, 3> dims_{};
  std::vector<std::vector<int>> buckets_;
};

/// Generalized winding number (solid angle sum / 4 pi); ~1 inside a closed
/// outward-oriented mesh, ~0 outside.
double winding_number(const SurfaceMesh& mesh, const Vec3& p);

/// Interior indicator of the mesh sampled at voxel centres, by scanline
/// parity along x.
Mask voxelize(const SurfaceMesh& mesh, const GridSpec& grid);

}  // namespace ktpr
