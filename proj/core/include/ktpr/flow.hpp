#pragma once

// Shape-standardizing flow: mean value coordinates interpolate the boundary
// velocity of a linear shape path into the interior; points are advected
// with explicit Euler steps.

#include <Eigen/Core>
#include <span>
#include <vector>

#include "ktpr/deform.hpp"
#include "ktpr/kinematics.hpp"
#include "ktpr/mesh.hpp"

namespace ktpr {

inline constexpr double kDefaultSurfaceEpsilon = 1e-6;

/// Mean value coordinates of x with respect to a closed triangle mesh.
/// Throws OnSurface when x is within eps_surface (mm) of the surface.
Eigen::VectorXd mvc_weights(const Vec3& x, const SurfaceMesh& mesh, double eps_surface = kDefaultSurfaceEpsilon);

struct MvcResult {
  Eigen::VectorXd weights;
  double winding = 0.0;     // generalized winding number of x
  bool on_surface = false;  // weights are the nearest surface point's barycentrics
};

/// Like mvc_weights, but snaps near-surface points to the barycentric
/// weights of their nearest surface point instead of throwing.
MvcResult mvc_weights_or_snap(const Vec3& x, const SurfaceMesh& mesh, double eps_surface = kDefaultSurfaceEpsilon);

/// Constant boundary vertex velocity of the path beta(t) = (1-t) start + t end.
Eigen::MatrixX3d boundary_velocity(const ShapeBasis& basis, const Eigen::VectorXd& beta_start,
                                   const Eigen::VectorXd& beta_end);

struct FlowSpec {
  Eigen::VectorXd beta_start;
  Eigen::VectorXd beta_end;
  int steps = 16;
  /// Evaluate coordinates once against the initial surface instead of the
  /// evolving one (cheaper, less faithful).
  bool freeze_weights = false;
  double eps_surface = kDefaultSurfaceEpsilon;
};

enum class PointStatus { Ok, OnSurface, LeftDomain };

struct FlowResult {
  std::vector<Vec3> points;
  std::vector<PointStatus> status;  // worst status seen along the path
};

/// Advects points from the surface mesh0 (vertices at t = 0, faces shared
/// along the path) to t = 1.
FlowResult integrate_flow(const FlowSpec& spec, const ShapeBasis& basis, const SurfaceMesh& mesh0,
                          std::span<const Vec3> points);

/// Dense flow displacement on `grid`. Voxels in `mask` are advected; ones
/// that leave the domain, and every voxel outside the mask, take the
/// displacement of the nearest successfully advected interior voxel.
DenseField flow_field(const FlowSpec& spec, const ShapeBasis& basis, const SurfaceMesh& mesh0, const GridSpec& grid,
                      const Mask& mask, std::vector<PointStatus>* status = nullptr);

}  // namespace ktpr
