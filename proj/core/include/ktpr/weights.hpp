#pragma once

// Volumetric skinning weights: harmonic extension of surface weights into
// the interior by projected gradient descent on the Dirichlet energy.

#include <Eigen/Core>
#include <span>
#include <vector>

#include "ktpr/mesh.hpp"
#include "ktpr/volume.hpp"

namespace ktpr {

/// Euclidean projection onto the probability simplex (sort based).
Eigen::VectorXd project_simplex(const Eigen::VectorXd& v);
void project_simplex_inplace(std::span<double> v);

/// Dirichlet data: pinned voxels and their K-vector values (one row each).
struct BoundaryData {
  std::vector<std::size_t> voxels;
  Eigen::MatrixXd values;  // voxels.size() x K
};

/// Skinning weights sampled on a grid. `weights.mask` is the interior Ω;
/// voxels outside Ω carry the weights of their nearest interior voxel.
struct WeightField {
  VolumeGrid weights;
  std::vector<std::size_t> boundary_set;

  int parts() const { return weights.channels; }
};

/// Pins every boundary voxel of `mask` (interior voxel with a face
/// neighbour outside) to the barycentric interpolation of vertex_weights
/// (N x K, rows on the simplex) at its nearest surface point. An empty mask
/// is replaced by the voxelized mesh.
BoundaryData rasterize_boundary_weights(const SurfaceMesh& mesh, const Eigen::MatrixXd& vertex_weights,
                                        const GridSpec& grid, const Mask& mask = {});

struct WeightSolverOptions {
  int max_iters = 20000;
  /// Stop once max |projected gradient| (1/mm^2 units) falls below this.
  double tol = 1e-6;
  /// Step in weight units per unit Laplacian; <= 0 selects
  /// 0.9 / (2 * sum_i 1/h_i^2).
  double step = 0.0;
  /// Diverged is thrown after this many consecutive energy increases.
  int divergence_window = 10;
  bool record_energy = true;
};

struct WeightSolveReport {
  int iterations = 0;
  bool converged = false;
  double projected_gradient = 0.0;
  double step = 0.0;
  bool mask_connected = true;
  std::vector<double> energy;  // energy[0] is the initial state
};

WeightField solve_weights(const BoundaryData& boundary, const GridSpec& grid, const Mask& mask, int parts,
                          const WeightSolverOptions& options = {}, WeightSolveReport* report = nullptr);

/// Discrete Dirichlet energy sum_k sum_edges |w_i - w_j|^2 * V / h_axis^2
/// over face-adjacent voxel pairs inside the mask.
double dirichlet_energy(const VolumeGrid& weights, const Mask& mask);

/// True when the mask forms a single 6-connected component.
bool mask_connected(const GridSpec& grid, const Mask& mask);

}  // namespace ktpr
