#pragma once

// Regular voxel grids: world/index conversion, multi-channel storage,
// trilinear sampling and mask utilities.

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "ktpr/geometry.hpp"

namespace ktpr {

/// Axis-aligned lattice; voxel (i,j,k) sits at origin + (i,j,k) * spacing.
struct GridSpec {
  std::array<int, 3> dims{1, 1, 1};
  Vec3 spacing = Vec3::Ones();  // mm / voxel
  Vec3 origin = Vec3::Zero();   // mm

  std::size_t voxel_count() const {
    return static_cast<std::size_t>(dims[0]) * static_cast<std::size_t>(dims[1]) *
           static_cast<std::size_t>(dims[2]);
  }
  /// x-fastest linear index.
  std::size_t index(int i, int j, int k) const {
    return static_cast<std::size_t>(i) +
           static_cast<std::size_t>(dims[0]) *
               (static_cast<std::size_t>(j) + static_cast<std::size_t>(dims[1]) * static_cast<std::size_t>(k));
  }
  std::array<int, 3> ijk(std::size_t index) const;
  bool contains(int i, int j, int k) const {
    return i >= 0 && j >= 0 && k >= 0 && i < dims[0] && j < dims[1] && k < dims[2];
  }
  Vec3 world(int i, int j, int k) const {
    return origin + Vec3(i, j, k).cwiseProduct(spacing);
  }
  Vec3 world(std::size_t index) const {
    const auto c = ijk(index);
    return world(c[0], c[1], c[2]);
  }
  Vec3 continuous_index(const Vec3& x) const { return (x - origin).cwiseQuotient(spacing); }
  double voxel_volume() const { return spacing.prod(); }

  /// Throws SpecInvalid for non-positive dims or spacing.
  void validate() const;

  /// Cube of n^3 voxels with isotropic spacing centred on `center`.
  static GridSpec cube(int n, double spacing, const Vec3& center = Vec3::Zero());

  friend bool operator==(const GridSpec& a, const GridSpec& b) {
    return a.dims == b.dims && a.spacing == b.spacing && a.origin == b.origin;
  }
};

using Mask = std::vector<std::uint8_t>;

/// Samples outside the lattice are either zero (image background) or taken
/// from the nearest edge voxel (displacement fields).
enum class OutOfBounds { Zero, Clamp };

/// Dense multi-channel volume; channel values of a voxel are contiguous.
struct VolumeGrid {
  GridSpec grid;
  int channels = 1;
  std::vector<double> data;
  Mask mask;  // optional interior indicator (empty when absent)

  static VolumeGrid zeros(const GridSpec& grid, int channels = 1);

  std::size_t voxel_count() const { return grid.voxel_count(); }
  double& at(std::size_t voxel, int channel = 0) {
    return data[voxel * static_cast<std::size_t>(channels) + static_cast<std::size_t>(channel)];
  }
  double at(std::size_t voxel, int channel = 0) const {
    return data[voxel * static_cast<std::size_t>(channels) + static_cast<std::size_t>(channel)];
  }
  std::span<double> voxel(std::size_t v) {
    return {data.data() + v * static_cast<std::size_t>(channels), static_cast<std::size_t>(channels)};
  }
  std::span<const double> voxel(std::size_t v) const {
    return {data.data() + v * static_cast<std::size_t>(channels), static_cast<std::size_t>(channels)};
  }
  Vec3 vec3(std::size_t v) const {
    const double* p = data.data() + v * static_cast<std::size_t>(channels);
    return {p[0], p[1], p[2]};
  }
  void set_vec3(std::size_t v, const Vec3& value) {
    double* p = data.data() + v * static_cast<std::size_t>(channels);
    p[0] = value.x();
    p[1] = value.y();
    p[2] = value.z();
  }
  bool has_mask() const { return !mask.empty(); }
  bool inside(std::size_t v) const { return mask.empty() || mask[v] != 0; }

  /// Throws SpecInvalid / SizeMismatch when storage and grid disagree.
  void validate() const;
};

/// Trilinear interpolation of every channel at world point x into out.
void sample_trilinear(const VolumeGrid& volume, const Vec3& x, std::span<double> out,
                      OutOfBounds mode = OutOfBounds::Zero);
double sample_trilinear(const VolumeGrid& volume, const Vec3& x, int channel = 0,
                        OutOfBounds mode = OutOfBounds::Zero);
Vec3 sample_vec3(const VolumeGrid& volume, const Vec3& x, OutOfBounds mode = OutOfBounds::Clamp);

/// Value and world-space gradient of the trilinear interpolant of one
/// channel. Zero outside the lattice.
double sample_trilinear_with_gradient(const VolumeGrid& volume, const Vec3& x, int channel,
                                      Vec3& gradient);

/// Trilinear value of channels 0..2 and its 3x3 world-space Jacobian
/// (rows = channels). Clamped axes contribute zero derivative.
Vec3 sample_vec3_with_jacobian(const VolumeGrid& volume, const Vec3& x, Mat3& jacobian,
                               OutOfBounds mode = OutOfBounds::Clamp);

/// Nearest-voxel lookup; zero outside the lattice.
double sample_nearest(const VolumeGrid& volume, const Vec3& x, int channel = 0);

/// Interior voxels with at least one face neighbour outside the mask (or
/// outside the grid), in increasing index order.
std::vector<std::size_t> boundary_voxels(const GridSpec& grid, const Mask& mask);

/// Exact Euclidean (spacing-aware) nearest-feature transform: for every voxel
/// the linear index of the closest voxel with features[v] != 0, or -1 when
/// there are no features.
std::vector<std::int64_t> nearest_feature(const GridSpec& grid, const Mask& features);

/// Copies into every voxel outside `mask` the values of its nearest voxel
/// inside it.
void extend_outside_mask(VolumeGrid& volume, const Mask& mask);

std::size_t count_mask(const Mask& mask);

}  // namespace ktpr
