#pragma once

// Articulated volumetric deformations (linear blend skinning, Log-Euclidean
// polyrigid and its kinematic-tree variant), dense sampling, inversion and
// pull-back resampling.
//
// Convention: every field maps canonical coordinates to native (posed)
// coordinates; images are resampled by pull-back, I_canonical = I_native ∘ Φ.

#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ktpr/geometry.hpp"
#include "ktpr/volume.hpp"

namespace ktpr {

enum class DeformMethod { LBS, PolyRigid, KTPolyRigid };
enum class FieldKind { LBS, PolyRigid, KTPolyRigid, Flow, Composite };

std::string_view to_string(DeformMethod method);
std::string_view to_string(FieldKind kind);
/// Accepts "lbs", "polyrigid", "ktpolyrigid" (case-insensitive).
DeformMethod parse_method(std::string_view name);
FieldKind field_kind(DeformMethod method);

struct BlendOptions {
  double branch_epsilon = kDefaultBranchEpsilon;
  /// Parts at or below this weight are skipped by the kinematic-tree blend.
  double weight_floor = 1e-6;
};

/// sum_k w_k M_k applied to x.
Vec3 eval_lbs(const Vec3& x, std::span<const RigidTransform> transforms, std::span<const double> weights);
Vec3 eval_lbs(const Vec3& x, std::span<const Mat4> matrices, std::span<const double> weights);

/// exp(sum_k w_k log T_k) applied to x. Throws BranchAmbiguity when any T_k
/// with non-zero weight is outside the log's injectivity radius.
Vec3 eval_polyrigid(const Vec3& x, std::span<const RigidTransform> transforms, std::span<const double> weights,
                    double branch_epsilon = kDefaultBranchEpsilon);

/// T_ref ∘ exp(sum_k w_k log(T_ref^-1 T_k)) applied to x, skipping parts with
/// w_k <= weight_floor.
Vec3 eval_ktpolyrigid(const Vec3& x, std::span<const RigidTransform> transforms, std::span<const double> weights,
                      int reference_index, const BlendOptions& options = {});

/// argmax_k w_k, smallest index on ties.
int select_reference(std::span<const double> weights);

/// Pointwise blend with the logarithms of every transform (and, for the
/// kinematic-tree variant, every relative transform) precomputed once.
/// Logarithms that fail are recorded and only raised when a point actually
/// needs them.
class ArticulatedBlend {
 public:
  ArticulatedBlend(DeformMethod method, std::vector<RigidTransform> transforms, BlendOptions options = {});

  DeformMethod method() const { return method_; }
  int parts() const { return static_cast<int>(transforms_.size()); }
  const std::vector<RigidTransform>& transforms() const { return transforms_; }
  const BlendOptions& options() const { return options_; }

  Vec3 operator()(const Vec3& x, std::span<const double> weights) const;

  /// Blended rigid motion at a point with the given weights (LBS returns the
  /// blended, generally non-rigid, matrix).
  Mat4 blended_matrix(std::span<const double> weights) const;

 private:
  const Twist& log_of(int reference, int k) const;

  DeformMethod method_;
  std::vector<RigidTransform> transforms_;
  BlendOptions options_;
  // PolyRigid: logs_[k]; KTPolyRigid: logs_[r * K + k] = log(T_r^-1 T_k).
  std::vector<std::optional<Twist>> logs_;
  std::vector<std::string> log_errors_;
};

using PointMap = std::function<Vec3(const Vec3&)>;

/// Articulated deformation whose weights come from a K-channel volume
/// (sampled trilinearly with edge clamping away from voxel centres).
class ArticulatedDeformation {
 public:
  ArticulatedDeformation(ArticulatedBlend blend, const VolumeGrid& weights);

  Vec3 operator()(const Vec3& x) const;
  /// Evaluation at a voxel centre of the weight grid (exact weights).
  Vec3 at_voxel(std::size_t voxel) const;
  const ArticulatedBlend& blend() const { return blend_; }
  const VolumeGrid& weights() const { return *weights_; }

 private:
  ArticulatedBlend blend_;
  const VolumeGrid* weights_;
};

/// Dense map Φ(x) = x + displacement(x) with displacement in mm.
struct DenseField {
  FieldKind kind = FieldKind::Composite;
  VolumeGrid displacement;  // 3 channels

  Vec3 map(const Vec3& x) const { return x + sample_vec3(displacement, x, OutOfBounds::Clamp); }
  const GridSpec& grid() const { return displacement.grid; }
};

DenseField identity_field(const GridSpec& grid, FieldKind kind = FieldKind::Composite);

/// u(x) = Φ(x) - x at every voxel centre of `grid`.
DenseField sample_dense(const ArticulatedDeformation& field, const GridSpec& grid);
DenseField sample_dense(const PointMap& map, const GridSpec& grid, FieldKind kind);

/// Φ = outer ∘ inner on inner's grid.
DenseField compose_fields(const DenseField& outer, const DenseField& inner);

enum class InversionMethod { Newton, FixedPoint };

struct InversionOptions {
  int max_iters = 50;
  /// Convergence threshold on |Φ(y) - x| in voxels (of the smallest spacing).
  double tol = 0.05;
  InversionMethod method = InversionMethod::Newton;
  /// Restricts forward scatter seeds to this mask of the field grid (empty
  /// means every voxel).
  Mask source_mask;
};

struct InverseField {
  DenseField field;       // Φ^-1 as a displacement on the same grid
  Mask valid;             // voxels whose residual met tol
  Mask covered;           // voxels hit by the forward image of source_mask
  std::vector<double> residual;  // |Φ(Φ^-1(x)) - x| in mm
};

InverseField invert_field(const DenseField& field, const InversionOptions& options = {});

/// Pull-back: out(x) = image(Φ(x)) with trilinear interpolation and zero
/// background. The field's grid defines the output lattice.
VolumeGrid resample_image(const VolumeGrid& image, const DenseField& field);
VolumeGrid resample_image(const VolumeGrid& image, const PointMap& map, const GridSpec& out_grid);
/// Same with nearest-neighbour interpolation, for label volumes.
VolumeGrid resample_labels(const VolumeGrid& labels, const DenseField& field);

}  // namespace ktpr
