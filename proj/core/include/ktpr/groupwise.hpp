#pragma once

// Groupwise refinement of per-subject, per-joint rigid transforms by twist
// perturbations that minimize intensity variance across a cohort in the
// population canonical space.

#include <optional>
#include <string>
#include <vector>

#include "ktpr/deform.hpp"

namespace ktpr {

/// Rotation magnitude (rad) beyond which the first-order perturbation is
/// rejected.
inline constexpr double kMaxPerturbationAngle = 0.3;

/// Left perturbation (I + hat(xi)) T as a 4x4 matrix. The rotation block is
/// not orthogonal. Throws TwistTooLarge when |omega| > 0.3.
Mat4 perturb_transform(const RigidTransform& t, const Twist& xi);
/// exp(xi) T.
RigidTransform perturb_transform_exact(const RigidTransform& t, const Twist& xi);

enum class PerturbationModel {
  /// (I + hat(xi)) T; log-based blends use its nearest rigid transform
  /// (rotation exp(omega * atan|omega| / |omega|) R, translation kept).
  Linearized,
  Exact,
};

/// The rigid transform a blend sees for T perturbed by xi under `model`
/// (LBS under the linearized model keeps the raw matrix instead).
RigidTransform perturbed_rigid(const RigidTransform& t, const Twist& xi, PerturbationModel model);

struct TwistBank {
  std::vector<std::vector<Twist>> xi;  // [subject][part]
  double lambda = 0.0;

  static TwistBank zeros(int subjects, int parts, double lambda = 0.0);
  int subjects() const { return static_cast<int>(xi.size()); }
  int parts() const { return xi.empty() ? 0 : static_cast<int>(xi.front().size()); }
  Eigen::VectorXd flatten() const;  // subject-major, part, then (omega, v)
  void assign(const Eigen::VectorXd& flat);
  double squared_norm() const;
};

struct GroupwiseSubject {
  VolumeGrid image;                        // native image
  std::vector<RigidTransform> transforms;  // T_{s,k}
  /// K-channel weights in subject canonical coordinates.
  VolumeGrid weights;
  /// Φ_P: population canonical -> subject canonical on the canonical grid;
  /// absent means identity.
  std::optional<DenseField> flow;
};

struct Cohort {
  GridSpec grid;  // population canonical grid
  Mask mask;      // Ω; empty = whole grid
  std::vector<GroupwiseSubject> subjects;
  DeformMethod method = DeformMethod::KTPolyRigid;
  BlendOptions blend;

  int parts() const;
  /// Throws DimensionMismatch / SizeMismatch on inconsistent subjects.
  void validate() const;
};

/// Cohort with its per-subject sample points and weights precomputed, so
/// repeated objective evaluations only redo the blend and resampling.
class PreparedCohort {
 public:
  PreparedCohort(const Cohort& cohort, PerturbationModel model = PerturbationModel::Linearized);

  const Cohort& cohort() const { return *cohort_; }
  PerturbationModel model() const { return model_; }
  int subjects() const { return static_cast<int>(cohort_->subjects.size()); }
  int parts() const { return parts_; }
  std::size_t voxels() const { return voxels_.size(); }
  const std::vector<std::size_t>& voxels_in_mask() const { return voxels_; }

  /// I_s(Φ_s(x)) at every Ω voxel, in voxels_in_mask order.
  std::vector<double> resample(int subject, const std::vector<Twist>& xi) const;
  /// Same for a subset of Ω positions (indices into voxels_in_mask).
  std::vector<double> resample(int subject, const std::vector<Twist>& xi, const std::vector<std::size_t>& subset) const;
  /// Ω positions whose blend depends on part k.
  const std::vector<std::size_t>& support(int subject, int part) const;
  /// d/dxi_{s,k} of the data term, holding the mean fixed (the full-mean
  /// gradient coincides because residuals sum to zero per voxel).
  std::vector<Vec6> data_gradient(int subject, const std::vector<Twist>& xi, const std::vector<double>& mean) const;

  Vec3 map_point(int subject, std::size_t position, const std::vector<RigidTransform>& transforms) const;
  std::vector<RigidTransform> effective_transforms(int subject, const std::vector<Twist>& xi) const;

 private:
  const Cohort* cohort_;
  PerturbationModel model_;
  int parts_ = 0;
  std::vector<std::size_t> voxels_;
  // Per subject, per Ω position.
  std::vector<std::vector<Vec3>> points_;
  std::vector<std::vector<double>> weights_;  // position-major, K per position
  std::vector<std::vector<int>> reference_;
  std::vector<std::vector<std::vector<std::size_t>>> support_;
};

/// Voxelwise mean of the resampled subjects on the cohort grid (zero outside Ω).
VolumeGrid cohort_mean(const Cohort& cohort, const TwistBank& bank,
                       PerturbationModel model = PerturbationModel::Linearized);

struct ObjectiveValue {
  double loss = 0.0;
  double data = 0.0;
  double reg = 0.0;
};

ObjectiveValue objective(const Cohort& cohort, const TwistBank& bank,
                         PerturbationModel model = PerturbationModel::Linearized);
ObjectiveValue objective(const PreparedCohort& prepared, const TwistBank& bank);

enum class GradientMode { FiniteDifference, Analytic };

struct GroupwiseConfig {
  /// Negative selects 1e-2 x the intensity variance of the initial cohort.
  double lambda = -1.0;
  /// Initial step length along the normalized descent direction, in the
  /// scaled metric below (mm; rotations count as rotation_scale * angle).
  /// Accepted steps double it, up to 8x this value.
  double step = 0.5;
  int max_iters = 100;
  GradientMode grad_mode = GradientMode::FiniteDifference;
  double fd_step = 1e-5;
  /// Rotation coordinates are scaled by this length (mm) in the descent
  /// metric so that a step moves rotations and translations comparably;
  /// <= 0 selects the RMS distance of Ω from the origin.
  double rotation_scale = 0.0;
  /// Keep J̄ fixed within an iteration (alternating scheme) instead of
  /// differentiating through it.
  bool frozen_mean = false;
  /// Stop once the step length has shrunk below this.
  double min_step = 1e-7;
  /// Stop when the relative loss decrease of an accepted step is below this.
  double rel_tol = 1e-9;
  int max_halvings = 8;
  PerturbationModel model = PerturbationModel::Linearized;
  /// Parts whose twists are held at zero.
  std::vector<int> fixed_parts;
};

enum class GroupwiseStatus { Converged, MaxIterations, LineSearchStalled };
std::string_view to_string(GroupwiseStatus status);

struct GroupwiseResult {
  TwistBank bank;
  std::vector<double> loss_trace;  // loss after each accepted iterate, [0] initial
  std::vector<double> data_trace;
  GroupwiseStatus status = GroupwiseStatus::Converged;
  int iterations = 0;
  double lambda = 0.0;
};

/// Gradient of the loss at `bank` (FD or analytic per config).
Eigen::VectorXd loss_gradient(const PreparedCohort& prepared, const TwistBank& bank, const GroupwiseConfig& config);

GroupwiseResult optimize(const Cohort& cohort, const GroupwiseConfig& config = {});

}  // namespace ktpr
