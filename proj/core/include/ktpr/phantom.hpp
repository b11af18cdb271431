#pragma once

// Synthetic articulated subjects: capsule-union bodies with a kinematic
// tree, a watertight surface, joint-ramp skinning weights, an analytic
// shape basis and structured intensity volumes with embedded organs.

#include <Eigen/Core>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "ktpr/deform.hpp"
#include "ktpr/kinematics.hpp"
#include "ktpr/mesh.hpp"
#include "ktpr/volume.hpp"

namespace ktpr {

enum class TreePreset { Chain, Biped };

struct Organ {
  std::string name;
  int part = 0;
  Vec3 center = Vec3::Zero();  // mm, canonical pose
  double radius = 5.0;         // mm
  double intensity = 150.0;
};

struct PhantomSpec {
  TreePreset preset = TreePreset::Biped;
  /// Chain preset: number of parts, segment length and radius (mm).
  int parts = 2;
  double limb_length = 60.0;
  double limb_radius = 14.0;
  /// Biped preset: uniform size multiplier.
  double scale = 1.0;
  /// Half-width of the cosine weight ramp across each joint (mm).
  double blend_band = 25.0;
  /// Replaces the preset's default organs when non-empty.
  std::vector<Organ> organs;
  /// Cubic grid: voxels per axis and margin around the T-pose body (mm).
  int resolution = 96;
  double margin = 12.0;
  /// Lattice spacing of the marching-tetrahedra surface extraction (mm).
  double mesh_cell = 5.0;
  std::uint64_t seed = 1;

  /// Throws SpecInvalid.
  void validate() const;
};

struct Capsule {
  Vec3 a = Vec3::Zero();
  Vec3 b = Vec3::Zero();
  double radius = 1.0;

  double distance(const Vec3& x) const;  // signed, negative inside
};

struct Phantom {
  PhantomSpec spec;
  KinematicTree tree;
  std::vector<Capsule> capsules;  // one per part
  std::vector<double> base_intensity;
  std::vector<Organ> organs;
  SurfaceMesh mesh;
  Eigen::MatrixXd vertex_weights;  // N x K
  ShapeBasis shape;                // mean = mesh vertices
  Eigen::MatrixXd shape_mix;       // |beta| x 4: components in terms of the raw analytic modes
  GridSpec grid;
  Mask mask;            // voxels inside the capsule union
  VolumeGrid image;     // canonical intensity
  VolumeGrid weights;   // analytic K-channel weights, defined everywhere
  VolumeGrid labels;    // 0 background, organ i -> i + 1

  int parts() const { return tree.size(); }
  double signed_distance(const Vec3& x) const;
  /// Joint-ramp skinning weights; on the simplex everywhere.
  Eigen::VectorXd weights_at(const Vec3& x) const;
  double intensity_at(const Vec3& x) const;
  /// Shape displacement sum_j beta_j component_j(x), defined off-surface too.
  Vec3 shape_offset(const Vec3& x, const Eigen::VectorXd& beta) const;
  /// The four raw analytic shape modes at x (before orthonormalization).
  Eigen::Matrix<double, 3, 4> raw_shape_modes(const Vec3& x) const;
};

Phantom build_phantom(const PhantomSpec& spec);

/// Capsule-union surface by marching tetrahedra with vertices projected
/// onto the exact surface.
SurfaceMesh capsule_union_mesh(const std::vector<Capsule>& capsules, double cell);

struct PosedVolumes {
  VolumeGrid image;
  VolumeGrid labels;
  DenseField forward;   // canonical -> native
  InverseField inverse; // native -> canonical
};

/// Native image = canonical ∘ Φ^-1 for the articulated field Φ of `pose`.
/// `weights` defaults to the phantom's analytic weights.
VolumeGrid pose_phantom(const Phantom& phantom, const Pose& pose, DeformMethod method = DeformMethod::KTPolyRigid,
                        const VolumeGrid* weights = nullptr);
PosedVolumes pose_phantom_full(const Phantom& phantom, const Pose& pose,
                               DeformMethod method = DeformMethod::KTPolyRigid, const VolumeGrid* weights = nullptr);

struct CohortSubject {
  Eigen::VectorXd beta;
  Pose pose;
  KinematicTree tree;        // rest joints moved by the shape
  SurfaceMesh mesh;          // subject shape, canonical pose
  VolumeGrid weights;        // subject canonical weights
  VolumeGrid canonical;      // subject canonical image
  VolumeGrid native;         // posed image
  std::vector<RigidTransform> transforms;
};

struct CohortOptions {
  int subjects = 3;
  double beta_sigma = 0.7;
  double beta_clip = 2.0;
  /// Each joint angle is drawn uniformly up to this magnitude (rad).
  double pose_magnitude = 0.3;
  std::uint64_t seed = 1;
};

/// Subjects share topology and the kinematic structure; shapes and poses
/// differ by seed.
std::vector<CohortSubject> generate_cohort(const Phantom& phantom, const CohortOptions& options);

/// mt19937_64 with hand-rolled conversions: std distributions are not
/// specified bit-for-bit across standard libraries, the engine is.
class PortableRng {
 public:
  explicit PortableRng(std::uint64_t seed) : engine_(seed) {}
  double uniform();  // [0, 1)
  double normal();   // Box-Muller

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace ktpr
