#pragma once

// Deformation regularity: finite-difference Jacobian determinants, fold
// percentage and log-determinant statistics.

#include <span>
#include <string>
#include <vector>

#include "ktpr/deform.hpp"
#include "ktpr/kinematics.hpp"

namespace ktpr {

/// det(I + grad u) per voxel. Central differences, one-sided where a
/// neighbour falls outside the mask (or the grid); empty mask = whole grid.
VolumeGrid jacobian_determinant(const DenseField& field, const Mask& mask = {});

struct RegularityOptions {
  /// Also feed |det| of folded voxels into the log2 statistics.
  bool include_folds_in_log_stats = false;
};

struct RegularityReport {
  double fold_percent = 0.0;
  double mean_log2_absdet = 0.0;
  double std_log2_absdet = 0.0;  // population standard deviation
  std::size_t interior_voxels = 0;
  std::size_t folded_voxels = 0;
  /// Channel 0: log2 |det J|; channel 1: sign of det J (+1, 0 or -1).
  VolumeGrid jacobian_field;
  double wall_time_ms = 0.0;
  double peak_mem_mb = 0.0;
};

RegularityReport regularity_report(const DenseField& field, const Mask& mask = {},
                                   const RegularityOptions& options = {});

/// Peak resident set size of this process in MB (0 when unavailable).
double peak_memory_mb();

struct SweepPose {
  double magnitude = 0.0;  // rad, reported in the table
  Pose pose;
};

struct ComparisonRow {
  DeformMethod method = DeformMethod::LBS;
  double pose_magnitude_rad = 0.0;
  RegularityReport report;
  std::string status = "ok";  // "ok" or the error name, e.g. BranchAmbiguity
};

/// Samples every method at every pose with the same weight volume and
/// reports regularity over `mask`. Timing covers dense sampling only.
std::vector<ComparisonRow> compare_methods(const KinematicTree& tree, const VolumeGrid& weights, const Mask& mask,
                                           std::span<const SweepPose> poses,
                                           std::span<const DeformMethod> methods, const BlendOptions& blend = {},
                                           const RegularityOptions& options = {});

inline constexpr const char* kMetricsCsvHeader =
    "method,pose_magnitude_rad,fold_percent,mean_log2_absdet,std_log2_absdet,wall_time_ms,peak_mem_mb,status";

/// One CSV line (no newline) in the kMetricsCsvHeader column order. Timing
/// and memory vary between runs, so they are left empty unless requested.
std::string csv_row(const ComparisonRow& row, bool with_timing = false);
std::string metrics_csv(std::span<const ComparisonRow> rows, bool with_timing = false);

}  // namespace ktpr
