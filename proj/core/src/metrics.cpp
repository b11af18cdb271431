#include "ktpr/metrics.hpp"

#include <Eigen/LU>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>

#include "ktpr/error.hpp"
#include "ktpr/parallel.hpp"

namespace ktpr {

VolumeGrid jacobian_determinant(const DenseField& field, const Mask& mask) {
  const GridSpec& grid = field.grid();
  for (int a = 0; a < 3; ++a) {
    if (grid.dims[static_cast<std::size_t>(a)] < 3) {
      throw GridTooSmall("jacobian needs at least 3 voxels per axis");
    }
  }
  if (!mask.empty() && mask.size() != grid.voxel_count()) throw SizeMismatch("mask size differs from field grid");
  const VolumeGrid& u = field.displacement;
  VolumeGrid det = VolumeGrid::zeros(grid, 1);
  det.mask = mask;
  auto usable = [&](std::size_t v, bool inside) { return !inside || mask.empty() || mask[v] != 0; };
  parallel_for(grid.voxel_count(), [&](std::size_t begin, std::size_t end) {
    for (std::size_t v = begin; v < end; ++v) {
      const auto c = grid.ijk(v);
      const bool inside = mask.empty() || mask[v] != 0;
      Mat3 jac = Mat3::Identity();
      for (int a = 0; a < 3; ++a) {
        std::array<int, 3> lo = c, hi = c;
        --lo[static_cast<std::size_t>(a)];
        ++hi[static_cast<std::size_t>(a)];
        const bool has_lo = grid.contains(lo[0], lo[1], lo[2]) && usable(grid.index(lo[0], lo[1], lo[2]), inside);
        const bool has_hi = grid.contains(hi[0], hi[1], hi[2]) && usable(grid.index(hi[0], hi[1], hi[2]), inside);
        const double h = grid.spacing[a];
        Vec3 d = Vec3::Zero();
        if (has_lo && has_hi) {
          d = (u.vec3(grid.index(hi[0], hi[1], hi[2])) - u.vec3(grid.index(lo[0], lo[1], lo[2]))) / (2.0 * h);
        } else if (has_hi) {
          d = (u.vec3(grid.index(hi[0], hi[1], hi[2])) - u.vec3(v)) / h;
        } else if (has_lo) {
          d = (u.vec3(v) - u.vec3(grid.index(lo[0], lo[1], lo[2]))) / h;
        }
        jac.col(a) += d;
      }
      det.at(v) = jac.determinant();
    }
  });
  return det;
}

RegularityReport regularity_report(const DenseField& field, const Mask& mask, const RegularityOptions& options) {
  const VolumeGrid det = jacobian_determinant(field, mask);
  const GridSpec& grid = field.grid();
  RegularityReport report;
  report.jacobian_field = VolumeGrid::zeros(grid, 2);
  report.jacobian_field.mask = mask;
  std::vector<double> logs;
  for (std::size_t v = 0; v < grid.voxel_count(); ++v) {
    const double d = det.at(v);
    const double sign = d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0);
    report.jacobian_field.at(v, 0) = std::log2(std::abs(d));
    report.jacobian_field.at(v, 1) = sign;
    if (!mask.empty() && mask[v] == 0) continue;
    ++report.interior_voxels;
    const bool folded = !(d > 0.0);
    if (folded) ++report.folded_voxels;
    if (!folded || (options.include_folds_in_log_stats && d != 0.0)) logs.push_back(std::log2(std::abs(d)));
  }
  if (report.interior_voxels > 0) {
    report.fold_percent = 100.0 * static_cast<double>(report.folded_voxels) /
                          static_cast<double>(report.interior_voxels);
  }
  if (!logs.empty()) {
    const double n = static_cast<double>(logs.size());
    report.mean_log2_absdet = pairwise_sum(logs.data(), logs.size()) / n;
    for (double& l : logs) l = (l - report.mean_log2_absdet) * (l - report.mean_log2_absdet);
    report.std_log2_absdet = std::sqrt(pairwise_sum(logs.data(), logs.size()) / n);
  }
  report.peak_mem_mb = peak_memory_mb();
  return report;
}

double peak_memory_mb() {
  std::ifstream status("/proc/self/status");
  std::string line;
  while (std::getline(status, line)) {
    if (line.rfind("VmHWM:", 0) == 0) {
      std::istringstream in(line.substr(6));
      double kb = 0.0;
      in >> kb;
      return kb / 1024.0;
    }
  }
  return 0.0;
}

std::vector<ComparisonRow> compare_methods(const KinematicTree& tree, const VolumeGrid& weights, const Mask& mask,
                                           std::span<const SweepPose> poses,
                                           std::span<const DeformMethod> methods, const BlendOptions& blend,
                                           const RegularityOptions& options) {
  if (weights.channels != tree.size()) throw DimensionMismatch("weight channels differ from part count");
  std::vector<ComparisonRow> rows;
  for (const SweepPose& sweep : poses) {
    const std::vector<RigidTransform> transforms = forward_kinematics(tree, sweep.pose);
    for (DeformMethod method : methods) {
      ComparisonRow row;
      row.method = method;
      row.pose_magnitude_rad = sweep.magnitude;
      try {
        const auto start = std::chrono::steady_clock::now();
        const ArticulatedDeformation deformation(ArticulatedBlend(method, transforms, blend), weights);
        const DenseField field = sample_dense(deformation, weights.grid);
        const auto stop = std::chrono::steady_clock::now();
        row.report = regularity_report(field, mask, options);
        row.report.wall_time_ms = std::chrono::duration<double, std::milli>(stop - start).count();
      } catch (const Error& e) {
        const std::string what = e.what();
        row.status = what.substr(0, what.find(':'));
        row.report.peak_mem_mb = peak_memory_mb();
      }
      rows.push_back(std::move(row));
    }
  }
  return rows;
}

std::string csv_row(const ComparisonRow& row, bool with_timing) {
  const bool ok = row.status == "ok";
  auto num = [&](double value) {
    if (!ok) return std::string("nan");
    char buffer[64];
    std::snprintf(buffer, sizeof buffer, "%.9g", value);
    return std::string(buffer);
  };
  char pose[64], time[64], mem[64];
  std::snprintf(pose, sizeof pose, "%.6g", row.pose_magnitude_rad);
  time[0] = mem[0] = '\0';
  if (with_timing) {
    std::snprintf(time, sizeof time, "%.3f", row.report.wall_time_ms);
    std::snprintf(mem, sizeof mem, "%.1f", row.report.peak_mem_mb);
  }
  std::ostringstream out;
  out << to_string(row.method) << ',' << pose << ',' << num(row.report.fold_percent) << ','
      << num(row.report.mean_log2_absdet) << ',' << num(row.report.std_log2_absdet) << ',' << time << ',' << mem
      << ',' << row.status;
  return out.str();
}

std::string metrics_csv(std::span<const ComparisonRow> rows, bool with_timing) {
  std::string out = std::string(kMetricsCsvHeader) + "\n";
  for (const auto& row : rows) out += csv_row(row, with_timing) + "\n";
  return out;
}

}  // namespace ktpr
