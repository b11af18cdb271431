#include "ktpr/deform.hpp"

#include <Eigen/Geometry>
#include <Eigen/LU>
#include <algorithm>
#include <cctype>
#include <cmath>
#include <limits>
#include <sstream>

#include "ktpr/error.hpp"
#include "ktpr/parallel.hpp"

namespace ktpr {

std::string_view to_string(DeformMethod method) {
  switch (method) {
    case DeformMethod::LBS: return "lbs";
    case DeformMethod::PolyRigid: return "polyrigid";
    case DeformMethod::KTPolyRigid: return "ktpolyrigid";
  }
  return "unknown";
}

std::string_view to_string(FieldKind kind) {
  switch (kind) {
    case FieldKind::LBS: return "lbs";
    case FieldKind::PolyRigid: return "polyrigid";
    case FieldKind::KTPolyRigid: return "ktpolyrigid";
    case FieldKind::Flow: return "flow";
    case FieldKind::Composite: return "composite";
  }
  return "unknown";
}

DeformMethod parse_method(std::string_view name) {
  std::string lower(name);
  std::transform(lower.begin(), lower.end(), lower.begin(), [](unsigned char c) { return std::tolower(c); });
  if (lower == "lbs") return DeformMethod::LBS;
  if (lower == "polyrigid") return DeformMethod::PolyRigid;
  if (lower == "ktpolyrigid") return DeformMethod::KTPolyRigid;
  throw SpecInvalid("unknown deformation method '" + std::string(name) + "'");
}

FieldKind field_kind(DeformMethod method) {
  switch (method) {
    case DeformMethod::LBS: return FieldKind::LBS;
    case DeformMethod::PolyRigid: return FieldKind::PolyRigid;
    case DeformMethod::KTPolyRigid: return FieldKind::KTPolyRigid;
  }
  return FieldKind::Composite;
}

namespace {

void check_sizes(std::size_t transforms, std::size_t weights) {
  if (transforms != weights) {
    std::ostringstream msg;
    msg << transforms << " transforms but " << weights << " weights";
    throw DimensionMismatch(msg.str());
  }
}

}  // namespace

Vec3 eval_lbs(const Vec3& x, std::span<const RigidTransform> transforms, std::span<const double> weights) {
  check_sizes(transforms.size(), weights.size());
  Mat3 r = Mat3::Zero();
  Vec3 t = Vec3::Zero();
  for (std::size_t k = 0; k < transforms.size(); ++k) {
    r += weights[k] * transforms[k].rotation;
    t += weights[k] * transforms[k].translation;
  }
  return r * x + t;
}

Vec3 eval_lbs(const Vec3& x, std::span<const Mat4> matrices, std::span<const double> weights) {
  check_sizes(matrices.size(), weights.size());
  Mat4 m = Mat4::Zero();
  for (std::size_t k = 0; k < matrices.size(); ++k) m += weights[k] * matrices[k];
  return m.topLeftCorner<3, 3>() * x + m.topRightCorner<3, 1>();
}

Vec3 eval_polyrigid(const Vec3& x, std::span<const RigidTransform> transforms, std::span<const double> weights,
                    double branch_epsilon) {
  check_sizes(transforms.size(), weights.size());
  Vec6 sum = Vec6::Zero();
  for (std::size_t k = 0; k < transforms.size(); ++k) {
    if (weights[k] == 0.0) continue;
    sum += weights[k] * se3_log(transforms[k], branch_epsilon).vector();
  }
  return apply(se3_exp(Twist::from_vector(sum)), x);
}

Vec3 eval_ktpolyrigid(const Vec3& x, std::span<const RigidTransform> transforms, std::span<const double> weights,
                      int reference_index, const BlendOptions& options) {
  check_sizes(transforms.size(), weights.size());
  if (reference_index < 0 || static_cast<std::size_t>(reference_index) >= transforms.size()) {
    throw DimensionMismatch("reference index out of range");
  }
  const RigidTransform& ref = transforms[static_cast<std::size_t>(reference_index)];
  const RigidTransform ref_inv = inverse(ref);
  Vec6 sum = Vec6::Zero();
  for (std::size_t k = 0; k < transforms.size(); ++k) {
    if (weights[k] <= options.weight_floor || static_cast<int>(k) == reference_index) continue;
    sum += weights[k] * se3_log(compose(ref_inv, transforms[k]), options.branch_epsilon).vector();
  }
  return apply(compose(ref, se3_exp(Twist::from_vector(sum))), x);
}

int select_reference(std::span<const double> weights) {
  int best = 0;
  for (std::size_t k = 1; k < weights.size(); ++k) {
    if (weights[k] > weights[static_cast<std::size_t>(best)]) best = static_cast<int>(k);
  }
  return best;
}

ArticulatedBlend::ArticulatedBlend(DeformMethod method, std::vector<RigidTransform> transforms, BlendOptions options)
    : method_(method), transforms_(std::move(transforms)), options_(options) {
  const std::size_t k = transforms_.size();
  if (k == 0) throw DimensionMismatch("no transforms to blend");
  auto try_log = [&](const RigidTransform& t, std::size_t slot) {
    try {
      logs_[slot] = se3_log(t, options_.branch_epsilon);
    } catch (const BranchAmbiguity& e) {
      log_errors_[slot] = e.what();
    }
  };
  if (method_ == DeformMethod::PolyRigid) {
    logs_.resize(k);
    log_errors_.resize(k);
    for (std::size_t i = 0; i < k; ++i) try_log(transforms_[i], i);
  } else if (method_ == DeformMethod::KTPolyRigid) {
    logs_.resize(k * k);
    log_errors_.resize(k * k);
    for (std::size_t r = 0; r < k; ++r) {
      const RigidTransform inv = inverse(transforms_[r]);
      for (std::size_t i = 0; i < k; ++i) {
        if (i == r) {
          logs_[r * k + i] = Twist{};
        } else {
          try_log(compose(inv, transforms_[i]), r * k + i);
        }
      }
    }
  }
}

const Twist& ArticulatedBlend::log_of(int reference, int k) const {
  const std::size_t slot = method_ == DeformMethod::PolyRigid
                               ? static_cast<std::size_t>(k)
                               : static_cast<std::size_t>(reference) * transforms_.size() + static_cast<std::size_t>(k);
  if (!logs_[slot]) {
    std::ostringstream msg;
    msg << log_errors_[slot] << " (part " << k;
    if (method_ == DeformMethod::KTPolyRigid) msg << " relative to reference " << reference;
    msg << ")";
    throw BranchAmbiguity(msg.str());
  }
  return *logs_[slot];
}

Mat4 ArticulatedBlend::blended_matrix(std::span<const double> weights) const {
  check_sizes(transforms_.size(), weights.size());
  const int parts = static_cast<int>(transforms_.size());
  switch (method_) {
    case DeformMethod::LBS: {
      Mat4 m = Mat4::Zero();
      for (int k = 0; k < parts; ++k) m += weights[static_cast<std::size_t>(k)] * transforms_[static_cast<std::size_t>(k)].matrix();
      return m;
    }
    case DeformMethod::PolyRigid: {
      Vec6 sum = Vec6::Zero();
      for (int k = 0; k < parts; ++k) {
        const double w = weights[static_cast<std::size_t>(k)];
        if (w == 0.0) continue;
        sum += w * log_of(0, k).vector();
      }
      return se3_exp(Twist::from_vector(sum)).matrix();
    }
    case DeformMethod::KTPolyRigid: {
      const int ref = select_reference(weights);
      Vec6 sum = Vec6::Zero();
      for (int k = 0; k < parts; ++k) {
        const double w = weights[static_cast<std::size_t>(k)];
        if (w <= options_.weight_floor || k == ref) continue;
        sum += w * log_of(ref, k).vector();
      }
      return compose(transforms_[static_cast<std::size_t>(ref)], se3_exp(Twist::from_vector(sum))).matrix();
    }
  }
  return Mat4::Identity();
}

Vec3 ArticulatedBlend::operator()(const Vec3& x, std::span<const double> weights) const {
  const Mat4 m = blended_matrix(weights);
  return m.topLeftCorner<3, 3>() * x + m.topRightCorner<3, 1>();
}

ArticulatedDeformation::ArticulatedDeformation(ArticulatedBlend blend, const VolumeGrid& weights)
    : blend_(std::move(blend)), weights_(&weights) {
  if (weights.channels != blend_.parts()) {
    std::ostringstream msg;
    msg << "weight volume has " << weights.channels << " channels, blend has " << blend_.parts() << " parts";
    throw DimensionMismatch(msg.str());
  }
}

Vec3 ArticulatedDeformation::operator()(const Vec3& x) const {
  double buf[64];
  std::vector<double> heap;
  std::span<double> w;
  if (weights_->channels <= 64) {
    w = std::span<double>(buf, static_cast<std::size_t>(weights_->channels));
  } else {
    heap.resize(static_cast<std::size_t>(weights_->channels));
    w = heap;
  }
  sample_trilinear(*weights_, x, w, OutOfBounds::Clamp);
  return blend_(x, w);
}

Vec3 ArticulatedDeformation::at_voxel(std::size_t voxel) const {
  return blend_(weights_->grid.world(voxel), weights_->voxel(voxel));
}

DenseField identity_field(const GridSpec& grid, FieldKind kind) {
  return {kind, VolumeGrid::zeros(grid, 3)};
}

DenseField sample_dense(const ArticulatedDeformation& field, const GridSpec& grid) {
  DenseField out{field_kind(field.blend().method()), VolumeGrid::zeros(grid, 3)};
  const bool same_grid = grid == field.weights().grid;
  parallel_for(grid.voxel_count(), [&](std::size_t begin, std::size_t end) {
    for (std::size_t v = begin; v < end; ++v) {
      const Vec3 x = grid.world(v);
      const Vec3 y = same_grid ? field.at_voxel(v) : field(x);
      out.displacement.set_vec3(v, y - x);
    }
  });
  return out;
}

DenseField sample_dense(const PointMap& map, const GridSpec& grid, FieldKind kind) {
  DenseField out{kind, VolumeGrid::zeros(grid, 3)};
  parallel_for(grid.voxel_count(), [&](std::size_t begin, std::size_t end) {
    for (std::size_t v = begin; v < end; ++v) {
      const Vec3 x = grid.world(v);
      out.displacement.set_vec3(v, map(x) - x);
    }
  });
  return out;
}

DenseField compose_fields(const DenseField& outer, const DenseField& inner) {
  DenseField out{FieldKind::Composite, VolumeGrid::zeros(inner.grid(), 3)};
  const GridSpec& grid = inner.grid();
  parallel_for(grid.voxel_count(), [&](std::size_t begin, std::size_t end) {
    for (std::size_t v = begin; v < end; ++v) {
      const Vec3 x = grid.world(v);
      const Vec3 mid = x + inner.displacement.vec3(v);
      out.displacement.set_vec3(v, outer.map(mid) - x);
    }
  });
  return out;
}

InverseField invert_field(const DenseField& field, const InversionOptions& options) {
  const GridSpec& grid = field.grid();
  const std::size_t n = grid.voxel_count();
  const double tol_mm = options.tol * grid.spacing.minCoeff();
  if (!options.source_mask.empty() && options.source_mask.size() != n) {
    throw SizeMismatch("inversion source mask size differs from field grid");
  }

  // Forward scatter: every source voxel c lands at Φ(c); the nearest lattice
  // voxel remembers the closest landing as its Newton seed.
  std::vector<std::int64_t> seed(n, -1);
  std::vector<double> seed_dist(n, std::numeric_limits<double>::infinity());
  Mask covered(n, 0);
  for (std::size_t c = 0; c < n; ++c) {
    if (!options.source_mask.empty() && !options.source_mask[c]) continue;
    const Vec3 y = grid.world(c) + field.displacement.vec3(c);
    const Vec3 ci = grid.continuous_index(y);
    int idx[3];
    bool in = true;
    for (int a = 0; a < 3; ++a) {
      idx[a] = static_cast<int>(std::lround(ci[a]));
      in = in && idx[a] >= 0 && idx[a] < grid.dims[static_cast<std::size_t>(a)];
    }
    if (!in) continue;
    const std::size_t target = grid.index(idx[0], idx[1], idx[2]);
    const double d = (grid.world(target) - y).squaredNorm();
    covered[target] = 1;
    if (d < seed_dist[target]) {
      seed_dist[target] = d;
      seed[target] = static_cast<std::int64_t>(c);
    }
  }
  Mask seeded(n, 0);
  for (std::size_t v = 0; v < n; ++v) seeded[v] = seed[v] >= 0 ? 1 : 0;
  const auto nearest_seeded = nearest_feature(grid, seeded);

  InverseField out;
  out.field = DenseField{field.kind, VolumeGrid::zeros(grid, 3)};
  out.valid.assign(n, 0);
  out.covered = std::move(covered);
  out.residual.assign(n, std::numeric_limits<double>::infinity());

  parallel_for(n, [&](std::size_t begin, std::size_t end) {
    for (std::size_t v = begin; v < end; ++v) {
      const Vec3 x = grid.world(v);
      Vec3 y;
      if (options.method == InversionMethod::FixedPoint) {
        y = x;
      } else if (nearest_seeded[v] >= 0) {
        const auto s = static_cast<std::size_t>(nearest_seeded[v]);
        const auto c = static_cast<std::size_t>(seed[s]);
        // Seed voxel's preimage, shifted by the residual offset.
        y = grid.world(c) + (x - (grid.world(c) + field.displacement.vec3(c)));
      } else {
        y = x - field.displacement.vec3(v);
      }

      Mat3 jac;
      Vec3 u = sample_vec3_with_jacobian(field.displacement, y, jac);
      Vec3 r = y + u - x;
      double rn = r.norm();
      for (int it = 0; it < options.max_iters && rn > tol_mm; ++it) {
        if (options.method == InversionMethod::FixedPoint) {
          y = x - u;
          u = sample_vec3_with_jacobian(field.displacement, y, jac);
          r = y + u - x;
          rn = r.norm();
          continue;
        }
        const Mat3 j = Mat3::Identity() + jac;
        Vec3 delta;
        if (std::abs(j.determinant()) > 1e-8) {
          delta = j.partialPivLu().solve(r);
        } else {
          delta = r;
        }
        double alpha = 1.0;
        bool improved = false;
        for (int ls = 0; ls < 12; ++ls, alpha *= 0.5) {
          const Vec3 y_try = y - alpha * delta;
          Mat3 jac_try;
          const Vec3 u_try = sample_vec3_with_jacobian(field.displacement, y_try, jac_try);
          const Vec3 r_try = y_try + u_try - x;
          if (r_try.norm() < rn) {
            y = y_try;
            u = u_try;
            jac = jac_try;
            r = r_try;
            rn = r_try.norm();
            improved = true;
            break;
          }
        }
        if (!improved) break;
      }
      out.field.displacement.set_vec3(v, y - x);
      out.residual[v] = rn;
      out.valid[v] = rn <= tol_mm ? 1 : 0;
    }
  });
  return out;
}

VolumeGrid resample_image(const VolumeGrid& image, const DenseField& field) {
  const GridSpec& grid = field.grid();
  VolumeGrid out = VolumeGrid::zeros(grid, image.channels);
  parallel_for(grid.voxel_count(), [&](std::size_t begin, std::size_t end) {
    for (std::size_t v = begin; v < end; ++v) {
      const Vec3 y = grid.world(v) + field.displacement.vec3(v);
      sample_trilinear(image, y, out.voxel(v), OutOfBounds::Zero);
    }
  });
  return out;
}

VolumeGrid resample_image(const VolumeGrid& image, const PointMap& map, const GridSpec& out_grid) {
  VolumeGrid out = VolumeGrid::zeros(out_grid, image.channels);
  parallel_for(out_grid.voxel_count(), [&](std::size_t begin, std::size_t end) {
    for (std::size_t v = begin; v < end; ++v) {
      sample_trilinear(image, map(out_grid.world(v)), out.voxel(v), OutOfBounds::Zero);
    }
  });
  return out;
}

VolumeGrid resample_labels(const VolumeGrid& labels, const DenseField& field) {
  const GridSpec& grid = field.grid();
  VolumeGrid out = VolumeGrid::zeros(grid, labels.channels);
  parallel_for(grid.voxel_count(), [&](std::size_t begin, std::size_t end) {
    for (std::size_t v = begin; v < end; ++v) {
      const Vec3 y = grid.world(v) + field.displacement.vec3(v);
      for (int c = 0; c < labels.channels; ++c) out.at(v, c) = sample_nearest(labels, y, c);
    }
  });
  return out;
}

}  // namespace ktpr
