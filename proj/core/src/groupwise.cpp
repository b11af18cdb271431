#include "ktpr/groupwise.hpp"

#include <Eigen/Geometry>
#include <Eigen/LU>
#include <algorithm>
#include <cmath>
#include <sstream>

#include "ktpr/error.hpp"
#include "ktpr/parallel.hpp"

namespace ktpr {
namespace {

constexpr std::size_t kGrain = 1024;

// atan(t) / t and (d/dt (atan t / t)) / t.
void polar_coefficients(double t, double& g, double& dg_over_t) {
  if (t < 1e-4) {
    const double t2 = t * t;
    g = 1.0 - t2 / 3.0 + t2 * t2 / 5.0;
    dg_over_t = -2.0 / 3.0 + 0.8 * t2;
    return;
  }
  g = std::atan(t) / t;
  dg_over_t = (t / (1.0 + t * t) - std::atan(t)) / (t * t * t);
}

Eigen::Matrix<double, 3, 6> point_action(const Vec3& q) {
  // d/d(eps) of hat(eps) q = omega x q + v.
  Eigen::Matrix<double, 3, 6> m;
  m.leftCols<3>() = -skew(q);
  m.rightCols<3>() = Mat3::Identity();
  return m;
}

// d(eps)/d(xi): the left perturbation seen by the blend per unit twist.
Mat6 twist_to_left(const RigidTransform& t, const Twist& xi, PerturbationModel model) {
  if (model == PerturbationModel::Exact) return left_jacobian(xi);
  const double theta = xi.omega.norm();
  double g = 1.0, dg = 0.0;
  polar_coefficients(theta, g, dg);
  const Vec3 a = g * xi.omega;
  const Mat3 da = g * Mat3::Identity() + dg * xi.omega * xi.omega.transpose();
  const Mat3 rot = so3_left_jacobian(a) * da;
  const Vec3 t_new = t.translation + xi.omega.cross(t.translation) + xi.v;
  Mat6 m = Mat6::Zero();
  m.topLeftCorner<3, 3>() = rot;
  m.bottomLeftCorner<3, 3>() = -skew(t.translation) + skew(t_new) * rot;
  m.bottomRightCorner<3, 3>() = Mat3::Identity();
  return m;
}

bool uses_raw_matrix(DeformMethod method, PerturbationModel model) {
  return method == DeformMethod::LBS && model == PerturbationModel::Linearized;
}

Mat4 linear_perturbation(const RigidTransform& t, const Twist& xi) {
  return (Mat4::Identity() + hat(xi)) * t.matrix();
}

}  // namespace

Mat4 perturb_transform(const RigidTransform& t, const Twist& xi) {
  if (xi.omega.norm() > kMaxPerturbationAngle) {
    std::ostringstream msg;
    msg << "|omega| = " << xi.omega.norm() << " exceeds " << kMaxPerturbationAngle << " rad";
    throw TwistTooLarge(msg.str());
  }
  return linear_perturbation(t, xi);
}

RigidTransform perturb_transform_exact(const RigidTransform& t, const Twist& xi) {
  return compose(se3_exp(xi), t);
}

RigidTransform perturbed_rigid(const RigidTransform& t, const Twist& xi, PerturbationModel model) {
  if (model == PerturbationModel::Exact) return perturb_transform_exact(t, xi);
  const double theta = xi.omega.norm();
  double g = 1.0, dg = 0.0;
  polar_coefficients(theta, g, dg);
  return {so3_exp(g * xi.omega) * t.rotation, t.translation + xi.omega.cross(t.translation) + xi.v};
}

TwistBank TwistBank::zeros(int subjects, int parts, double lambda) {
  TwistBank bank;
  bank.xi.assign(static_cast<std::size_t>(subjects), std::vector<Twist>(static_cast<std::size_t>(parts)));
  bank.lambda = lambda;
  return bank;
}

Eigen::VectorXd TwistBank::flatten() const {
  Eigen::VectorXd flat(6 * subjects() * parts());
  Eigen::Index i = 0;
  for (const auto& row : xi) {
    for (const Twist& t : row) {
      flat.segment<6>(i) = t.vector();
      i += 6;
    }
  }
  return flat;
}

void TwistBank::assign(const Eigen::VectorXd& flat) {
  if (flat.size() != 6 * subjects() * parts()) throw DimensionMismatch("twist vector length differs from bank");
  Eigen::Index i = 0;
  for (auto& row : xi) {
    for (Twist& t : row) {
      t = Twist::from_vector(flat.segment<6>(i));
      i += 6;
    }
  }
}

double TwistBank::squared_norm() const { return flatten().squaredNorm(); }

int Cohort::parts() const { return subjects.empty() ? 0 : static_cast<int>(subjects.front().transforms.size()); }

void Cohort::validate() const {
  if (subjects.empty()) throw DimensionMismatch("cohort has no subjects");
  grid.validate();
  if (!mask.empty() && mask.size() != grid.voxel_count()) throw SizeMismatch("cohort mask size differs from grid");
  const int k = parts();
  if (k == 0) throw DimensionMismatch("subjects have no transforms");
  for (std::size_t s = 0; s < subjects.size(); ++s) {
    const GroupwiseSubject& sub = subjects[s];
    std::ostringstream where;
    where << "subject " << s << ": ";
    if (static_cast<int>(sub.transforms.size()) != k) throw DimensionMismatch(where.str() + "part count differs");
    if (sub.weights.channels != k) throw DimensionMismatch(where.str() + "weight channels differ from part count");
    if (sub.image.channels != 1) throw DimensionMismatch(where.str() + "image must have one channel");
    sub.image.validate();
    sub.weights.validate();
    if (sub.flow && sub.flow->displacement.grid != grid) throw SizeMismatch(where.str() + "flow grid differs from cohort grid");
  }
}

PreparedCohort::PreparedCohort(const Cohort& cohort, PerturbationModel model)
    : cohort_(&cohort), model_(model), parts_(cohort.parts()) {
  cohort.validate();
  for (std::size_t v = 0; v < cohort.grid.voxel_count(); ++v) {
    if (cohort.mask.empty() || cohort.mask[v]) voxels_.push_back(v);
  }
  const std::size_t n = voxels_.size();
  const std::size_t k = static_cast<std::size_t>(parts_);
  for (const GroupwiseSubject& sub : cohort.subjects) {
    std::vector<Vec3> points(n);
    std::vector<double> weights(n * k);
    std::vector<int> reference(n);
    const bool direct = !sub.flow && sub.weights.grid == cohort.grid;
    parallel_for(n, [&](std::size_t begin, std::size_t end) {
      for (std::size_t i = begin; i < end; ++i) {
        const Vec3 x = cohort.grid.world(voxels_[i]);
        points[i] = sub.flow ? sub.flow->map(x) : x;
        std::span<double> w(weights.data() + i * k, k);
        if (direct) {
          const auto src = sub.weights.voxel(voxels_[i]);
          std::copy(src.begin(), src.end(), w.begin());
        } else {
          sample_trilinear(sub.weights, points[i], w, OutOfBounds::Clamp);
        }
        reference[i] = select_reference(w);
      }
    });
    std::vector<std::vector<std::size_t>> support(k);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < k; ++j) {
        const double w = weights[i * k + j];
        bool affected = false;
        switch (cohort.method) {
          case DeformMethod::LBS:
          case DeformMethod::PolyRigid:
            affected = w != 0.0;
            break;
          case DeformMethod::KTPolyRigid:
            affected = w > cohort.blend.weight_floor || reference[i] == static_cast<int>(j);
            break;
        }
        if (affected) support[j].push_back(i);
      }
    }
    points_.push_back(std::move(points));
    weights_.push_back(std::move(weights));
    reference_.push_back(std::move(reference));
    support_.push_back(std::move(support));
  }
}

std::vector<RigidTransform> PreparedCohort::effective_transforms(int subject, const std::vector<Twist>& xi) const {
  const auto& base = cohort_->subjects[static_cast<std::size_t>(subject)].transforms;
  std::vector<RigidTransform> out(base.size());
  for (std::size_t k = 0; k < base.size(); ++k) {
    out[k] = uses_raw_matrix(cohort_->method, model_) ? RigidTransform::from_matrix(linear_perturbation(base[k], xi[k]))
                                                       : perturbed_rigid(base[k], xi[k], model_);
  }
  return out;
}

Vec3 PreparedCohort::map_point(int subject, std::size_t position, const std::vector<RigidTransform>& transforms) const {
  const ArticulatedBlend blend(cohort_->method, transforms, cohort_->blend);
  const std::size_t k = static_cast<std::size_t>(parts_);
  return blend(points_[static_cast<std::size_t>(subject)][position],
               std::span<const double>(weights_[static_cast<std::size_t>(subject)].data() + position * k, k));
}

std::vector<double> PreparedCohort::resample(int subject, const std::vector<Twist>& xi,
                                             const std::vector<std::size_t>& subset) const {
  const auto s = static_cast<std::size_t>(subject);
  const ArticulatedBlend blend(cohort_->method, effective_transforms(subject, xi), cohort_->blend);
  const VolumeGrid& image = cohort_->subjects[s].image;
  const std::size_t k = static_cast<std::size_t>(parts_);
  std::vector<double> out(subset.size());
  parallel_for(subset.size(), [&](std::size_t begin, std::size_t end) {
    for (std::size_t j = begin; j < end; ++j) {
      const std::size_t i = subset[j];
      const Vec3 y = blend(points_[s][i], std::span<const double>(weights_[s].data() + i * k, k));
      out[j] = sample_trilinear(image, y, 0, OutOfBounds::Zero);
    }
  }, kGrain);
  return out;
}

std::vector<double> PreparedCohort::resample(int subject, const std::vector<Twist>& xi) const {
  std::vector<std::size_t> all(voxels_.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  return resample(subject, xi, all);
}

const std::vector<std::size_t>& PreparedCohort::support(int subject, int part) const {
  return support_[static_cast<std::size_t>(subject)][static_cast<std::size_t>(part)];
}

std::vector<Vec6> PreparedCohort::data_gradient(int subject, const std::vector<Twist>& xi,
                                                const std::vector<double>& mean) const {
  const auto s = static_cast<std::size_t>(subject);
  const std::size_t k = static_cast<std::size_t>(parts_);
  const GroupwiseSubject& sub = cohort_->subjects[s];
  const DeformMethod method = cohort_->method;
  const std::vector<RigidTransform> eff = effective_transforms(subject, xi);
  const ArticulatedBlend blend(method, eff, cohort_->blend);

  std::vector<Mat6> to_left(k);
  for (std::size_t j = 0; j < k; ++j) {
    to_left[j] = uses_raw_matrix(method, model_) ? Mat6::Identity() : twist_to_left(sub.transforms[j], xi[j], model_);
  }
  // Per-transform log data for the log-based blends.
  std::vector<Twist> logs;
  std::vector<Mat6> jl_inv;
  std::vector<std::optional<Twist>> rel_log;
  std::vector<Mat6> rel_right, rel_left;
  if (method == DeformMethod::PolyRigid) {
    logs.resize(k);
    jl_inv.resize(k);
    for (std::size_t j = 0; j < k; ++j) {
      try {
        logs[j] = se3_log(eff[j], cohort_->blend.branch_epsilon);
        jl_inv[j] = left_jacobian(logs[j]).inverse();
      } catch (const BranchAmbiguity&) {
        jl_inv[j] = Mat6::Zero();  // only reached when the blend itself throws
      }
    }
  } else if (method == DeformMethod::KTPolyRigid) {
    rel_log.resize(k * k);
    rel_right.assign(k * k, Mat6::Zero());
    rel_left.assign(k * k, Mat6::Zero());
    for (std::size_t r = 0; r < k; ++r) {
      const RigidTransform inv_r = inverse(eff[r]);
      for (std::size_t j = 0; j < k; ++j) {
        if (j == r) continue;
        try {
          const Twist z = se3_log(compose(inv_r, eff[j]), cohort_->blend.branch_epsilon);
          rel_log[r * k + j] = z;
          rel_right[r * k + j] = right_jacobian(z).inverse() * adjoint(inverse(eff[j]));
          rel_left[r * k + j] = left_jacobian(z).inverse() * adjoint(inv_r);
        } catch (const BranchAmbiguity&) {
        }
      }
    }
  }

  const double scale = 2.0 * cohort_->grid.voxel_volume();
  const std::size_t n = voxels_.size();
  const std::size_t chunks = (n + kGrain - 1) / kGrain;
  std::vector<std::vector<Vec6>> partial(chunks, std::vector<Vec6>(k, Vec6::Zero()));
  parallel_for(n, [&](std::size_t begin, std::size_t end) {
    auto& acc = partial[begin / kGrain];
    std::vector<Eigen::Matrix<double, 1, 6>> dy(k);
    for (std::size_t i = begin; i < end; ++i) {
      const Vec3& p = points_[s][i];
      const std::span<const double> w(weights_[s].data() + i * k, k);
      const Vec3 y = blend(p, w);
      Vec3 grad;
      const double value = sample_trilinear_with_gradient(sub.image, y, 0, grad);
      const double r = value - mean[i];
      if (r == 0.0 || grad.isZero(0.0)) continue;
      const Eigen::Matrix<double, 1, 3> gi = scale * r * grad.transpose();
      switch (method) {
        case DeformMethod::LBS: {
          for (std::size_t j = 0; j < k; ++j) {
            if (w[j] == 0.0) continue;
            const Vec3 q = model_ == PerturbationModel::Linearized ? apply(sub.transforms[j], p) : apply(eff[j], p);
            acc[j] += (w[j] * gi * point_action(q) * to_left[j]).transpose();
          }
          break;
        }
        case DeformMethod::PolyRigid: {
          Vec6 z = Vec6::Zero();
          for (std::size_t j = 0; j < k; ++j) {
            if (w[j] != 0.0) z += w[j] * logs[j].vector();
          }
          const Eigen::Matrix<double, 1, 6> gz = gi * point_action(y) * left_jacobian(Twist::from_vector(z));
          for (std::size_t j = 0; j < k; ++j) {
            if (w[j] == 0.0) continue;
            acc[j] += (w[j] * gz * jl_inv[j] * to_left[j]).transpose();
          }
          break;
        }
        case DeformMethod::KTPolyRigid: {
          const std::size_t ref = static_cast<std::size_t>(reference_[s][i]);
          Vec6 z = Vec6::Zero();
          for (std::size_t j = 0; j < k; ++j) {
            if (j == ref || w[j] <= cohort_->blend.weight_floor) continue;
            z += w[j] * rel_log[ref * k + j]->vector();
          }
          const Twist zt = Twist::from_vector(z);
          const RigidTransform ez = se3_exp(zt);
          const Vec3 p_local = p;
          const Eigen::Matrix<double, 1, 6> gz =
              gi * eff[ref].rotation * ez.rotation * point_action(p_local) * right_jacobian(zt);
          Eigen::Matrix<double, 1, 6> g_ref = gi * point_action(y);
          for (std::size_t j = 0; j < k; ++j) {
            if (j == ref || w[j] <= cohort_->blend.weight_floor) continue;
            acc[j] += (w[j] * gz * rel_right[ref * k + j] * to_left[j]).transpose();
            g_ref -= w[j] * gz * rel_left[ref * k + j];
          }
          acc[ref] += (g_ref * to_left[ref]).transpose();
          break;
        }
      }
    }
  }, kGrain);
  std::vector<Vec6> out(k, Vec6::Zero());
  // Pairwise over chunks, per component, for thread-count independence.
  std::vector<double> column(chunks);
  for (std::size_t j = 0; j < k; ++j) {
    for (int c = 0; c < 6; ++c) {
      for (std::size_t ch = 0; ch < chunks; ++ch) column[ch] = partial[ch][j][c];
      out[j][c] = pairwise_sum(column.data(), chunks);
    }
  }
  return out;
}

namespace {

struct CohortState {
  std::vector<std::vector<double>> values;  // [subject][position]
  std::vector<double> mean;
};

CohortState evaluate_state(const PreparedCohort& prepared, const TwistBank& bank) {
  CohortState state;
  const int subjects = prepared.subjects();
  for (int s = 0; s < subjects; ++s) state.values.push_back(prepared.resample(s, bank.xi[static_cast<std::size_t>(s)]));
  state.mean.assign(prepared.voxels(), 0.0);
  for (std::size_t i = 0; i < prepared.voxels(); ++i) {
    double sum = 0.0;
    for (int s = 0; s < subjects; ++s) sum += state.values[static_cast<std::size_t>(s)][i];
    state.mean[i] = sum / subjects;
  }
  return state;
}

double data_term(const PreparedCohort& prepared, const CohortState& state, const std::vector<double>& mean) {
  std::vector<double> per_voxel(prepared.voxels(), 0.0);
  for (std::size_t i = 0; i < per_voxel.size(); ++i) {
    double acc = 0.0;
    for (const auto& values : state.values) {
      const double d = values[i] - mean[i];
      acc += d * d;
    }
    per_voxel[i] = acc;
  }
  return prepared.cohort().grid.voxel_volume() * pairwise_sum(per_voxel.data(), per_voxel.size());
}

}  // namespace

ObjectiveValue objective(const PreparedCohort& prepared, const TwistBank& bank) {
  const CohortState state = evaluate_state(prepared, bank);
  ObjectiveValue value;
  value.data = data_term(prepared, state, state.mean);
  value.reg = bank.lambda * bank.squared_norm();
  value.loss = value.data + value.reg;
  return value;
}

ObjectiveValue objective(const Cohort& cohort, const TwistBank& bank, PerturbationModel model) {
  return objective(PreparedCohort(cohort, model), bank);
}

VolumeGrid cohort_mean(const Cohort& cohort, const TwistBank& bank, PerturbationModel model) {
  const PreparedCohort prepared(cohort, model);
  const CohortState state = evaluate_state(prepared, bank);
  VolumeGrid out = VolumeGrid::zeros(cohort.grid, 1);
  out.mask = cohort.mask;
  const auto& voxels = prepared.voxels_in_mask();
  for (std::size_t i = 0; i < voxels.size(); ++i) out.at(voxels[i]) = state.mean[i];
  return out;
}

Eigen::VectorXd loss_gradient(const PreparedCohort& prepared, const TwistBank& bank, const GroupwiseConfig& config) {
  const int subjects = prepared.subjects();
  const int parts = prepared.parts();
  Eigen::VectorXd grad = 2.0 * bank.lambda * bank.flatten();
  const CohortState state = evaluate_state(prepared, bank);
  auto is_fixed = [&](int k) {
    return std::find(config.fixed_parts.begin(), config.fixed_parts.end(), k) != config.fixed_parts.end();
  };
  if (config.grad_mode == GradientMode::Analytic) {
    for (int s = 0; s < subjects; ++s) {
      const std::vector<Vec6> g = prepared.data_gradient(s, bank.xi[static_cast<std::size_t>(s)], state.mean);
      for (int k = 0; k < parts; ++k) grad.segment<6>(6 * (s * parts + k)) += g[static_cast<std::size_t>(k)];
    }
  } else {
    const double volume = prepared.cohort().grid.voxel_volume();
    const double h = config.fd_step;
    for (int s = 0; s < subjects; ++s) {
      for (int k = 0; k < parts; ++k) {
        if (is_fixed(k)) continue;
        const auto& support = prepared.support(s, k);
        if (support.empty()) continue;
        auto local_loss = [&](const std::vector<double>& changed) {
          std::vector<double> terms(support.size());
          for (std::size_t j = 0; j < support.size(); ++j) {
            const std::size_t i = support[j];
            const double old_value = state.values[static_cast<std::size_t>(s)][i];
            const double mean = state.mean[i] + (changed[j] - old_value) / subjects;
            double acc = 0.0;
            for (int t = 0; t < subjects; ++t) {
              const double v = t == s ? changed[j] : state.values[static_cast<std::size_t>(t)][i];
              acc += (v - mean) * (v - mean);
            }
            terms[j] = acc;
          }
          return volume * pairwise_sum(terms.data(), terms.size());
        };
        for (int c = 0; c < 6; ++c) {
          std::vector<Twist> xi = bank.xi[static_cast<std::size_t>(s)];
          Vec6 base = xi[static_cast<std::size_t>(k)].vector();
          Vec6 plus = base, minus = base;
          plus[c] += h;
          minus[c] -= h;
          xi[static_cast<std::size_t>(k)] = Twist::from_vector(plus);
          const double lp = local_loss(prepared.resample(s, xi, support));
          xi[static_cast<std::size_t>(k)] = Twist::from_vector(minus);
          const double lm = local_loss(prepared.resample(s, xi, support));
          grad[6 * (s * parts + k) + c] += (lp - lm) / (2.0 * h);
        }
      }
    }
  }
  for (int s = 0; s < subjects; ++s) {
    for (int k = 0; k < parts; ++k) {
      if (is_fixed(k)) grad.segment<6>(6 * (s * parts + k)).setZero();
    }
  }
  return grad;
}

std::string_view to_string(GroupwiseStatus status) {
  switch (status) {
    case GroupwiseStatus::Converged: return "converged";
    case GroupwiseStatus::MaxIterations: return "max_iterations";
    case GroupwiseStatus::LineSearchStalled: return "LineSearchStalled";
  }
  return "unknown";
}

GroupwiseResult optimize(const Cohort& cohort, const GroupwiseConfig& config) {
  const PreparedCohort prepared(cohort, config.model);
  const int subjects = prepared.subjects();
  const int parts = prepared.parts();
  GroupwiseResult result;
  result.bank = TwistBank::zeros(subjects, parts);

  CohortState state = evaluate_state(prepared, result.bank);
  double lambda = config.lambda;
  if (lambda < 0.0) {
    std::vector<double> pooled;
    for (const auto& values : state.values) pooled.insert(pooled.end(), values.begin(), values.end());
    const double n = static_cast<double>(pooled.size());
    const double mean = pairwise_sum(pooled.data(), pooled.size()) / n;
    for (double& v : pooled) v = (v - mean) * (v - mean);
    lambda = 1e-2 * pairwise_sum(pooled.data(), pooled.size()) / n;
  }
  result.lambda = lambda;
  result.bank.lambda = lambda;

  double length = config.rotation_scale;
  if (length <= 0.0) {
    std::vector<double> r2;
    for (std::size_t v : prepared.voxels_in_mask()) r2.push_back(cohort.grid.world(v).squaredNorm());
    length = std::sqrt(pairwise_sum(r2.data(), r2.size()) / static_cast<double>(std::max<std::size_t>(1, r2.size())));
    if (length <= 0.0) length = 1.0;
  }

  double data = data_term(prepared, state, state.mean);
  double loss = data;
  result.loss_trace.push_back(loss);
  result.data_trace.push_back(data);
  double alpha = config.step;
  result.status = GroupwiseStatus::MaxIterations;

  for (int it = 0; it < config.max_iters; ++it) {
    if (loss == 0.0) {
      result.status = GroupwiseStatus::Converged;
      break;
    }
    const Eigen::VectorXd grad = loss_gradient(prepared, result.bank, config);
    // Descent in coordinates (length * omega, v).
    Eigen::VectorXd scaled = grad;
    for (Eigen::Index i = 0; i < scaled.size(); i += 6) scaled.segment<3>(i) /= length;
    const double norm = scaled.norm();
    if (!(norm > 0.0)) {
      result.status = GroupwiseStatus::Converged;
      break;
    }
    Eigen::VectorXd direction = -scaled / norm;
    for (Eigen::Index i = 0; i < direction.size(); i += 6) direction.segment<3>(i) /= length;

    const Eigen::VectorXd current = result.bank.flatten();
    const std::vector<double> frozen = state.mean;
    bool accepted = false;
    for (int h = 0; h <= config.max_halvings; ++h) {
      Eigen::VectorXd trial = current + alpha * direction;
      for (Eigen::Index i = 0; i < trial.size(); i += 6) {
        const double angle = trial.segment<3>(i).norm();
        if (angle > kMaxPerturbationAngle) trial.segment<3>(i) *= kMaxPerturbationAngle / angle;
      }
      TwistBank candidate = result.bank;
      candidate.assign(trial);
      CohortState next = evaluate_state(prepared, candidate);
      const double trial_data = data_term(prepared, next, config.frozen_mean ? frozen : next.mean);
      const double trial_loss = trial_data + lambda * candidate.squared_norm();
      if (trial_loss < loss) {
        const double true_data = config.frozen_mean ? data_term(prepared, next, next.mean) : trial_data;
        const double true_loss = true_data + lambda * candidate.squared_norm();
        const double decrease = (loss - true_loss) / loss;
        result.bank = candidate;
        state = std::move(next);
        loss = true_loss;
        data = true_data;
        accepted = true;
        if (decrease < config.rel_tol) result.status = GroupwiseStatus::Converged;
        break;
      }
      alpha *= 0.5;
      if (alpha < config.min_step) break;
    }
    if (!accepted) {
      result.status = alpha < config.min_step ? GroupwiseStatus::Converged : GroupwiseStatus::LineSearchStalled;
      break;
    }
    ++result.iterations;
    result.loss_trace.push_back(loss);
    result.data_trace.push_back(data);
    if (result.status == GroupwiseStatus::Converged) break;
    alpha = std::min(2.0 * alpha, 8.0 * config.step);
  }
  return result;
}

}  // namespace ktpr
