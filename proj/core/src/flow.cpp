#include "ktpr/flow.hpp"

#include <Eigen/Geometry>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <sstream>

#include "ktpr/error.hpp"
#include "ktpr/parallel.hpp"

namespace ktpr {
namespace {

constexpr double kPi = std::numbers::pi;

// Tolerances that send a query to the exact distance test.
constexpr double kNearVertex = 1e-3;
constexpr double kNearPlane = 1e-4;

// Core mean value coordinate accumulation (Ju, Schaefer & Warren 2005).
// Returns false when x is within eps of the surface; `nearest` then holds the
// closest surface point.
bool mvc_accumulate(const Vec3& x, const SurfaceMesh& mesh, double eps, Eigen::VectorXd& w, double& winding,
                    ClosestPoint& nearest) {
  const int n = mesh.vertex_count();
  w.setZero(n);
  std::vector<double> d(static_cast<std::size_t>(n));
  std::vector<Vec3> u(static_cast<std::size_t>(n));
  bool suspicious = false;
  for (int j = 0; j < n; ++j) {
    const Vec3 diff = mesh.vertex(j) - x;
    d[static_cast<std::size_t>(j)] = diff.norm();
    if (d[static_cast<std::size_t>(j)] < kNearVertex) suspicious = true;
    u[static_cast<std::size_t>(j)] = d[static_cast<std::size_t>(j)] > 0.0 ? Vec3(diff / d[static_cast<std::size_t>(j)]) : Vec3::Zero();
  }
  auto check_surface = [&](int f) {
    ClosestPoint cp = closest_point_on_triangle(x, mesh.vertex(mesh.faces(f, 0)), mesh.vertex(mesh.faces(f, 1)),
                                                mesh.vertex(mesh.faces(f, 2)));
    cp.face = f;
    if (cp.distance2 < nearest.distance2) nearest = cp;
    return cp.distance2 <= eps * eps;
  };
  nearest.distance2 = std::numeric_limits<double>::infinity();
  if (suspicious) {
    for (int j = 0; j < n; ++j) {
      if (d[static_cast<std::size_t>(j)] <= eps) {
        // Exactly at a vertex: every incident face's closest point is it.
        for (int f = 0; f < mesh.face_count(); ++f) {
          for (int c = 0; c < 3; ++c) {
            if (mesh.faces(f, c) == j) {
              check_surface(f);
              return false;
            }
          }
        }
      }
    }
  }

  winding = 0.0;
  for (int f = 0; f < mesh.face_count(); ++f) {
    int id[3] = {mesh.faces(f, 0), mesh.faces(f, 1), mesh.faces(f, 2)};
    const Vec3* uu[3] = {&u[static_cast<std::size_t>(id[0])], &u[static_cast<std::size_t>(id[1])], &u[static_cast<std::size_t>(id[2])]};
    const double det = uu[0]->dot(uu[1]->cross(*uu[2]));
    winding += 2.0 * std::atan2(det, 1.0 + uu[0]->dot(*uu[1]) + uu[1]->dot(*uu[2]) + uu[2]->dot(*uu[0]));

    double theta[3], l[3];
    for (int i = 0; i < 3; ++i) {
      l[i] = (*uu[(i + 1) % 3] - *uu[(i + 2) % 3]).norm();
      theta[i] = 2.0 * std::asin(std::min(1.0, 0.5 * l[i]));
    }
    const double h = 0.5 * (theta[0] + theta[1] + theta[2]);
    if (kPi - h < kNearPlane || std::min({d[static_cast<std::size_t>(id[0])], d[static_cast<std::size_t>(id[1])], d[static_cast<std::size_t>(id[2])]}) < kNearVertex) {
      if (check_surface(f)) return false;
    }
    if (kPi - h < 1e-12) {
      // Inside the triangle's plane and within it, but farther than eps:
      // cannot happen for finite eps; treat as on-surface.
      check_surface(f);
      return false;
    }
    double c[3], s[3];
    const double sign = det < 0.0 ? -1.0 : 1.0;
    bool coplanar = false;
    for (int i = 0; i < 3; ++i) {
      c[i] = 2.0 * std::sin(h) * std::sin(h - theta[i]) / (std::sin(theta[(i + 1) % 3]) * std::sin(theta[(i + 2) % 3])) - 1.0;
      s[i] = sign * std::sqrt(std::max(0.0, 1.0 - c[i] * c[i]));
      if (std::abs(s[i]) <= 1e-12) coplanar = true;
    }
    if (coplanar) continue;  // x in the triangle's plane, outside it
    for (int i = 0; i < 3; ++i) {
      const int ip = (i + 1) % 3;
      const int im = (i + 2) % 3;
      w[id[i]] += (theta[i] - c[ip] * theta[im] - c[im] * theta[ip]) /
                  (d[static_cast<std::size_t>(id[i])] * std::sin(theta[ip]) * s[im]);
    }
  }
  winding /= 4.0 * kPi;
  const double total = w.sum();
  w /= total;
  return true;
}

Eigen::VectorXd snap_weights(const SurfaceMesh& mesh, const ClosestPoint& cp) {
  Eigen::VectorXd w = Eigen::VectorXd::Zero(mesh.vertex_count());
  for (int c = 0; c < 3; ++c) w[mesh.faces(cp.face, c)] += cp.barycentric[c];
  return w;
}

}  // namespace

Eigen::VectorXd mvc_weights(const Vec3& x, const SurfaceMesh& mesh, double eps_surface) {
  Eigen::VectorXd w;
  double winding = 0.0;
  ClosestPoint nearest;
  if (!mvc_accumulate(x, mesh, eps_surface, w, winding, nearest)) {
    std::ostringstream msg;
    msg << "point (" << x.transpose() << ") lies within " << eps_surface << " mm of the surface";
    throw OnSurface(msg.str());
  }
  return w;
}

MvcResult mvc_weights_or_snap(const Vec3& x, const SurfaceMesh& mesh, double eps_surface) {
  MvcResult out;
  ClosestPoint nearest;
  if (!mvc_accumulate(x, mesh, eps_surface, out.weights, out.winding, nearest)) {
    out.on_surface = true;
    out.winding = 0.5;
    out.weights = snap_weights(mesh, nearest);
  }
  return out;
}

Eigen::MatrixX3d boundary_velocity(const ShapeBasis& basis, const Eigen::VectorXd& beta_start,
                                   const Eigen::VectorXd& beta_end) {
  if (beta_start.size() != basis.beta_dim() || beta_end.size() != basis.beta_dim()) {
    std::ostringstream msg;
    msg << "beta vectors must have length " << basis.beta_dim();
    throw DimensionMismatch(msg.str());
  }
  Eigen::MatrixX3d v = Eigen::MatrixX3d::Zero(basis.vertex_count(), 3);
  const Eigen::VectorXd delta = beta_end - beta_start;
  for (int j = 0; j < basis.beta_dim(); ++j) {
    if (basis.components[static_cast<std::size_t>(j)].rows() != v.rows()) {
      throw DimensionMismatch("shape component vertex count differs from mean shape");
    }
    v += delta[j] * basis.components[static_cast<std::size_t>(j)];
  }
  return v;
}

namespace {

PointStatus worse(PointStatus a, PointStatus b) { return static_cast<int>(a) >= static_cast<int>(b) ? a : b; }

}  // namespace

FlowResult integrate_flow(const FlowSpec& spec, const ShapeBasis& basis, const SurfaceMesh& mesh0,
                          std::span<const Vec3> points) {
  if (spec.steps < 1) throw SpecInvalid("flow needs at least one Euler step");
  const Eigen::MatrixX3d velocity = boundary_velocity(basis, spec.beta_start, spec.beta_end);
  if (velocity.rows() != mesh0.vertex_count()) {
    throw DimensionMismatch("shape basis vertex count differs from the mesh");
  }
  FlowResult out;
  out.points.assign(points.begin(), points.end());
  out.status.assign(points.size(), PointStatus::Ok);
  if (velocity.isZero(0.0)) return out;

  const double dt = 1.0 / spec.steps;
  const int steps = spec.freeze_weights ? 1 : spec.steps;
  std::vector<SurfaceMesh> meshes(static_cast<std::size_t>(steps) + 1, mesh0);
  for (int s = 0; s <= steps; ++s) {
    const double t = spec.freeze_weights ? 0.0 : s * dt;
    meshes[static_cast<std::size_t>(s)].vertices = mesh0.vertices + t * velocity;
  }

  parallel_for(
      points.size(),
      [&](std::size_t begin, std::size_t end) {
        for (std::size_t p = begin; p < end; ++p) {
          Vec3 x = out.points[p];
          PointStatus status = PointStatus::Ok;
          if (spec.freeze_weights) {
            const MvcResult m = mvc_weights_or_snap(x, meshes[0], spec.eps_surface);
            if (m.on_surface) status = PointStatus::OnSurface;
            else if (m.winding < 0.5) status = PointStatus::LeftDomain;
            x += (m.weights.transpose() * velocity).transpose();
          } else {
            for (int s = 0; s < steps; ++s) {
              const MvcResult m = mvc_weights_or_snap(x, meshes[static_cast<std::size_t>(s)], spec.eps_surface);
              if (m.on_surface) status = worse(status, PointStatus::OnSurface);
              else if (m.winding < 0.5) status = worse(status, PointStatus::LeftDomain);
              x += dt * (m.weights.transpose() * velocity).transpose();
            }
          }
          out.points[p] = x;
          out.status[p] = status;
        }
      },
      16);
  return out;
}

DenseField flow_field(const FlowSpec& spec, const ShapeBasis& basis, const SurfaceMesh& mesh0, const GridSpec& grid,
                      const Mask& mask, std::vector<PointStatus>* status) {
  if (mask.size() != grid.voxel_count()) throw SizeMismatch("flow mask size differs from grid");
  std::vector<std::size_t> voxels;
  std::vector<Vec3> points;
  for (std::size_t v = 0; v < grid.voxel_count(); ++v) {
    if (mask[v]) {
      voxels.push_back(v);
      points.push_back(grid.world(v));
    }
  }
  const FlowResult result = integrate_flow(spec, basis, mesh0, points);
  DenseField out{FieldKind::Flow, VolumeGrid::zeros(grid, 3)};
  Mask good(grid.voxel_count(), 0);
  for (std::size_t i = 0; i < voxels.size(); ++i) {
    out.displacement.set_vec3(voxels[i], result.points[i] - points[i]);
    good[voxels[i]] = result.status[i] == PointStatus::LeftDomain ? 0 : 1;
  }
  if (status) {
    status->assign(grid.voxel_count(), PointStatus::Ok);
    for (std::size_t i = 0; i < voxels.size(); ++i) (*status)[voxels[i]] = result.status[i];
  }
  extend_outside_mask(out.displacement, good);
  return out;
}

}  // namespace ktpr
