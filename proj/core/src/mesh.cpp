#include "ktpr/mesh.hpp"

#include <Eigen/Geometry>
#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numbers>
#include <sstream>

#include "ktpr/error.hpp"
#include "ktpr/parallel.hpp"

namespace ktpr {

void SurfaceMesh::validate() const {
  const int n = vertex_count();
  std::map<std::pair<int, int>, int> half_edges;
  for (int f = 0; f < face_count(); ++f) {
    for (int c = 0; c < 3; ++c) {
      if (faces(f, c) < 0 || faces(f, c) >= n) {
        std::ostringstream msg;
        msg << "face " << f << " references vertex " << faces(f, c) << " of " << n;
        throw BadIndex(msg.str());
      }
    }
    const Vec3 a = vertex(faces(f, 0));
    const Vec3 b = vertex(faces(f, 1));
    const Vec3 c = vertex(faces(f, 2));
    if (0.5 * (b - a).cross(c - a).norm() <= 1e-12) {
      std::ostringstream msg;
      msg << "face " << f << " is degenerate";
      throw InvalidMesh(msg.str());
    }
    for (int e = 0; e < 3; ++e) {
      const int u = faces(f, e);
      const int v = faces(f, (e + 1) % 3);
      if (++half_edges[{u, v}] > 1) {
        std::ostringstream msg;
        msg << "half-edge (" << u << "," << v << ") used twice; mesh is not consistently oriented";
        throw OpenMesh(msg.str());
      }
    }
  }
  for (const auto& [edge, count] : half_edges) {
    if (!half_edges.contains({edge.second, edge.first})) {
      std::ostringstream msg;
      msg << "edge (" << edge.first << "," << edge.second << ") has no opposite half-edge";
      throw OpenMesh(msg.str());
    }
  }
  if (face_count() == 0) throw OpenMesh("mesh has no faces");
}

double SurfaceMesh::bounding_box_diagonal() const {
  if (vertex_count() == 0) return 0.0;
  return (vertices.colwise().maxCoeff() - vertices.colwise().minCoeff()).norm();
}

double SurfaceMesh::volume() const {
  double v = 0.0;
  for (int f = 0; f < face_count(); ++f) {
    v += vertex(faces(f, 0)).dot(vertex(faces(f, 1)).cross(vertex(faces(f, 2))));
  }
  return v / 6.0;
}

ClosestPoint closest_point_on_triangle(const Vec3& p, const Vec3& a, const Vec3& b, const Vec3& c) {
  // Voronoi-region walk (Ericson, Real-Time Collision Detection 5.1.5).
  auto done = [&](double u, double v, double w) {
    ClosestPoint cp;
    cp.barycentric = Vec3(u, v, w);
    cp.point = u * a + v * b + w * c;
    cp.distance2 = (cp.point - p).squaredNorm();
    return cp;
  };
  const Vec3 ab = b - a;
  const Vec3 ac = c - a;
  const Vec3 ap = p - a;
  const double d1 = ab.dot(ap);
  const double d2 = ac.dot(ap);
  if (d1 <= 0.0 && d2 <= 0.0) return done(1, 0, 0);

  const Vec3 bp = p - b;
  const double d3 = ab.dot(bp);
  const double d4 = ac.dot(bp);
  if (d3 >= 0.0 && d4 <= d3) return done(0, 1, 0);

  const double vc = d1 * d4 - d3 * d2;
  if (vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0) {
    const double v = d1 / (d1 - d3);
    return done(1 - v, v, 0);
  }

  const Vec3 cp = p - c;
  const double d5 = ab.dot(cp);
  const double d6 = ac.dot(cp);
  if (d6 >= 0.0 && d5 <= d6) return done(0, 0, 1);

  const double vb = d5 * d2 - d1 * d6;
  if (vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0) {
    const double w = d2 / (d2 - d6);
    return done(1 - w, 0, w);
  }

  const double va = d3 * d6 - d5 * d4;
  if (va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0) {
    const double w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
    return done(0, 1 - w, w);
  }

  const double denom = 1.0 / (va + vb + vc);
  const double v = vb * denom;
  const double w = vc * denom;
  return done(1 - v - w, v, w);
}

TriangleLocator::TriangleLocator(const SurfaceMesh& mesh, double cell_size) : mesh_(&mesh) {
  const Vec3 lo = mesh.vertices.colwise().minCoeff().transpose();
  const Vec3 hi = mesh.vertices.colwise().maxCoeff().transpose();
  const Vec3 extent = (hi - lo).cwiseMax(Vec3::Constant(1e-9));
  if (cell_size <= 0.0) {
    // Aim for a handful of faces per occupied bucket.
    const double volume = extent.prod();
    cell_size = std::cbrt(volume / std::max(1.0, static_cast<double>(mesh.face_count()) / 4.0));
    cell_size = std::max(cell_size, extent.maxCoeff() / 256.0);
  }
  cell_ = cell_size;
  lo_ = lo;
  for (int a = 0; a < 3; ++a) {
    dims_[static_cast<std::size_t>(a)] = std::max(1, static_cast<int>(std::ceil(extent[a] / cell_)) + 1);
  }
  buckets_.resize(static_cast<std::size_t>(dims_[0]) * static_cast<std::size_t>(dims_[1]) *
                  static_cast<std::size_t>(dims_[2]));
  for (int f = 0; f < mesh.face_count(); ++f) {
    Vec3 flo = mesh.vertex(mesh.faces(f, 0));
    Vec3 fhi = flo;
    for (int c = 1; c < 3; ++c) {
      flo = flo.cwiseMin(mesh.vertex(mesh.faces(f, c)));
      fhi = fhi.cwiseMax(mesh.vertex(mesh.faces(f, c)));
    }
    std::array<int, 3> a0{}, a1{};
    for (int a = 0; a < 3; ++a) {
      a0[static_cast<std::size_t>(a)] = std::clamp(static_cast<int>(std::floor((flo[a] - lo_[a]) / cell_)), 0, dims_[static_cast<std::size_t>(a)] - 1);
      a1[static_cast<std::size_t>(a)] = std::clamp(static_cast<int>(std::floor((fhi[a] - lo_[a]) / cell_)), 0, dims_[static_cast<std::size_t>(a)] - 1);
    }
    for (int k = a0[2]; k <= a1[2]; ++k)
      for (int j = a0[1]; j <= a1[1]; ++j)
        for (int i = a0[0]; i <= a1[0]; ++i)
          buckets_[static_cast<std::size_t>(i) + static_cast<std::size_t>(dims_[0]) * (static_cast<std::size_t>(j) + static_cast<std::size_t>(dims_[1]) * static_cast<std::size_t>(k))].push_back(f);
  }
}

ClosestPoint TriangleLocator::closest(const Vec3& p) const {
  const SurfaceMesh& mesh = *mesh_;
  std::array<int, 3> home{};
  for (int a = 0; a < 3; ++a) {
    home[static_cast<std::size_t>(a)] = std::clamp(static_cast<int>(std::floor((p[a] - lo_[a]) / cell_)), 0, dims_[static_cast<std::size_t>(a)] - 1);
  }
  // Distance from p to the bucket grid's box; rings beyond the home bucket
  // only matter once the ring's inner distance can beat the best so far.
  const Vec3 hi = lo_ + cell_ * Vec3(dims_[0], dims_[1], dims_[2]);
  const double outside = (p.cwiseMax(lo_).cwiseMin(hi) - p).norm();

  ClosestPoint best;
  best.distance2 = std::numeric_limits<double>::infinity();
  const int max_ring = std::max({dims_[0], dims_[1], dims_[2]});
  for (int ring = 0; ring <= max_ring; ++ring) {
    if (best.face >= 0) {
      const double reach = std::max(std::max(0.0, (ring - 1) * cell_), outside);
      if (reach * reach > best.distance2) break;
    }
    for (int k = home[2] - ring; k <= home[2] + ring; ++k) {
      if (k < 0 || k >= dims_[2]) continue;
      for (int j = home[1] - ring; j <= home[1] + ring; ++j) {
        if (j < 0 || j >= dims_[1]) continue;
        for (int i = home[0] - ring; i <= home[0] + ring; ++i) {
          if (i < 0 || i >= dims_[0]) continue;
          if (std::max({std::abs(i - home[0]), std::abs(j - home[1]), std::abs(k - home[2])}) != ring) continue;
          const auto& bucket = buckets_[static_cast<std::size_t>(i) + static_cast<std::size_t>(dims_[0]) * (static_cast<std::size_t>(j) + static_cast<std::size_t>(dims_[1]) * static_cast<std::size_t>(k))];
          for (int f : bucket) {
            ClosestPoint cp = closest_point_on_triangle(p, mesh.vertex(mesh.faces(f, 0)), mesh.vertex(mesh.faces(f, 1)),
                                                        mesh.vertex(mesh.faces(f, 2)));
            if (cp.distance2 < best.distance2 || (cp.distance2 == best.distance2 && f < best.face)) {
              cp.face = f;
              best = cp;
            }
          }
        }
      }
    }
  }
  return best;
}

double winding_number(const SurfaceMesh& mesh, const Vec3& p) {
  double total = 0.0;
  for (int f = 0; f < mesh.face_count(); ++f) {
    const Vec3 a = mesh.vertex(mesh.faces(f, 0)) - p;
    const Vec3 b = mesh.vertex(mesh.faces(f, 1)) - p;
    const Vec3 c = mesh.vertex(mesh.faces(f, 2)) - p;
    const double la = a.norm();
    const double lb = b.norm();
    const double lc = c.norm();
    // Van Oosterom & Strackee solid angle.
    const double num = a.dot(b.cross(c));
    const double den = la * lb * lc + a.dot(b) * lc + b.dot(c) * la + c.dot(a) * lb;
    total += 2.0 * std::atan2(num, den);
  }
  return total / (4.0 * std::numbers::pi);
}

Mask voxelize(const SurfaceMesh& mesh, const GridSpec& grid) {
  grid.validate();
  Mask mask(grid.voxel_count(), 0);
  const int nx = grid.dims[0];
  const int ny = grid.dims[1];
  const int nz = grid.dims[2];

  // Faces bucketed by the row (j, k) range their y/z extent covers.
  std::vector<std::vector<int>> rows(static_cast<std::size_t>(ny) * static_cast<std::size_t>(nz));
  for (int f = 0; f < mesh.face_count(); ++f) {
    double ylo = std::numeric_limits<double>::infinity(), yhi = -ylo, zlo = ylo, zhi = -ylo;
    for (int c = 0; c < 3; ++c) {
      const Vec3 v = mesh.vertex(mesh.faces(f, c));
      ylo = std::min(ylo, v.y());
      yhi = std::max(yhi, v.y());
      zlo = std::min(zlo, v.z());
      zhi = std::max(zhi, v.z());
    }
    const int j0 = std::max(0, static_cast<int>(std::floor((ylo - grid.origin.y()) / grid.spacing.y())));
    const int j1 = std::min(ny - 1, static_cast<int>(std::ceil((yhi - grid.origin.y()) / grid.spacing.y())));
    const int k0 = std::max(0, static_cast<int>(std::floor((zlo - grid.origin.z()) / grid.spacing.z())));
    const int k1 = std::min(nz - 1, static_cast<int>(std::ceil((zhi - grid.origin.z()) / grid.spacing.z())));
    for (int k = k0; k <= k1; ++k)
      for (int j = j0; j <= j1; ++j) rows[static_cast<std::size_t>(j) + static_cast<std::size_t>(ny) * static_cast<std::size_t>(k)].push_back(f);
  }

  // Rays are nudged by a tiny irrational offset so they avoid mesh edges
  // and vertices placed on lattice-aligned coordinates.
  const double dy = 1.234567e-7 * grid.spacing.y();
  const double dz = 2.345678e-7 * grid.spacing.z();
  parallel_for(
      rows.size(),
      [&](std::size_t begin, std::size_t end) {
        std::vector<double> hits;
        for (std::size_t row = begin; row < end; ++row) {
          const int j = static_cast<int>(row % static_cast<std::size_t>(ny));
          const int k = static_cast<int>(row / static_cast<std::size_t>(ny));
          const double y = grid.origin.y() + j * grid.spacing.y() + dy;
          const double z = grid.origin.z() + k * grid.spacing.z() + dz;
          hits.clear();
          for (int f : rows[row]) {
            const Vec3 a = mesh.vertex(mesh.faces(f, 0));
            const Vec3 b = mesh.vertex(mesh.faces(f, 1));
            const Vec3 c = mesh.vertex(mesh.faces(f, 2));
            // 2-D point-in-triangle in the (y, z) plane.
            const double d0 = (b.y() - a.y()) * (z - a.z()) - (b.z() - a.z()) * (y - a.y());
            const double d1 = (c.y() - b.y()) * (z - b.z()) - (c.z() - b.z()) * (y - b.y());
            const double d2 = (a.y() - c.y()) * (z - c.z()) - (a.z() - c.z()) * (y - c.y());
            const bool neg = d0 < 0 || d1 < 0 || d2 < 0;
            const bool pos = d0 > 0 || d1 > 0 || d2 > 0;
            if (neg && pos) continue;
            const double area = d0 + d1 + d2;
            if (area == 0.0) continue;
            const double x = (d1 * a.x() + d2 * b.x() + d0 * c.x()) / area;
            hits.push_back(x);
          }
          std::sort(hits.begin(), hits.end());
          for (std::size_t h = 0; h + 1 < hits.size(); h += 2) {
            const double x0 = (hits[h] - grid.origin.x()) / grid.spacing.x();
            const double x1 = (hits[h + 1] - grid.origin.x()) / grid.spacing.x();
            const int i0 = std::max(0, static_cast<int>(std::ceil(x0)));
            const int i1 = std::min(nx - 1, static_cast<int>(std::floor(x1)));
            for (int i = i0; i <= i1; ++i) mask[grid.index(i, j, k)] = 1;
          }
        }
      },
      64);
  return mask;
}

}  // namespace ktpr
