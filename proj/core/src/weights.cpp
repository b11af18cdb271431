#include "ktpr/weights.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <queue>
#include <sstream>

#include "ktpr/error.hpp"
#include "ktpr/parallel.hpp"

namespace ktpr {

void project_simplex_inplace(std::span<double> v) {
  const std::size_t k = v.size();
  if (k == 0) return;
  double sorted_buf[64];
  std::vector<double> heap;
  double* u = sorted_buf;
  if (k > 64) {
    heap.resize(k);
    u = heap.data();
  }
  std::copy(v.begin(), v.end(), u);
  std::sort(u, u + k, std::greater<>());
  double cumulative = 0.0;
  double tau = 0.0;
  for (std::size_t j = 0; j < k; ++j) {
    cumulative += u[j];
    const double t = (cumulative - 1.0) / static_cast<double>(j + 1);
    if (u[j] - t > 0.0) tau = t;
  }
  for (double& x : v) x = std::max(x - tau, 0.0);
}

Eigen::VectorXd project_simplex(const Eigen::VectorXd& v) {
  Eigen::VectorXd out = v;
  project_simplex_inplace(std::span<double>(out.data(), static_cast<std::size_t>(out.size())));
  return out;
}

BoundaryData rasterize_boundary_weights(const SurfaceMesh& mesh, const Eigen::MatrixXd& vertex_weights,
                                        const GridSpec& grid, const Mask& mask_in) {
  if (vertex_weights.rows() != mesh.vertex_count()) {
    std::ostringstream msg;
    msg << "vertex weights have " << vertex_weights.rows() << " rows, mesh has " << mesh.vertex_count()
        << " vertices";
    throw DimensionMismatch(msg.str());
  }
  for (Eigen::Index n = 0; n < vertex_weights.rows(); ++n) {
    if (vertex_weights.row(n).minCoeff() < -1e-6 || std::abs(vertex_weights.row(n).sum() - 1.0) > 1e-6) {
      std::ostringstream msg;
      msg << "vertex " << n << " weights are not on the simplex";
      throw SpecInvalid(msg.str());
    }
  }
  const Mask mask = mask_in.empty() ? voxelize(mesh, grid) : mask_in;
  BoundaryData out;
  out.voxels = boundary_voxels(grid, mask);
  if (out.voxels.empty()) throw EmptyBoundary("interior mask has no boundary voxels");

  const auto parts = vertex_weights.cols();
  out.values.resize(static_cast<Eigen::Index>(out.voxels.size()), parts);
  const TriangleLocator locator(mesh);
  parallel_for(
      out.voxels.size(),
      [&](std::size_t begin, std::size_t end) {
        for (std::size_t b = begin; b < end; ++b) {
          const ClosestPoint cp = locator.closest(grid.world(out.voxels[b]));
          Eigen::VectorXd w = Eigen::VectorXd::Zero(parts);
          for (int c = 0; c < 3; ++c) w += cp.barycentric[c] * vertex_weights.row(mesh.faces(cp.face, c)).transpose();
          out.values.row(static_cast<Eigen::Index>(b)) = project_simplex(w).transpose();
        }
      },
      256);
  return out;
}

bool mask_connected(const GridSpec& grid, const Mask& mask) {
  const std::size_t n = grid.voxel_count();
  std::size_t start = n;
  for (std::size_t v = 0; v < n; ++v) {
    if (mask[v]) {
      start = v;
      break;
    }
  }
  if (start == n) return true;
  std::vector<std::uint8_t> seen(n, 0);
  std::queue<std::size_t> frontier;
  frontier.push(start);
  seen[start] = 1;
  std::size_t reached = 0;
  static constexpr int kOffsets[6][3] = {{1, 0, 0}, {-1, 0, 0}, {0, 1, 0}, {0, -1, 0}, {0, 0, 1}, {0, 0, -1}};
  while (!frontier.empty()) {
    const std::size_t v = frontier.front();
    frontier.pop();
    ++reached;
    const auto c = grid.ijk(v);
    for (const auto& o : kOffsets) {
      const int i = c[0] + o[0], j = c[1] + o[1], k = c[2] + o[2];
      if (!grid.contains(i, j, k)) continue;
      const std::size_t u = grid.index(i, j, k);
      if (mask[u] && !seen[u]) {
        seen[u] = 1;
        frontier.push(u);
      }
    }
  }
  return reached == count_mask(mask);
}

namespace {

// Interior voxels in compact order with their in-mask face neighbours.
struct CompactDomain {
  std::vector<std::size_t> voxels;
  std::vector<std::int64_t> compact;          // grid voxel -> compact index or -1
  std::vector<std::array<std::int32_t, 6>> neighbours;  // -1 when outside the mask
};

CompactDomain build_domain(const GridSpec& grid, const Mask& mask) {
  CompactDomain d;
  d.compact.assign(grid.voxel_count(), -1);
  for (std::size_t v = 0; v < grid.voxel_count(); ++v) {
    if (mask[v]) {
      d.compact[v] = static_cast<std::int64_t>(d.voxels.size());
      d.voxels.push_back(v);
    }
  }
  static constexpr int kOffsets[6][3] = {{1, 0, 0}, {-1, 0, 0}, {0, 1, 0}, {0, -1, 0}, {0, 0, 1}, {0, 0, -1}};
  d.neighbours.resize(d.voxels.size());
  for (std::size_t m = 0; m < d.voxels.size(); ++m) {
    const auto c = grid.ijk(d.voxels[m]);
    for (int e = 0; e < 6; ++e) {
      const int i = c[0] + kOffsets[e][0], j = c[1] + kOffsets[e][1], k = c[2] + kOffsets[e][2];
      d.neighbours[m][static_cast<std::size_t>(e)] =
          grid.contains(i, j, k) ? static_cast<std::int32_t>(d.compact[grid.index(i, j, k)]) : -1;
    }
  }
  return d;
}

double compact_energy(const CompactDomain& d, const std::vector<double>& w, int parts, const Vec3& inv_h2,
                      double voxel_volume) {
  const auto k = static_cast<std::size_t>(parts);
  return voxel_volume * deterministic_sum(d.voxels.size(), [&](std::size_t m) {
           double e = 0.0;
           // +x, +y, +z neighbours only, so each edge counts once.
           for (int axis = 0; axis < 3; ++axis) {
             const std::int32_t n = d.neighbours[m][static_cast<std::size_t>(2 * axis)];
             if (n < 0) continue;
             double s = 0.0;
             for (std::size_t c = 0; c < k; ++c) {
               const double diff = w[m * k + c] - w[static_cast<std::size_t>(n) * k + c];
               s += diff * diff;
             }
             e += s * inv_h2[axis];
           }
           return e;
         });
}

}  // namespace

double dirichlet_energy(const VolumeGrid& weights, const Mask& mask) {
  const CompactDomain d = build_domain(weights.grid, mask);
  const auto k = static_cast<std::size_t>(weights.channels);
  std::vector<double> w(d.voxels.size() * k);
  for (std::size_t m = 0; m < d.voxels.size(); ++m) {
    for (std::size_t c = 0; c < k; ++c) w[m * k + c] = weights.at(d.voxels[m], static_cast<int>(c));
  }
  const Vec3 inv_h2 = weights.grid.spacing.cwiseProduct(weights.grid.spacing).cwiseInverse();
  return compact_energy(d, w, weights.channels, inv_h2, weights.grid.voxel_volume());
}

WeightField solve_weights(const BoundaryData& boundary, const GridSpec& grid, const Mask& mask, int parts,
                          const WeightSolverOptions& options, WeightSolveReport* report) {
  grid.validate();
  if (mask.size() != grid.voxel_count()) throw SizeMismatch("mask size differs from grid voxel count");
  if (parts <= 0) throw DimensionMismatch("part count must be positive");
  if (boundary.values.rows() != static_cast<Eigen::Index>(boundary.voxels.size()) ||
      boundary.values.cols() != parts) {
    throw DimensionMismatch("boundary values must be (boundary voxels) x K");
  }
  if (boundary.voxels.empty()) throw EmptyBoundary("no Dirichlet voxels");

  WeightSolveReport local_report;
  WeightSolveReport& rep = report ? *report : local_report;
  rep = WeightSolveReport{};
  rep.mask_connected = mask_connected(grid, mask);

  const CompactDomain d = build_domain(grid, mask);
  const std::size_t m_count = d.voxels.size();
  const auto k = static_cast<std::size_t>(parts);
  const Vec3 inv_h2 = grid.spacing.cwiseProduct(grid.spacing).cwiseInverse();
  const double step = options.step > 0.0 ? options.step : 0.9 / (2.0 * inv_h2.sum());
  rep.step = step;

  std::vector<std::uint8_t> pinned(m_count, 0);
  std::vector<double> w(m_count * k, 0.0);
  Mask boundary_mask(grid.voxel_count(), 0);
  for (std::size_t b = 0; b < boundary.voxels.size(); ++b) {
    const std::size_t v = boundary.voxels[b];
    if (v >= grid.voxel_count() || d.compact[v] < 0) throw SpecInvalid("Dirichlet voxel lies outside the mask");
    boundary_mask[v] = 1;
  }

  // Initial guess: indicator of the dominant part at the nearest pinned
  // voxel; pinned voxels take their Dirichlet values.
  const auto nearest = nearest_feature(grid, boundary_mask);
  std::vector<std::int64_t> boundary_row(grid.voxel_count(), -1);
  for (std::size_t b = 0; b < boundary.voxels.size(); ++b) boundary_row[boundary.voxels[b]] = static_cast<std::int64_t>(b);
  for (std::size_t m = 0; m < m_count; ++m) {
    const std::size_t v = d.voxels[m];
    if (boundary_row[v] >= 0) {
      pinned[m] = 1;
      for (std::size_t c = 0; c < k; ++c) w[m * k + c] = boundary.values(boundary_row[v], static_cast<Eigen::Index>(c));
      continue;
    }
    const auto src = static_cast<std::size_t>(nearest[v]);
    Eigen::Index best = 0;
    boundary.values.row(boundary_row[src]).maxCoeff(&best);
    w[m * k + static_cast<std::size_t>(best)] = 1.0;
    project_simplex_inplace(std::span<double>(w.data() + m * k, k));
  }

  std::vector<double> next = w;
  double energy = options.record_energy || options.divergence_window > 0
                      ? compact_energy(d, w, parts, inv_h2, grid.voxel_volume())
                      : 0.0;
  if (options.record_energy) rep.energy.push_back(energy);
  int increases = 0;

  const std::size_t grain = 1024;
  const std::size_t chunks = (m_count + grain - 1) / grain;
  std::vector<double> chunk_max(chunks, 0.0);

  // With a single part the simplex pins every voxel to 1.
  const bool trivial = k == 1 || std::all_of(pinned.begin(), pinned.end(), [](std::uint8_t p) { return p != 0; });
  if (trivial) rep.converged = true;

  for (int it = 0; it < options.max_iters && !trivial; ++it) {
    std::fill(chunk_max.begin(), chunk_max.end(), 0.0);
    parallel_for(
        m_count,
        [&](std::size_t begin, std::size_t end) {
          double local = 0.0;
          double buf[64];
          std::vector<double> heap;
          double* g = buf;
          if (k > 64) {
            heap.resize(k);
            g = heap.data();
          }
          for (std::size_t m = begin; m < end; ++m) {
            if (pinned[m]) continue;
            const auto& nb = d.neighbours[m];
            for (std::size_t c = 0; c < k; ++c) {
              const double wc = w[m * k + c];
              double lap = 0.0;
              for (int axis = 0; axis < 3; ++axis) {
                double s = 0.0;
                for (int side = 0; side < 2; ++side) {
                  const std::int32_t n = nb[static_cast<std::size_t>(2 * axis + side)];
                  if (n >= 0) s += w[static_cast<std::size_t>(n) * k + c] - wc;
                }
                lap += s * inv_h2[axis];
              }
              g[c] = wc + step * lap;
            }
            project_simplex_inplace(std::span<double>(g, k));
            for (std::size_t c = 0; c < k; ++c) {
              local = std::max(local, std::abs(g[c] - w[m * k + c]));
              next[m * k + c] = g[c];
            }
          }
          chunk_max[begin / grain] = local;
        },
        grain);
    std::swap(w, next);
    // Pinned rows are never written in `next`; keep both buffers in sync.
    rep.iterations = it + 1;
    rep.projected_gradient = *std::max_element(chunk_max.begin(), chunk_max.end()) / step;

    if (options.record_energy || options.divergence_window > 0) {
      const double e = compact_energy(d, w, parts, inv_h2, grid.voxel_volume());
      if (options.record_energy) rep.energy.push_back(e);
      if (e > energy + 1e-12 * std::max(1.0, std::abs(energy))) {
        if (++increases >= options.divergence_window && options.divergence_window > 0) {
          std::ostringstream msg;
          msg << "energy increased for " << increases << " consecutive iterations (step " << step << ")";
          throw Diverged(msg.str());
        }
      } else {
        increases = 0;
      }
      energy = e;
    }
    if (rep.projected_gradient <= options.tol) {
      rep.converged = true;
      break;
    }
  }

  WeightField out;
  out.weights = VolumeGrid::zeros(grid, parts);
  out.weights.mask = mask;
  out.boundary_set = boundary.voxels;
  for (std::size_t m = 0; m < m_count; ++m) {
    for (std::size_t c = 0; c < k; ++c) out.weights.at(d.voxels[m], static_cast<int>(c)) = w[m * k + c];
  }
  extend_outside_mask(out.weights, mask);
  return out;
}

}  // namespace ktpr
