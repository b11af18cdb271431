#include "ktpr/volume.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "ktpr/error.hpp"
#include "ktpr/parallel.hpp"

namespace ktpr {

std::array<int, 3> GridSpec::ijk(std::size_t index) const {
  const auto nx = static_cast<std::size_t>(dims[0]);
  const auto ny = static_cast<std::size_t>(dims[1]);
  return {static_cast<int>(index % nx), static_cast<int>((index / nx) % ny),
          static_cast<int>(index / (nx * ny))};
}

void GridSpec::validate() const {
  for (int a = 0; a < 3; ++a) {
    if (dims[static_cast<std::size_t>(a)] <= 0) throw SpecInvalid("grid dims must be positive");
    if (!(spacing[a] > 0.0) || !std::isfinite(spacing[a])) {
      throw SpecInvalid("grid spacing must be strictly positive");
    }
    if (!std::isfinite(origin[a])) throw SpecInvalid("grid origin must be finite");
  }
}

GridSpec GridSpec::cube(int n, double spacing, const Vec3& center) {
  GridSpec g;
  g.dims = {n, n, n};
  g.spacing = Vec3::Constant(spacing);
  g.origin = center - Vec3::Constant(0.5 * (n - 1) * spacing);
  return g;
}

VolumeGrid VolumeGrid::zeros(const GridSpec& grid, int channels) {
  grid.validate();
  VolumeGrid v;
  v.grid = grid;
  v.channels = channels;
  v.data.assign(grid.voxel_count() * static_cast<std::size_t>(channels), 0.0);
  return v;
}

void VolumeGrid::validate() const {
  grid.validate();
  if (channels <= 0) throw SpecInvalid("channel count must be positive");
  const std::size_t expected = grid.voxel_count() * static_cast<std::size_t>(channels);
  if (data.size() != expected) {
    std::ostringstream msg;
    msg << "volume holds " << data.size() << " values, expected " << expected;
    throw SizeMismatch(msg.str());
  }
  if (!mask.empty() && mask.size() != grid.voxel_count()) {
    throw SizeMismatch("mask size differs from voxel count");
  }
}

namespace {

// Lower lattice corner and fractional offset along one axis. Returns false
// when the coordinate lies outside [0, n-1] and mode is Zero.
bool axis_cell(double c, int n, OutOfBounds mode, int& i0, double& f) {
  if (n == 1) {
    if (mode == OutOfBounds::Zero && std::abs(c) > 1e-9) return false;
    i0 = 0;
    f = 0.0;
    return true;
  }
  if (c < 0.0 || c > static_cast<double>(n - 1)) {
    if (mode == OutOfBounds::Zero) return false;
    c = std::clamp(c, 0.0, static_cast<double>(n - 1));
  }
  const double fl = std::floor(c);
  i0 = static_cast<int>(fl);
  f = c - fl;
  if (i0 >= n - 1) {
    i0 = n - 2;
    f = 1.0;
  }
  return true;
}

struct Cell {
  int i[3];
  double f[3];
  int step[3];  // 0 on singleton axes
};

bool locate(const GridSpec& g, const Vec3& x, OutOfBounds mode, Cell& cell) {
  const Vec3 c = g.continuous_index(x);
  for (int a = 0; a < 3; ++a) {
    if (!axis_cell(c[a], g.dims[static_cast<std::size_t>(a)], mode, cell.i[a], cell.f[a])) return false;
    cell.step[a] = g.dims[static_cast<std::size_t>(a)] > 1 ? 1 : 0;
  }
  return true;
}

}  // namespace

void sample_trilinear(const VolumeGrid& volume, const Vec3& x, std::span<double> out,
                      OutOfBounds mode) {
  std::fill(out.begin(), out.end(), 0.0);
  Cell cell;
  if (!locate(volume.grid, x, mode, cell)) return;
  const auto nc = static_cast<std::size_t>(volume.channels);
  for (int dz = 0; dz < 2; ++dz) {
    const double wz = dz ? cell.f[2] : 1.0 - cell.f[2];
    if (wz == 0.0) continue;
    for (int dy = 0; dy < 2; ++dy) {
      const double wy = dy ? cell.f[1] : 1.0 - cell.f[1];
      if (wy == 0.0) continue;
      for (int dx = 0; dx < 2; ++dx) {
        const double wx = dx ? cell.f[0] : 1.0 - cell.f[0];
        if (wx == 0.0) continue;
        const double w = wx * wy * wz;
        const std::size_t v = volume.grid.index(cell.i[0] + dx * cell.step[0], cell.i[1] + dy * cell.step[1],
                                                cell.i[2] + dz * cell.step[2]);
        const double* p = volume.data.data() + v * nc;
        for (std::size_t c = 0; c < out.size(); ++c) out[c] += w * p[c];
      }
    }
  }
}

double sample_trilinear(const VolumeGrid& volume, const Vec3& x, int channel, OutOfBounds mode) {
  Cell cell;
  if (!locate(volume.grid, x, mode, cell)) return 0.0;
  double acc = 0.0;
  for (int dz = 0; dz < 2; ++dz) {
    const double wz = dz ? cell.f[2] : 1.0 - cell.f[2];
    if (wz == 0.0) continue;
    for (int dy = 0; dy < 2; ++dy) {
      const double wy = dy ? cell.f[1] : 1.0 - cell.f[1];
      if (wy == 0.0) continue;
      for (int dx = 0; dx < 2; ++dx) {
        const double wx = dx ? cell.f[0] : 1.0 - cell.f[0];
        if (wx == 0.0) continue;
        const std::size_t v = volume.grid.index(cell.i[0] + dx * cell.step[0], cell.i[1] + dy * cell.step[1],
                                                cell.i[2] + dz * cell.step[2]);
        acc += wx * wy * wz * volume.at(v, channel);
      }
    }
  }
  return acc;
}

Vec3 sample_vec3(const VolumeGrid& volume, const Vec3& x, OutOfBounds mode) {
  double out[3];
  sample_trilinear(volume, x, std::span<double>(out, 3), mode);
  return {out[0], out[1], out[2]};
}

double sample_trilinear_with_gradient(const VolumeGrid& volume, const Vec3& x, int channel,
                                      Vec3& gradient) {
  gradient.setZero();
  Cell cell;
  if (!locate(volume.grid, x, OutOfBounds::Zero, cell)) return 0.0;
  double value = 0.0;
  for (int dz = 0; dz < 2; ++dz) {
    for (int dy = 0; dy < 2; ++dy) {
      for (int dx = 0; dx < 2; ++dx) {
        const std::size_t v = volume.grid.index(cell.i[0] + dx * cell.step[0], cell.i[1] + dy * cell.step[1],
                                                cell.i[2] + dz * cell.step[2]);
        const double s = volume.at(v, channel);
        const double wx = dx ? cell.f[0] : 1.0 - cell.f[0];
        const double wy = dy ? cell.f[1] : 1.0 - cell.f[1];
        const double wz = dz ? cell.f[2] : 1.0 - cell.f[2];
        const double sx = dx ? 1.0 : -1.0;
        const double sy = dy ? 1.0 : -1.0;
        const double sz = dz ? 1.0 : -1.0;
        value += wx * wy * wz * s;
        gradient.x() += sx * cell.step[0] * wy * wz * s;
        gradient.y() += sy * cell.step[1] * wx * wz * s;
        gradient.z() += sz * cell.step[2] * wx * wy * s;
      }
    }
  }
  gradient = gradient.cwiseQuotient(volume.grid.spacing);
  return value;
}

Vec3 sample_vec3_with_jacobian(const VolumeGrid& volume, const Vec3& x, Mat3& jacobian, OutOfBounds mode) {
  jacobian.setZero();
  Vec3 value = Vec3::Zero();
  Cell cell;
  if (!locate(volume.grid, x, mode, cell)) return value;
  const Vec3 c = volume.grid.continuous_index(x);
  // Derivative vanishes along an axis once the sample is clamped to an edge.
  double live[3];
  for (int a = 0; a < 3; ++a) {
    const int n = volume.grid.dims[static_cast<std::size_t>(a)];
    live[a] = (cell.step[a] == 0 || c[a] < 0.0 || c[a] > n - 1) ? 0.0 : 1.0;
  }
  for (int dz = 0; dz < 2; ++dz) {
    for (int dy = 0; dy < 2; ++dy) {
      for (int dx = 0; dx < 2; ++dx) {
        const std::size_t v = volume.grid.index(cell.i[0] + dx * cell.step[0], cell.i[1] + dy * cell.step[1],
                                                cell.i[2] + dz * cell.step[2]);
        const Vec3 s = volume.vec3(v);
        const double wx = dx ? cell.f[0] : 1.0 - cell.f[0];
        const double wy = dy ? cell.f[1] : 1.0 - cell.f[1];
        const double wz = dz ? cell.f[2] : 1.0 - cell.f[2];
        value += wx * wy * wz * s;
        jacobian.col(0) += (dx ? 1.0 : -1.0) * live[0] * wy * wz * s;
        jacobian.col(1) += (dy ? 1.0 : -1.0) * live[1] * wx * wz * s;
        jacobian.col(2) += (dz ? 1.0 : -1.0) * live[2] * wx * wy * s;
      }
    }
  }
  for (int a = 0; a < 3; ++a) jacobian.col(a) /= volume.grid.spacing[a];
  return value;
}

double sample_nearest(const VolumeGrid& volume, const Vec3& x, int channel) {
  const Vec3 c = volume.grid.continuous_index(x);
  int idx[3];
  for (int a = 0; a < 3; ++a) {
    idx[a] = static_cast<int>(std::lround(c[a]));
    if (idx[a] < 0 || idx[a] >= volume.grid.dims[static_cast<std::size_t>(a)]) return 0.0;
  }
  return volume.at(volume.grid.index(idx[0], idx[1], idx[2]), channel);
}

std::vector<std::size_t> boundary_voxels(const GridSpec& grid, const Mask& mask) {
  std::vector<std::size_t> out;
  static constexpr int kOffsets[6][3] = {{1, 0, 0}, {-1, 0, 0}, {0, 1, 0}, {0, -1, 0}, {0, 0, 1}, {0, 0, -1}};
  for (std::size_t v = 0; v < grid.voxel_count(); ++v) {
    if (!mask[v]) continue;
    const auto c = grid.ijk(v);
    for (const auto& o : kOffsets) {
      const int i = c[0] + o[0];
      const int j = c[1] + o[1];
      const int k = c[2] + o[2];
      if (!grid.contains(i, j, k) || !mask[grid.index(i, j, k)]) {
        out.push_back(v);
        break;
      }
    }
  }
  return out;
}

namespace {

// One pass of the separable squared-distance transform along an axis
// (lower envelope of parabolas), carrying the feature index along.
void edt_axis(const GridSpec& grid, int axis, std::vector<double>& dist2, std::vector<std::int64_t>& feature) {
  const int n = grid.dims[static_cast<std::size_t>(axis)];
  const double h2 = grid.spacing[axis] * grid.spacing[axis];
  const int a1 = (axis + 1) % 3;
  const int a2 = (axis + 2) % 3;
  const int n1 = grid.dims[static_cast<std::size_t>(a1)];
  const int n2 = grid.dims[static_cast<std::size_t>(a2)];
  const std::size_t lines = static_cast<std::size_t>(n1) * static_cast<std::size_t>(n2);
  constexpr double kInf = std::numeric_limits<double>::infinity();

  parallel_for(
      lines,
      [&](std::size_t begin, std::size_t end) {
        std::vector<double> f(static_cast<std::size_t>(n));
        std::vector<std::int64_t> feat(static_cast<std::size_t>(n));
        std::vector<int> hull(static_cast<std::size_t>(n));
        std::vector<double> bound(static_cast<std::size_t>(n) + 1);
        std::vector<std::size_t> idx(static_cast<std::size_t>(n));
        for (std::size_t line = begin; line < end; ++line) {
          const int u = static_cast<int>(line % static_cast<std::size_t>(n1));
          const int w = static_cast<int>(line / static_cast<std::size_t>(n1));
          for (int q = 0; q < n; ++q) {
            int c[3];
            c[axis] = q;
            c[a1] = u;
            c[a2] = w;
            idx[static_cast<std::size_t>(q)] = grid.index(c[0], c[1], c[2]);
            f[static_cast<std::size_t>(q)] = dist2[idx[static_cast<std::size_t>(q)]];
            feat[static_cast<std::size_t>(q)] = feature[idx[static_cast<std::size_t>(q)]];
          }
          int k = -1;
          for (int q = 0; q < n; ++q) {
            if (f[static_cast<std::size_t>(q)] == kInf) continue;
            const double fq = f[static_cast<std::size_t>(q)] + h2 * q * q;
            while (k >= 0) {
              const int r = hull[static_cast<std::size_t>(k)];
              const double fr = f[static_cast<std::size_t>(r)] + h2 * r * r;
              const double s = (fq - fr) / (2.0 * h2 * (q - r));
              if (s <= bound[static_cast<std::size_t>(k)]) {
                --k;
              } else {
                break;
              }
            }
            ++k;
            hull[static_cast<std::size_t>(k)] = q;
            if (k == 0) {
              bound[0] = -kInf;
            } else {
              const int r = hull[static_cast<std::size_t>(k - 1)];
              const double fr = f[static_cast<std::size_t>(r)] + h2 * r * r;
              bound[static_cast<std::size_t>(k)] = (fq - fr) / (2.0 * h2 * (q - r));
            }
          }
          if (k < 0) continue;  // no features on this line
          bound[static_cast<std::size_t>(k) + 1] = kInf;
          int j = 0;
          for (int q = 0; q < n; ++q) {
            while (bound[static_cast<std::size_t>(j) + 1] < q) ++j;
            const int r = hull[static_cast<std::size_t>(j)];
            const double d = static_cast<double>(q - r);
            dist2[idx[static_cast<std::size_t>(q)]] = h2 * d * d + f[static_cast<std::size_t>(r)];
            feature[idx[static_cast<std::size_t>(q)]] = feat[static_cast<std::size_t>(r)];
          }
        }
      },
      64);
}

}  // namespace

std::vector<std::int64_t> nearest_feature(const GridSpec& grid, const Mask& features) {
  const std::size_t n = grid.voxel_count();
  std::vector<double> dist2(n, std::numeric_limits<double>::infinity());
  std::vector<std::int64_t> feature(n, -1);
  for (std::size_t v = 0; v < n; ++v) {
    if (features[v]) {
      dist2[v] = 0.0;
      feature[v] = static_cast<std::int64_t>(v);
    }
  }
  for (int axis = 0; axis < 3; ++axis) edt_axis(grid, axis, dist2, feature);
  return feature;
}

void extend_outside_mask(VolumeGrid& volume, const Mask& mask) {
  const auto nearest = nearest_feature(volume.grid, mask);
  const auto nc = static_cast<std::size_t>(volume.channels);
  for (std::size_t v = 0; v < volume.voxel_count(); ++v) {
    if (mask[v] || nearest[v] < 0) continue;
    const auto src = static_cast<std::size_t>(nearest[v]);
    std::copy_n(volume.data.begin() + static_cast<std::ptrdiff_t>(src * nc), nc,
                volume.data.begin() + static_cast<std::ptrdiff_t>(v * nc));
  }
}

std::size_t count_mask(const Mask& mask) {
  return static_cast<std::size_t>(std::count_if(mask.begin(), mask.end(), [](std::uint8_t m) { return m != 0; }));
}

}  // namespace ktpr
