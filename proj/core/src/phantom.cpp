#include "ktpr/phantom.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Geometry>
#include <Eigen/LU>
#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>
#include <sstream>

#include "ktpr/error.hpp"
#include "ktpr/parallel.hpp"

namespace ktpr {
namespace {

constexpr double kPi = std::numbers::pi;

Vec3 closest_on_segment(const Vec3& x, const Vec3& a, const Vec3& b) {
  const Vec3 ab = b - a;
  const double len2 = ab.squaredNorm();
  if (len2 == 0.0) return a;
  const double t = std::clamp((x - a).dot(ab) / len2, 0.0, 1.0);
  return a + t * ab;
}

double ramp(double s, double band) {
  if (s <= -band) return 0.0;
  if (s >= band) return 1.0;
  return 0.5 - 0.5 * std::cos(kPi * (s + band) / (2.0 * band));
}

double gate(double rho, double radius, double band) {
  if (rho <= radius + band) return 1.0;
  if (rho >= radius + 2.0 * band) return 0.0;
  return 0.5 + 0.5 * std::cos(kPi * (rho - radius - band) / band);
}

double logistic(double t) {
  if (t >= 0.0) return 1.0 / (1.0 + std::exp(-t));
  const double e = std::exp(t);
  return e / (1.0 + e);
}

struct PartLayout {
  std::string name;
  int parent;
  Vec3 joint;
  Capsule capsule;
  double base;
};

std::vector<PartLayout> biped_layout(double s) {
  auto v = [s](double x, double y, double z) { return Vec3(x * s, y * s, z * s); };
  std::vector<PartLayout> parts = {
      {"torso", KinematicTree::kNoParent, v(0, 0, 0), {v(0, 0, -40), v(0, 0, 40), 30 * s}, 100},
      {"head", 0, v(0, 0, 62), {v(0, 0, 80), v(0, 0, 88), 20 * s}, 120},
      {"upper_arm_l", 0, v(28, 0, 30), {v(28, 0, 30), v(73, 0, 30), 12 * s}, 80},
      {"upper_arm_r", 0, v(-28, 0, 30), {v(-28, 0, 30), v(-73, 0, 30), 12 * s}, 80},
      {"forearm_l", 2, v(73, 0, 30), {v(73, 0, 30), v(118, 0, 30), 11 * s}, 92},
      {"forearm_r", 3, v(-73, 0, 30), {v(-73, 0, 30), v(-118, 0, 30), 11 * s}, 92},
      {"thigh_l", 0, v(16, 0, -45), {v(16, 0, -45), v(16, 0, -95), 15 * s}, 70},
      {"thigh_r", 0, v(-16, 0, -45), {v(-16, 0, -45), v(-16, 0, -95), 15 * s}, 70},
      {"shin_l", 6, v(16, 0, -95), {v(16, 0, -95), v(16, 0, -145), 13 * s}, 86},
      {"shin_r", 7, v(-16, 0, -95), {v(-16, 0, -95), v(-16, 0, -145), 13 * s}, 86},
  };
  return parts;
}

std::vector<PartLayout> chain_layout(int k, double length, double radius) {
  std::vector<PartLayout> parts;
  const double x0 = -0.5 * k * length;
  for (int i = 0; i < k; ++i) {
    const Vec3 a(x0 + i * length, 0, 0);
    const Vec3 b(x0 + (i + 1) * length, 0, 0);
    std::ostringstream name;
    name << "segment" << i;
    parts.push_back({name.str(), i == 0 ? KinematicTree::kNoParent : i - 1, i == 0 ? Vec3(0.5 * (a + b)) : a, {a, b, radius},
                     i % 2 == 0 ? 80.0 : 110.0});
  }
  return parts;
}

std::vector<Organ> default_organs(const PhantomSpec& spec, const std::vector<PartLayout>& parts) {
  std::vector<Organ> organs;
  if (spec.preset == TreePreset::Biped) {
    const double s = spec.scale;
    organs.push_back({"heart", 0, Vec3(-8, 0, 15) * s, 13 * s, 165});
    organs.push_back({"liver", 0, Vec3(10, 0, -18) * s, 12 * s, 55});
    organs.push_back({"brain", 1, Vec3(0, 0, 84) * s, 12 * s, 160});
    for (std::size_t k = 2; k < parts.size(); ++k) {
      const Capsule& c = parts[k].capsule;
      organs.push_back({parts[k].name + "_core", static_cast<int>(k), 0.5 * (c.a + c.b), 0.5 * c.radius,
                        parts[k].base * 1.6});
    }
  } else {
    for (std::size_t k = 0; k < parts.size(); ++k) {
      const Capsule& c = parts[k].capsule;
      organs.push_back({parts[k].name + "_core", static_cast<int>(k), 0.5 * (c.a + c.b), 0.45 * c.radius,
                        parts[k].base * 1.6});
    }
  }
  return organs;
}

}  // namespace

double Capsule::distance(const Vec3& x) const { return (x - closest_on_segment(x, a, b)).norm() - radius; }

void PhantomSpec::validate() const {
  auto fail = [](const std::string& msg) { throw SpecInvalid(msg); };
  if (preset == TreePreset::Chain) {
    if (parts < 1) fail("chain phantom needs at least one part");
    if (!(limb_length > 0.0) || !(limb_radius > 0.0)) fail("limb length and radius must be positive");
    if (limb_radius >= 0.5 * limb_length) fail("limb radius must be below half the limb length");
  }
  if (!(scale > 0.0)) fail("scale must be positive");
  if (!(blend_band > 0.0)) fail("blend band must be positive");
  if (resolution < 8) fail("resolution must be at least 8");
  if (!(margin >= 0.0)) fail("margin must be non-negative");
  if (!(mesh_cell > 0.0)) fail("mesh cell must be positive");
  for (const Organ& o : organs) {
    if (!(o.radius > 0.0)) fail("organ radius must be positive");
  }
}

double Phantom::signed_distance(const Vec3& x) const {
  double d = std::numeric_limits<double>::infinity();
  for (const Capsule& c : capsules) d = std::min(d, c.distance(x));
  return d;
}

Eigen::VectorXd Phantom::weights_at(const Vec3& x) const {
  const int k_parts = parts();
  const double band = spec.blend_band;
  std::vector<double> m(static_cast<std::size_t>(k_parts), 0.0);
  for (int k = 0; k < k_parts; ++k) {
    if (tree.parents[static_cast<std::size_t>(k)] == KinematicTree::kNoParent) continue;
    const Vec3& j = tree.rest_joints[static_cast<std::size_t>(k)];
    const Capsule& c = capsules[static_cast<std::size_t>(k)];
    const Vec3 dir = (c.b - j).normalized();
    const Vec3 rel = x - j;
    const double s = rel.dot(dir);
    const double rho = (rel - s * dir).norm();
    m[static_cast<std::size_t>(k)] = ramp(s, band) * gate(rho, c.radius, band);
  }
  // Children of one parent share its mass; cap their total at 1.
  std::vector<double> child_sum(static_cast<std::size_t>(k_parts), 0.0);
  for (int k = 0; k < k_parts; ++k) {
    const int p = tree.parents[static_cast<std::size_t>(k)];
    if (p != KinematicTree::kNoParent) child_sum[static_cast<std::size_t>(p)] += m[static_cast<std::size_t>(k)];
  }
  for (int k = 0; k < k_parts; ++k) {
    const int p = tree.parents[static_cast<std::size_t>(k)];
    if (p != KinematicTree::kNoParent && child_sum[static_cast<std::size_t>(p)] > 1.0) {
      m[static_cast<std::size_t>(k)] /= child_sum[static_cast<std::size_t>(p)];
    }
  }
  for (double& c : child_sum) c = std::min(c, 1.0);
  std::vector<double> mass(static_cast<std::size_t>(k_parts), 0.0);
  Eigen::VectorXd w(k_parts);
  for (int k : tree.topological_order()) {
    const int p = tree.parents[static_cast<std::size_t>(k)];
    mass[static_cast<std::size_t>(k)] = p == KinematicTree::kNoParent ? 1.0 : m[static_cast<std::size_t>(k)] * mass[static_cast<std::size_t>(p)];
    w[k] = mass[static_cast<std::size_t>(k)] * (1.0 - child_sum[static_cast<std::size_t>(k)]);
  }
  // Clean rounding so rows are exactly on the simplex.
  for (int k = 0; k < k_parts; ++k) w[k] = std::max(0.0, w[k]);
  w /= w.sum();
  return w;
}

double Phantom::intensity_at(const Vec3& x) const {
  const double sigma = 0.5 * grid.spacing.minCoeff();
  const double inside = logistic(-signed_distance(x) / sigma);
  if (inside < 1e-12) return 0.0;
  const Eigen::VectorXd w = weights_at(x);
  double base = 0.0;
  for (int k = 0; k < parts(); ++k) base += w[k] * base_intensity[static_cast<std::size_t>(k)];
  double value = base;
  for (const Organ& o : organs) {
    const double sphere = logistic((o.radius - (x - o.center).norm()) / sigma);
    value += (o.intensity - base) * sphere;
  }
  return inside * value;
}

Eigen::Matrix<double, 3, 4> Phantom::raw_shape_modes(const Vec3& x) const {
  Eigen::Matrix<double, 3, 4> f = Eigen::Matrix<double, 3, 4>::Zero();
  const int root = tree.root();
  const Vec3 c0 = tree.rest_joints[static_cast<std::size_t>(root)];
  const Eigen::VectorXd w = weights_at(x);
  f.col(0) = 0.05 * (x - c0);
  for (int k = 0; k < parts(); ++k) {
    const double wk = w[k];
    if (wk == 0.0) continue;
    const Capsule& c = capsules[static_cast<std::size_t>(k)];
    if (k != root) {
      // Stretch along the limb measured from where the limb leaves the root.
      int base = k;
      while (tree.parents[static_cast<std::size_t>(base)] != root) base = tree.parents[static_cast<std::size_t>(base)];
      const Vec3 j = tree.rest_joints[static_cast<std::size_t>(base)];
      const Vec3 e = (capsules[static_cast<std::size_t>(base)].b - j).normalized();
      f.col(1) += wk * 0.08 * (x - j).dot(e) * e;
    }
    f.col(2) += wk * 0.1 * (x - closest_on_segment(x, c.a, c.b));
  }
  const bool biped = spec.preset == TreePreset::Biped;
  const Vec3 axis = biped ? Vec3::UnitZ() : Vec3::UnitX();
  const Vec3 bend = biped ? Vec3::UnitX() : Vec3::UnitZ();
  double half = 0.0;
  for (const Capsule& c : capsules) {
    half = std::max({half, std::abs((c.a - c0).dot(axis)) + c.radius, std::abs((c.b - c0).dot(axis)) + c.radius});
  }
  const double t = (x - c0).dot(axis);
  f.col(3) = 0.05 * t * t / half * bend;
  return f;
}

Vec3 Phantom::shape_offset(const Vec3& x, const Eigen::VectorXd& beta) const {
  if (beta.size() != shape_mix.rows()) throw DimensionMismatch("beta length differs from the shape basis");
  return raw_shape_modes(x) * (shape_mix.transpose() * beta);
}

SurfaceMesh capsule_union_mesh(const std::vector<Capsule>& capsules, double cell) {
  if (capsules.empty()) throw SpecInvalid("no capsules to mesh");
  Vec3 lo = Vec3::Constant(std::numeric_limits<double>::infinity());
  Vec3 hi = -lo;
  for (const Capsule& c : capsules) {
    lo = lo.cwiseMin(c.a.cwiseMin(c.b) - Vec3::Constant(c.radius));
    hi = hi.cwiseMax(c.a.cwiseMax(c.b) + Vec3::Constant(c.radius));
  }
  lo -= Vec3::Constant(2.0 * cell);
  hi += Vec3::Constant(2.0 * cell);
  std::array<int, 3> n{};
  for (int a = 0; a < 3; ++a) n[static_cast<std::size_t>(a)] = static_cast<int>(std::ceil((hi[a] - lo[a]) / cell)) + 1;
  auto node = [&](int i, int j, int k) {
    return static_cast<std::int64_t>(i) + static_cast<std::int64_t>(n[0]) * (j + static_cast<std::int64_t>(n[1]) * k);
  };
  auto node_pos = [&](std::int64_t id) {
    const std::int64_t i = id % n[0];
    const std::int64_t j = (id / n[0]) % n[1];
    const std::int64_t k = id / (static_cast<std::int64_t>(n[0]) * n[1]);
    return Vec3(lo.x() + static_cast<double>(i) * cell, lo.y() + static_cast<double>(j) * cell,
                lo.z() + static_cast<double>(k) * cell);
  };
  auto sdf = [&](const Vec3& x) {
    double d = std::numeric_limits<double>::infinity();
    for (const Capsule& c : capsules) d = std::min(d, c.distance(x));
    return d;
  };
  std::vector<double> value(static_cast<std::size_t>(n[0]) * n[1] * n[2]);
  const double nudge = 1e-3 * cell;
  for (std::size_t id = 0; id < value.size(); ++id) {
    double d = sdf(node_pos(static_cast<std::int64_t>(id)));
    if (std::abs(d) < nudge) d = nudge;  // keep crossings away from lattice nodes
    value[id] = d;
  }

  std::map<std::pair<std::int64_t, std::int64_t>, int> edge_vertex;
  std::vector<Vec3> vertices;
  std::vector<std::array<int, 3>> faces;
  auto crossing = [&](std::int64_t a, std::int64_t b) {
    const auto key = std::minmax(a, b);
    auto it = edge_vertex.find(key);
    if (it != edge_vertex.end()) return it->second;
    const double va = value[static_cast<std::size_t>(a)];
    const double vb = value[static_cast<std::size_t>(b)];
    const double t = va / (va - vb);
    const Vec3 p = node_pos(a) + t * (node_pos(b) - node_pos(a));
    const int index = static_cast<int>(vertices.size());
    vertices.push_back(p);
    edge_vertex.emplace(key, index);
    return index;
  };
  auto emit = [&](int a, int b, int c, const Vec3& outward) {
    const Vec3 normal = (vertices[static_cast<std::size_t>(b)] - vertices[static_cast<std::size_t>(a)])
                            .cross(vertices[static_cast<std::size_t>(c)] - vertices[static_cast<std::size_t>(a)]);
    if (normal.dot(outward) < 0.0) std::swap(b, c);
    faces.push_back({a, b, c});
  };
  // Kuhn subdivision: six tetrahedra per cube, one per axis permutation.
  static constexpr int kPerm[6][3] = {{0, 1, 2}, {0, 2, 1}, {1, 0, 2}, {1, 2, 0}, {2, 0, 1}, {2, 1, 0}};
  for (int k = 0; k + 1 < n[2]; ++k) {
    for (int j = 0; j + 1 < n[1]; ++j) {
      for (int i = 0; i + 1 < n[0]; ++i) {
        for (const auto& perm : kPerm) {
          std::array<int, 3> c{i, j, k};
          std::array<std::int64_t, 4> tet{};
          tet[0] = node(c[0], c[1], c[2]);
          for (int s = 0; s < 3; ++s) {
            ++c[static_cast<std::size_t>(perm[s])];
            tet[static_cast<std::size_t>(s) + 1] = node(c[0], c[1], c[2]);
          }
          std::vector<std::int64_t> in, out;
          for (std::int64_t v : tet) (value[static_cast<std::size_t>(v)] < 0.0 ? in : out).push_back(v);
          if (in.empty() || out.empty()) continue;
          Vec3 in_c = Vec3::Zero(), out_c = Vec3::Zero();
          for (auto v : in) in_c += node_pos(v);
          for (auto v : out) out_c += node_pos(v);
          const Vec3 outward = out_c / static_cast<double>(out.size()) - in_c / static_cast<double>(in.size());
          if (in.size() == 1 || out.size() == 1) {
            const std::int64_t lone = in.size() == 1 ? in[0] : out[0];
            const auto& others = in.size() == 1 ? out : in;
            emit(crossing(lone, others[0]), crossing(lone, others[1]), crossing(lone, others[2]), outward);
          } else {
            const int q0 = crossing(in[0], out[0]);
            const int q1 = crossing(in[0], out[1]);
            const int q2 = crossing(in[1], out[1]);
            const int q3 = crossing(in[1], out[0]);
            emit(q0, q1, q2, outward);
            emit(q0, q2, q3, outward);
          }
        }
      }
    }
  }

  // Project onto the exact surface away from creases between capsules.
  for (Vec3& p : vertices) {
    for (int it = 0; it < 3; ++it) {
      double best = std::numeric_limits<double>::infinity(), second = best;
      const Capsule* active = nullptr;
      for (const Capsule& c : capsules) {
        const double d = c.distance(p);
        if (d < best) {
          second = best;
          best = d;
          active = &c;
        } else if (d < second) {
          second = d;
        }
      }
      if (second - best < cell) break;
      const Vec3 axis_point = closest_on_segment(p, active->a, active->b);
      const Vec3 radial = p - axis_point;
      if (radial.norm() < 1e-12) break;
      p = axis_point + active->radius * radial.normalized();
    }
  }

  SurfaceMesh mesh;
  mesh.vertices.resize(static_cast<Eigen::Index>(vertices.size()), 3);
  for (std::size_t v = 0; v < vertices.size(); ++v) mesh.vertices.row(static_cast<Eigen::Index>(v)) = vertices[v].transpose();
  mesh.faces.resize(static_cast<Eigen::Index>(faces.size()), 3);
  for (std::size_t f = 0; f < faces.size(); ++f) {
    mesh.faces.row(static_cast<Eigen::Index>(f)) << faces[f][0], faces[f][1], faces[f][2];
  }
  return mesh;
}

Phantom build_phantom(const PhantomSpec& spec) {
  spec.validate();
  Phantom ph;
  ph.spec = spec;
  const std::vector<PartLayout> layout = spec.preset == TreePreset::Biped
                                             ? biped_layout(spec.scale)
                                             : chain_layout(spec.parts, spec.limb_length, spec.limb_radius);
  for (const PartLayout& p : layout) {
    ph.tree.parents.push_back(p.parent);
    ph.tree.rest_joints.push_back(p.joint);
    ph.tree.names.push_back(p.name);
    ph.capsules.push_back(p.capsule);
    ph.base_intensity.push_back(p.base);
  }
  ph.tree.validate();
  ph.organs = spec.organs.empty() ? default_organs(spec, layout) : spec.organs;
  for (const Organ& o : ph.organs) {
    if (o.part < 0 || o.part >= ph.parts()) throw SpecInvalid("organ part index out of range");
  }

  Vec3 lo = Vec3::Constant(std::numeric_limits<double>::infinity());
  Vec3 hi = -lo;
  for (const Capsule& c : ph.capsules) {
    lo = lo.cwiseMin(c.a.cwiseMin(c.b) - Vec3::Constant(c.radius));
    hi = hi.cwiseMax(c.a.cwiseMax(c.b) + Vec3::Constant(c.radius));
  }
  const double extent = (hi - lo).maxCoeff() + 2.0 * spec.margin;
  ph.grid = GridSpec::cube(spec.resolution, extent / (spec.resolution - 1), 0.5 * (lo + hi));

  ph.mesh = capsule_union_mesh(ph.capsules, spec.mesh_cell);
  ph.mesh.validate();
  const int n = ph.mesh.vertex_count();
  ph.vertex_weights.resize(n, ph.parts());
  for (int v = 0; v < n; ++v) ph.vertex_weights.row(v) = ph.weights_at(ph.mesh.vertex(v)).transpose();

  // Shape basis: orthonormalize the analytic modes over the mesh vertices,
  // then scale each to 3 mm RMS displacement per vertex.
  Eigen::MatrixXd raw(3 * n, 4);
  for (int v = 0; v < n; ++v) raw.middleRows(3 * v, 3) = ph.raw_shape_modes(ph.mesh.vertex(v));
  const Eigen::Matrix4d gram = raw.transpose() * raw;
  const Eigen::Matrix4d upper = gram.llt().matrixU();
  const Eigen::Matrix4d r_inv = upper.inverse();
  Eigen::Matrix4d mix = r_inv;  // columns: coefficients of each orthonormal mode
  const double rms = 3.0;
  mix *= rms * std::sqrt(static_cast<double>(n));
  // Re-orthonormalize numerically with one Gram-Schmidt pass over the samples.
  Eigen::MatrixXd comps = raw * mix;
  for (int j = 0; j < 4; ++j) {
    for (int i = 0; i < j; ++i) {
      const double c = comps.col(i).dot(comps.col(j)) / comps.col(i).squaredNorm();
      comps.col(j) -= c * comps.col(i);
      mix.col(j) -= c * mix.col(i);
    }
  }
  ph.shape_mix = mix.transpose();
  ph.shape.mean_vertices = ph.mesh.vertices;
  for (int j = 0; j < 4; ++j) {
    Eigen::MatrixX3d comp(n, 3);
    for (int v = 0; v < n; ++v) comp.row(v) = comps.col(j).segment(3 * v, 3).transpose();
    ph.shape.components.push_back(comp);
  }

  const GridSpec& grid = ph.grid;
  ph.mask.assign(grid.voxel_count(), 0);
  ph.image = VolumeGrid::zeros(grid, 1);
  ph.weights = VolumeGrid::zeros(grid, ph.parts());
  ph.labels = VolumeGrid::zeros(grid, 1);
  parallel_for(grid.voxel_count(), [&](std::size_t begin, std::size_t end) {
    for (std::size_t v = begin; v < end; ++v) {
      const Vec3 x = grid.world(v);
      const bool inside = ph.signed_distance(x) < 0.0;
      ph.mask[v] = inside ? 1 : 0;
      const Eigen::VectorXd w = ph.weights_at(x);
      for (int k = 0; k < ph.parts(); ++k) ph.weights.at(v, k) = w[k];
      ph.image.at(v) = ph.intensity_at(x);
      if (inside) {
        for (std::size_t o = 0; o < ph.organs.size(); ++o) {
          if ((x - ph.organs[o].center).norm() < ph.organs[o].radius) ph.labels.at(v) = static_cast<double>(o + 1);
        }
      }
    }
  });
  ph.image.mask = ph.mask;
  ph.weights.mask = ph.mask;
  ph.labels.mask = ph.mask;
  return ph;
}

PosedVolumes pose_phantom_full(const Phantom& phantom, const Pose& pose, DeformMethod method,
                               const VolumeGrid* weights) {
  const VolumeGrid& w = weights ? *weights : phantom.weights;
  const std::vector<RigidTransform> transforms = forward_kinematics(phantom.tree, pose);
  const ArticulatedDeformation deformation(ArticulatedBlend(method, transforms), w);
  PosedVolumes out;
  out.forward = sample_dense(deformation, phantom.grid);
  out.forward.kind = field_kind(method);
  InversionOptions options;
  options.source_mask = phantom.mask;
  out.inverse = invert_field(out.forward, options);
  out.image = resample_image(phantom.image, out.inverse.field);
  out.labels = resample_labels(phantom.labels, out.inverse.field);
  return out;
}

VolumeGrid pose_phantom(const Phantom& phantom, const Pose& pose, DeformMethod method, const VolumeGrid* weights) {
  bool rest = true;
  for (const Vec3& t : pose.theta) rest = rest && t.isZero(0.0);
  if (rest && static_cast<int>(pose.theta.size()) == phantom.parts()) return phantom.image;
  return pose_phantom_full(phantom, pose, method, weights).image;
}

double PortableRng::uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

double PortableRng::normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  double u1 = uniform();
  while (u1 <= 0.0) u1 = uniform();
  const double u2 = uniform();
  const double r = std::sqrt(-2.0 * std::log(u1));
  spare_ = r * std::sin(2.0 * kPi * u2);
  has_spare_ = true;
  return r * std::cos(2.0 * kPi * u2);
}

std::vector<CohortSubject> generate_cohort(const Phantom& phantom, const CohortOptions& options) {
  if (options.subjects < 1) throw SpecInvalid("cohort needs at least one subject");
  PortableRng rng(options.seed);
  const int dim = phantom.shape.beta_dim();
  std::vector<CohortSubject> subjects(static_cast<std::size_t>(options.subjects));
  for (CohortSubject& s : subjects) {
    s.beta.resize(dim);
    for (int j = 0; j < dim; ++j) {
      s.beta[j] = std::clamp(options.beta_sigma * rng.normal(), -options.beta_clip, options.beta_clip);
    }
    s.pose = Pose::zero(phantom.parts());
    for (int k = 0; k < phantom.parts(); ++k) {
      Vec3 axis(rng.normal(), rng.normal(), rng.normal());
      if (axis.norm() < 1e-12) axis = Vec3::UnitZ();
      s.pose.theta[static_cast<std::size_t>(k)] = axis.normalized() * options.pose_magnitude * rng.uniform();
    }
  }
  for (CohortSubject& s : subjects) {
    const PointMap shape_map = [&](const Vec3& x) { return Vec3(x + phantom.shape_offset(x, s.beta)); };
    s.tree = phantom.tree;
    for (Vec3& j : s.tree.rest_joints) j = shape_map(j);
    s.mesh = phantom.mesh;
    s.mesh.vertices = shape_vertices(phantom.shape, s.beta);

    const DenseField psi = sample_dense(shape_map, phantom.grid, FieldKind::Flow);
    InversionOptions inv_options;
    inv_options.source_mask = phantom.mask;
    const InverseField psi_inv = invert_field(psi, inv_options);
    s.canonical = resample_image(phantom.image, psi_inv.field);
    s.weights = VolumeGrid::zeros(phantom.grid, phantom.parts());
    for (std::size_t v = 0; v < phantom.grid.voxel_count(); ++v) {
      const Vec3 y = psi_inv.field.map(phantom.grid.world(v));
      Eigen::Map<Eigen::VectorXd> row(&s.weights.at(v), phantom.parts());
      std::vector<double> tmp(static_cast<std::size_t>(phantom.parts()));
      sample_trilinear(phantom.weights, y, tmp, OutOfBounds::Clamp);
      for (int k = 0; k < phantom.parts(); ++k) row[k] = tmp[static_cast<std::size_t>(k)];
      row /= row.sum();
    }
    s.weights.mask.assign(phantom.grid.voxel_count(), 0);
    for (std::size_t v = 0; v < phantom.grid.voxel_count(); ++v) {
      s.weights.mask[v] = phantom.signed_distance(psi_inv.field.map(phantom.grid.world(v))) < 0.0 ? 1 : 0;
    }
    s.canonical.mask = s.weights.mask;

    s.transforms = forward_kinematics(s.tree, s.pose);
    const ArticulatedDeformation deformation(ArticulatedBlend(DeformMethod::KTPolyRigid, s.transforms), s.weights);
    const DenseField forward = sample_dense(deformation, phantom.grid);
    InversionOptions pose_options;
    pose_options.source_mask = s.weights.mask;
    s.native = resample_image(s.canonical, invert_field(forward, pose_options).field);
  }
  return subjects;
}

}  // namespace ktpr
