#include <doctest.h>

#include <Eigen/Dense>
#include <algorithm>

#include "ktpr/error.hpp"
#include "ktpr/phantom.hpp"
#include "ktpr/weights.hpp"
#include "support.hpp"

using namespace ktpr;
using ktpr::test::Random;

namespace {

// Projection onto the simplex by enumerating supports: for each candidate
// active set S the KKT solution is w_i = v_i - tau on S, zero elsewhere,
// tau = (sum_S v - 1) / |S|; keep the feasible candidate of least distance.
Eigen::VectorXd brute_force_projection(const Eigen::VectorXd& v) {
  const int k = static_cast<int>(v.size());
  Eigen::VectorXd best;
  double best_d = 1e300;
  for (int bits = 1; bits < (1 << k); ++bits) {
    double sum = 0.0;
    int count = 0;
    for (int i = 0; i < k; ++i) {
      if (bits & (1 << i)) {
        sum += v(i);
        ++count;
      }
    }
    const double tau = (sum - 1.0) / count;
    Eigen::VectorXd w = Eigen::VectorXd::Zero(k);
    bool feasible = true;
    for (int i = 0; i < k; ++i) {
      if (bits & (1 << i)) {
        w(i) = v(i) - tau;
        if (w(i) < 0.0) feasible = false;
      }
    }
    if (feasible && (w - v).squaredNorm() < best_d) {
      best_d = (w - v).squaredNorm();
      best = w;
    }
  }
  return best;
}

struct Bar {
  GridSpec grid;
  Mask mask;
  BoundaryData boundary;
};

// A line of n voxels along x with Dirichlet data at both ends.
Bar bar(int n, const Eigen::VectorXd& left, const Eigen::VectorXd& right) {
  Bar b;
  b.grid.dims = {n, 1, 1};
  b.mask.assign(static_cast<std::size_t>(n), 1);
  b.boundary.voxels = {0, static_cast<std::size_t>(n - 1)};
  b.boundary.values.resize(2, left.size());
  b.boundary.values.row(0) = left;
  b.boundary.values.row(1) = right;
  return b;
}

Mask box_mask(const GridSpec& g, int lo, int hi) {
  Mask m(g.voxel_count(), 0);
  for (int k = lo; k <= hi; ++k)
    for (int j = lo; j <= hi; ++j)
      for (int i = lo; i <= hi; ++i) m[g.index(i, j, k)] = 1;
  return m;
}

void check_simplex(const WeightField& field, const Mask& mask) {
  for (std::size_t v = 0; v < mask.size(); ++v) {
    if (!mask[v]) continue;
    double sum = 0.0;
    for (double w : field.weights.voxel(v)) {
      CHECK(w >= 0.0);
      sum += w;
    }
    CHECK(std::abs(sum - 1.0) <= 1e-6);
  }
}

}  // namespace

TEST_CASE("project_simplex examples") {
  Eigen::VectorXd a(2);
  a << 0.2, 0.8;
  CHECK(project_simplex(a) == a);
  Eigen::VectorXd b(2);
  b << 2.0, 0.0;
  CHECK((project_simplex(b) - brute_force_projection(b)).norm() < 1e-15);
  CHECK(project_simplex(b)(0) == 1.0);
  const Eigen::VectorXd c = Eigen::VectorXd::Constant(3, -1.0);
  CHECK((project_simplex(c) - Eigen::VectorXd::Constant(3, 1.0 / 3.0)).norm() < 1e-15);
}

TEST_CASE("project_simplex agrees with support enumeration") {
  Random rng(5);
  for (int i = 0; i < 500; ++i) {
    const int k = 2 + i % 5;
    Eigen::VectorXd v(k);
    for (int j = 0; j < k; ++j) v(j) = rng.uniform(-2.0, 2.0);
    const Eigen::VectorXd p = project_simplex(v);
    CHECK((p - brute_force_projection(v)).cwiseAbs().maxCoeff() < 1e-12);
    CHECK(p.minCoeff() >= 0.0);
    CHECK(std::abs(p.sum() - 1.0) <= 1e-12);
  }
}

TEST_CASE("solve_weights examples") {
  SUBCASE("K = 1") {
    const GridSpec g = GridSpec::cube(6, 1.0);
    const Mask mask = box_mask(g, 1, 4);
    BoundaryData bd;
    bd.voxels = boundary_voxels(g, mask);
    bd.values = Eigen::MatrixXd::Ones(static_cast<Eigen::Index>(bd.voxels.size()), 1);
    WeightSolveReport report;
    const WeightField f = solve_weights(bd, g, mask, 1, {}, &report);
    CHECK(report.iterations == 0);
    for (double w : f.weights.data) CHECK(w == 1.0);
  }
  SUBCASE("1-D bar converges to a linear ramp") {
    Eigen::VectorXd l(2), r(2);
    l << 1, 0;
    r << 0, 1;
    const Bar b = bar(21, l, r);
    WeightSolverOptions options;
    options.tol = 1e-8;
    options.max_iters = 100000;
    const WeightField f = solve_weights(b.boundary, b.grid, b.mask, 2, options);
    double worst = 0.0;
    for (int i = 0; i < 21; ++i) worst = std::max(worst, std::abs(f.weights.at(i, 1) - i / 20.0));
    CHECK(worst <= 1e-3);
  }
  SUBCASE("constant Dirichlet data gives a constant field") {
    const GridSpec g = GridSpec::cube(10, 1.0);
    const Mask mask = box_mask(g, 1, 8);
    BoundaryData bd;
    bd.voxels = boundary_voxels(g, mask);
    bd.values = Eigen::MatrixXd::Constant(static_cast<Eigen::Index>(bd.voxels.size()), 2, 0.5);
    WeightSolverOptions options;
    options.tol = 1e-11;
    const WeightField f = solve_weights(bd, g, mask, 2, options);
    for (std::size_t v = 0; v < g.voxel_count(); ++v) {
      if (mask[v]) CHECK(std::abs(f.weights.at(v, 0) - 0.5) < 1e-9);
    }
  }
}

TEST_CASE("rasterize_boundary_weights examples") {
  PhantomSpec spec;
  spec.preset = TreePreset::Chain;
  spec.parts = 2;
  spec.resolution = 40;
  const Phantom ph = build_phantom(spec);

  SUBCASE("single part") {
    const Eigen::MatrixXd ones = Eigen::MatrixXd::Ones(ph.mesh.vertex_count(), 1);
    const BoundaryData bd = rasterize_boundary_weights(ph.mesh, ones, ph.grid, ph.mask);
    CHECK(bd.voxels == boundary_voxels(ph.grid, ph.mask));
    for (Eigen::Index i = 0; i < bd.values.rows(); ++i) CHECK(bd.values(i, 0) == doctest::Approx(1.0).epsilon(1e-12));
  }
  SUBCASE("nearest surface point oracle") {
    const BoundaryData bd = rasterize_boundary_weights(ph.mesh, ph.vertex_weights, ph.grid, ph.mask);
    int far_end = 0;
    for (std::size_t b = 0; b < bd.voxels.size(); ++b) {
      const Vec3 x = ph.grid.world(bd.voxels[b]);
      // Exhaustive nearest triangle.
      double best = 1e300;
      Eigen::VectorXd oracle;
      for (int f = 0; f < ph.mesh.face_count(); ++f) {
        const Eigen::Vector3i tri = ph.mesh.faces.row(f);
        const auto c = closest_point_on_triangle(x, ph.mesh.vertex(tri.x()), ph.mesh.vertex(tri.y()),
                                                 ph.mesh.vertex(tri.z()));
        if (c.distance2 < best) {
          best = c.distance2;
          oracle = c.barycentric.x() * ph.vertex_weights.row(tri.x()).transpose() +
                   c.barycentric.y() * ph.vertex_weights.row(tri.y()).transpose() +
                   c.barycentric.z() * ph.vertex_weights.row(tri.z()).transpose();
        }
      }
      CHECK((bd.values.row(static_cast<Eigen::Index>(b)).transpose() - oracle).cwiseAbs().maxCoeff() < 1e-9);
      // Part 1 occupies x > joint + band; its far end is pure.
      if (x.x() > ph.tree.rest_joints[1].x() + 30.0) {
        ++far_end;
        CHECK(bd.values(static_cast<Eigen::Index>(b), 1) > 0.99);
      }
    }
    CHECK(far_end > 0);
  }
  SUBCASE("piecewise-constant region labels") {
    Eigen::MatrixXd labels = Eigen::MatrixXd::Zero(ph.mesh.vertex_count(), 2);
    for (int n = 0; n < ph.mesh.vertex_count(); ++n) labels(n, ph.mesh.vertices(n, 0) > 0.0 ? 1 : 0) = 1.0;
    const BoundaryData bd = rasterize_boundary_weights(ph.mesh, labels, ph.grid, ph.mask);
    for (std::size_t b = 0; b < bd.voxels.size(); ++b) {
      const Vec3 x = ph.grid.world(bd.voxels[b]);
      if (std::abs(x.x()) < 8.0) continue;  // triangles straddling the cut interpolate
      CHECK(bd.values(static_cast<Eigen::Index>(b), x.x() > 0 ? 1 : 0) == doctest::Approx(1.0));
    }
  }
  SUBCASE("empty boundary") {
    const Mask empty(ph.grid.voxel_count(), 0);
    CHECK_THROWS_AS(rasterize_boundary_weights(ph.mesh, ph.vertex_weights, ph.grid, empty), EmptyBoundary);
  }
}

TEST_CASE("property: solver invariants on a phantom") {
  PhantomSpec spec;
  spec.preset = TreePreset::Chain;
  spec.parts = 3;
  spec.resolution = 36;
  const Phantom ph = build_phantom(spec);
  const BoundaryData bd = rasterize_boundary_weights(ph.mesh, ph.vertex_weights, ph.grid, ph.mask);
  WeightSolverOptions options;
  options.max_iters = 3000;
  WeightSolveReport report;
  const WeightField f = solve_weights(bd, ph.grid, ph.mask, 3, options, &report);

  check_simplex(f, ph.mask);
  for (std::size_t b = 0; b < bd.voxels.size(); ++b) {
    for (int k = 0; k < 3; ++k) CHECK(f.weights.at(bd.voxels[b], k) == bd.values(static_cast<Eigen::Index>(b), k));
  }
  // Energy non-increasing.
  for (std::size_t i = 1; i < report.energy.size(); ++i) CHECK(report.energy[i] <= report.energy[i - 1] + 1e-12);
  // Discrete maximum principle per channel.
  for (int k = 0; k < 3; ++k) {
    const double lo = bd.values.col(k).minCoeff(), hi = bd.values.col(k).maxCoeff();
    for (std::size_t v = 0; v < ph.mask.size(); ++v) {
      if (!ph.mask[v]) continue;
      CHECK(f.weights.at(v, k) >= lo - 1e-6);
      CHECK(f.weights.at(v, k) <= hi + 1e-6);
    }
  }
  CHECK(report.mask_connected);

  // Permuting the channels of the boundary data permutes the solution.
  const std::vector<int> perm = {2, 0, 1};
  BoundaryData permuted = bd;
  for (int k = 0; k < 3; ++k) permuted.values.col(k) = bd.values.col(perm[k]);
  WeightSolveReport report_p;
  const WeightField fp = solve_weights(permuted, ph.grid, ph.mask, 3, options, &report_p);
  CHECK(report_p.iterations == report.iterations);
  bool identical = true;
  for (std::size_t v = 0; v < ph.grid.voxel_count(); ++v) {
    for (int k = 0; k < 3; ++k) identical = identical && fp.weights.at(v, k) == f.weights.at(v, perm[k]);
  }
  CHECK(identical);
}

TEST_CASE("solver reports divergence for an unstable step") {
  Eigen::VectorXd l(2), r(2);
  l << 1, 0;
  r << 0, 1;
  Bar b = bar(30, l, r);
  // Start far from the ramp so energy has room to grow.
  WeightSolverOptions options;
  options.step = 5.0;
  options.max_iters = 200;
  CHECK_THROWS_AS(solve_weights(b.boundary, b.grid, b.mask, 2, options), Diverged);
}

TEST_CASE("Dirichlet energy of a linear ramp") {
  GridSpec g;
  g.dims = {5, 1, 1};
  g.spacing = Vec3(2.0, 1.0, 1.0);
  VolumeGrid w = VolumeGrid::zeros(g, 1);
  for (int i = 0; i < 5; ++i) w.at(i) = 0.1 * i;
  const Mask mask(5, 1);
  // Four x-edges, each |0.1|^2 * V / h^2 with V = 2.
  CHECK(dirichlet_energy(w, mask) == doctest::Approx(4 * 0.01 * 2.0 / 4.0));
  Mask split = mask;
  split[2] = 0;
  CHECK_FALSE(mask_connected(g, split));
}
