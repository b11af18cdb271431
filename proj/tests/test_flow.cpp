#include <doctest.h>

#include <algorithm>
#include <numbers>

#include "ktpr/error.hpp"
#include "ktpr/flow.hpp"
#include "ktpr/phantom.hpp"
#include "support.hpp"

using namespace ktpr;
using ktpr::test::Random;

namespace {

constexpr double kPi = std::numbers::pi;

// Mean value coordinates by direct quadrature of their defining integral:
// psi_n(x) ∝ ∫_{S^2} phi_n(hit(u)) / r(u) du over ray directions u, where
// hit(u) is the first surface crossing of the ray and phi its barycentric
// weights. Fibonacci-lattice directions, brute-force ray casting.
Eigen::VectorXd mvc_by_quadrature(const Vec3& x, const SurfaceMesh& mesh, int directions) {
  Eigen::VectorXd acc = Eigen::VectorXd::Zero(mesh.vertex_count());
  const double golden = kPi * (3.0 - std::sqrt(5.0));
  for (int i = 0; i < directions; ++i) {
    const double z = 1.0 - 2.0 * (i + 0.5) / directions;
    const double rho = std::sqrt(1.0 - z * z);
    const Vec3 u(rho * std::cos(golden * i), rho * std::sin(golden * i), z);
    double best = 1e300;
    Vec3 bary;
    int face = -1;
    for (int f = 0; f < mesh.face_count(); ++f) {
      const Vec3 a = mesh.vertex(mesh.faces(f, 0)), b = mesh.vertex(mesh.faces(f, 1)), c = mesh.vertex(mesh.faces(f, 2));
      // Möller-Trumbore
      const Vec3 e1 = b - a, e2 = c - a, p = u.cross(e2);
      const double det = e1.dot(p);
      if (std::abs(det) < 1e-14) continue;
      const Vec3 s = x - a;
      const double bu = s.dot(p) / det;
      const Vec3 q = s.cross(e1);
      const double bv = u.dot(q) / det;
      const double t = e2.dot(q) / det;
      if (bu < 0 || bv < 0 || bu + bv > 1 || t <= 0) continue;
      if (t < best) {
        best = t;
        bary = Vec3(1 - bu - bv, bu, bv);
        face = f;
      }
    }
    if (face < 0) continue;
    for (int c = 0; c < 3; ++c) acc(mesh.faces(face, c)) += bary(c) / best;
  }
  return acc / acc.sum();
}

ShapeBasis scaling_basis(const SurfaceMesh& mesh) {
  ShapeBasis basis;
  basis.mean_vertices = mesh.vertices;
  basis.components = {mesh.vertices};
  return basis;
}

Eigen::VectorXd scalar(double b) { return Eigen::VectorXd::Constant(1, b); }

std::vector<Vec3> interior_points(const SurfaceMesh& mesh, Random& rng, int count, double margin) {
  std::vector<Vec3> out;
  const Vec3 lo = mesh.vertices.colwise().minCoeff().transpose(), hi = mesh.vertices.colwise().maxCoeff().transpose();
  const TriangleLocator locator(mesh);
  while (static_cast<int>(out.size()) < count) {
    const Vec3 p(rng.uniform(lo.x(), hi.x()), rng.uniform(lo.y(), hi.y()), rng.uniform(lo.z(), hi.z()));
    if (winding_number(mesh, p) > 0.5 && std::sqrt(locator.closest(p).distance2) > margin) out.push_back(p);
  }
  return out;
}

}  // namespace

TEST_CASE("mvc_weights examples") {
  const SurfaceMesh tet = test::regular_tetrahedron(5.0);
  const Eigen::VectorXd w = mvc_weights(Vec3::Zero(), tet);
  for (int n = 0; n < 4; ++n) CHECK(std::abs(w(n) - 0.25) <= 1e-9);

  const Vec3 toward = 0.999 * tet.vertex(2);
  const Eigen::VectorXd near_vertex = mvc_weights(toward, tet);
  CHECK(near_vertex(2) > 0.9);
  CHECK(mvc_by_quadrature(toward, tet, 200000)(2) > 0.9);

  CHECK_THROWS_AS(mvc_weights(tet.vertex(0), tet), OnSurface);
  const MvcResult snapped = mvc_weights_or_snap(0.5 * (tet.vertex(0) + tet.vertex(1)), tet);
  CHECK(snapped.on_surface);
  CHECK(snapped.weights(0) == doctest::Approx(0.5));
  CHECK(snapped.weights(1) == doctest::Approx(0.5));
}

TEST_CASE("mvc_weights agrees with the defining integral") {
  const SurfaceMesh tet = test::regular_tetrahedron(5.0);
  const SurfaceMesh box = test::box_mesh(Vec3(-3, -2, -1), Vec3(4, 2, 3));
  Random rng(1);
  for (const SurfaceMesh* mesh : {&tet, &box}) {
    for (const Vec3& x : interior_points(*mesh, rng, 10, 0.5)) {
      const Eigen::VectorXd oracle = mvc_by_quadrature(x, *mesh, 100000);
      CHECK((mvc_weights(x, *mesh) - oracle).cwiseAbs().maxCoeff() < 5e-3);
    }
  }
}

TEST_CASE("property: MVC linear precision and partition of unity") {
  const SurfaceMesh sphere = test::icosphere(2, 10.0);
  const SurfaceMesh box = test::box_mesh(Vec3(-3, -2, -1), Vec3(4, 2, 3));
  Random rng(2);
  for (const SurfaceMesh* mesh : {&sphere, &box}) {
    const double diag = mesh->bounding_box_diagonal();
    for (const Vec3& x : interior_points(*mesh, rng, 1000, 1e-3)) {
      const Eigen::VectorXd w = mvc_weights(x, *mesh);
      const Vec3 recon = (w.transpose() * mesh->vertices).transpose();
      CHECK((recon - x).norm() / diag <= 1e-6);
      CHECK(std::abs(w.sum() - 1.0) <= 1e-9);
    }
  }
}

TEST_CASE("boundary_velocity examples") {
  ShapeBasis basis;
  basis.mean_vertices = Eigen::MatrixX3d::Random(5, 3);
  basis.components = {Eigen::MatrixX3d::Random(5, 3), Eigen::MatrixX3d::Random(5, 3)};
  Eigen::VectorXd a(2), b(2);
  a << 0.3, -0.2;
  b << 1.3, -0.2;
  CHECK(boundary_velocity(basis, a, a).isZero(0.0));
  CHECK((boundary_velocity(basis, a, b) - basis.components[0]).cwiseAbs().maxCoeff() < 1e-15);
  CHECK((boundary_velocity(basis, a, a + 2 * (b - a)) - 2 * boundary_velocity(basis, a, b)).cwiseAbs().maxCoeff() <
        1e-15);
  CHECK_THROWS_AS(boundary_velocity(basis, a, Eigen::VectorXd::Zero(3)), DimensionMismatch);
}

TEST_CASE("integrate_flow examples") {
  const SurfaceMesh sphere = test::icosphere(2, 10.0);
  Random rng(3);
  const std::vector<Vec3> points = interior_points(sphere, rng, 50, 0.5);

  SUBCASE("zero velocity") {
    const ShapeBasis basis = scaling_basis(sphere);
    FlowSpec spec{scalar(0.4), scalar(0.4)};
    const FlowResult r = integrate_flow(spec, basis, sphere, points);
    CHECK(r.points == points);
  }
  SUBCASE("constant velocity is an exact translation") {
    ShapeBasis basis;
    basis.mean_vertices = sphere.vertices;
    Eigen::MatrixX3d shift(sphere.vertex_count(), 3);
    shift.rowwise() = Eigen::RowVector3d(2.0, -1.0, 0.5);
    basis.components = {shift};
    for (int steps : {1, 7, 16}) {
      FlowSpec spec{scalar(0.0), scalar(1.0), steps};
      const FlowResult r = integrate_flow(spec, basis, sphere, points);
      for (std::size_t i = 0; i < points.size(); ++i) {
        CHECK((r.points[i] - points[i] - Vec3(2.0, -1.0, 0.5)).norm() <= 1e-6);
        CHECK(r.status[i] == PointStatus::Ok);
      }
    }
  }
  SUBCASE("uniform scaling") {
    // Every trajectory is the straight line x(t) = (1 + t) x0, so explicit
    // Euler telescopes to 2 x0 at any step count.
    const ShapeBasis basis = scaling_basis(sphere);
    for (int steps : {1, 8, 64}) {
      const FlowResult r = integrate_flow({scalar(0.0), scalar(1.0), steps}, basis, sphere, points);
      for (std::size_t i = 0; i < points.size(); ++i) CHECK((r.points[i] - 2.0 * points[i]).norm() <= 1e-12);
    }
  }
  SUBCASE("curved flow converges at first order") {
    // Vertex velocity quadratic in position: trajectories are not straight,
    // so Euler has a genuine O(dt) error against a fine reference.
    ShapeBasis basis;
    basis.mean_vertices = sphere.vertices;
    Eigen::MatrixX3d swirl(sphere.vertex_count(), 3);
    for (int n = 0; n < sphere.vertex_count(); ++n) {
      const Vec3 v = sphere.vertex(n);
      swirl.row(n) << 0.05 * v.y() * v.z(), -0.4 * v.x(), 0.03 * v.x() * v.x();
    }
    basis.components = {swirl};
    auto run = [&](int steps) { return integrate_flow({scalar(0.0), scalar(1.0), steps}, basis, sphere, points).points; };
    const auto reference = run(2048);
    auto error = [&](int steps) {
      const auto p = run(steps);
      double worst = 0.0;
      for (std::size_t i = 0; i < p.size(); ++i) worst = std::max(worst, (p[i] - reference[i]).norm());
      return worst;
    };
    const double e8 = error(8), e64 = error(64);
    CHECK(e8 > 1e-6);
    CHECK(e8 / e64 >= 3.5);
  }
  SUBCASE("step count must be positive") {
    FlowSpec spec{scalar(0.0), scalar(1.0), 0};
    CHECK_THROWS_AS(integrate_flow(spec, scaling_basis(sphere), sphere, points), SpecInvalid);
  }
}

TEST_CASE("flow_field on a translation") {
  const SurfaceMesh sphere = test::icosphere(1, 8.0);
  ShapeBasis basis;
  basis.mean_vertices = sphere.vertices;
  Eigen::MatrixX3d shift(sphere.vertex_count(), 3);
  shift.rowwise() = Eigen::RowVector3d(1.0, 0.0, 0.0);
  basis.components = {shift};
  const GridSpec g = GridSpec::cube(12, 2.0);
  const Mask mask = voxelize(sphere, g);
  std::vector<PointStatus> status;
  const DenseField f = flow_field({scalar(0.0), scalar(1.0), 4}, basis, sphere, g, mask, &status);
  CHECK(f.kind == FieldKind::Flow);
  for (std::size_t v = 0; v < g.voxel_count(); ++v) CHECK((f.displacement.vec3(v) - Vec3(1, 0, 0)).norm() < 1e-9);
}

TEST_CASE("property: flow composition consistency") {
  PhantomSpec spec;
  spec.preset = TreePreset::Chain;
  spec.parts = 2;
  spec.mesh_cell = 8.0;
  spec.resolution = 24;
  const Phantom ph = build_phantom(spec);
  Random rng(4);
  const std::vector<Vec3> points = interior_points(ph.mesh, rng, 60, 2.0);
  Eigen::VectorXd beta_s(ph.shape.beta_dim());
  for (int j = 0; j < beta_s.size(); ++j) beta_s(j) = rng.uniform(-1.5, 1.5);
  const Eigen::VectorXd zero = Eigen::VectorXd::Zero(beta_s.size());
  const Eigen::VectorXd mid = 0.5 * beta_s;

  SurfaceMesh start = ph.mesh;
  start.vertices = shape_vertices(ph.shape, beta_s);
  SurfaceMesh middle = ph.mesh;
  middle.vertices = shape_vertices(ph.shape, mid);

  const int steps = 8;
  const FlowResult direct = integrate_flow({beta_s, zero, steps}, ph.shape, start, points);
  const FlowResult fine = integrate_flow({beta_s, zero, 2 * steps}, ph.shape, start, points);
  const FlowResult leg1 = integrate_flow({beta_s, mid, steps}, ph.shape, start, points);
  const FlowResult leg2 = integrate_flow({mid, zero, steps}, ph.shape, middle, leg1.points);
  for (std::size_t i = 0; i < points.size(); ++i) {
    const double bound = (direct.points[i] - fine.points[i]).norm();
    CHECK((leg2.points[i] - direct.points[i]).norm() <= 2.0 * bound + 1e-9);
  }
}

TEST_CASE("property: phantom shape flows stay locally injective") {
  // Each tracked point with three nearby neighbours spans a tetrahedron; an
  // injective, orientation-preserving flow keeps the sign of its volume
  // wherever the volume clearly exceeds what the Euler error could flip.
  PhantomSpec spec;
  spec.preset = TreePreset::Chain;
  spec.parts = 2;
  spec.mesh_cell = 10.0;
  spec.resolution = 24;
  const Phantom ph = build_phantom(spec);
  Random rng(5);
  Eigen::VectorXd beta_s(ph.shape.beta_dim());
  for (int j = 0; j < beta_s.size(); ++j) beta_s(j) = rng.uniform(-1.5, 1.5);
  const Eigen::VectorXd zero = Eigen::VectorXd::Zero(beta_s.size());
  SurfaceMesh start = ph.mesh;
  start.vertices = shape_vertices(ph.shape, beta_s);
  const std::vector<Vec3> points = interior_points(start, rng, 10000, 0.5);
  const FlowResult coarse = integrate_flow({beta_s, zero, 8}, ph.shape, start, points);
  const FlowResult fine = integrate_flow({beta_s, zero, 16}, ph.shape, start, points);
  double bound = 0.0;
  for (std::size_t i = 0; i < points.size(); ++i) bound = std::max(bound, (coarse.points[i] - fine.points[i]).norm());

  std::size_t tested = 0, flipped = 0, collided = 0;
  for (std::size_t i = 0; i < points.size(); i += 5) {
    // Three nearest neighbours by brute force.
    std::array<std::pair<double, std::size_t>, 3> nn;
    nn.fill({1e300, 0});
    for (std::size_t j = 0; j < points.size(); ++j) {
      if (j == i) continue;
      const double d = (points[j] - points[i]).squaredNorm();
      if (d < nn[2].first) {
        nn[2] = {d, j};
        std::sort(nn.begin(), nn.end());
      }
    }
    auto volume = [&](const std::vector<Vec3>& p) {
      const Vec3 o = p[i];
      return (p[nn[0].second] - o).dot((p[nn[1].second] - o).cross(p[nn[2].second] - o));
    };
    const double v0 = volume(points);
    const double edge = std::sqrt(nn[2].first);
    // Perturbing each vertex by `bound` changes the volume by at most ~6 edge^2 bound.
    if (std::abs(v0) <= 12.0 * edge * edge * bound) continue;
    ++tested;
    if (std::signbit(volume(coarse.points)) != std::signbit(v0)) ++flipped;
    if ((coarse.points[i] - coarse.points[nn[0].second]).norm() <= 2.0 * bound) ++collided;
  }
  CHECK(tested > 500);
  CHECK(flipped == 0);
  CHECK(collided == 0);
}
