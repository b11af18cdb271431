// Acceptance run: one PASS/FAIL line per criterion with the measured values
// and the pinned tolerances. Exit status is 0 when the set of failing
// criteria equals the --expect-fail list (default: empty).

#include <CLI11.hpp>
#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <map>
#include <set>
#include <sstream>

#include "cli.hpp"
#include "ktpr/error.hpp"
#include "ktpr/flow.hpp"
#include "ktpr/groupwise.hpp"
#include "ktpr/io.hpp"
#include "ktpr/metrics.hpp"
#include "ktpr/parallel.hpp"
#include "ktpr/phantom.hpp"
#include "ktpr/weights.hpp"
#include "support.hpp"

using namespace ktpr;
using ktpr::test::Random;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(double x, int precision = 4) {
  std::ostringstream s;
  s << std::setprecision(precision) << x;
  return s.str();
}

// Biped joint indices.
constexpr int kUpperArmL = 2, kUpperArmR = 3, kForearmL = 4, kForearmR = 5, kThighL = 6, kThighR = 7, kShinL = 8,
              kShinR = 9;

Pose biped_pose(double shoulder, double elbow, double hip, double knee) {
  Pose p = Pose::zero(10);
  p.theta[kUpperArmL] = Vec3(0, shoulder, 0);
  p.theta[kUpperArmR] = Vec3(0, -shoulder, 0);
  p.theta[kForearmL] = Vec3(0, elbow, 0);
  p.theta[kForearmR] = Vec3(0, -elbow, 0);
  p.theta[kThighL] = Vec3(hip, 0, 0);
  p.theta[kThighR] = Vec3(hip, 0, 0);
  p.theta[kShinL] = Vec3(-knee, 0, 0);
  p.theta[kShinR] = Vec3(-knee, 0, 0);
  return p;
}

Phantom biped(int resolution) {
  PhantomSpec spec;
  spec.resolution = resolution;
  return build_phantom(spec);
}

Phantom chain(int parts, int resolution) {
  PhantomSpec spec;
  spec.preset = TreePreset::Chain;
  spec.parts = parts;
  spec.resolution = resolution;
  return build_phantom(spec);
}

WeightField solve_phantom_weights(const Phantom& ph, WeightSolveReport* report = nullptr) {
  const BoundaryData bd = rasterize_boundary_weights(ph.mesh, ph.vertex_weights, ph.grid, ph.mask);
  return solve_weights(bd, ph.grid, ph.mask, ph.parts(), {}, report);
}

// Simplex to 1e-6 and the per-channel maximum principle on the mask.
bool weights_valid(const WeightField& f, const Mask& mask, const Eigen::MatrixXd& boundary_values) {
  for (std::size_t v = 0; v < mask.size(); ++v) {
    if (!mask[v]) continue;
    double sum = 0.0;
    for (int k = 0; k < f.parts(); ++k) {
      const double w = f.weights.at(v, k);
      if (w < -1e-6) return false;
      if (w < boundary_values.col(k).minCoeff() - 1e-6 || w > boundary_values.col(k).maxCoeff() + 1e-6) return false;
      sum += w;
    }
    if (std::abs(sum - 1.0) > 1e-6) return false;
  }
  return true;
}

Outcome lie_roundtrip() {
  const auto t0 = std::chrono::steady_clock::now();
  Random rng(1);
  double worst = 0.0;
  for (int i = 0; i < 1000; ++i) {
    const Twist xi(rng.unit_vector() * rng.uniform(0.0, 3.0), rng.in_ball(100.0));
    const Twist back = se3_log(se3_exp(xi));
    worst = std::max(worst, (back.vector() - xi.vector()).cwiseAbs().maxCoeff());
  }
  const double t = seconds_since(t0);
  return {worst <= 1e-9 && t < 1.0,
          "max roundtrip error " + fmt(worst) + " (<= 1e-9), " + fmt(t, 3) + " s (< 1 s)"};
}

Outcome weight_solver() {
  // 1-D bar of 21 voxels pinned to (1,0) and (0,1) at its ends.
  GridSpec line;
  line.dims = {21, 1, 1};
  const Mask bar_mask(21, 1);
  BoundaryData bar;
  bar.voxels = {0, 20};
  bar.values.resize(2, 2);
  bar.values << 1, 0, 0, 1;
  WeightSolverOptions options;
  options.tol = 1e-8;
  options.max_iters = 100000;
  const WeightField ramp = solve_weights(bar, line, bar_mask, 2, options);
  double ramp_err = 0.0;
  for (int i = 0; i < 21; ++i) ramp_err = std::max(ramp_err, std::abs(ramp.weights.at(static_cast<std::size_t>(i), 1) - i / 20.0));
  bool valid = weights_valid(ramp, bar_mask, bar.values);

  const int saved = thread_count();
  set_thread_count(1);
  const Phantom ph = chain(2, 64);
  const BoundaryData bd = rasterize_boundary_weights(ph.mesh, ph.vertex_weights, ph.grid, ph.mask);
  const auto t0 = std::chrono::steady_clock::now();
  WeightSolveReport report;
  const WeightField f = solve_weights(bd, ph.grid, ph.mask, ph.parts(), {}, &report);
  const double t = seconds_since(t0);
  set_thread_count(saved);
  valid = valid && weights_valid(f, ph.mask, bd.values);

  return {ramp_err <= 1e-3 && valid && report.converged && t < 60.0,
          "bar ramp error " + fmt(ramp_err) + " (<= 1e-3), simplex+max principle " + (valid ? "ok" : "violated") +
              ", 64^3 two-part solve " + fmt(t, 3) + " s single-thread (< 60 s), " + std::to_string(report.iterations) +
              " iters" + (report.converged ? "" : " NOT converged")};
}

Outcome table_ordering() {
  const auto t0 = std::chrono::steady_clock::now();
  const Phantom ph = biped(96);
  const WeightField w = solve_phantom_weights(ph);
  // Elbows and hips at 2.6 rad, every other joint at rest.
  const Pose pose = biped_pose(0.0, 2.6, 2.6, 0.0);
  const std::vector<DeformMethod> methods = {DeformMethod::LBS, DeformMethod::PolyRigid, DeformMethod::KTPolyRigid};
  const std::vector<SweepPose> sweep = {{2.6, pose}};
  const auto rows = compare_methods(ph.tree, w.weights, ph.mask, sweep, methods);
  std::map<DeformMethod, ComparisonRow> by;
  for (const auto& r : rows) by[r.method] = r;
  const ComparisonRow &lbs = by[DeformMethod::LBS], &poly = by[DeformMethod::PolyRigid], &kt = by[DeformMethod::KTPolyRigid];
  const double t = seconds_since(t0);

  const bool folds_ok = kt.status == "ok" && lbs.status == "ok" &&
                        kt.report.fold_percent <= 0.9 * lbs.report.fold_percent;
  const bool poly_ok = poly.status == "BranchAmbiguity" ||
                       (poly.status == "ok" && poly.report.fold_percent > kt.report.fold_percent);
  const bool std_ok = kt.report.std_log2_absdet <= lbs.report.std_log2_absdet;
  std::string poly_text = poly.status == "ok" ? fmt(poly.report.fold_percent) + "%" : poly.status;
  return {folds_ok && poly_ok && std_ok && t < 300.0,
          "folds KT " + fmt(kt.report.fold_percent) + "% vs LBS " + fmt(lbs.report.fold_percent) +
              "% (KT <= 0.9 LBS: " + (folds_ok ? "yes" : "no") + "), Poly " + poly_text + " (> KT or BranchAmbiguity: " +
              (poly_ok ? "yes" : "no") + "), std KT " + fmt(kt.report.std_log2_absdet) + " vs LBS " +
              fmt(lbs.report.std_log2_absdet) + " (KT <= LBS: " + (std_ok ? "yes" : "no") + "), " + fmt(t, 3) +
              " s (< 300 s)"};
}

double blend_disagreement(const Phantom& ph, const std::vector<RigidTransform>& transforms) {
  const ArticulatedBlend lbs(DeformMethod::LBS, transforms), poly(DeformMethod::PolyRigid, transforms),
      kt(DeformMethod::KTPolyRigid, transforms);
  double worst = 0.0;
  for (std::size_t v = 0; v < ph.grid.voxel_count(); ++v) {
    if (!ph.mask[v]) continue;
    const Vec3 x = ph.grid.world(v);
    const auto w = ph.weights.voxel(v);
    const Vec3 a = lbs(x, w), b = poly(x, w), c = kt(x, w);
    worst = std::max({worst, (a - b).norm(), (a - c).norm(), (b - c).norm()});
  }
  return worst;
}

Outcome near_identity() {
  const Phantom ph = biped(64);
  Random rng(4);
  double worst = 0.0, chained = 0.0;
  for (int trial = 0; trial < 5; ++trial) {
    // Per-part transforms: rotation <= 0.05 rad, translation <= 0.5 mm.
    std::vector<RigidTransform> t;
    for (int k = 0; k < ph.parts(); ++k) t.push_back(rng.rigid(0.05, 0.5));
    worst = std::max(worst, blend_disagreement(ph, t));
    // Joint angles <= 0.05 rad pushed through the tree; reported only.
    Pose pose = Pose::zero(ph.parts());
    for (Vec3& theta : pose.theta) theta = rng.unit_vector() * rng.uniform(0.0, 0.05);
    chained = std::max(chained, blend_disagreement(ph, forward_kinematics(ph.tree, pose)));
  }
  return {worst <= 0.01, "max pairwise difference " + fmt(worst) +
                             " mm over 5 draws, part rotations <= 0.05 rad, translations <= 0.5 mm (<= 0.01 mm); "
                             "joint angles <= 0.05 rad through the tree give " + fmt(chained) + " mm (not scored)"};
}

std::vector<Vec3> interior_points(const SurfaceMesh& mesh, Random& rng, int count) {
  std::vector<Vec3> out;
  const Vec3 lo = mesh.vertices.colwise().minCoeff().transpose(), hi = mesh.vertices.colwise().maxCoeff().transpose();
  const TriangleLocator locator(mesh);
  while (static_cast<int>(out.size()) < count) {
    const Vec3 p(rng.uniform(lo.x(), hi.x()), rng.uniform(lo.y(), hi.y()), rng.uniform(lo.z(), hi.z()));
    if (winding_number(mesh, p) > 0.5 && std::sqrt(locator.closest(p).distance2) > 1e-3) out.push_back(p);
  }
  return out;
}

Outcome mvc() {
  Random rng(5);
  double lin = 0.0, unity = 0.0;
  const SurfaceMesh sphere = test::icosphere(2, 10.0);
  const SurfaceMesh box = test::box_mesh(Vec3(-3, -2, -1), Vec3(4, 2, 3));
  for (const SurfaceMesh* mesh : {&sphere, &box}) {
    const double diag = mesh->bounding_box_diagonal();
    for (const Vec3& x : interior_points(*mesh, rng, 1000)) {
      const Eigen::VectorXd w = mvc_weights(x, *mesh);
      lin = std::max(lin, ((w.transpose() * mesh->vertices).transpose() - x).norm() / diag);
      unity = std::max(unity, std::abs(w.sum() - 1.0));
    }
  }
  const SurfaceMesh tet = test::regular_tetrahedron(5.0);
  const Vec3 centroid = tet.vertices.colwise().mean().transpose();
  const double centroid_err = (mvc_weights(centroid, tet).array() - 0.25).abs().maxCoeff();
  return {lin <= 1e-6 && unity <= 1e-6 && centroid_err <= 1e-9,
          "linear precision " + fmt(lin) + ", partition of unity " + fmt(unity) + " (<= 1e-6, 2 x 1000 points), " +
              "tetra centroid " + fmt(centroid_err) + " (<= 1e-9)"};
}

Outcome flow_convergence() {
  const SurfaceMesh sphere = test::icosphere(2, 10.0);
  Random rng(6);
  const std::vector<Vec3> points = interior_points(sphere, rng, 200);
  const Eigen::VectorXd zero = Eigen::VectorXd::Zero(1), one = Eigen::VectorXd::Ones(1);

  ShapeBasis scaling;
  scaling.mean_vertices = sphere.vertices;
  scaling.components = {sphere.vertices};
  auto scaling_error = [&](int steps) {
    const FlowResult r = integrate_flow({zero, one, steps}, scaling, sphere, points);
    double worst = 0.0;
    for (std::size_t i = 0; i < points.size(); ++i) worst = std::max(worst, (r.points[i] - 2.0 * points[i]).norm());
    return worst;
  };
  const double e8 = scaling_error(8), e64 = scaling_error(64);
  const double ratio = e64 > 0.0 ? e8 / e64 : (e8 > 0.0 ? INFINITY : 1.0);

  ShapeBasis shift;
  shift.mean_vertices = sphere.vertices;
  Eigen::MatrixX3d d(sphere.vertex_count(), 3);
  d.rowwise() = Eigen::RowVector3d(2.0, -1.0, 0.5);
  shift.components = {d};
  const FlowResult r = integrate_flow({zero, one, 16}, shift, sphere, points);
  double trans = 0.0;
  for (std::size_t i = 0; i < points.size(); ++i) {
    trans = std::max(trans, (r.points[i] - points[i] - Vec3(2.0, -1.0, 0.5)).norm());
  }
  return {ratio >= 3.5 && trans <= 1e-6,
          "scaling endpoint error 8 steps " + fmt(e8) + ", 64 steps " + fmt(e64) + ", ratio " + fmt(ratio) +
              " (>= 3.5), translation error " + fmt(trans) + " (<= 1e-6)"};
}

Outcome inversion() {
  const Phantom ph = biped(64);
  const auto transforms = forward_kinematics(ph.tree, biped_pose(0.0, 2.0, 0.0, 0.0));
  const DenseField fwd = sample_dense(ArticulatedDeformation(ArticulatedBlend(DeformMethod::KTPolyRigid, transforms), ph.weights), ph.grid);
  InversionOptions options;
  options.source_mask = ph.mask;
  const InverseField inv = invert_field(fwd, options);
  const double tol = 0.05 * ph.grid.spacing.minCoeff();
  std::size_t covered = 0, good = 0;
  for (std::size_t v = 0; v < ph.grid.voxel_count(); ++v) {
    if (!inv.covered[v]) continue;
    ++covered;
    // Independent residual: push the inverse through the forward field.
    const Vec3 x = ph.grid.world(v);
    const Vec3 y = inv.field.map(x);
    if ((fwd.map(y) - x).norm() <= tol) ++good;
  }
  const double pct = covered ? 100.0 * static_cast<double>(good) / static_cast<double>(covered) : 0.0;
  return {pct >= 99.0, "biped 64^3, elbows 2.0 rad: " + fmt(pct, 6) + "% of " + std::to_string(covered) +
                           " covered interior voxels within 0.05 voxel (>= 99%)"};
}

Outcome groupwise_recovery() {
  const auto t0 = std::chrono::steady_clock::now();
  const Phantom ph = chain(2, 64);
  Pose pose = Pose::zero(2);
  pose.theta[1] = Vec3(0, 0, 0.5);
  const VolumeGrid native = pose_phantom(ph, pose);
  const std::vector<RigidTransform> truth = forward_kinematics(ph.tree, pose);
  // Copy 3 carries a 0.1 rad rotation about the posed joint on the distal part.
  const Vec3 joint = apply(truth[0], ph.tree.rest_joints[1]);
  const RigidTransform offset = RigidTransform::about_pivot(so3_exp(Vec3(0, 0, 0.1)), joint);
  const Vec6 xi_star = se3_log(offset).vector();

  Cohort cohort;
  cohort.grid = ph.grid;
  cohort.mask = ph.mask;
  for (int s = 0; s < 3; ++s) {
    GroupwiseSubject sub;
    sub.image = native;
    sub.weights = ph.weights;
    sub.transforms = truth;
    if (s == 2) sub.transforms[1] = compose(offset, truth[1]);
    cohort.subjects.push_back(std::move(sub));
  }
  GroupwiseConfig config;
  config.lambda = 1e-6;
  const GroupwiseResult r = optimize(cohort, config);
  const double t = seconds_since(t0);

  bool monotone = true;
  for (std::size_t i = 1; i < r.loss_trace.size(); ++i) monotone = monotone && r.loss_trace[i] <= r.loss_trace[i - 1] + 1e-10;
  const double reduction = 1.0 - r.data_trace.back() / r.data_trace.front();
  // Only relative alignment is observable: compare copy 3 with the mean of the others.
  const Vec6 recovered = r.bank.xi[2][1].vector() - 0.5 * (r.bank.xi[0][1].vector() + r.bank.xi[1][1].vector());
  const double rel = (recovered + xi_star).norm() / xi_star.norm();
  return {reduction >= 0.9 && rel <= 0.3 && monotone && t < 600.0,
          "data term reduced " + fmt(100.0 * reduction) + "% (>= 90%), twist error " + fmt(100.0 * rel) +
              "% of |xi*| (<= 30%), loss trace " + (monotone ? "monotone" : "NOT monotone") + ", " +
              std::to_string(r.iterations) + " iters, " + fmt(t, 3) + " s (< 600 s)"};
}

Outcome label_transfer() {
  const Phantom ph = biped(96);
  const auto transforms = forward_kinematics(ph.tree, biped_pose(0.5, 1.0, 0.5, 1.0));
  const DenseField fwd = sample_dense(ArticulatedDeformation(ArticulatedBlend(DeformMethod::KTPolyRigid, transforms), ph.weights), ph.grid);
  InversionOptions options;
  options.source_mask = ph.mask;
  const InverseField inv = invert_field(fwd, options);
  const VolumeGrid native = resample_labels(ph.labels, inv.field);
  const VolumeGrid back = resample_labels(native, fwd);
  double sum = 0.0, worst = 1.0;
  for (std::size_t o = 0; o < ph.organs.size(); ++o) {
    const double label = static_cast<double>(o + 1);
    double a = 0, b = 0, both = 0;
    for (std::size_t v = 0; v < ph.grid.voxel_count(); ++v) {
      const bool in_a = ph.labels.at(v) == label, in_b = back.at(v) == label;
      a += in_a;
      b += in_b;
      both += in_a && in_b;
    }
    const double dice = 2.0 * both / (a + b);
    sum += dice;
    worst = std::min(worst, dice);
  }
  const double mean = sum / static_cast<double>(ph.organs.size());
  return {mean >= 0.95, "biped 96^3, mean organ Dice " + fmt(mean) + " (>= 0.95), lowest " + fmt(worst) + " over " +
                            std::to_string(ph.organs.size()) + " organs"};
}

std::string file_bytes(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

Outcome determinism() {
  auto pipeline = [](const fs::path& dir) {
    fs::remove_all(dir);
    fs::create_directories(dir);
    std::ostringstream out, err;
    auto run = [&](std::vector<std::string> args) {
      args.insert(args.begin(), {"--threads", "2"});
      if (cli_dispatch(args, out, err) != 0) throw std::runtime_error(err.str());
    };
    const std::string d = dir.string() + "/";
    run({"phantom", "--out", d, "--seed", "7", "--resolution", "64"});
    write_pose(biped_pose(0.4, 1.2, 0.3, 0.8), dir / "bent.json");
    run({"weights", "--mesh", d + "mesh.obj", "--vertex-weights", d + "vertex_weights.json", "--grid", d + "image.json",
         "--mask", d + "mask.json", "--out", d + "solved.json"});
    run({"deform", "--model", d + "model.json", "--pose", d + "bent.json", "--weights", d + "solved.json", "--out",
         d + "field.json"});
    run({"metrics", "--field", d + "field.json", "--mask", d + "mask.json", "--out", d + "metrics.csv"});
  };
  const fs::path base = fs::temp_directory_path() / "ktpr_acceptance_determinism";
  pipeline(base / "a");
  pipeline(base / "b");
  std::vector<std::string> differing;
  int compared = 0;
  for (const auto& entry : fs::directory_iterator(base / "a")) {
    ++compared;
    const fs::path name = entry.path().filename();
    if (file_bytes(entry.path()) != file_bytes(base / "b" / name)) differing.push_back(name.string());
  }
  std::string detail = std::to_string(compared) + " files compared, ";
  detail += differing.empty() ? "all bit-identical" : std::to_string(differing.size()) + " differ (first: " + differing[0] + ")";
  fs::remove_all(base);
  return {differing.empty() && compared > 0, detail};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria"};
  std::vector<int> expect_fail, only;
  app.add_option("--expect-fail", expect_fail, "Criteria known to fail")->delimiter(',');
  app.add_option("--only", only, "Run a subset")->delimiter(',');
  CLI11_PARSE(app, argc, argv);

  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"Lie roundtrip", lie_roundtrip},
      {"Weight solver", weight_solver},
      {"Fold ordering (biped 96^3, elbows/hips 2.6 rad)", table_ordering},
      {"Near-identity agreement", near_identity},
      {"MVC precision", mvc},
      {"Flow convergence", flow_convergence},
      {"Inversion roundtrip", inversion},
      {"Groupwise recovery", groupwise_recovery},
      {"Label transfer", label_transfer},
      {"Determinism", determinism},
  };
  std::set<int> failed;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!only.empty() && std::find(only.begin(), only.end(), id) == only.end()) continue;
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    if (!o.pass) failed.insert(id);
    std::cout << "criterion " << std::setw(2) << id << ": " << (o.pass ? "PASS" : "FAIL") << "  " << criteria[i].first
              << ": " << o.detail << std::endl;
  }
  std::set<int> expected(expect_fail.begin(), expect_fail.end());
  if (!only.empty()) {
    std::set<int> subset;
    for (int id : expected)
      if (std::find(only.begin(), only.end(), id) != only.end()) subset.insert(id);
    expected = subset;
  }
  std::cout << failed.size() << " failing";
  if (!expected.empty()) {
    std::cout << " (expected:";
    for (int id : expected) std::cout << ' ' << id;
    std::cout << ")";
  }
  std::cout << std::endl;
  return failed == expected ? 0 : 1;
}
