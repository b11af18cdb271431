#include "cli.hpp"

#include <CLI11.hpp>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <iomanip>
#include <sstream>

#include "ktpr/deform.hpp"
#include "ktpr/error.hpp"
#include "ktpr/flow.hpp"
#include "ktpr/groupwise.hpp"
#include "ktpr/io.hpp"
#include "ktpr/metrics.hpp"
#include "ktpr/parallel.hpp"
#include "ktpr/phantom.hpp"
#include "ktpr/render.hpp"
#include "ktpr/weights.hpp"

namespace ktpr {
namespace {

Eigen::VectorXd to_vector(const std::vector<double>& v) {
  return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

Eigen::VectorXd beta_or_zero(const std::vector<double>& v, int dim) {
  if (v.empty()) return Eigen::VectorXd::Zero(dim);
  if (static_cast<int>(v.size()) != dim) {
    throw DimensionMismatch("beta has " + std::to_string(v.size()) + " entries, basis has " + std::to_string(dim));
  }
  return to_vector(v);
}

std::string format_number(double v) {
  std::ostringstream s;
  s << std::setprecision(10) << v;
  return s.str();
}

// ---- phantom ---------------------------------------------------------------

struct PhantomArgs {
  std::string out;
  std::string preset = "biped";
  int parts = 2;
  double length = 60.0;
  double radius = 14.0;
  double scale = 1.0;
  double band = PhantomSpec{}.blend_band;
  int resolution = 96;
  double margin = 12.0;
  double mesh_cell = 5.0;
  int subjects = 0;
  std::uint64_t seed = 1;
  double pose_magnitude = 0.3;
  double beta_sigma = 0.7;
};

// Weight volumes are stored as f32; put each voxel back on the simplex so
// blends of identical transforms stay exact.
VolumeGrid read_weights(const fs::path& path) {
  VolumeGrid w = read_volume(path);
  for (std::size_t v = 0; v < w.voxel_count(); ++v) {
    double* row = &w.at(v);
    double sum = 0.0;
    for (int k = 0; k < w.channels; ++k) sum += row[k];
    if (sum > 0.0) {
      for (int k = 0; k < w.channels; ++k) row[k] /= sum;
    }
  }
  return w;
}

void run_phantom(const PhantomArgs& a, std::ostream& out) {
  PhantomSpec spec;
  if (a.preset == "biped") {
    spec.preset = TreePreset::Biped;
  } else if (a.preset == "chain") {
    spec.preset = TreePreset::Chain;
  } else {
    throw SpecInvalid("unknown preset \"" + a.preset + "\" (biped or chain)");
  }
  spec.parts = a.parts;
  spec.limb_length = a.length;
  spec.limb_radius = a.radius;
  spec.scale = a.scale;
  spec.blend_band = a.band;
  spec.resolution = a.resolution;
  spec.margin = a.margin;
  spec.mesh_cell = a.mesh_cell;
  spec.seed = a.seed;
  const Phantom ph = build_phantom(spec);

  const fs::path dir = a.out;
  fs::create_directories(dir);
  write_model({ph.tree, ph.shape}, dir / "model.json");
  write_mesh(ph.mesh, dir / "mesh.obj");
  write_vertex_weights(ph.vertex_weights, dir / "vertex_weights.json");
  write_volume(ph.image, dir / "image.json");
  write_mask(ph.mask, ph.grid, dir / "mask.json");
  write_volume(ph.labels, dir / "labels.json");
  write_volume(ph.weights, dir / "weights.json");
  write_pose(Pose::zero(ph.parts()), dir / "pose.json");

  if (a.subjects > 0) {
    CohortOptions options;
    options.subjects = a.subjects;
    options.seed = a.seed;
    options.pose_magnitude = a.pose_magnitude;
    options.beta_sigma = a.beta_sigma;
    const auto cohort = generate_cohort(ph, options);
    std::vector<ManifestEntry> entries;
    for (std::size_t s = 0; s < cohort.size(); ++s) {
      std::ostringstream name;
      name << "subject_" << std::setw(2) << std::setfill('0') << s;
      const fs::path sd = dir / name.str();
      fs::create_directories(sd);
      const auto& sub = cohort[s];
      write_volume(sub.native, sd / "image.json");
      write_volume(sub.canonical, sd / "canonical.json");
      write_volume(sub.weights, sd / "weights.json");
      write_model({sub.tree, std::nullopt}, sd / "tree.json");
      write_pose(sub.pose, sd / "pose.json");
      write_mesh(sub.mesh, sd / "mesh.obj");
      write_vertex_weights(ph.vertex_weights, sd / "vertex_weights.json");
      entries.push_back({sd / "image.json", sd / "tree.json", sd / "pose.json", sd / "mesh.obj",
                         sd / "weights.json", sd / "vertex_weights.json", sub.beta});
    }
    write_manifest(entries, dir / "manifest.json");
  }
  out << "phantom: " << ph.parts() << " parts, " << ph.mesh.vertex_count() << " vertices, " << ph.mesh.face_count()
      << " faces, " << count_mask(ph.mask) << " interior voxels, " << a.subjects << " subjects -> " << dir.string()
      << '\n';
}

// ---- weights ---------------------------------------------------------------

struct WeightsArgs {
  std::string mesh, vertex_weights, grid, mask, out, report;
  int max_iters = 20000;
  double tol = 1e-6;
  bool no_validate = false;
};

void run_weights(const WeightsArgs& a, std::ostream& out) {
  const SurfaceMesh mesh = read_mesh(a.mesh, !a.no_validate);
  const Eigen::MatrixXd vw = read_vertex_weights(a.vertex_weights);
  GridSpec grid;
  Mask mask;
  if (!a.mask.empty()) {
    mask = read_mask(a.mask, &grid);
  } else {
    grid = read_volume(a.grid).grid;
  }
  if (mask.empty()) mask = voxelize(mesh, grid);
  const BoundaryData boundary = rasterize_boundary_weights(mesh, vw, grid, mask);
  WeightSolverOptions options;
  options.max_iters = a.max_iters;
  options.tol = a.tol;
  WeightSolveReport report;
  const WeightField field = solve_weights(boundary, grid, mask, static_cast<int>(vw.cols()), options, &report);
  write_volume(field.weights, a.out);
  if (!a.report.empty()) {
    std::ostringstream r;
    r << "{\n  \"iterations\": " << report.iterations << ",\n  \"converged\": " << (report.converged ? "true" : "false")
      << ",\n  \"projected_gradient\": " << format_number(report.projected_gradient)
      << ",\n  \"step\": " << format_number(report.step)
      << ",\n  \"mask_connected\": " << (report.mask_connected ? "true" : "false") << "\n}\n";
    write_text(r.str(), a.report);
  }
  out << "weights: " << report.iterations << " iterations, converged=" << (report.converged ? "yes" : "no")
      << ", max projected gradient " << format_number(report.projected_gradient) << '\n';
}

// ---- deform ----------------------------------------------------------------

struct DeformArgs {
  std::string model, pose, weights, out, method = "ktpolyrigid";
  double branch_epsilon = kDefaultBranchEpsilon;
  double weight_floor = 1e-6;
};

DenseField articulated_field(const std::string& model_path, const std::string& pose_path, const VolumeGrid& weights,
                             DeformMethod method, const BlendOptions& blend) {
  const ModelFile model = read_model(model_path);
  const Pose pose = read_pose(pose_path);
  const auto transforms = forward_kinematics(model.tree, pose);
  const ArticulatedDeformation deformation(ArticulatedBlend(method, transforms, blend), weights);
  return sample_dense(deformation, weights.grid);
}

void run_deform(const DeformArgs& a, std::ostream& out) {
  const VolumeGrid weights = read_weights(a.weights);
  BlendOptions blend{a.branch_epsilon, a.weight_floor};
  const DenseField field = articulated_field(a.model, a.pose, weights, parse_method(a.method), blend);
  write_volume(field.displacement, a.out);
  out << "deform: " << a.method << " field on " << weights.grid.dims[0] << "x" << weights.grid.dims[1] << "x"
      << weights.grid.dims[2] << " -> " << a.out << '\n';
}

// ---- metrics ---------------------------------------------------------------

struct MetricsArgs {
  std::string field, mask, out, jacobian_out, label = "field";
  double pose_magnitude = 0.0;
  bool include_folds = false;
  bool timing = false;
  bool compare = false;
  std::string model, pose, weights;
  std::vector<double> angles;
  std::vector<std::string> methods{"lbs", "polyrigid", "ktpolyrigid"};
};

Pose scaled_pose(const Pose& base, double angle) {
  Pose p = base;
  for (Vec3& t : p.theta) {
    const double n = t.norm();
    if (n > 0.0) t *= angle / n;
  }
  return p;
}

void run_metrics(const MetricsArgs& a, std::ostream& out) {
  RegularityOptions options;
  options.include_folds_in_log_stats = a.include_folds;
  std::vector<ComparisonRow> rows;
  if (a.compare) {
    if (a.model.empty() || a.pose.empty() || a.weights.empty()) {
      throw SpecInvalid("--compare needs --model, --pose and --weights");
    }
    const ModelFile model = read_model(a.model);
    const Pose base = read_pose(a.pose);
    const VolumeGrid weights = read_weights(a.weights);
    const Mask mask = a.mask.empty() ? Mask{} : read_mask(a.mask);
    std::vector<SweepPose> sweep;
    if (a.angles.empty()) {
      double m = 0.0;
      for (const Vec3& t : base.theta) m = std::max(m, t.norm());
      sweep.push_back({m, base});
    }
    for (double angle : a.angles) sweep.push_back({angle, scaled_pose(base, angle)});
    std::vector<DeformMethod> methods;
    for (const auto& m : a.methods) methods.push_back(parse_method(m));
    rows = compare_methods(model.tree, weights, mask, sweep, methods, {}, options);
  } else {
    if (a.field.empty()) throw SpecInvalid("metrics needs --field (or --compare)");
    DenseField field{FieldKind::Composite, read_volume(a.field)};
    if (field.displacement.channels != 3) throw DimensionMismatch("field volume must have 3 channels");
    const Mask mask = a.mask.empty() ? Mask{} : read_mask(a.mask);
    ComparisonRow row;
    row.pose_magnitude_rad = a.pose_magnitude;
    row.report = regularity_report(field, mask, options);
    if (!a.jacobian_out.empty()) write_volume(row.report.jacobian_field, a.jacobian_out);
    std::string csv = metrics_csv(std::span<const ComparisonRow>(&row, 1), a.timing);
    // The single-field row is labelled by --label rather than a method name.
    const std::size_t line = csv.find('\n') + 1;
    csv.replace(line, csv.find(',', line) - line, a.label);
    if (a.out.empty()) {
      out << csv;
    } else {
      write_text(csv, a.out);
    }
    return;
  }
  const std::string csv = metrics_csv(rows, a.timing);
  if (a.out.empty()) {
    out << csv;
  } else {
    write_text(csv, a.out);
  }
}

// ---- flow ------------------------------------------------------------------

struct FlowArgs {
  std::string model, mesh, grid, mask, out;
  std::vector<double> beta_start, beta_end;
  int steps = 16;
  bool freeze = false;
  bool no_validate = false;
};

DenseField shape_flow(const ShapeBasis& basis, const SurfaceMesh& topology, const Eigen::VectorXd& start,
                      const Eigen::VectorXd& end, const GridSpec& grid, const Mask& mask_in, int steps, bool freeze) {
  SurfaceMesh mesh0 = topology;
  mesh0.vertices = shape_vertices(basis, start);
  const Mask mask = mask_in.empty() ? voxelize(mesh0, grid) : mask_in;
  FlowSpec spec;
  spec.beta_start = start;
  spec.beta_end = end;
  spec.steps = steps;
  spec.freeze_weights = freeze;
  return flow_field(spec, basis, mesh0, grid, mask);
}

void run_flow(const FlowArgs& a, std::ostream& out) {
  const ModelFile model = read_model(a.model);
  if (!model.shape) throw SpecInvalid(a.model + " has no shape basis");
  const SurfaceMesh topology = read_mesh(a.mesh, !a.no_validate);
  GridSpec grid;
  Mask mask;
  if (!a.mask.empty()) {
    mask = read_mask(a.mask, &grid);
  } else {
    grid = read_volume(a.grid).grid;
  }
  const int dim = model.shape->beta_dim();
  const DenseField field = shape_flow(*model.shape, topology, beta_or_zero(a.beta_start, dim),
                                      beta_or_zero(a.beta_end, dim), grid, mask, a.steps, a.freeze);
  write_volume(field.displacement, a.out);
  out << "flow: " << a.steps << " Euler steps -> " << a.out << '\n';
}

// ---- canonicalize ----------------------------------------------------------

struct CanonicalizeArgs {
  std::string image, model, pose, weights, mesh, shape_model, out, field_out, mask;
  std::vector<double> beta;
  std::string method = "ktpolyrigid";
  int steps = 16;
  bool freeze = false;
};

void run_canonicalize(const CanonicalizeArgs& a, std::ostream& out) {
  const VolumeGrid native = read_volume(a.image);
  const VolumeGrid weights = read_weights(a.weights);
  const DenseField phi_t = articulated_field(a.model, a.pose, weights, parse_method(a.method), {});
  DenseField phi = phi_t;
  if (!a.beta.empty()) {
    if (a.shape_model.empty() || a.mesh.empty()) throw SpecInvalid("--beta needs --shape-model and --mesh");
    const ModelFile pop = read_model(a.shape_model);
    if (!pop.shape) throw SpecInvalid(a.shape_model + " has no shape basis");
    const SurfaceMesh topology = read_mesh(a.mesh);
    const int dim = pop.shape->beta_dim();
    const Mask mask = a.mask.empty() ? Mask{} : read_mask(a.mask);
    // Φ_P maps population canonical to subject canonical: flow the mean
    // shape (β = 0) towards the subject's β.
    const DenseField phi_p = shape_flow(*pop.shape, topology, Eigen::VectorXd::Zero(dim), beta_or_zero(a.beta, dim),
                                        weights.grid, mask, a.steps, a.freeze);
    phi = compose_fields(phi_t, phi_p);
  }
  const VolumeGrid canonical = resample_image(native, phi);
  write_volume(canonical, a.out);
  if (!a.field_out.empty()) write_volume(phi.displacement, a.field_out);
  out << "canonicalize: -> " << a.out << '\n';
}

// ---- groupwise -------------------------------------------------------------

struct GroupwiseArgs {
  std::string manifest, mask, out_dir, shape_model, method = "ktpolyrigid", grad = "fd";
  double lambda = -1.0;
  double step = 0.5;
  int max_iters = 50;
  bool frozen_mean = false;
  bool exact = false;
  int flow_steps = 16;
};

void run_groupwise(const GroupwiseArgs& a, std::ostream& out) {
  const auto entries = read_manifest(a.manifest);
  if (entries.empty()) throw SpecInvalid("manifest lists no subjects");
  Cohort cohort;
  cohort.method = parse_method(a.method);
  std::optional<ModelFile> pop;
  if (!a.shape_model.empty()) pop = read_model(a.shape_model);
  for (const ManifestEntry& e : entries) {
    if (!e.weights) throw SpecInvalid("groupwise needs volumetric weights for every subject");
    GroupwiseSubject sub;
    sub.image = read_volume(e.image);
    sub.weights = read_weights(*e.weights);
    const ModelFile model = read_model(e.tree);
    sub.transforms = forward_kinematics(model.tree, read_pose(e.pose));
    if (pop && pop->shape && e.beta.size() > 0 && !e.beta.isZero(0.0)) {
      const SurfaceMesh topology = read_mesh(e.mesh);
      sub.flow = shape_flow(*pop->shape, topology, Eigen::VectorXd::Zero(e.beta.size()), e.beta, sub.weights.grid, {},
                            a.flow_steps, false);
    }
    cohort.subjects.push_back(std::move(sub));
  }
  cohort.grid = cohort.subjects.front().weights.grid;
  if (!a.mask.empty()) cohort.mask = read_mask(a.mask);

  GroupwiseConfig config;
  config.lambda = a.lambda;
  config.step = a.step;
  config.max_iters = a.max_iters;
  config.frozen_mean = a.frozen_mean;
  config.model = a.exact ? PerturbationModel::Exact : PerturbationModel::Linearized;
  if (a.grad == "fd") {
    config.grad_mode = GradientMode::FiniteDifference;
  } else if (a.grad == "analytic") {
    config.grad_mode = GradientMode::Analytic;
  } else {
    throw SpecInvalid("--grad must be fd or analytic");
  }
  const GroupwiseResult result = optimize(cohort, config);

  const fs::path dir = a.out_dir;
  fs::create_directories(dir);
  write_twists(result.bank, dir / "twists.json");
  std::ostringstream csv;
  csv << "iteration,loss,data\n";
  for (std::size_t i = 0; i < result.loss_trace.size(); ++i) {
    csv << i << ',' << format_number(result.loss_trace[i]) << ',' << format_number(result.data_trace[i]) << '\n';
  }
  write_text(csv.str(), dir / "loss.csv");
  write_volume(cohort_mean(cohort, result.bank, config.model), dir / "mean.json");
  out << "groupwise: " << result.iterations << " iterations, status " << to_string(result.status) << ", loss "
      << format_number(result.loss_trace.front()) << " -> " << format_number(result.loss_trace.back()) << '\n';
}

// ---- invert / warp-labels / render ------------------------------------------

struct InvertArgs {
  std::string field, mask, out, valid_out;
  int max_iters = 50;
  double tol = 0.05;
  bool fixed_point = false;
};

void run_invert(const InvertArgs& a, std::ostream& out) {
  DenseField field{FieldKind::Composite, read_volume(a.field)};
  if (field.displacement.channels != 3) throw DimensionMismatch("field volume must have 3 channels");
  InversionOptions options;
  options.max_iters = a.max_iters;
  options.tol = a.tol;
  options.method = a.fixed_point ? InversionMethod::FixedPoint : InversionMethod::Newton;
  if (!a.mask.empty()) options.source_mask = read_mask(a.mask);
  const InverseField inv = invert_field(field, options);
  write_volume(inv.field.displacement, a.out);
  if (!a.valid_out.empty()) write_mask(inv.valid, field.grid(), a.valid_out);
  out << "invert: " << count_mask(inv.valid) << " of " << field.grid().voxel_count() << " voxels converged\n";
}

struct WarpArgs {
  std::string labels, field, out;
};

void run_warp_labels(const WarpArgs& a, std::ostream& out) {
  const VolumeGrid labels = read_volume(a.labels);
  DenseField field{FieldKind::Composite, read_volume(a.field)};
  if (field.displacement.channels != 3) throw DimensionMismatch("field volume must have 3 channels");
  write_volume(resample_labels(labels, field), a.out);
  out << "warp-labels: -> " << a.out << '\n';
}

struct RenderArgs {
  std::string volume, out;
  int channel = 0;
  std::optional<double> window, level;
  std::optional<int> sx, sy, sz;
};

void run_render(const RenderArgs& a, std::ostream& out) {
  const VolumeGrid volume = read_volume(a.volume);
  RenderOptions options;
  options.channel = a.channel;
  options.window = a.window;
  options.level = a.level;
  options.slice_x = a.sx;
  options.slice_y = a.sy;
  options.slice_z = a.sz;
  render_slices(volume, a.out, options);
  out << "render: -> " << a.out << '\n';
}

int exit_code(ErrorCategory category) {
  switch (category) {
    case ErrorCategory::Usage: return 1;
    case ErrorCategory::Data: return 2;
    case ErrorCategory::Numerical: return 3;
  }
  return 2;
}

}  // namespace

int cli_dispatch(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"ktpr: articulated volumetric deformation toolkit"};
  app.require_subcommand(1);
  int threads = 0;
  app.add_option("--threads", threads, "Worker threads (default: $KTPR_THREADS or all cores)")->check(CLI::NonNegativeNumber);

  PhantomArgs pa;
  auto* phantom = app.add_subcommand("phantom", "Generate a synthetic phantom (and optionally a cohort)");
  phantom->add_option("--out", pa.out, "Output directory")->required();
  phantom->add_option("--preset", pa.preset, "biped or chain")->capture_default_str()->check(CLI::IsMember({"biped", "chain"}));
  phantom->add_option("--parts", pa.parts, "Chain: number of parts")->capture_default_str();
  phantom->add_option("--limb-length", pa.length, "Chain: segment length (mm)")->capture_default_str();
  phantom->add_option("--limb-radius", pa.radius, "Chain: segment radius (mm)")->capture_default_str();
  phantom->add_option("--scale", pa.scale, "Biped: size multiplier")->capture_default_str();
  phantom->add_option("--blend-band", pa.band, "Half-width of the joint weight ramp (mm)")->capture_default_str();
  phantom->add_option("--resolution", pa.resolution, "Voxels per axis")->capture_default_str();
  phantom->add_option("--margin", pa.margin, "Grid margin around the body (mm)")->capture_default_str();
  phantom->add_option("--mesh-cell", pa.mesh_cell, "Surface extraction lattice (mm)")->capture_default_str();
  phantom->add_option("--subjects", pa.subjects, "Cohort size (0: template only)")->capture_default_str();
  phantom->add_option("--seed", pa.seed, "Random seed")->capture_default_str();
  phantom->add_option("--pose-magnitude", pa.pose_magnitude, "Max random joint angle (rad)")->capture_default_str();
  phantom->add_option("--beta-sigma", pa.beta_sigma, "Std of shape coefficients")->capture_default_str();

  WeightsArgs wa;
  auto* weights = app.add_subcommand("weights", "Solve volumetric skinning weights");
  weights->add_option("--mesh", wa.mesh, "Surface mesh (OBJ)")->required();
  weights->add_option("--vertex-weights", wa.vertex_weights, "N x K vertex weights (JSON)")->required();
  weights->add_option("--grid", wa.grid, "Volume whose grid to use");
  weights->add_option("--mask", wa.mask, "Interior mask (default: voxelized mesh)");
  weights->add_option("--out", wa.out, "Output weight volume")->required();
  weights->add_option("--report", wa.report, "Solver report (JSON)");
  weights->add_option("--max-iters", wa.max_iters, "Iteration cap")->capture_default_str();
  weights->add_option("--tol", wa.tol, "Projected-gradient tolerance")->capture_default_str();
  weights->add_flag("--no-validate", wa.no_validate, "Skip mesh closedness checks");

  DeformArgs da;
  auto* deform = app.add_subcommand("deform", "Sample an articulated deformation field");
  deform->add_option("--model", da.model, "Kinematic model (JSON)")->required();
  deform->add_option("--pose", da.pose, "Pose (JSON)")->required();
  deform->add_option("--weights", da.weights, "K-channel weight volume")->required();
  deform->add_option("--method", da.method, "lbs, polyrigid or ktpolyrigid")->capture_default_str();
  deform->add_option("--branch-epsilon", da.branch_epsilon, "Log branch tolerance (rad)")->capture_default_str();
  deform->add_option("--weight-floor", da.weight_floor, "Weights at or below are skipped")->capture_default_str();
  deform->add_option("--out", da.out, "Output displacement volume")->required();

  MetricsArgs ma;
  auto* metrics = app.add_subcommand("metrics", "Jacobian regularity report (CSV)");
  metrics->add_option("--field", ma.field, "Displacement volume");
  metrics->add_option("--mask", ma.mask, "Interior mask");
  metrics->add_option("--out", ma.out, "CSV path (default: stdout)");
  metrics->add_option("--jacobian-out", ma.jacobian_out, "log2|det J| and sign volume");
  metrics->add_option("--label", ma.label, "Method column for a single field")->capture_default_str();
  metrics->add_option("--pose-magnitude", ma.pose_magnitude, "Pose magnitude column")->capture_default_str();
  metrics->add_flag("--include-folds", ma.include_folds, "Include |det| of folds in log2 statistics");
  metrics->add_flag("--timing", ma.timing, "Fill the wall time and memory columns");
  metrics->add_flag("--compare", ma.compare, "Compare methods over a pose sweep");
  metrics->add_option("--model", ma.model, "Compare: kinematic model");
  metrics->add_option("--pose", ma.pose, "Compare: pose whose joint directions are swept");
  metrics->add_option("--weights", ma.weights, "Compare: weight volume");
  metrics->add_option("--angles", ma.angles, "Compare: joint angles (rad)")->delimiter(',');
  metrics->add_option("--methods", ma.methods, "Compare: methods")->delimiter(',')->capture_default_str();

  FlowArgs fa;
  auto* flow = app.add_subcommand("flow", "Integrate the shape flow between two shape vectors");
  flow->add_option("--model", fa.model, "Model with shape basis (JSON)")->required();
  flow->add_option("--mesh", fa.mesh, "Mesh providing the face list (OBJ)")->required();
  flow->add_option("--grid", fa.grid, "Volume whose grid to use");
  flow->add_option("--mask", fa.mask, "Voxels to advect (default: inside the start shape)");
  flow->add_option("--beta-start", fa.beta_start, "Start shape (default 0)")->delimiter(',');
  flow->add_option("--beta-end", fa.beta_end, "End shape (default 0)")->delimiter(',');
  flow->add_option("--steps", fa.steps, "Euler steps")->capture_default_str()->check(CLI::PositiveNumber);
  flow->add_flag("--freeze", fa.freeze, "Evaluate coordinates on the initial surface only");
  flow->add_flag("--no-validate", fa.no_validate, "Skip mesh closedness checks");
  flow->add_option("--out", fa.out, "Output displacement volume")->required();

  CanonicalizeArgs ca;
  auto* canonicalize = app.add_subcommand("canonicalize", "Pull a native image back into canonical space");
  canonicalize->add_option("--image", ca.image, "Native image")->required();
  canonicalize->add_option("--model", ca.model, "Subject kinematic model")->required();
  canonicalize->add_option("--pose", ca.pose, "Subject pose")->required();
  canonicalize->add_option("--weights", ca.weights, "Subject canonical weights")->required();
  canonicalize->add_option("--method", ca.method, "lbs, polyrigid or ktpolyrigid")->capture_default_str();
  canonicalize->add_option("--beta", ca.beta, "Subject shape; enables the shape flow")->delimiter(',');
  canonicalize->add_option("--shape-model", ca.shape_model, "Population model with shape basis");
  canonicalize->add_option("--mesh", ca.mesh, "Mesh providing the face list");
  canonicalize->add_option("--mask", ca.mask, "Population canonical interior for the flow");
  canonicalize->add_option("--steps", ca.steps, "Flow Euler steps")->capture_default_str();
  canonicalize->add_flag("--freeze", ca.freeze, "Frozen flow coordinates");
  canonicalize->add_option("--out", ca.out, "Canonical image")->required();
  canonicalize->add_option("--field-out", ca.field_out, "Composite displacement field");

  GroupwiseArgs ga;
  auto* groupwise = app.add_subcommand("groupwise", "Refine joint transforms across a cohort");
  groupwise->add_option("--manifest", ga.manifest, "Cohort manifest (JSON)")->required();
  groupwise->add_option("--mask", ga.mask, "Canonical interior Ω");
  groupwise->add_option("--shape-model", ga.shape_model, "Population model; enables shape flows");
  groupwise->add_option("--method", ga.method, "lbs, polyrigid or ktpolyrigid")->capture_default_str();
  groupwise->add_option("--lambda", ga.lambda, "Regularization (negative: automatic)")->capture_default_str();
  groupwise->add_option("--step", ga.step, "Initial step")->capture_default_str();
  groupwise->add_option("--max-iters", ga.max_iters, "Iteration cap")->capture_default_str();
  groupwise->add_option("--grad", ga.grad, "fd or analytic")->capture_default_str();
  groupwise->add_flag("--frozen-mean", ga.frozen_mean, "Hold the mean fixed during each line search");
  groupwise->add_flag("--exact", ga.exact, "Exact exponential perturbations");
  groupwise->add_option("--flow-steps", ga.flow_steps, "Shape flow Euler steps")->capture_default_str();
  groupwise->add_option("--out-dir", ga.out_dir, "Output directory")->required();

  InvertArgs ia;
  auto* invert = app.add_subcommand("invert", "Invert a displacement field");
  invert->add_option("--field", ia.field, "Displacement volume")->required();
  invert->add_option("--mask", ia.mask, "Source region used to seed the inverse");
  invert->add_option("--max-iters", ia.max_iters, "Iterations per voxel")->capture_default_str();
  invert->add_option("--tol", ia.tol, "Residual tolerance (voxels)")->capture_default_str();
  invert->add_flag("--fixed-point", ia.fixed_point, "Plain fixed-point iteration instead of Newton");
  invert->add_option("--out", ia.out, "Inverse displacement volume")->required();
  invert->add_option("--valid-out", ia.valid_out, "Converged-voxel mask");

  WarpArgs wl;
  auto* warp = app.add_subcommand("warp-labels", "Resample a label volume (nearest neighbour)");
  warp->add_option("--labels", wl.labels, "Label volume")->required();
  warp->add_option("--field", wl.field, "Pull-back displacement on the output grid")->required();
  warp->add_option("--out", wl.out, "Output labels")->required();

  RenderArgs ra;
  auto* render = app.add_subcommand("render", "Orthogonal slices as PNG");
  render->add_option("--volume", ra.volume, "Volume")->required();
  render->add_option("--out", ra.out, "PNG path")->required();
  render->add_option("--channel", ra.channel, "Channel")->capture_default_str();
  render->add_option("--window", ra.window, "Intensity window width");
  render->add_option("--level", ra.level, "Intensity window centre");
  render->add_option("--slice-x", ra.sx, "Sagittal slice index");
  render->add_option("--slice-y", ra.sy, "Coronal slice index");
  render->add_option("--slice-z", ra.sz, "Axial slice index");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e, out, err);
    err << "ktpr: " << e.what() << " (see --help)\n";
    return 1;
  }

  try {
    set_thread_count(threads);
    if (*phantom) run_phantom(pa, out);
    else if (*weights) run_weights(wa, out);
    else if (*deform) run_deform(da, out);
    else if (*metrics) run_metrics(ma, out);
    else if (*flow) run_flow(fa, out);
    else if (*canonicalize) run_canonicalize(ca, out);
    else if (*groupwise) run_groupwise(ga, out);
    else if (*invert) run_invert(ia, out);
    else if (*warp) run_warp_labels(wl, out);
    else if (*render) run_render(ra, out);
  } catch (const Error& e) {
    err << "ktpr: " << e.what() << '\n';
    return exit_code(e.category());
  } catch (const std::exception& e) {
    err << "ktpr: " << e.what() << '\n';
    return 2;
  }
  return 0;
}

int cli_dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  std::vector<const char*> argv;
  argv.push_back("ktpr");
  for (const auto& a : args) argv.push_back(a.c_str());
  return cli_dispatch(static_cast<int>(argv.size()), argv.data(), out, err);
}

}  // namespace ktpr
