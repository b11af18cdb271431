#pragma once

// File formats: raw float volumes with a JSON header, a minimal OBJ subset,
// and JSON documents for models, poses, weights, manifests and twists.

#include <Eigen/Core>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "ktpr/groupwise.hpp"
#include "ktpr/kinematics.hpp"
#include "ktpr/mesh.hpp"
#include "ktpr/volume.hpp"

namespace ktpr {

namespace fs = std::filesystem;

/// Header path for a volume: `path` itself when it ends in .json, otherwise
/// path + ".json". The payload sits next to it with extension .raw.
fs::path volume_header_path(const fs::path& path);
fs::path volume_payload_path(const fs::path& path);

/// Writes float32 little-endian samples, channels interleaved, x fastest.
void write_volume(const VolumeGrid& volume, const fs::path& path);
/// Throws MalformedHeader, SizeMismatch or IOFailure.
VolumeGrid read_volume(const fs::path& path);

/// Masks travel as one-channel 0/1 volumes.
void write_mask(const Mask& mask, const GridSpec& grid, const fs::path& path);
Mask read_mask(const fs::path& path, GridSpec* grid = nullptr);

/// "v x y z" and "f a b c" records (1-based; "a/b/c" index forms accepted).
/// Throws NonTriangleFace, BadIndex, OpenMesh (when validating) or IOFailure.
SurfaceMesh read_mesh(const fs::path& path, bool validate = true);
void write_mesh(const SurfaceMesh& mesh, const fs::path& path);

struct ModelFile {
  KinematicTree tree;
  std::optional<ShapeBasis> shape;
};

/// {"parts": [{"name", "parent" (-1 for the root), "joint": [x,y,z]}],
///  "shape_basis": {"mean_vertices": [[x,y,z]...], "components": [[[x,y,z]...]...]}}
ModelFile read_model(const fs::path& path);
void write_model(const ModelFile& model, const fs::path& path);

/// JSON array of K [x, y, z] angle-axis triples.
Pose read_pose(const fs::path& path);
void write_pose(const Pose& pose, const fs::path& path);

/// JSON N x K array.
Eigen::MatrixXd read_vertex_weights(const fs::path& path);
void write_vertex_weights(const Eigen::MatrixXd& weights, const fs::path& path);

struct ManifestEntry {
  fs::path image;
  fs::path tree;
  fs::path pose;
  fs::path mesh;
  std::optional<fs::path> weights;         // volumetric weights
  std::optional<fs::path> vertex_weights;  // surface weights
  Eigen::VectorXd beta;
};

/// {"subjects": [...]} or a bare array. Relative paths resolve against the
/// manifest's directory. Throws MalformedHeader or IOFailure (missing file).
std::vector<ManifestEntry> read_manifest(const fs::path& path, bool check_files = true);
void write_manifest(const std::vector<ManifestEntry>& entries, const fs::path& path);

/// {"lambda": l, "xi": [[[wx,wy,wz,vx,vy,vz] per part] per subject]}
void write_twists(const TwistBank& bank, const fs::path& path);
TwistBank read_twists(const fs::path& path);

std::string read_text(const fs::path& path);
void write_text(const std::string& text, const fs::path& path);

}  // namespace ktpr
