#pragma once

#include <filesystem>
#include <optional>

#include "ktpr/volume.hpp"

namespace ktpr {

struct RenderOptions {
  int channel = 0;
  /// Intensity window; the data range is used when unset.
  std::optional<double> window;
  std::optional<double> level;
  /// Slice indices (voxels); the centre slice when unset.
  std::optional<int> slice_x, slice_y, slice_z;
};

/// Axial (z), coronal (y) and sagittal (x) slices side by side as an 8-bit
/// grey PNG. The bytes depend only on the inputs.
void render_slices(const VolumeGrid& volume, const std::filesystem::path& path, const RenderOptions& options = {});

}  // namespace ktpr
