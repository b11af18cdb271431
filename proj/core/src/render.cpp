#include "ktpr/render.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <vector>

#include "ktpr/error.hpp"

namespace ktpr {

void render_slices(const VolumeGrid& volume, const std::filesystem::path& path, const RenderOptions& options) {
  volume.validate();
  if (options.channel < 0 || options.channel >= volume.channels) throw DimensionMismatch("render channel out of range");
  const auto& d = volume.grid.dims;
  const int sx = options.slice_x.value_or(d[0] / 2);
  const int sy = options.slice_y.value_or(d[1] / 2);
  const int sz = options.slice_z.value_or(d[2] / 2);
  if (sx < 0 || sx >= d[0] || sy < 0 || sy >= d[1] || sz < 0 || sz >= d[2]) {
    throw DimensionMismatch("render slice index outside the volume");
  }
  double lo = 0.0, hi = 1.0;
  if (options.window && options.level) {
    lo = *options.level - 0.5 * *options.window;
    hi = *options.level + 0.5 * *options.window;
  } else {
    lo = hi = volume.at(0, options.channel);
    for (std::size_t v = 0; v < volume.voxel_count(); ++v) {
      lo = std::min(lo, volume.at(v, options.channel));
      hi = std::max(hi, volume.at(v, options.channel));
    }
    if (options.window) {
      const double c = 0.5 * (lo + hi);
      lo = c - 0.5 * *options.window;
      hi = c + 0.5 * *options.window;
    } else if (options.level) {
      const double half = 0.5 * (hi - lo);
      lo = *options.level - half;
      hi = *options.level + half;
    }
  }
  const double span = hi > lo ? hi - lo : 1.0;
  auto grey = [&](int i, int j, int k) {
    const double v = (volume.at(volume.grid.index(i, j, k), options.channel) - lo) / span;
    return static_cast<png_byte>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
  };

  // Panels: z-slice (x right, y down), y-slice (x right, z up), x-slice (y right, z up).
  const int gap = 2;
  const int width = d[0] + gap + d[0] + gap + d[1];
  const int height = std::max(d[1], d[2]);
  std::vector<png_byte> pixels(static_cast<std::size_t>(width) * static_cast<std::size_t>(height), 0);
  auto put = [&](int x, int y, png_byte g) { pixels[static_cast<std::size_t>(y) * static_cast<std::size_t>(width) + static_cast<std::size_t>(x)] = g; };
  for (int j = 0; j < d[1]; ++j)
    for (int i = 0; i < d[0]; ++i) put(i, j, grey(i, j, sz));
  for (int k = 0; k < d[2]; ++k)
    for (int i = 0; i < d[0]; ++i) put(d[0] + gap + i, d[2] - 1 - k, grey(i, sy, k));
  for (int k = 0; k < d[2]; ++k)
    for (int j = 0; j < d[1]; ++j) put(2 * (d[0] + gap) + j, d[2] - 1 - k, grey(sx, j, k));

  FILE* file = std::fopen(path.string().c_str(), "wb");
  if (!file) throw IOFailure("cannot write " + path.string());
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info || setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    std::fclose(file);
    throw IOFailure("PNG encoding failed for " + path.string());
  }
  png_init_io(png, file);
  png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height), 8, PNG_COLOR_TYPE_GRAY,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (int y = 0; y < height; ++y) png_write_row(png, pixels.data() + static_cast<std::size_t>(y) * static_cast<std::size_t>(width));
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  if (std::fclose(file) != 0) throw IOFailure("write failed for " + path.string());
}

}  // namespace ktpr
