#pragma once

// 8-bit RGB raster images for report figures: frame conversion, heatmaps,
// scatter plots, tiling and PNG files.

#include "dklrom/autodiff.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <vector>

namespace dklrom::img {

using Rgb = std::array<std::uint8_t, 3>;

struct Image {
  Index width = 0;
  Index height = 0;
  std::vector<std::uint8_t> pixels;  // row-major RGB

  Image() = default;
  Image(Index w, Index h, Rgb fill = {0, 0, 0});

  bool empty() const { return width == 0 || height == 0; }
  Rgb at(Index x, Index y) const;
  void set(Index x, Index y, Rgb c);
  void fill_rect(Index x0, Index y0, Index w, Index h, Rgb c);
  /// Outline `thickness` pixels wide, drawn inside the rectangle.
  void draw_box(Index x0, Index y0, Index w, Index h, Rgb c, Index thickness = 1);
  void blit(const Image& src, Index x0, Index y0);
};

/// Viridis-like map of t in [0,1]; values outside are clamped.
Rgb colormap(double t);

/// A channel-major frame in [0,1]: 3 channels map to RGB, 1 to grey, 2 show
/// the first channel through the colormap.
Image frame_to_image(const float* frame, Index channels, Index height, Index width);

/// Colormapped field with vmin/vmax as the colour range.
Image heatmap(const float* field, Index height, Index width, double vmin, double vmax);

Image upscale(const Image& src, Index factor);

/// Rows of tiles on a white canvas. Columns take their widest tile, rows their
/// tallest.
Image tile(const std::vector<std::vector<Image>>& rows, Index pad = 2);

/// Points coloured by `value` (range lo..hi) on a size x size white canvas.
/// Points with `highlight[i] == false` are drawn in light grey underneath.
Image scatter(const Matrix<double>& points, const Vector<double>& value, double lo, double hi, Index size,
              const std::vector<bool>& highlight = {});

/// Vertical colour bar, lo at the bottom.
Image colorbar(Index width, Index height);

void write_png(const std::filesystem::path& path, const Image& image);
/// Reads any PNG into 8-bit RGB. Throws FormatError.
Image read_png(const std::filesystem::path& path);

}  // namespace dklrom::img
