#include "dklrom/image_io.hpp"

#include "dklrom/errors.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstring>

namespace dklrom::img {

Image::Image(Index w, Index h, Rgb fill) : width(w), height(h), pixels(static_cast<std::size_t>(w * h * 3)) {
  if (w < 0 || h < 0) throw ValidationError("image: negative size");
  for (std::size_t i = 0; i < pixels.size(); i += 3) std::memcpy(&pixels[i], fill.data(), 3);
}

Rgb Image::at(Index x, Index y) const {
  const auto i = static_cast<std::size_t>((y * width + x) * 3);
  return {pixels[i], pixels[i + 1], pixels[i + 2]};
}

void Image::set(Index x, Index y, Rgb c) {
  if (x < 0 || y < 0 || x >= width || y >= height) return;
  const auto i = static_cast<std::size_t>((y * width + x) * 3);
  std::memcpy(&pixels[i], c.data(), 3);
}

void Image::fill_rect(Index x0, Index y0, Index w, Index h, Rgb c) {
  for (Index y = y0; y < y0 + h; ++y)
    for (Index x = x0; x < x0 + w; ++x) set(x, y, c);
}

void Image::draw_box(Index x0, Index y0, Index w, Index h, Rgb c, Index thickness) {
  fill_rect(x0, y0, w, thickness, c);
  fill_rect(x0, y0 + h - thickness, w, thickness, c);
  fill_rect(x0, y0, thickness, h, c);
  fill_rect(x0 + w - thickness, y0, thickness, h, c);
}

void Image::blit(const Image& src, Index x0, Index y0) {
  for (Index y = 0; y < src.height; ++y)
    for (Index x = 0; x < src.width; ++x) set(x0 + x, y0 + y, src.at(x, y));
}

namespace {

std::uint8_t to_byte(double v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

}  // namespace

Rgb colormap(double t) {
  // viridis sampled at 0, 1/4, ..., 1
  static constexpr double anchors[5][3] = {
      {68, 1, 84}, {59, 82, 139}, {33, 145, 140}, {94, 201, 98}, {253, 231, 37}};
  if (!std::isfinite(t)) t = 0.0;
  t = std::clamp(t, 0.0, 1.0) * 4.0;
  const int i = std::min(3, static_cast<int>(t));
  const double f = t - i;
  Rgb c;
  for (int k = 0; k < 3; ++k)
    c[k] = static_cast<std::uint8_t>(std::lround(anchors[i][k] + f * (anchors[i + 1][k] - anchors[i][k])));
  return c;
}

Image frame_to_image(const float* frame, Index channels, Index height, Index width) {
  if (channels < 1 || channels > 3) throw ValidationError("frame_to_image: expected 1 to 3 channels");
  Image out(width, height);
  const Index plane = height * width;
  for (Index y = 0; y < height; ++y) {
    for (Index x = 0; x < width; ++x) {
      const Index i = y * width + x;
      if (channels == 3) {
        out.set(x, y, {to_byte(frame[i]), to_byte(frame[plane + i]), to_byte(frame[2 * plane + i])});
      } else if (channels == 1) {
        const auto g = to_byte(frame[i]);
        out.set(x, y, {g, g, g});
      } else {
        out.set(x, y, colormap(frame[i]));
      }
    }
  }
  return out;
}

Image heatmap(const float* field, Index height, Index width, double vmin, double vmax) {
  Image out(width, height);
  const double span = vmax > vmin ? vmax - vmin : 1.0;
  for (Index y = 0; y < height; ++y)
    for (Index x = 0; x < width; ++x) out.set(x, y, colormap((field[y * width + x] - vmin) / span));
  return out;
}

Image upscale(const Image& src, Index factor) {
  if (factor < 1) throw ValidationError("upscale: factor must be >= 1");
  Image out(src.width * factor, src.height * factor);
  for (Index y = 0; y < out.height; ++y)
    for (Index x = 0; x < out.width; ++x) out.set(x, y, src.at(x / factor, y / factor));
  return out;
}

Image tile(const std::vector<std::vector<Image>>& rows, Index pad) {
  std::vector<Index> col_w, row_h(rows.size(), 0);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r].size() > col_w.size()) col_w.resize(rows[r].size(), 0);
    for (std::size_t c = 0; c < rows[r].size(); ++c) {
      col_w[c] = std::max(col_w[c], rows[r][c].width);
      row_h[r] = std::max(row_h[r], rows[r][c].height);
    }
  }
  Index width = pad, height = pad;
  for (Index w : col_w) width += w + pad;
  for (Index h : row_h) height += h + pad;
  Image out(width, height, {255, 255, 255});
  Index y = pad;
  for (std::size_t r = 0; r < rows.size(); ++r) {
    Index x = pad;
    for (std::size_t c = 0; c < rows[r].size(); ++c) {
      out.blit(rows[r][c], x, y);
      x += col_w[c] + pad;
    }
    y += row_h[r] + pad;
  }
  return out;
}

Image scatter(const Matrix<double>& points, const Vector<double>& value, double lo, double hi, Index size,
              const std::vector<bool>& highlight) {
  if (points.cols() != 2 || value.size() != points.rows())
    throw ValidationError("scatter: expected n x 2 points and n values");
  if (!highlight.empty() && static_cast<Index>(highlight.size()) != points.rows())
    throw ValidationError("scatter: highlight size mismatch");
  Image out(size, size, {255, 255, 255});
  if (points.rows() == 0) return out;
  const Eigen::RowVector2d mn = points.colwise().minCoeff(), mx = points.colwise().maxCoeff();
  const double margin = 8.0;
  auto px = [&](Index i, int axis) {
    const double span = mx(axis) - mn(axis) > 0 ? mx(axis) - mn(axis) : 1.0;
    const double t = (points(i, axis) - mn(axis)) / span;
    return static_cast<Index>(std::lround(margin + t * (size - 1 - 2 * margin)));
  };
  auto dot = [&](Index cx, Index cy, Rgb c) {
    for (Index dy = -2; dy <= 2; ++dy)
      for (Index dx = -2; dx <= 2; ++dx)
        if (dx * dx + dy * dy <= 5) out.set(cx + dx, size - 1 - (cy + dy), c);
  };
  const double span = hi > lo ? hi - lo : 1.0;
  for (int pass = 0; pass < 2; ++pass) {
    for (Index i = 0; i < points.rows(); ++i) {
      const bool on = highlight.empty() || highlight[static_cast<std::size_t>(i)];
      if (on != (pass == 1)) continue;
      dot(px(i, 0), px(i, 1), on ? colormap((value(i) - lo) / span) : Rgb{215, 215, 215});
    }
  }
  return out;
}

Image colorbar(Index width, Index height) {
  Image out(width, height);
  for (Index y = 0; y < height; ++y) {
    const Rgb c = colormap(height > 1 ? 1.0 - static_cast<double>(y) / (height - 1) : 0.0);
    out.fill_rect(0, y, width, 1, c);
  }
  return out;
}

void write_png(const std::filesystem::path& path, const Image& image) {
  if (image.empty()) throw ValidationError("write_png: empty image");
  png_image pi;
  std::memset(&pi, 0, sizeof(pi));
  pi.version = PNG_IMAGE_VERSION;
  pi.width = static_cast<png_uint_32>(image.width);
  pi.height = static_cast<png_uint_32>(image.height);
  pi.format = PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&pi, path.c_str(), 0, image.pixels.data(), 0, nullptr))
    throw std::runtime_error("cannot write " + path.string() + ": " + pi.message);
}

Image read_png(const std::filesystem::path& path) {
  png_image pi;
  std::memset(&pi, 0, sizeof(pi));
  pi.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&pi, path.c_str()))
    throw FormatError(path.string() + ": " + pi.message);
  pi.format = PNG_FORMAT_RGB;
  Image out(static_cast<Index>(pi.width), static_cast<Index>(pi.height));
  if (!png_image_finish_read(&pi, nullptr, out.pixels.data(), 0, nullptr)) {
    png_image_free(&pi);
    throw FormatError(path.string() + ": " + pi.message);
  }
  return out;
}

}  // namespace dklrom::img
