#pragma once

// Small raster renderers: loss curves and mask-plan overlays, written as PPM.

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "vmae/geometry.hpp"
#include "vmae/image.hpp"
#include "vmae/losses.hpp"
#include "vmae/masking.hpp"
#include "vmae/metrics.hpp"

namespace vmae {

using Rgb = std::array<double, 3>;

namespace detail {

inline void put_pixel(Image& img, int x, int y, const Rgb& c) {
  if (x < 0 || y < 0 || x >= img.width || y >= img.height) return;
  for (int k = 0; k < 3; ++k) img.at(y, x, k) = c[static_cast<std::size_t>(k)];
}

// Bresenham.
inline void draw_line(Image& img, int x0, int y0, int x1, int y1, const Rgb& c) {
  const int dx = std::abs(x1 - x0), dy = -std::abs(y1 - y0);
  const int sx = x0 < x1 ? 1 : -1, sy = y0 < y1 ? 1 : -1;
  int err = dx + dy;
  while (true) {
    put_pixel(img, x0, y0, c);
    if (x0 == x1 && y0 == y1) break;
    const int e2 = 2 * err;
    if (e2 >= dy) {
      err += dy;
      x0 += sx;
    }
    if (e2 <= dx) {
      err += dx;
      y0 += sy;
    }
  }
}

}  // namespace detail

/// Line chart of ys against their index, scaled to the finite range.
/// Non-finite points break the line.
inline Image render_curve(const std::vector<double>& ys, int height = 240, int width = 360) {
  Image img(height, width, 3);
  std::fill(img.data.begin(), img.data.end(), 1.0);
  const int left = 30, right = width - 10, top = 10, bottom = height - 25;
  const Rgb axis{0.2, 0.2, 0.2}, grid{0.88, 0.88, 0.88}, line{0.1, 0.3, 0.8};
  for (int k = 1; k < 4; ++k) {
    const int y = top + (bottom - top) * k / 4;
    detail::draw_line(img, left, y, right, y, grid);
  }
  detail::draw_line(img, left, top, left, bottom, axis);
  detail::draw_line(img, left, bottom, right, bottom, axis);

  double lo = INFINITY, hi = -INFINITY;
  for (double v : ys)
    if (std::isfinite(v)) {
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
  if (!std::isfinite(lo)) return img;
  if (hi - lo < 1e-12) {
    lo -= 0.5;
    hi += 0.5;
  }
  const auto n = ys.size();
  auto px = [&](std::size_t i) {
    return n < 2 ? (left + right) / 2 : left + static_cast<int>(std::lround(double(i) * (right - left) / double(n - 1)));
  };
  auto py = [&](double v) { return bottom - static_cast<int>(std::lround((v - lo) / (hi - lo) * (bottom - top))); };
  std::optional<std::pair<int, int>> prev;
  for (std::size_t i = 0; i < n; ++i) {
    if (!std::isfinite(ys[i])) {
      prev.reset();
      continue;
    }
    const std::pair<int, int> cur{px(i), py(ys[i])};
    if (prev) detail::draw_line(img, prev->first, prev->second, cur.first, cur.second, line);
    detail::put_pixel(img, cur.first, cur.second, line);
    prev = cur;
  }
  return img;
}

/// One curve per loss component and one for the total:
/// <dir>/loss_l_r.ppm ... <dir>/loss_total.ppm.
inline std::vector<std::filesystem::path> plot_metrics(const MetricsFile& metrics, const std::filesystem::path& dir) {
  if (metrics.rows.empty()) throw Error(ErrorCode::kEmptyBatch, "metrics file has no rows");
  std::filesystem::create_directories(dir);
  std::vector<std::string> keys(kLossNames.begin(), kLossNames.end());
  keys.emplace_back("total");
  std::vector<std::filesystem::path> out;
  for (const auto& key : keys) {
    std::vector<double> ys;
    for (const auto& r : metrics.rows) {
      if (!r.contains(key)) throw Error(ErrorCode::kParseError, "metrics row lacks " + key);
      ys.push_back(r.at(key).is_number() ? r.at(key).get<double>() : NAN);
    }
    const auto path = dir / ("loss_" + key + ".ppm");
    write_netpbm(render_curve(ys), path);
    out.push_back(path);
  }
  return out;
}

/// Masked patches dimmed toward gray, the box outlined in red and the
/// symmetry axis drawn in green.
inline Image mask_overlay(const Image& image, const PatchGrid& grid, const MaskPlan& plan,
                          const Annotation& annotation = {}) {
  if (plan.masked.size() != grid.size()) throw Error(ErrorCode::kShapeMismatch, "plan does not match grid");
  Image img = image.channels == 1 ? replicate_channels(image) : image;
  const int ps = grid.patch_size();
  for (std::size_t i = 0; i < grid.size(); ++i) {
    if (!plan.masked[i]) continue;
    const int y0 = grid.row_of(i) * ps, x0 = grid.col_of(i) * ps;
    for (int y = y0; y < y0 + ps; ++y)
      for (int x = x0; x < x0 + ps; ++x)
        for (int c = 0; c < 3; ++c) img.at(y, x, c) = 0.25 * img.at(y, x, c) + 0.75 * 0.35;
  }
  if (const auto& box = annotation.box()) {
    const Rgb red{0.95, 0.1, 0.1};
    const int x0 = static_cast<int>(std::floor(box->x_min)), x1 = static_cast<int>(std::ceil(box->x_max)) - 1;
    const int y0 = static_cast<int>(std::floor(box->y_min)), y1 = static_cast<int>(std::ceil(box->y_max)) - 1;
    detail::draw_line(img, x0, y0, x1, y0, red);
    detail::draw_line(img, x1, y0, x1, y1, red);
    detail::draw_line(img, x1, y1, x0, y1, red);
    detail::draw_line(img, x0, y1, x0, y0, red);
    if (annotation.angle()) {
      const Point2 c = box->center();
      const Point2 d = unit_direction(*annotation.angle());
      const double reach = std::hypot(img.width, img.height);
      detail::draw_line(img, static_cast<int>(std::lround(c.x - reach * d.x)),
                        static_cast<int>(std::lround(c.y - reach * d.y)),
                        static_cast<int>(std::lround(c.x + reach * d.x)),
                        static_cast<int>(std::lround(c.y + reach * d.y)), {0.1, 0.85, 0.2});
    }
  }
  return img;
}

}  // namespace vmae
