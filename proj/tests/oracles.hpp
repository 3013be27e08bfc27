#pragma once

// Independent reference computations used by the unit and acceptance tests.
// Each one takes a different route from the library code it checks.

#include <cmath>
#include <cstddef>
#include <optional>
#include <set>
#include <utility>
#include <vector>

#include "vmae/geometry.hpp"

namespace vmae::oracle {

// Reflection through the matrix form [[cos 2t, sin 2t], [sin 2t, -cos 2t]]
// about a line through `through` at angle t.
inline Point2 reflect_matrix(Point2 through, double angle_deg, Point2 p) {
  const double t2 = 2.0 * angle_deg * 3.14159265358979323846 / 180.0;
  const double c = std::cos(t2), s = std::sin(t2);
  const double dx = p.x - through.x, dy = p.y - through.y;
  return {through.x + c * dx + s * dy, through.y + s * dx - c * dy};
}

// Scans every patch center for the cell that holds p; same half-open,
// upper-snapping convention as the grid.
inline std::optional<std::size_t> find_cell_brute(int rows, int cols, int patch, Point2 p) {
  const double h = 0.5 * patch;
  const double snap = 1e-9 * patch;
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) {
      const double cx = (c + 0.5) * patch, cy = (r + 0.5) * patch;
      if (p.x >= cx - h - snap && p.x < cx + h - snap && p.y >= cy - h - snap && p.y < cy + h - snap) {
        return static_cast<std::size_t>(r * cols + c);
      }
    }
  }
  return std::nullopt;
}

struct BrutePairing {
  std::set<std::pair<std::size_t, std::size_t>> pairs;
  std::set<std::size_t> unpaired;
};

inline BrutePairing symmetry_pairs_brute(int height, int width, int patch, const Box& box, double angle_deg) {
  const int rows = height / patch, cols = width / patch;
  const std::size_t n = static_cast<std::size_t>(rows * cols);
  std::vector<int> fg(n, 0);
  std::vector<Point2> centers(n);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) {
      const std::size_t i = static_cast<std::size_t>(r * cols + c);
      centers[i] = {(c + 0.5) * patch, (r + 0.5) * patch};
      const auto& p = centers[i];
      fg[i] = p.x > box.x_min && p.x < box.x_max && p.y > box.y_min && p.y < box.y_max;
    }
  const Point2 mid{0.5 * (box.x_min + box.x_max), 0.5 * (box.y_min + box.y_max)};
  std::vector<long> match(n, -1);
  for (std::size_t i = 0; i < n; ++i) {
    if (!fg[i]) continue;
    auto cell = find_cell_brute(rows, cols, patch, reflect_matrix(mid, angle_deg, centers[i]));
    if (cell && *cell != i && fg[*cell]) match[i] = static_cast<long>(*cell);
  }
  BrutePairing out;
  for (std::size_t i = 0; i < n; ++i) {
    if (!fg[i]) continue;
    const long j = match[i];
    if (j >= 0 && match[static_cast<std::size_t>(j)] == static_cast<long>(i)) {
      out.pairs.insert({std::min<std::size_t>(i, j), std::max<std::size_t>(i, j)});
    } else {
      out.unpaired.insert(i);
    }
  }
  return out;
}

}  // namespace vmae::oracle
