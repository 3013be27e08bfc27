#pragma once

// Patch-grid construction and the symmetry geometry used by the masking
// strategies. Everything here is a pure function of plain values.

#include <cmath>
#include <cstddef>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "vmae/error.hpp"

namespace vmae {

struct Point2 {
  double x = 0.0;
  double y = 0.0;

  friend bool operator==(const Point2&, const Point2&) = default;
};

/// Axis-aligned rectangle in pixel coordinates.
struct Box {
  double x_min = 0.0;
  double y_min = 0.0;
  double x_max = 0.0;
  double y_max = 0.0;

  double width() const { return x_max - x_min; }
  double height() const { return y_max - y_min; }
  double area() const { return width() * height(); }
  Point2 center() const { return {0.5 * (x_min + x_max), 0.5 * (y_min + y_max)}; }

  // Strict on every side; centers on the border count as outside.
  bool strictly_contains(Point2 p) const {
    return p.x > x_min && p.x < x_max && p.y > y_min && p.y < y_max;
  }

  friend bool operator==(const Box&, const Box&) = default;
};

inline void validate_box(const Box& box, double image_height, double image_width) {
  const bool finite = std::isfinite(box.x_min) && std::isfinite(box.x_max) &&
                      std::isfinite(box.y_min) && std::isfinite(box.y_max);
  if (!finite || box.x_min >= box.x_max || box.y_min >= box.y_max) {
    throw Error(ErrorCode::kInvalidAnnotation, "box must satisfy x_min < x_max and y_min < y_max");
  }
  if (box.x_min < 0.0 || box.y_min < 0.0 || box.x_max > image_width || box.y_max > image_height) {
    throw Error(ErrorCode::kInvalidAnnotation, "box exceeds image bounds");
  }
}

enum class AnnotationKind { kNone, kBoxOnly, kBoxAndAngle };

inline std::string_view to_string(AnnotationKind kind) {
  switch (kind) {
    case AnnotationKind::kNone: return "NONE";
    case AnnotationKind::kBoxOnly: return "BOX_ONLY";
    case AnnotationKind::kBoxAndAngle: return "BOX_AND_ANGLE";
  }
  return "NONE";
}

/// Detector output for one image. The kind is derived from which fields are
/// present, so an angle without a box cannot be represented.
class Annotation {
 public:
  Annotation() = default;

  static Annotation none() { return Annotation(); }
  static Annotation box_only(const Box& box) { return make(box, std::nullopt); }
  static Annotation box_and_angle(const Box& box, double angle_deg) { return make(box, angle_deg); }

  static Annotation make(std::optional<Box> box, std::optional<double> angle_deg) {
    if (angle_deg && !box) {
      throw Error(ErrorCode::kInvalidAnnotation, "angle requires a box");
    }
    if (angle_deg && !(std::isfinite(*angle_deg) && *angle_deg >= 0.0 && *angle_deg < 360.0)) {
      throw Error(ErrorCode::kInvalidAnnotation, "angle must lie in [0, 360)");
    }
    Annotation a;
    a.box_ = box;
    a.angle_ = angle_deg;
    return a;
  }

  AnnotationKind kind() const {
    if (!box_) return AnnotationKind::kNone;
    return angle_ ? AnnotationKind::kBoxAndAngle : AnnotationKind::kBoxOnly;
  }

  const std::optional<Box>& box() const { return box_; }
  const std::optional<double>& angle() const { return angle_; }

  friend bool operator==(const Annotation&, const Annotation&) = default;

 private:
  std::optional<Box> box_;
  std::optional<double> angle_;
};

/// Row-major tessellation of an image into square, non-overlapping patches.
class PatchGrid {
 public:
  PatchGrid() = default;

  static PatchGrid build(int image_height, int image_width, int patch_size) {
    if (patch_size <= 0 || image_height <= 0 || image_width <= 0) {
      throw Error(ErrorCode::kInvalidConfig, "grid dimensions must be positive");
    }
    if (image_height % patch_size != 0 || image_width % patch_size != 0) {
      throw Error(ErrorCode::kNonDivisibleDimensions,
                  std::to_string(image_height) + "x" + std::to_string(image_width) +
                      " is not divisible by patch size " + std::to_string(patch_size));
    }
    PatchGrid g;
    g.image_height_ = image_height;
    g.image_width_ = image_width;
    g.patch_size_ = patch_size;
    g.rows_ = image_height / patch_size;
    g.cols_ = image_width / patch_size;
    return g;
  }

  int image_height() const { return image_height_; }
  int image_width() const { return image_width_; }
  int patch_size() const { return patch_size_; }
  int rows() const { return rows_; }
  int cols() const { return cols_; }
  std::size_t size() const { return static_cast<std::size_t>(rows_) * static_cast<std::size_t>(cols_); }

  std::size_t index(int row, int col) const {
    return static_cast<std::size_t>(row) * static_cast<std::size_t>(cols_) + static_cast<std::size_t>(col);
  }
  int row_of(std::size_t index) const { return static_cast<int>(index / static_cast<std::size_t>(cols_)); }
  int col_of(std::size_t index) const { return static_cast<int>(index % static_cast<std::size_t>(cols_)); }

  Point2 center(std::size_t index) const {
    if (index >= size()) {
      throw Error(ErrorCode::kIndexOutOfRange,
                  "patch index " + std::to_string(index) + " >= " + std::to_string(size()));
    }
    return {(col_of(index) + 0.5) * patch_size_, (row_of(index) + 0.5) * patch_size_};
  }

  /// Cell containing p, with half-open cells [lo, hi). A point within 1e-9 of
  /// a cell boundary snaps to the upper cell so that reflections computed
  /// through different trig paths land in the same cell.
  std::optional<std::size_t> cell_of(Point2 p) const {
    const double snap = 1e-9;
    const double fc = std::floor(p.x / patch_size_ + snap);
    const double fr = std::floor(p.y / patch_size_ + snap);
    if (fc < 0.0 || fr < 0.0 || fc >= cols_ || fr >= rows_) return std::nullopt;
    return index(static_cast<int>(fr), static_cast<int>(fc));
  }

  friend bool operator==(const PatchGrid&, const PatchGrid&) = default;

 private:
  int image_height_ = 0;
  int image_width_ = 0;
  int patch_size_ = 1;
  int rows_ = 0;
  int cols_ = 0;
};

inline PatchGrid build_patch_grid(int image_height, int image_width, int patch_size) {
  return PatchGrid::build(image_height, image_width, patch_size);
}

inline Point2 patch_center(const PatchGrid& grid, std::size_t index) { return grid.center(index); }

/// Indices whose patch center lies strictly inside the box, ascending.
inline std::vector<std::size_t> patches_in_box(const PatchGrid& grid, const Box& box) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < grid.size(); ++i) {
    if (box.strictly_contains(grid.center(i))) out.push_back(i);
  }
  return out;
}

/// Unit direction (cos, sin) of an angle in degrees. Multiples of 90 degrees
/// return exact axis vectors.
inline Point2 unit_direction(double angle_deg) {
  const double wrapped = std::fmod(std::fmod(angle_deg, 360.0) + 360.0, 360.0);
  if (wrapped == 0.0) return {1.0, 0.0};
  if (wrapped == 90.0) return {0.0, 1.0};
  if (wrapped == 180.0) return {-1.0, 0.0};
  if (wrapped == 270.0) return {0.0, -1.0};
  const double rad = wrapped * 3.14159265358979323846 / 180.0;
  return {std::cos(rad), std::sin(rad)};
}

struct AxisLine {
  Point2 point;
  Point2 direction;  // unit length
};

inline AxisLine symmetry_axis(const Box& box, double angle_deg) {
  return {box.center(), unit_direction(angle_deg)};
}

/// Mirror image of p across the axis line.
inline Point2 reflect_point(const AxisLine& axis, Point2 p) {
  const double dx = p.x - axis.point.x;
  const double dy = p.y - axis.point.y;
  const double t = dx * axis.direction.x + dy * axis.direction.y;
  const double fx = axis.point.x + t * axis.direction.x;
  const double fy = axis.point.y + t * axis.direction.y;
  return {2.0 * fx - p.x, 2.0 * fy - p.y};
}

struct SymmetryPairing {
  // Each pair is stored as (smaller, larger); the list is sorted ascending.
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  std::vector<std::size_t> unpaired;

  std::size_t paired_count() const { return 2 * pairs.size(); }
};

/// Pairs each foreground patch with the foreground patch whose cell contains
/// its reflected center. A pair is kept only when the match is mutual, which
/// makes the result a matching: no index appears in two pairs. Self matches,
/// matches outside the foreground, and one-sided matches go to `unpaired`.
inline SymmetryPairing compute_symmetry_pairs(const PatchGrid& grid, const Box& box, double angle_deg) {
  const auto foreground = patches_in_box(grid, box);
  const AxisLine axis = symmetry_axis(box, angle_deg);

  std::vector<char> in_fg(grid.size(), 0);
  for (auto i : foreground) in_fg[i] = 1;

  const std::size_t none = grid.size();
  std::vector<std::size_t> partner(grid.size(), none);
  for (auto i : foreground) {
    const auto cell = grid.cell_of(reflect_point(axis, grid.center(i)));
    if (cell && *cell != i && in_fg[*cell]) partner[i] = *cell;
  }

  SymmetryPairing out;
  for (auto i : foreground) {
    const std::size_t j = partner[i];
    if (j != none && partner[j] == i) {
      if (i < j) out.pairs.emplace_back(i, j);
    } else {
      out.unpaired.push_back(i);
    }
  }
  return out;
}

}  // namespace vmae
