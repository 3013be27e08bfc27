#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "oracles.hpp"
#include "vmae/geometry.hpp"
#include "vmae/rng.hpp"

namespace vmae {
namespace {

TEST(PatchGrid, DefaultGridHas196Patches) {
  const auto g = build_patch_grid(224, 224, 16);
  EXPECT_EQ(g.rows(), 14);
  EXPECT_EQ(g.cols(), 14);
  EXPECT_EQ(g.size(), 196u);
}

TEST(PatchGrid, SinglePatchAndRectangular) {
  EXPECT_EQ(build_patch_grid(16, 16, 16).size(), 1u);
  const auto g = build_patch_grid(224, 112, 16);
  EXPECT_EQ(g.rows(), 14);
  EXPECT_EQ(g.cols(), 7);
  EXPECT_EQ(g.size(), 98u);
}

TEST(PatchGrid, RejectsRemainder) {
  try {
    build_patch_grid(225, 224, 16);
    FAIL() << "expected NonDivisibleDimensions";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kNonDivisibleDimensions);
  }
}

TEST(PatchGrid, CentersAreRowMajor) {
  const auto g = build_patch_grid(224, 224, 16);
  EXPECT_EQ(patch_center(g, 0), (Point2{8.0, 8.0}));
  EXPECT_EQ(patch_center(g, 13), (Point2{216.0, 8.0}));
  EXPECT_EQ(patch_center(g, 195), (Point2{216.0, 216.0}));
  try {
    patch_center(g, 196);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kIndexOutOfRange);
  }
}

TEST(PatchesInBox, FullSmallAndHalf) {
  const auto g = build_patch_grid(224, 224, 16);
  EXPECT_EQ(patches_in_box(g, {0, 0, 224, 224}).size(), 196u);
  EXPECT_TRUE(patches_in_box(g, {0, 0, 7, 7}).empty());
  EXPECT_TRUE(patches_in_box(g, {9, 9, 15, 15}).empty());
  const auto left = patches_in_box(g, {0, 0, 112, 224});
  ASSERT_EQ(left.size(), 98u);
  for (auto i : left) EXPECT_LE(g.col_of(i), 6);
}

TEST(PatchesInBox, CenterOnBorderIsOutside) {
  const auto g = build_patch_grid(32, 32, 16);
  // Box edge passes exactly through the center (8, 8).
  EXPECT_TRUE(patches_in_box(g, {8, 8, 16, 16}).empty());
}

TEST(Annotation, KindFollowsFields) {
  EXPECT_EQ(Annotation::none().kind(), AnnotationKind::kNone);
  EXPECT_EQ(Annotation::box_only({0, 0, 10, 10}).kind(), AnnotationKind::kBoxOnly);
  EXPECT_EQ(Annotation::box_and_angle({0, 0, 10, 10}, 30).kind(), AnnotationKind::kBoxAndAngle);
  EXPECT_THROW(Annotation::make(std::nullopt, 30.0), Error);
  EXPECT_THROW(Annotation::box_and_angle({0, 0, 10, 10}, 360.0), Error);
  EXPECT_THROW(validate_box({5, 0, 5, 10}, 100, 100), Error);
  EXPECT_THROW(validate_box({0, 0, 101, 10}, 100, 100), Error);
  EXPECT_NO_THROW(validate_box({0, 0, 100, 100}, 100, 100));
}

TEST(SymmetryAxis, DirectionFromAngle) {
  const Box box{0, 0, 224, 224};
  const auto vertical = symmetry_axis(box, 90);
  EXPECT_EQ(vertical.point, (Point2{112, 112}));
  EXPECT_EQ(vertical.direction, (Point2{0, 1}));
  EXPECT_EQ(symmetry_axis(box, 0).direction, (Point2{1, 0}));
  const auto diag = symmetry_axis(box, 45).direction;
  EXPECT_NEAR(diag.x, std::sqrt(2.0) / 2, 1e-15);
  EXPECT_NEAR(diag.y, std::sqrt(2.0) / 2, 1e-15);
}

TEST(ReflectPoint, Examples) {
  const AxisLine vertical{{112, 112}, {0, 1}};
  EXPECT_EQ(reflect_point(vertical, {8, 8}), (Point2{216, 8}));
  EXPECT_EQ(reflect_point(vertical, {112, 40}), (Point2{112, 40}));
  const AxisLine diag{{0, 0}, unit_direction(45)};
  const auto p = reflect_point(diag, {1, 0});
  EXPECT_NEAR(p.x, 0.0, 1e-15);
  EXPECT_NEAR(p.y, 1.0, 1e-15);
}

TEST(ReflectPoint, InvolutionOnRandomAxes) {
  Rng rng = make_rng(11);
  for (int k = 0; k < 1000; ++k) {
    const AxisLine axis{{uniform(rng, -50, 300), uniform(rng, -50, 300)}, unit_direction(uniform(rng, 0, 360))};
    EXPECT_NEAR(std::hypot(axis.direction.x, axis.direction.y), 1.0, 1e-12);
    const Point2 p{uniform(rng, -100, 400), uniform(rng, -100, 400)};
    const Point2 back = reflect_point(axis, reflect_point(axis, p));
    EXPECT_NEAR(back.x, p.x, 1e-9);
    EXPECT_NEAR(back.y, p.y, 1e-9);
  }
}

TEST(SymmetryPairs, VerticalAxisMirrorsColumns) {
  const auto g = build_patch_grid(224, 224, 16);
  const auto pairing = compute_symmetry_pairs(g, {0, 0, 224, 224}, 90);
  EXPECT_EQ(pairing.pairs.size(), 98u);
  EXPECT_TRUE(pairing.unpaired.empty());
  for (const auto& [a, b] : pairing.pairs) {
    EXPECT_EQ(g.row_of(a), g.row_of(b));
    EXPECT_EQ(g.col_of(b), 13 - g.col_of(a));
  }
}

TEST(SymmetryPairs, SingleColumnBoxIsAllOnAxis) {
  const auto g = build_patch_grid(224, 224, 16);
  // Column 5 spans x in [80, 96); the box center x = 88 is the column center.
  const auto pairing = compute_symmetry_pairs(g, {81, 0, 95, 224}, 90);
  EXPECT_TRUE(pairing.pairs.empty());
  EXPECT_EQ(pairing.unpaired.size(), 14u);
}

TEST(SymmetryPairs, MatchesBruteForceAt45Degrees) {
  const auto g = build_patch_grid(224, 224, 16);
  const Box box{0, 0, 224, 224};
  const auto pairing = compute_symmetry_pairs(g, box, 45);
  const auto brute = oracle::symmetry_pairs_brute(224, 224, 16, box, 45);
  std::set<std::pair<std::size_t, std::size_t>> got(pairing.pairs.begin(), pairing.pairs.end());
  EXPECT_EQ(got, brute.pairs);
  EXPECT_EQ(std::set<std::size_t>(pairing.unpaired.begin(), pairing.unpaired.end()), brute.unpaired);
  EXPECT_FALSE(got.empty());
}

TEST(SymmetryPairs, StructuralProperties) {
  const auto g = build_patch_grid(224, 224, 16);
  Rng rng = make_rng(5);
  for (int k = 0; k < 300; ++k) {
    const double x0 = uniform(rng, 0, 150), y0 = uniform(rng, 0, 150);
    const Box box{x0, y0, uniform(rng, x0 + 20, 224), uniform(rng, y0 + 20, 224)};
    const double angle = uniform(rng, 0, 180);
    const auto p = compute_symmetry_pairs(g, box, angle);
    const auto fg = patches_in_box(g, box);

    // Partition of the foreground, no index twice.
    std::multiset<std::size_t> seen(p.unpaired.begin(), p.unpaired.end());
    for (const auto& [a, b] : p.pairs) {
      EXPECT_LT(a, b);
      seen.insert(a);
      seen.insert(b);
    }
    EXPECT_EQ(seen, std::multiset<std::size_t>(fg.begin(), fg.end()));

    // Reflecting the partner's center lands back in the cell.
    const auto axis = symmetry_axis(box, angle);
    for (const auto& [a, b] : p.pairs) {
      const auto back = reflect_point(axis, g.center(b));
      const auto ca = g.center(a);
      EXPECT_LE(std::max(std::abs(back.x - ca.x), std::abs(back.y - ca.y)), 0.5 * g.patch_size() + 1e-9);
    }

    // A line is undirected.
    const auto flipped = compute_symmetry_pairs(g, box, angle + 180);
    EXPECT_EQ(flipped.pairs, p.pairs);
  }
}

}  // namespace
}  // namespace vmae
