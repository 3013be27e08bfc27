#pragma once

// Template prompts from box/angle annotations and the attribute corpus.

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

#include "vmae/error.hpp"
#include "vmae/geometry.hpp"
#include "vmae/rng.hpp"

namespace vmae {

inline constexpr std::array<std::string_view, 9> kCenterWords = {
    "top-left", "top", "top-right", "left", "center", "right", "bottom-left", "bottom", "bottom-right"};
inline constexpr std::array<std::string_view, 3> kRatioWords = {"small", "medium", "large"};
inline constexpr std::array<std::string_view, 8> kAngleWords = {
    "front", "front-right", "right side", "rear-right", "rear", "rear-left", "left side", "front-left"};

namespace detail {

// Cell of coordinate v on a 3-way split of [0, extent]; a value on a
// boundary belongs to the lower cell.
inline int tertile_cell(double v, double extent) {
  const int k = static_cast<int>(std::ceil(v * 3.0 / extent)) - 1;
  return std::clamp(k, 0, 2);
}

}  // namespace detail

inline std::string_view bucket_center(const Box& box, int image_height, int image_width) {
  const Point2 c = box.center();
  const int col = detail::tertile_cell(c.x, image_width);
  const int row = detail::tertile_cell(c.y, image_height);
  return kCenterWords[static_cast<std::size_t>(row * 3 + col)];
}

inline std::string_view bucket_ratio(const Box& box, int image_height, int image_width) {
  const double r = box.area() / (static_cast<double>(image_height) * image_width);
  if (r < 1.0 / 3.0) return kRatioWords[0];
  if (r < 2.0 / 3.0) return kRatioWords[1];
  return kRatioWords[2];
}

/// Sector k covers [45k - 22.5, 45k + 22.5) degrees, 0 = front.
inline std::string_view bucket_angle(double angle_deg) {
  if (!(angle_deg >= 0.0 && angle_deg < 360.0)) throw Error(ErrorCode::kInvalidAnnotation, "angle outside [0, 360)");
  const int k = static_cast<int>(std::floor((angle_deg + 22.5) / 45.0)) % 8;
  return kAngleWords[static_cast<std::size_t>(k)];
}

enum class PromptSource { kQ1, kQ2 };

inline std::string_view to_string(PromptSource s) { return s == PromptSource::kQ1 ? "Q1" : "Q2"; }

struct PromptRecord {
  std::string text;
  PromptSource source = PromptSource::kQ1;
  std::string center_bucket;
  std::string ratio_bucket;
  std::optional<std::string> angle_bucket;  // Q2 only

  friend bool operator==(const PromptRecord&, const PromptRecord&) = default;
};

/// Q1 for box-only annotations, Q2 when an angle is present, nothing otherwise.
inline std::optional<PromptRecord> generate_prompt(const Annotation& annotation, int image_height, int image_width) {
  if (annotation.kind() == AnnotationKind::kNone) return std::nullopt;
  const Box& box = *annotation.box();
  PromptRecord p;
  p.center_bucket = bucket_center(box, image_height, image_width);
  p.ratio_bucket = bucket_ratio(box, image_height, image_width);
  p.text = "A photo of a vehicle at the " + p.center_bucket + " of the image, occupying a " + p.ratio_bucket +
           " portion of the frame";
  if (annotation.kind() == AnnotationKind::kBoxAndAngle) {
    p.source = PromptSource::kQ2;
    p.angle_bucket = std::string(bucket_angle(*annotation.angle()));
    p.text += ", viewed from the " + *p.angle_bucket + ".";
  } else {
    p.text += ".";
  }
  return p;
}

// ----- attribute corpus -----

struct AttributeCorpus {
  std::vector<std::string> texts;

  std::size_t size() const { return texts.size(); }
};

/// Keeps the first occurrence of each string, in order.
inline AttributeCorpus make_corpus(const std::vector<std::string>& lines) {
  AttributeCorpus c;
  std::unordered_set<std::string> seen;
  for (const auto& l : lines) {
    if (seen.insert(l).second) c.texts.push_back(l);
  }
  return c;
}

/// One description per line; blank lines are skipped, CR before LF stripped.
inline AttributeCorpus load_attribute_corpus(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kFileUnreadable, "cannot read corpus " + path.string());
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    lines.push_back(line);
  }
  AttributeCorpus c = make_corpus(lines);
  if (c.texts.empty()) throw Error(ErrorCode::kEmptyCorpus, "corpus " + path.string() + " has no descriptions");
  return c;
}

inline void write_attribute_corpus(const AttributeCorpus& corpus, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::kFileUnreadable, "cannot write " + path.string());
  for (const auto& t : corpus.texts) out << t << '\n';
}

/// n distinct vehicle-model descriptions drawn from fixed attribute lists.
inline AttributeCorpus synthetic_attribute_corpus(std::size_t n, std::uint64_t seed) {
  static constexpr std::array<std::string_view, 8> brands = {"Aurel", "Brisk", "Corvan", "Dalto",
                                                             "Eskel", "Fenwa", "Garro", "Hollis"};
  static constexpr std::array<std::string_view, 7> colors = {"white", "black", "silver", "red", "blue", "grey", "green"};
  static constexpr std::array<std::string_view, 4> energy = {"petrol", "diesel", "hybrid", "electric"};
  static constexpr std::array<std::string_view, 5> level = {"compact car", "mid-size sedan", "full-size SUV",
                                                            "minivan", "pickup"};
  Rng rng = make_rng(seed, {0xC0B905});
  auto pick = [&](const auto& list) { return std::string(list[uniform_index(rng, list.size())]); };

  AttributeCorpus c;
  std::unordered_set<std::string> seen;
  const std::size_t max_tries = 1000 * (n + 1);
  for (std::size_t tries = 0; c.texts.size() < n && tries < max_tries; ++tries) {
    const int doors = 2 + 2 * static_cast<int>(uniform_index(rng, 2)) + static_cast<int>(uniform_index(rng, 2));
    const int seats = 2 + static_cast<int>(uniform_index(rng, 6));
    const int wheelbase = 2400 + 10 * static_cast<int>(uniform_index(rng, 60));
    const int year = 2005 + static_cast<int>(uniform_index(rng, 18));
    std::string t = "A " + pick(colors) + " " + pick(brands) + " " + pick(level) + " with " + pick(energy) +
                    " power, " + std::to_string(doors) + " doors, " + std::to_string(seats) + " seats, a " +
                    std::to_string(wheelbase) + " mm wheelbase, sold " + std::to_string(year) + "-" +
                    std::to_string(year + 1 + static_cast<int>(uniform_index(rng, 6))) + ".";
    if (seen.insert(t).second) c.texts.push_back(std::move(t));
  }
  if (c.texts.size() < n) throw Error(ErrorCode::kInvalidConfig, "cannot draw that many distinct descriptions");
  return c;
}

}  // namespace vmae
