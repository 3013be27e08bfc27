#pragma once

// Newline-delimited JSON manifests and the in-memory training set.

#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "vmae/backbone.hpp"
#include "vmae/error.hpp"
#include "vmae/geometry.hpp"
#include "vmae/image.hpp"
#include "vmae/teachers.hpp"

namespace vmae {

/// One line of a manifest:
///   {"image": "images/0001.ppm", "contour": "contours/0001.pgm",
///    "box": [x_min, y_min, x_max, y_max], "angle": 90, "prompt": "...", "has_pair": true}
/// Only "image" is required. Relative paths resolve against the manifest's
/// directory.
struct ManifestRecord {
  std::string image_path;
  std::optional<std::string> contour_path;
  std::optional<Box> box;
  std::optional<double> angle;
  std::optional<std::string> prompt;
  bool has_pair = false;

  Annotation annotation() const { return Annotation::make(box, angle); }

  friend bool operator==(const ManifestRecord&, const ManifestRecord&) = default;
};

inline nlohmann::json record_to_json(const ManifestRecord& r) {
  nlohmann::json j;
  j["image"] = r.image_path;
  if (r.contour_path) j["contour"] = *r.contour_path;
  if (r.box) j["box"] = {r.box->x_min, r.box->y_min, r.box->x_max, r.box->y_max};
  if (r.angle) j["angle"] = *r.angle;
  if (r.prompt) j["prompt"] = *r.prompt;
  j["has_pair"] = r.has_pair;
  return j;
}

/// Validates one parsed line; `where` prefixes every message.
inline ManifestRecord record_from_json(const nlohmann::json& j, const std::string& where) {
  auto fail = [&](const std::string& m) { throw Error(ErrorCode::kParseError, where + ": " + m); };
  if (!j.is_object()) fail("record must be an object");
  ManifestRecord r;
  try {
    if (!j.contains("image") || !j["image"].is_string()) fail("missing \"image\"");
    r.image_path = j["image"].get<std::string>();
    if (j.contains("contour") && !j["contour"].is_null()) r.contour_path = j["contour"].get<std::string>();
    if (j.contains("box") && !j["box"].is_null()) {
      const auto v = j["box"].get<std::vector<double>>();
      if (v.size() != 4) fail("box needs four numbers");
      r.box = Box{v[0], v[1], v[2], v[3]};
      if (!(r.box->x_max > r.box->x_min && r.box->y_max > r.box->y_min)) fail("box has no area");
    }
    if (j.contains("angle") && !j["angle"].is_null()) r.angle = j["angle"].get<double>();
    if (j.contains("prompt") && !j["prompt"].is_null()) r.prompt = j["prompt"].get<std::string>();
    r.has_pair = j.contains("has_pair") ? j["has_pair"].get<bool>() : r.prompt.has_value();
  } catch (const nlohmann::json::exception& e) {
    fail(e.what());
  }
  if (r.angle && !r.box) fail("angle requires a box");
  if (r.has_pair != r.prompt.has_value()) fail("has_pair must be true exactly when a prompt is present");
  try {
    r.annotation();
  } catch (const Error& e) {
    fail(e.what());
  }
  return r;
}

inline std::string manifest_line(const ManifestRecord& r) { return record_to_json(r).dump(); }

struct ManifestLoad {
  std::vector<ManifestRecord> records;
  std::vector<std::size_t> line_numbers;  // 1-based source line of each record
  std::vector<std::string> warnings;      // skipped records
};

inline std::filesystem::path resolve_path(const std::filesystem::path& base_dir, const std::string& p) {
  const std::filesystem::path path(p);
  return path.is_absolute() ? path : base_dir / path;
}

/// Malformed lines raise ParseError naming the line. Records whose image
/// file is absent are skipped with a warning when check_images is set.
inline ManifestLoad load_manifest(const std::filesystem::path& path, bool check_images = true) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kFileUnreadable, "cannot read manifest " + path.string());
  const auto base = path.parent_path();
  ManifestLoad out;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    const std::string where = path.string() + ":" + std::to_string(n);
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::kParseError, where + ": " + e.what());
    }
    ManifestRecord r = record_from_json(j, where);
    if (check_images && !std::filesystem::exists(resolve_path(base, r.image_path))) {
      out.warnings.push_back(where + ": missing image " + r.image_path + ", record skipped");
      continue;
    }
    out.records.push_back(std::move(r));
    out.line_numbers.push_back(n);
  }
  return out;
}

inline void write_manifest(const std::vector<ManifestRecord>& records, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::kFileUnreadable, "cannot write manifest " + path.string());
  for (const auto& r : records) out << manifest_line(r) << '\n';
}

// ----- training set -----

struct Sample {
  std::string id;
  Image image;
  Image contour;  // single channel
  Annotation annotation;
  std::optional<std::string> prompt;
};

/// Reads every image, its contour (or the Sobel fallback) and checks sizes
/// and boxes against the backbone config.
inline std::vector<Sample> load_samples(const ManifestLoad& manifest, const std::filesystem::path& manifest_path,
                                        const BackboneConfig& config) {
  const auto base = manifest_path.parent_path();
  std::vector<Sample> out;
  out.reserve(manifest.records.size());
  for (std::size_t k = 0; k < manifest.records.size(); ++k) {
    const auto& r = manifest.records[k];
    Sample s;
    s.id = r.image_path;
    s.image = read_netpbm(resolve_path(base, r.image_path));
    if (s.image.channels == 1) s.image = replicate_channels(s.image);
    if (s.image.height != config.image_height || s.image.width != config.image_width) {
      throw Error(ErrorCode::kShapeMismatch, r.image_path + " is " + std::to_string(s.image.height) + "x" +
                                                 std::to_string(s.image.width) + ", config expects " +
                                                 std::to_string(config.image_height) + "x" +
                                                 std::to_string(config.image_width));
    }
    if (r.contour_path) {
      s.contour = to_grayscale(read_netpbm(resolve_path(base, *r.contour_path)));
      if (s.contour.height != s.image.height || s.contour.width != s.image.width) {
        throw Error(ErrorCode::kShapeMismatch, *r.contour_path + " does not match its image size");
      }
    } else {
      s.contour = sobel_contour(s.image);
    }
    s.annotation = r.annotation();
    if (s.annotation.box()) validate_box(*s.annotation.box(), config.image_height, config.image_width);
    s.prompt = r.prompt;
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace vmae
