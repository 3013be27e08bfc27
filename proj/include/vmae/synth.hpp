#pragma once

// Synthetic bilaterally symmetric "vehicles" with exact box/angle labels.
//
// Every pixel is a function of (u, |v|), its coordinates along and across the
// symmetry axis, so the rendered image is mirror-symmetric about the axis up
// to the image border, background included.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "vmae/geometry.hpp"
#include "vmae/image.hpp"
#include "vmae/manifest.hpp"
#include "vmae/rng.hpp"
#include "vmae/teachers.hpp"
#include "vmae/textgen.hpp"

namespace vmae {

struct SynthOptions {
  int height = 64;
  int width = 64;
  std::array<double, 3> kind_mixture = {0.10, 0.20, 0.70};  // NONE, BOX_ONLY, BOX_AND_ANGLE
  std::optional<AnnotationKind> kind;                        // overrides the mixture draw
  std::optional<int> angle_deg;                              // overrides the angle draw
};

struct SynthSample {
  Image image;
  Annotation annotation;
  Image contour;
  std::optional<PromptRecord> prompt;
  Box true_box;          // present in the image whatever the annotation kind
  double true_angle = 0;
};

namespace detail {

inline AnnotationKind draw_kind(Rng& rng, const std::array<double, 3>& mixture) {
  const double total = mixture[0] + mixture[1] + mixture[2];
  if (!(total > 0) || mixture[0] < 0 || mixture[1] < 0 || mixture[2] < 0) {
    throw Error(ErrorCode::kInvalidConfig, "kind mixture must be non-negative with a positive sum");
  }
  const double u = uniform01(rng) * total;
  if (u < mixture[0]) return AnnotationKind::kNone;
  if (u < mixture[0] + mixture[1]) return AnnotationKind::kBoxOnly;
  return AnnotationKind::kBoxAndAngle;
}

inline double cell_noise(std::uint64_t seed, double u, double v) {
  const auto a = static_cast<std::uint64_t>(static_cast<std::int64_t>(std::floor(u / 2.0)));
  const auto b = static_cast<std::uint64_t>(static_cast<std::int64_t>(std::floor(v / 2.0)));
  std::uint64_t h = splitmix64(seed ^ (a * 0x9E3779B97F4A7C15ULL));
  h = splitmix64(h ^ (b * 0xC2B2AE3D27D4EB4FULL));
  return static_cast<double>(h >> 11) * 0x1.0p-53 - 0.5;
}

struct Palette {
  std::array<double, 3> background, body, cabin, wheel, light;
  double wave_u, wave_v, phase_u, phase_v;
};

inline std::array<double, 3> random_color(Rng& rng, double lo, double hi) {
  return {uniform(rng, lo, hi), uniform(rng, lo, hi), uniform(rng, lo, hi)};
}

inline bool in_disc(double u, double v, double cu, double cv, double r) {
  return (u - cu) * (u - cu) + (v - cv) * (v - cv) <= r * r;
}

}  // namespace detail

/// Deterministic in (seed, options).
inline SynthSample synth_sample(std::uint64_t seed, const SynthOptions& opt = {}) {
  if (opt.height < 16 || opt.width < 16) throw Error(ErrorCode::kInvalidConfig, "synthetic images need >= 16 px");
  Rng rng = make_rng(seed, {0x5F17});
  SynthSample s;
  const AnnotationKind kind = opt.kind ? *opt.kind : detail::draw_kind(rng, opt.kind_mixture);

  // Integer center and radius keep the box and the mirror map exact.
  const int short_side = std::min(opt.height, opt.width);
  const int r_lo = std::max(4, short_side / 5), r_hi = std::max(r_lo, short_side * 2 / 5);
  const int radius = r_lo + static_cast<int>(uniform_index(rng, static_cast<std::size_t>(r_hi - r_lo + 1)));
  const int cx = radius + static_cast<int>(uniform_index(rng, static_cast<std::size_t>(opt.width - 2 * radius + 1)));
  const int cy = radius + static_cast<int>(uniform_index(rng, static_cast<std::size_t>(opt.height - 2 * radius + 1)));
  const int angle = opt.angle_deg ? *opt.angle_deg : static_cast<int>(uniform_index(rng, 360));
  if (angle < 0 || angle >= 360) throw Error(ErrorCode::kInvalidConfig, "angle must lie in [0, 360)");

  detail::Palette pal;
  pal.background = detail::random_color(rng, 0.15, 0.55);
  pal.body = detail::random_color(rng, 0.35, 0.95);
  pal.cabin = detail::random_color(rng, 0.05, 0.35);
  pal.wheel = {0.05, 0.05, 0.06};
  pal.light = {0.98, 0.92, 0.55};
  pal.wave_u = uniform(rng, 0.2, 0.8);
  pal.wave_v = uniform(rng, 0.2, 0.8);
  pal.phase_u = uniform(rng, 0, 6.283185307179586);
  pal.phase_v = uniform(rng, 0, 6.283185307179586);
  const std::uint64_t noise_seed = rng();

  const Point2 d = unit_direction(static_cast<double>(angle));
  const double R = radius;
  s.image = Image(opt.height, opt.width, 3);
  for (int y = 0; y < opt.height; ++y) {
    for (int x = 0; x < opt.width; ++x) {
      const double qx = (x + 0.5) - cx, qy = (y + 0.5) - cy;
      const double u = qx * d.x + qy * d.y;
      const double v = std::abs(qy * d.x - qx * d.y);

      std::array<double, 3> c;
      const double tex = 0.08 * std::sin(pal.wave_u * u + pal.phase_u) * std::cos(pal.wave_v * v + pal.phase_v) +
                         0.06 * detail::cell_noise(noise_seed, u, v);
      for (int k = 0; k < 3; ++k) c[static_cast<std::size_t>(k)] = pal.background[static_cast<std::size_t>(k)] + tex;

      const double eu = u / (0.9 * R), ev = v / (0.55 * R);
      if (eu * eu + ev * ev <= 1.0) c = pal.body;
      if (std::abs(u - 0.1 * R) <= 0.35 * R && v <= 0.3 * R) c = pal.cabin;
      if (detail::in_disc(u, v, 0.5 * R, 0.55 * R, 0.18 * R) || detail::in_disc(u, v, -0.5 * R, 0.55 * R, 0.18 * R)) {
        c = pal.wheel;
      }
      if (detail::in_disc(u, v, 0.8 * R, 0.3 * R, 0.08 * R)) c = pal.light;
      for (int k = 0; k < 3; ++k) s.image.at(y, x, k) = c[static_cast<std::size_t>(k)];
    }
  }
  quantize_8bit(s.image);

  s.true_box = Box{static_cast<double>(cx - radius), static_cast<double>(cy - radius),
                   static_cast<double>(cx + radius), static_cast<double>(cy + radius)};
  s.true_angle = angle;
  switch (kind) {
    case AnnotationKind::kNone: s.annotation = Annotation::none(); break;
    case AnnotationKind::kBoxOnly: s.annotation = Annotation::box_only(s.true_box); break;
    case AnnotationKind::kBoxAndAngle: s.annotation = Annotation::box_and_angle(s.true_box, angle); break;
  }
  s.contour = sobel_contour(s.image);
  s.prompt = generate_prompt(s.annotation, opt.height, opt.width);
  return s;
}

/// Per-kind counts closest to n * mixture (largest remainder).
inline std::array<std::size_t, 3> kind_quotas(std::size_t n, const std::array<double, 3>& mixture) {
  const double total = mixture[0] + mixture[1] + mixture[2];
  std::array<std::size_t, 3> q{};
  std::array<double, 3> rem{};
  std::size_t used = 0;
  for (std::size_t k = 0; k < 3; ++k) {
    const double exact = static_cast<double>(n) * mixture[k] / total;
    q[k] = static_cast<std::size_t>(std::floor(exact));
    rem[k] = exact - static_cast<double>(q[k]);
    used += q[k];
  }
  while (used < n) {
    std::size_t best = 0;
    for (std::size_t k = 1; k < 3; ++k)
      if (rem[k] > rem[best]) best = k;
    ++q[best];
    rem[best] = -1;
    ++used;
  }
  return q;
}

/// n samples whose kind counts follow the mixture exactly (up to rounding),
/// assigned to positions by a seeded shuffle.
inline std::vector<SynthSample> synth_dataset(std::size_t n, std::uint64_t seed, const SynthOptions& opt = {}) {
  const auto quotas = kind_quotas(n, opt.kind_mixture);
  std::vector<AnnotationKind> kinds;
  const AnnotationKind order[] = {AnnotationKind::kNone, AnnotationKind::kBoxOnly, AnnotationKind::kBoxAndAngle};
  for (std::size_t k = 0; k < 3; ++k) kinds.insert(kinds.end(), quotas[k], order[k]);
  Rng rng = make_rng(seed, {0xD47A});
  shuffle(kinds.begin(), kinds.end(), rng);
  std::vector<SynthSample> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    SynthOptions o = opt;
    o.kind = kinds[i];
    out.push_back(synth_sample(derive_seed(seed, {i}), o));
  }
  return out;
}

struct SynthWriteResult {
  std::filesystem::path manifest;
  std::filesystem::path corpus;
  std::vector<ManifestRecord> records;
};

/// Writes images/, contours/, manifest.jsonl and corpus.txt under dir.
inline SynthWriteResult write_synthetic_dataset(const std::filesystem::path& dir, std::size_t n, std::uint64_t seed,
                                                const SynthOptions& opt = {}, std::size_t corpus_size = 512) {
  namespace fs = std::filesystem;
  fs::create_directories(dir / "images");
  fs::create_directories(dir / "contours");
  SynthWriteResult res;
  const auto samples = synth_dataset(n, seed, opt);
  for (std::size_t i = 0; i < samples.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "%05zu", i);
    ManifestRecord r;
    r.image_path = std::string("images/") + name + ".ppm";
    r.contour_path = std::string("contours/") + name + ".pgm";
    write_netpbm(samples[i].image, dir / r.image_path);
    Image contour = samples[i].contour;
    quantize_8bit(contour);
    write_netpbm(contour, dir / *r.contour_path);
    r.box = samples[i].annotation.box();
    r.angle = samples[i].annotation.angle();
    if (samples[i].prompt) r.prompt = samples[i].prompt->text;
    r.has_pair = r.prompt.has_value();
    res.records.push_back(std::move(r));
  }
  res.manifest = dir / "manifest.jsonl";
  write_manifest(res.records, res.manifest);
  res.corpus = dir / "corpus.txt";
  write_attribute_corpus(synthetic_attribute_corpus(corpus_size, seed), res.corpus);
  return res;
}

}  // namespace vmae
