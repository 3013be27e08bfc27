#pragma once

// Patch mask planning: random, box-guided and symmetry-guided strategies.
// All three produce exactly target_masked_count masked patches.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "vmae/error.hpp"
#include "vmae/geometry.hpp"
#include "vmae/rng.hpp"

namespace vmae {

enum class MaskStrategy { kRandom, kBoxGuided, kSymmetryGuided };

inline std::string_view to_string(MaskStrategy s) {
  switch (s) {
    case MaskStrategy::kRandom: return "RANDOM";
    case MaskStrategy::kBoxGuided: return "BOX_GUIDED";
    case MaskStrategy::kSymmetryGuided: return "SYMMETRY_GUIDED";
  }
  return "RANDOM";
}

inline MaskStrategy mask_strategy_from_string(std::string_view s) {
  if (s == "RANDOM") return MaskStrategy::kRandom;
  if (s == "BOX_GUIDED") return MaskStrategy::kBoxGuided;
  if (s == "SYMMETRY_GUIDED") return MaskStrategy::kSymmetryGuided;
  throw Error(ErrorCode::kParseError, "unknown mask strategy '" + std::string(s) + "'");
}

struct MaskConfig {
  double ratio = 0.75;
  double fg_delta = 0.10;  // foreground over-masking margin
  std::uint64_t rng_seed = 0;
};

inline void validate(const MaskConfig& c) {
  if (!(c.ratio >= 0.0 && c.ratio <= 1.0)) throw Error(ErrorCode::kInvalidConfig, "mask ratio must lie in [0, 1]");
  if (!(c.fg_delta >= 0.0)) throw Error(ErrorCode::kInvalidConfig, "fg_delta must be >= 0");
}

struct MaskPlan {
  std::vector<std::uint8_t> masked;  // one flag per patch, row-major
  MaskStrategy strategy = MaskStrategy::kRandom;
  std::uint64_t seed = 0;
  // (newly masked, unmasked from the replacement queue)
  std::vector<std::pair<std::size_t, std::size_t>> swaps;
  // Pairs left fully visible because no legal replacement existed.
  std::vector<std::pair<std::size_t, std::size_t>> unresolved_pairs;
  bool fallback_random = false;  // box contained no patch center
  bool budget_adjusted = false;  // foreground count clamped to keep the global count

  std::size_t masked_count() const {
    return static_cast<std::size_t>(std::count(masked.begin(), masked.end(), std::uint8_t{1}));
  }
  std::size_t visible_count() const { return masked.size() - masked_count(); }
  bool is_masked(std::size_t i) const { return masked.at(i) != 0; }

  std::vector<std::size_t> masked_indices() const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < masked.size(); ++i)
      if (masked[i]) out.push_back(i);
    return out;
  }
  std::vector<std::size_t> visible_indices() const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < masked.size(); ++i)
      if (!masked[i]) out.push_back(i);
    return out;
  }

  friend bool operator==(const MaskPlan&, const MaskPlan&) = default;
};

/// round-half-up of count * ratio; the 1e-9 guard absorbs representation
/// error in products such as 196 * 0.85.
inline std::size_t round_half_up(double x) { return static_cast<std::size_t>(std::floor(x + 0.5 + 1e-9)); }

inline std::size_t target_masked_count(std::size_t total_patches, double ratio) {
  if (!(ratio >= 0.0 && ratio <= 1.0)) throw Error(ErrorCode::kInvalidConfig, "mask ratio must lie in [0, 1]");
  return std::min(total_patches, round_half_up(static_cast<double>(total_patches) * ratio));
}

inline std::size_t target_masked_count(const PatchGrid& grid, double ratio) {
  return target_masked_count(grid.size(), ratio);
}

inline MaskStrategy select_strategy(const Annotation& annotation) {
  switch (annotation.kind()) {
    case AnnotationKind::kNone: return MaskStrategy::kRandom;
    case AnnotationKind::kBoxOnly: return MaskStrategy::kBoxGuided;
    case AnnotationKind::kBoxAndAngle: return MaskStrategy::kSymmetryGuided;
  }
  return MaskStrategy::kRandom;
}

namespace detail {

// Shuffles `pool` and masks its first `count` members.
inline void mask_sample(std::vector<std::size_t> pool, std::size_t count, Rng& rng, MaskPlan& plan) {
  shuffle(pool.begin(), pool.end(), rng);
  for (std::size_t k = 0; k < count; ++k) plan.masked[pool[k]] = 1;
}

inline std::vector<std::size_t> iota(std::size_t n) {
  std::vector<std::size_t> v(n);
  for (std::size_t i = 0; i < n; ++i) v[i] = i;
  return v;
}

inline MaskPlan random_mask_with(const PatchGrid& grid, const MaskConfig& config, Rng& rng) {
  validate(config);
  MaskPlan plan;
  plan.masked.assign(grid.size(), 0);
  plan.strategy = MaskStrategy::kRandom;
  plan.seed = config.rng_seed;
  mask_sample(iota(grid.size()), target_masked_count(grid, config.ratio), rng, plan);
  return plan;
}

inline MaskPlan box_guided_mask_with(const PatchGrid& grid, const Box& box, const MaskConfig& config, Rng& rng) {
  validate(config);
  const auto foreground = patches_in_box(grid, box);
  if (foreground.empty()) {
    MaskPlan plan = random_mask_with(grid, config, rng);
    plan.strategy = MaskStrategy::kBoxGuided;
    plan.fallback_random = true;
    return plan;
  }

  std::vector<char> in_fg(grid.size(), 0);
  for (auto i : foreground) in_fg[i] = 1;
  std::vector<std::size_t> background;
  for (std::size_t i = 0; i < grid.size(); ++i)
    if (!in_fg[i]) background.push_back(i);

  const std::size_t target = target_masked_count(grid, config.ratio);
  const double fg_ratio = std::min(1.0, config.ratio + config.fg_delta);
  const std::size_t wanted_fg = round_half_up(static_cast<double>(foreground.size()) * fg_ratio);

  // Feasible foreground counts keep both regions within their sizes.
  const std::size_t lo = target > background.size() ? target - background.size() : 0;
  const std::size_t hi = std::min(target, foreground.size());
  const std::size_t fg_count = std::clamp(wanted_fg, lo, hi);

  MaskPlan plan;
  plan.masked.assign(grid.size(), 0);
  plan.strategy = MaskStrategy::kBoxGuided;
  plan.seed = config.rng_seed;
  plan.budget_adjusted = fg_count != wanted_fg;
  mask_sample(foreground, fg_count, rng, plan);
  if (!background.empty()) mask_sample(background, target - fg_count, rng, plan);
  return plan;
}

}  // namespace detail

inline MaskPlan random_mask(const PatchGrid& grid, const MaskConfig& config) {
  Rng rng = make_rng(config.rng_seed);
  return detail::random_mask_with(grid, config, rng);
}

/// Foreground (patch centers inside the box) is masked at ratio + fg_delta,
/// the remaining budget is drawn from the background. When the background
/// cannot absorb the remainder the foreground count is clamped and the plan
/// is flagged `budget_adjusted`.
inline MaskPlan box_guided_mask(const PatchGrid& grid, const Box& box, const MaskConfig& config) {
  Rng rng = make_rng(config.rng_seed);
  return detail::box_guided_mask_with(grid, box, config, rng);
}

/// Box-guided plan repaired so that no symmetric pair is fully visible.
///
/// Pairs are visited in ascending order. For a fully visible pair one member
/// is masked at random and one masked patch from the replacement queue is
/// unmasked, so the global count never changes. The queue holds the masked
/// background patches in random order; once it runs dry it is refilled, in
/// random order, with masked foreground patches that are unpaired or whose
/// partner is also masked, so unmasking them never exposes a pair. If no legal
/// replacement remains the pair is left visible and recorded in
/// `unresolved_pairs`.
inline MaskPlan symmetry_guided_mask(const PatchGrid& grid, const Annotation& annotation, const MaskConfig& config) {
  if (annotation.kind() != AnnotationKind::kBoxAndAngle) {
    throw Error(ErrorCode::kInvalidAnnotation, "symmetry-guided masking needs a box and an angle");
  }
  const Box& box = *annotation.box();
  Rng rng = make_rng(config.rng_seed);
  MaskPlan plan = detail::box_guided_mask_with(grid, box, config, rng);
  plan.strategy = MaskStrategy::kSymmetryGuided;

  const SymmetryPairing pairing = compute_symmetry_pairs(grid, box, *annotation.angle());
  if (pairing.pairs.empty()) return plan;

  const std::size_t none = grid.size();
  std::vector<std::size_t> partner(grid.size(), none);
  for (const auto& [a, b] : pairing.pairs) {
    partner[a] = b;
    partner[b] = a;
  }
  std::vector<char> in_fg(grid.size(), 0);
  for (auto i : patches_in_box(grid, box)) in_fg[i] = 1;

  std::deque<std::size_t> queue;
  {
    std::vector<std::size_t> bg;
    for (std::size_t i = 0; i < grid.size(); ++i)
      if (!in_fg[i] && plan.masked[i]) bg.push_back(i);
    shuffle(bg.begin(), bg.end(), rng);
    queue.assign(bg.begin(), bg.end());
  }

  // Unmasking idx must leave its own pair (if any) with a masked member.
  auto legal = [&](std::size_t idx) {
    if (!plan.masked[idx]) return false;
    return partner[idx] == none || plan.masked[partner[idx]] != 0;
  };
  auto refill = [&] {
    std::vector<std::size_t> fg;
    for (std::size_t i = 0; i < grid.size(); ++i)
      if (in_fg[i] && legal(i)) fg.push_back(i);
    shuffle(fg.begin(), fg.end(), rng);
    queue.assign(fg.begin(), fg.end());
  };
  auto pop_replacement = [&]() -> std::optional<std::size_t> {
    for (int attempt = 0; attempt < 2; ++attempt) {
      while (!queue.empty()) {
        const std::size_t idx = queue.front();
        queue.pop_front();
        if (legal(idx)) return idx;
      }
      if (attempt == 0) refill();
    }
    return std::nullopt;
  };

  for (const auto& [a, b] : pairing.pairs) {
    if (plan.masked[a] || plan.masked[b]) continue;
    const std::size_t chosen = uniform_index(rng, 2) == 0 ? a : b;
    const auto replacement = pop_replacement();
    if (!replacement) {
      plan.unresolved_pairs.emplace_back(a, b);
      continue;
    }
    plan.masked[chosen] = 1;
    plan.masked[*replacement] = 0;
    plan.swaps.emplace_back(chosen, *replacement);
  }
  return plan;
}

/// Dispatches on the annotation kind.
inline MaskPlan make_mask_plan(const PatchGrid& grid, const Annotation& annotation, const MaskConfig& config) {
  switch (select_strategy(annotation)) {
    case MaskStrategy::kRandom: return random_mask(grid, config);
    case MaskStrategy::kBoxGuided: return box_guided_mask(grid, *annotation.box(), config);
    case MaskStrategy::kSymmetryGuided: return symmetry_guided_mask(grid, annotation, config);
  }
  return random_mask(grid, config);
}

struct MaskValidation {
  bool ok = true;
  std::size_t expected_count = 0;
  std::size_t actual_count = 0;
  bool strategy_consistent = true;
  std::vector<std::pair<std::size_t, std::size_t>> visible_pairs;
  std::vector<std::string> messages;
};

inline MaskValidation validate_mask_plan(const MaskPlan& plan, const PatchGrid& grid, const Annotation& annotation,
                                         const MaskConfig& config) {
  MaskValidation report;
  if (plan.masked.size() != grid.size()) {
    report.ok = false;
    report.messages.push_back("plan covers " + std::to_string(plan.masked.size()) + " patches, grid has " +
                              std::to_string(grid.size()));
    return report;
  }
  report.expected_count = target_masked_count(grid, config.ratio);
  report.actual_count = plan.masked_count();
  if (report.expected_count != report.actual_count) {
    report.ok = false;
    report.messages.push_back("masked count " + std::to_string(report.actual_count) + " != expected " +
                              std::to_string(report.expected_count));
  }
  const MaskStrategy expected = select_strategy(annotation);
  if (plan.strategy != expected) {
    report.ok = false;
    report.strategy_consistent = false;
    report.messages.push_back("strategy " + std::string(to_string(plan.strategy)) + " does not match annotation " +
                              std::string(to_string(annotation.kind())));
  }
  if (plan.strategy == MaskStrategy::kSymmetryGuided && annotation.kind() == AnnotationKind::kBoxAndAngle) {
    const auto pairing = compute_symmetry_pairs(grid, *annotation.box(), *annotation.angle());
    for (const auto& [a, b] : pairing.pairs) {
      if (!plan.masked[a] && !plan.masked[b]) report.visible_pairs.emplace_back(a, b);
    }
    if (!report.visible_pairs.empty()) {
      report.ok = false;
      std::string msg = "fully visible symmetric pairs:";
      for (const auto& [a, b] : report.visible_pairs) msg += " {" + std::to_string(a) + "," + std::to_string(b) + "}";
      report.messages.push_back(msg);
    }
  }
  return report;
}

/// Compact record: strategy tag, seed and the masked-index list.
inline nlohmann::json to_json(const MaskPlan& plan) {
  nlohmann::json j;
  j["strategy"] = std::string(to_string(plan.strategy));
  j["seed"] = plan.seed;
  j["num_patches"] = plan.masked.size();
  j["masked"] = plan.masked_indices();
  return j;
}

inline MaskPlan mask_plan_from_json(const nlohmann::json& j) {
  MaskPlan plan;
  plan.strategy = mask_strategy_from_string(j.at("strategy").get<std::string>());
  plan.seed = j.at("seed").get<std::uint64_t>();
  plan.masked.assign(j.at("num_patches").get<std::size_t>(), 0);
  for (auto idx : j.at("masked").get<std::vector<std::size_t>>()) {
    if (idx >= plan.masked.size()) throw Error(ErrorCode::kParseError, "masked index out of range");
    plan.masked[idx] = 1;
  }
  return plan;
}

}  // namespace vmae
