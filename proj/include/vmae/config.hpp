#pragma once

// Training configuration with the desk-scale and paper-scale presets.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>

#include <nlohmann/json.hpp>

#include "vmae/backbone.hpp"
#include "vmae/error.hpp"
#include "vmae/json.hpp"
#include "vmae/losses.hpp"
#include "vmae/masking.hpp"

namespace vmae {

// Per-sample mask seeds are derived from the run seed, so rng_seed is not
// part of the serialized form.
inline void to_json(nlohmann::json& j, const MaskConfig& c) { j = {{"ratio", c.ratio}, {"fg_delta", c.fg_delta}}; }
inline void from_json(const nlohmann::json& j, MaskConfig& c) {
  const MaskConfig d;
  c.ratio = j.value("ratio", d.ratio);
  c.fg_delta = j.value("fg_delta", d.fg_delta);
}

struct TrainConfig {
  BackboneConfig backbone;
  MaskConfig mask;
  LossWeights weights;
  double lr = 2e-4;
  double weight_decay = 0.04;
  double beta1 = 0.9;
  double beta2 = 0.95;
  double adam_eps = 1e-8;
  double warmup_fraction = 0.05;
  int batch_size = 512;
  int epochs = 100;
  long max_steps = 0;  // 0: run every epoch
  std::uint64_t seed = 0;
  std::string teacher = "toy";  // or a weights-file path
  double tau = 1.0;
  int corpus_sample = 256;     // attribute texts drawn per step
  std::string corpus;          // empty: synthetic corpus of synthetic_corpus_size
  int synthetic_corpus_size = 512;

  static TrainConfig paper() { return {}; }

  static TrainConfig tiny() {
    TrainConfig c;
    c.backbone = BackboneConfig::tiny();
    c.lr = 1e-3;
    c.batch_size = 16;
    c.epochs = 5;
    return c;
  }

  static TrainConfig preset(const std::string& name) {
    if (name == "tiny") return tiny();
    if (name == "paper") return paper();
    throw Error(ErrorCode::kInvalidConfig, "unknown preset '" + name + "' (expected tiny or paper)");
  }

  void validate() const {
    backbone.validate();
    vmae::validate(mask);
    auto bad = [](const std::string& m) { throw Error(ErrorCode::kInvalidConfig, m); };
    if (!(lr > 0)) bad("lr must be positive");
    if (!(weight_decay >= 0)) bad("weight_decay must be >= 0");
    if (!(beta1 >= 0 && beta1 < 1 && beta2 >= 0 && beta2 < 1)) bad("betas must lie in [0, 1)");
    if (!(adam_eps > 0)) bad("adam_eps must be positive");
    if (!(warmup_fraction >= 0 && warmup_fraction <= 1)) bad("warmup_fraction must lie in [0, 1]");
    if (batch_size <= 0) bad("batch_size must be positive");
    if (epochs < 0 || max_steps < 0) bad("epochs and max_steps must be >= 0");
    if (!(tau > 0)) bad("tau must be positive");
    if (corpus_sample <= 0 || synthetic_corpus_size <= 0) bad("corpus sizes must be positive");
    for (double w : weights.as_array()) {
      if (!(w >= 0)) bad("loss weights must be >= 0");
    }
  }
};

VMAE_DEFINE_JSON(TrainConfig, backbone, mask, weights, lr, weight_decay, beta1, beta2, adam_eps, warmup_fraction,
                 batch_size, epochs, max_steps, seed, teacher, tau, corpus_sample, corpus, synthetic_corpus_size)

inline bool operator==(const TrainConfig& a, const TrainConfig& b) {
  return nlohmann::json(a) == nlohmann::json(b);
}

/// Preset, then the keys present in the file on top of it.
inline TrainConfig load_train_config(const std::filesystem::path& path, const std::string& preset = "tiny") {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kFileUnreadable, "cannot read config " + path.string());
  nlohmann::json overlay;
  try {
    overlay = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kParseError, path.string() + ": " + e.what());
  }
  nlohmann::json base = TrainConfig::preset(preset);
  base.merge_patch(overlay);
  try {
    return base.get<TrainConfig>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kInvalidConfig, path.string() + ": " + e.what());
  }
}

}  // namespace vmae
