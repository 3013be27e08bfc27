#pragma once

// Adam with decoupled weight decay and a linear warmup to a constant rate.

#include <algorithm>
#include <cmath>
#include <map>
#include <string>

#include "vmae/autograd.hpp"
#include "vmae/error.hpp"

namespace vmae {

struct AdamWConfig {
  double lr = 2e-4;
  double weight_decay = 0.04;
  double beta1 = 0.9;
  double beta2 = 0.95;
  double eps = 1e-8;
  long warmup_steps = 0;
};

template <typename Scalar>
struct AdamMoments {
  Mat<Scalar> m;
  Mat<Scalar> v;
};

/// Only trainable parameters get moments and updates; weight decay applies to
/// parameters flagged `decay` (linear weights).
template <typename Scalar>
class AdamW {
 public:
  explicit AdamW(AdamWConfig config) : config_(config) {}

  const AdamWConfig& config() const { return config_; }
  long step_count() const { return step_; }

  /// Rate used for update number `step` (0-based).
  double lr_at(long step) const {
    if (config_.warmup_steps <= 0) return config_.lr;
    return config_.lr * std::min(1.0, static_cast<double>(step + 1) / static_cast<double>(config_.warmup_steps));
  }

  void step(ParameterStore<Scalar>& params) {
    const double lr = lr_at(step_);
    ++step_;
    const double b1 = config_.beta1, b2 = config_.beta2;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(step_));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(step_));
    for (auto& [name, p] : params) {
      if (!p.trainable) continue;
      auto& mom = moments_[name];
      if (mom.m.size() == 0) {
        mom.m = Mat<Scalar>::Zero(p.value.rows(), p.value.cols());
        mom.v = Mat<Scalar>::Zero(p.value.rows(), p.value.cols());
      }
      mom.m = Scalar(b1) * mom.m + Scalar(1 - b1) * p.grad;
      mom.v = Scalar(b2) * mom.v + Scalar(1 - b2) * p.grad.cwiseProduct(p.grad);
      if (p.decay && config_.weight_decay > 0) p.value *= Scalar(1.0 - lr * config_.weight_decay);
      const Scalar step_size = Scalar(lr / c1);
      const Scalar denom_scale = Scalar(1.0 / std::sqrt(c2));
      p.value.array() -=
          step_size * mom.m.array() / (mom.v.array().sqrt() * denom_scale + Scalar(config_.eps));
    }
  }

  std::map<std::string, AdamMoments<Scalar>>& moments() { return moments_; }
  const std::map<std::string, AdamMoments<Scalar>>& moments() const { return moments_; }
  void set_step_count(long s) { step_ = s; }

 private:
  AdamWConfig config_;
  long step_ = 0;
  std::map<std::string, AdamMoments<Scalar>> moments_;
};

}  // namespace vmae
