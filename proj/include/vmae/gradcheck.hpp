#pragma once

// Central finite-difference checks of the closed-form loss gradients.

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "vmae/losses.hpp"
#include "vmae/rng.hpp"

namespace vmae {

using MatD = Mat<double>;

/// d f / d x by central differences, one coordinate at a time.
inline MatD central_difference(const std::function<double(const MatD&)>& f, const MatD& x, double step = 1e-5) {
  MatD g(x.rows(), x.cols());
  MatD probe = x;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double orig = probe.data()[i];
    probe.data()[i] = orig + step;
    const double up = f(probe);
    probe.data()[i] = orig - step;
    const double down = f(probe);
    probe.data()[i] = orig;
    g.data()[i] = (up - down) / (2 * step);
  }
  return g;
}

/// max |analytic - numeric| relative to the larger of the two gradient scales.
inline double relative_error(const MatD& analytic, const MatD& numeric) {
  const double scale = std::max({analytic.cwiseAbs().maxCoeff(), numeric.cwiseAbs().maxCoeff(), 1e-12});
  return (analytic - numeric).cwiseAbs().maxCoeff() / scale;
}

struct GradCheckResult {
  std::string name;
  int instances = 0;
  double max_relative_error = 0;
};

namespace detail {

inline MatD random_matrix(Rng& rng, Eigen::Index rows, Eigen::Index cols, double lo = -1, double hi = 1) {
  MatD m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = uniform(rng, lo, hi);
  return m;
}

inline MatD random_distribution_rows(Rng& rng, Eigen::Index rows, Eigen::Index cols) {
  return Tape<double>::softmax_rows_value(random_matrix(rng, rows, cols, -1.5, 1.5));
}

inline MatD unit_rows(MatD m) {
  for (Eigen::Index r = 0; r < m.rows(); ++r) m.row(r).normalize();
  return m;
}

// Checks every input of a loss against central differences.
inline double check_inputs(const std::vector<MatD>& inputs,
                           const std::function<LossGrad<double>(const std::vector<MatD>&)>& loss, double step) {
  const auto analytic = loss(inputs);
  double worst = 0;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    auto f = [&](const MatD& probe) {
      auto args = inputs;
      args[k] = probe;
      return loss(args).value;
    };
    worst = std::max(worst, relative_error(analytic.grads[k], central_difference(f, inputs[k], step)));
  }
  return worst;
}

}  // namespace detail

/// Runs the six losses on `instances` random inputs each (feature width 8,
/// m = 5 texts, K = 7) and reports the worst relative error per loss. The
/// consistency loss is checked through the similarity softmax, with respect to
/// the student feature, the teacher feature and the text matrix.
inline std::vector<GradCheckResult> run_gradient_suite(std::uint64_t seed, int instances = 20, double step = 1e-5) {
  constexpr Eigen::Index kWidth = 8, kTexts = 5, kDist = 7, kRows = 3;
  Rng rng = make_rng(seed, {0x6AD});
  std::vector<GradCheckResult> results = {{"l_r", instances, 0},  {"l_mim", instances, 0}, {"l_cls", instances, 0},
                                          {"l_cf", instances, 0}, {"l_cs", instances, 0},  {"l_vt", instances, 0}};
  for (int n = 0; n < instances; ++n) {
    double e = detail::check_inputs(
        {detail::random_matrix(rng, kRows, kWidth), detail::random_matrix(rng, kRows, kWidth)},
        [](const std::vector<MatD>& a) { return reconstruction_loss_with_grad(a[0], a[1]); }, step);
    results[0].max_relative_error = std::max(results[0].max_relative_error, e);

    e = detail::check_inputs(
        {detail::random_distribution_rows(rng, kRows, kDist), detail::random_distribution_rows(rng, kRows, kDist)},
        [](const std::vector<MatD>& a) { return mim_loss_with_grad(a[0], a[1]); }, step);
    results[1].max_relative_error = std::max(results[1].max_relative_error, e);

    e = detail::check_inputs(
        {detail::random_distribution_rows(rng, 1, kDist), detail::random_distribution_rows(rng, 1, kDist)},
        [](const std::vector<MatD>& a) { return cls_distill_loss_with_grad(a[0], a[1]); }, step);
    results[2].max_relative_error = std::max(results[2].max_relative_error, e);

    e = detail::check_inputs(
        {detail::random_matrix(rng, 1, kWidth), detail::random_matrix(rng, 1, kWidth)},
        [](const std::vector<MatD>& a) { return clip_feature_loss_with_grad(a[0], a[1]); }, step);
    results[3].max_relative_error = std::max(results[3].max_relative_error, e);

    // (student feature, teacher feature, texts) -> KL + H through the softmax.
    auto consistency = [](const std::vector<MatD>& a) {
      const MatD s_unit = a[0] / a[0].norm();
      const MatD t_unit = a[1] / a[1].norm();
      const MatD& texts = a[2];
      const MatD p = similarity_distribution<double>(t_unit, texts, 1.0);
      const MatD q = similarity_distribution<double>(s_unit, texts, 1.0);
      const auto base = similarity_consistency_loss_with_grad(p, q);
      const auto vq = similarity_distribution_vjp<double>(s_unit, texts, 1.0, base.grads[1]);
      const auto vp = similarity_distribution_vjp<double>(t_unit, texts, 1.0, base.grads[0]);
      LossGrad<double> out;
      out.value = base.value;
      out.grads = {detail::normalize_vjp<double>(s_unit, a[0].norm(), vq[0]),
                   detail::normalize_vjp<double>(t_unit, a[1].norm(), vp[0]), vq[1] + vp[1]};
      return out;
    };
    e = detail::check_inputs({detail::random_matrix(rng, 1, kWidth), detail::random_matrix(rng, 1, kWidth),
                              detail::unit_rows(detail::random_matrix(rng, kTexts, kWidth))},
                             consistency, step);
    results[4].max_relative_error = std::max(results[4].max_relative_error, e);

    e = detail::check_inputs(
        {detail::random_matrix(rng, kRows, kWidth), detail::random_matrix(rng, kRows, kWidth)},
        [](const std::vector<MatD>& a) { return vision_text_contrastive_loss_with_grad(a[0], a[1]); }, step);
    results[5].max_relative_error = std::max(results[5].max_relative_error, e);
  }
  return results;
}

}  // namespace vmae
