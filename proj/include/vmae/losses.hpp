#pragma once

// The six pre-training objectives and their weighted sum. Each loss is a
// pure function of its inputs; the *_with_grad variants also return the
// closed-form gradient with respect to every input.

#include <array>
#include <cmath>
#include <string>
#include <vector>

#include "vmae/json.hpp"

#include "vmae/autograd.hpp"
#include "vmae/error.hpp"

namespace vmae {

/// Floor applied inside every logarithm.
inline constexpr double kLogFloor = 1e-12;

template <typename Scalar>
struct LossGrad {
  Scalar value = 0;
  std::vector<Mat<Scalar>> grads;  // one per input, in argument order
};

namespace detail {

template <typename Scalar>
Scalar floored_log(Scalar x) {
  return std::log(std::max(x, static_cast<Scalar>(kLogFloor)));
}

template <typename Scalar>
void require_same_shape(const Mat<Scalar>& a, const Mat<Scalar>& b, const char* what) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw Error(ErrorCode::kShapeMismatch, what);
}

template <typename Scalar>
Scalar checked_norm(const Mat<Scalar>& v) {
  const Scalar n = v.norm();
  if (!(n >= static_cast<Scalar>(1e-12))) throw Error(ErrorCode::kZeroVector, "vector norm below 1e-12");
  return n;
}

// Gradient of ||x||-normalization pulled back: (g - u (u.g)) / ||x||.
template <typename Scalar>
Mat<Scalar> normalize_vjp(const Mat<Scalar>& u, Scalar norm, const Mat<Scalar>& g) {
  return (g - u * (u.cwiseProduct(g).sum())) / norm;
}

}  // namespace detail

// ----- reconstruction -----

/// Mean of squared differences over every masked pixel value.
template <typename Scalar>
LossGrad<Scalar> reconstruction_loss_with_grad(const Mat<Scalar>& targets, const Mat<Scalar>& predictions) {
  detail::require_same_shape(targets, predictions, "reconstruction_loss");
  if (targets.size() == 0) throw Error(ErrorCode::kEmptyMaskSet, "no masked pixels");
  const Scalar n = static_cast<Scalar>(targets.size());
  const Mat<Scalar> diff = predictions - targets;
  LossGrad<Scalar> out;
  out.value = diff.squaredNorm() / n;
  out.grads = {-2 * diff / n, 2 * diff / n};
  return out;
}

template <typename Scalar>
Scalar reconstruction_loss(const Mat<Scalar>& targets, const Mat<Scalar>& predictions) {
  return reconstruction_loss_with_grad(targets, predictions).value;
}

// ----- contour-guided cross-entropies -----

/// -sum_i teacher_i . log(student_i), summed over rows.
template <typename Scalar>
LossGrad<Scalar> cross_entropy_rows_with_grad(const Mat<Scalar>& teacher, const Mat<Scalar>& student) {
  detail::require_same_shape(teacher, student, "cross_entropy_rows");
  const Scalar floor = static_cast<Scalar>(kLogFloor);
  const Mat<Scalar> logs = student.unaryExpr([](Scalar v) { return detail::floored_log(v); });
  LossGrad<Scalar> out;
  out.value = -teacher.cwiseProduct(logs).sum();
  Mat<Scalar> d_student(student.rows(), student.cols());
  for (Eigen::Index i = 0; i < student.size(); ++i) {
    const Scalar s = student.data()[i];
    d_student.data()[i] = s > floor ? -teacher.data()[i] / s : Scalar(0);
  }
  out.grads = {-logs, std::move(d_student)};
  return out;
}

/// Patch-level term: rows are masked patches, teacher from the contour branch.
template <typename Scalar>
LossGrad<Scalar> mim_loss_with_grad(const Mat<Scalar>& teacher_rows, const Mat<Scalar>& student_rows) {
  return cross_entropy_rows_with_grad(teacher_rows, student_rows);
}

template <typename Scalar>
Scalar mim_loss(const Mat<Scalar>& teacher_rows, const Mat<Scalar>& student_rows) {
  return mim_loss_with_grad(teacher_rows, student_rows).value;
}

/// Class-token term, written as a positive cross-entropy.
template <typename Scalar>
LossGrad<Scalar> cls_distill_loss_with_grad(const Mat<Scalar>& teacher_cls, const Mat<Scalar>& student_cls) {
  if (teacher_cls.rows() != 1) throw Error(ErrorCode::kShapeMismatch, "cls_distill_loss expects single rows");
  return cross_entropy_rows_with_grad(teacher_cls, student_cls);
}

template <typename Scalar>
Scalar cls_distill_loss(const Mat<Scalar>& teacher_cls, const Mat<Scalar>& student_cls) {
  return cls_distill_loss_with_grad(teacher_cls, student_cls).value;
}

/// Shannon entropy of each row, summed, in nats.
template <typename Scalar>
Scalar entropy(const Mat<Scalar>& p) {
  Scalar h = 0;
  for (Eigen::Index i = 0; i < p.size(); ++i) h -= p.data()[i] * detail::floored_log(p.data()[i]);
  return h;
}

// ----- semantics-guided terms -----

/// Squared distance between the unit-normalized student and teacher vectors.
template <typename Scalar>
LossGrad<Scalar> clip_feature_loss_with_grad(const Mat<Scalar>& student, const Mat<Scalar>& teacher) {
  detail::require_same_shape(student, teacher, "clip_feature_loss");
  const Scalar ns = detail::checked_norm(student);
  const Scalar nt = detail::checked_norm(teacher);
  const Mat<Scalar> u = student / ns;
  const Mat<Scalar> w = teacher / nt;
  const Mat<Scalar> diff = u - w;
  LossGrad<Scalar> out;
  out.value = diff.squaredNorm();
  out.grads = {detail::normalize_vjp<Scalar>(u, ns, 2 * diff), detail::normalize_vjp<Scalar>(w, nt, -2 * diff)};
  return out;
}

template <typename Scalar>
Scalar clip_feature_loss(const Mat<Scalar>& student, const Mat<Scalar>& teacher) {
  return clip_feature_loss_with_grad(student, teacher).value;
}

/// softmax over (texts . feature) / tau; feature is one row, texts are m rows.
template <typename Scalar>
Mat<Scalar> similarity_distribution(const Mat<Scalar>& feature, const Mat<Scalar>& texts, Scalar tau) {
  if (feature.rows() != 1 || texts.cols() != feature.cols()) {
    throw Error(ErrorCode::kShapeMismatch, "similarity_distribution shapes");
  }
  if (texts.rows() < 1) throw Error(ErrorCode::kEmptyCorpus, "similarity_distribution needs at least one text");
  if (!(tau > 0)) throw Error(ErrorCode::kInvalidConfig, "temperature must be positive");
  const Mat<Scalar> logits = (feature * texts.transpose()) / tau;
  return Tape<Scalar>::softmax_rows_value(logits);
}

/// Pulls a gradient on the distribution back to (feature, texts).
template <typename Scalar>
std::array<Mat<Scalar>, 2> similarity_distribution_vjp(const Mat<Scalar>& feature, const Mat<Scalar>& texts,
                                                       Scalar tau, const Mat<Scalar>& dist_grad) {
  const Mat<Scalar> p = similarity_distribution(feature, texts, tau);
  const Scalar dot = p.cwiseProduct(dist_grad).sum();
  const Mat<Scalar> d_logits = p.cwiseProduct((dist_grad.array() - dot).matrix()) / tau;
  return {d_logits * texts, d_logits.transpose() * feature};
}

template <typename Scalar>
Scalar kl_divergence(const Mat<Scalar>& p, const Mat<Scalar>& q) {
  detail::require_same_shape(p, q, "kl_divergence");
  Scalar kl = 0;
  for (Eigen::Index i = 0; i < p.size(); ++i)
    kl += p.data()[i] * (detail::floored_log(p.data()[i]) - detail::floored_log(q.data()[i]));
  return kl;
}

/// KL(teacher || student) + H(student), in nats.
template <typename Scalar>
LossGrad<Scalar> similarity_consistency_loss_with_grad(const Mat<Scalar>& teacher, const Mat<Scalar>& student) {
  detail::require_same_shape(teacher, student, "similarity_consistency_loss");
  const Scalar floor = static_cast<Scalar>(kLogFloor);
  LossGrad<Scalar> out;
  out.value = kl_divergence(teacher, student) + entropy(student);
  Mat<Scalar> d_teacher(teacher.rows(), teacher.cols());
  Mat<Scalar> d_student(student.rows(), student.cols());
  for (Eigen::Index i = 0; i < teacher.size(); ++i) {
    const Scalar p = teacher.data()[i];
    const Scalar q = student.data()[i];
    const Scalar log_p = detail::floored_log(p);
    const Scalar log_q = detail::floored_log(q);
    d_teacher.data()[i] = log_p - log_q + (p > floor ? Scalar(1) : Scalar(0));
    d_student.data()[i] = (q > floor ? -p / q - Scalar(1) : Scalar(0)) - log_q;
  }
  out.grads = {std::move(d_teacher), std::move(d_student)};
  return out;
}

template <typename Scalar>
Scalar similarity_consistency_loss(const Mat<Scalar>& teacher, const Mat<Scalar>& student) {
  return similarity_consistency_loss_with_grad(teacher, student).value;
}

/// Mean over rows of 1 - cos(image_i, text_i); every pair is a positive.
template <typename Scalar>
LossGrad<Scalar> vision_text_contrastive_loss_with_grad(const Mat<Scalar>& image_features,
                                                        const Mat<Scalar>& text_features) {
  detail::require_same_shape(image_features, text_features, "vision_text_contrastive_loss");
  const Eigen::Index n = image_features.rows();
  if (n == 0) throw Error(ErrorCode::kEmptyBatch, "no image-text pairs");
  LossGrad<Scalar> out;
  Mat<Scalar> d_img(image_features.rows(), image_features.cols());
  Mat<Scalar> d_txt(text_features.rows(), text_features.cols());
  const Scalar inv_n = Scalar(1) / static_cast<Scalar>(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const Mat<Scalar> a = image_features.row(i);
    const Mat<Scalar> b = text_features.row(i);
    const Scalar na = detail::checked_norm(a);
    const Scalar nb = detail::checked_norm(b);
    const Mat<Scalar> ua = a / na;
    const Mat<Scalar> ub = b / nb;
    out.value += (Scalar(1) - ua.cwiseProduct(ub).sum()) * inv_n;
    d_img.row(i) = detail::normalize_vjp<Scalar>(ua, na, -ub * inv_n);
    d_txt.row(i) = detail::normalize_vjp<Scalar>(ub, nb, -ua * inv_n);
  }
  out.grads = {std::move(d_img), std::move(d_txt)};
  return out;
}

template <typename Scalar>
Scalar vision_text_contrastive_loss(const Mat<Scalar>& image_features, const Mat<Scalar>& text_features) {
  return vision_text_contrastive_loss_with_grad(image_features, text_features).value;
}

// ----- aggregate -----

struct LossWeights {
  double reconstruction = 4.0;
  double mim = 0.02;
  double cls = 0.02;
  double clip_feature = 1.0;
  double consistency = 1.0;
  double vision_text = 1.0;

  std::array<double, 6> as_array() const { return {reconstruction, mim, cls, clip_feature, consistency, vision_text}; }
  static LossWeights ones() { return {1, 1, 1, 1, 1, 1}; }
  static LossWeights zeros() { return {0, 0, 0, 0, 0, 0}; }

  friend bool operator==(const LossWeights&, const LossWeights&) = default;
};

VMAE_DEFINE_JSON(LossWeights, reconstruction, mim, cls, clip_feature, consistency,
                                                vision_text)

struct LossComponents {
  double reconstruction = 0;
  double mim = 0;
  double cls = 0;
  double clip_feature = 0;
  double consistency = 0;
  double vision_text = 0;

  std::array<double, 6> as_array() const { return {reconstruction, mim, cls, clip_feature, consistency, vision_text}; }
};

struct LossBundle {
  LossComponents components;
  double total = 0;
};

inline constexpr std::array<const char*, 6> kLossNames = {"l_r", "l_mim", "l_cls", "l_cf", "l_cs", "l_vt"};

inline LossBundle total_loss(const LossComponents& c, const LossWeights& w) {
  const auto values = c.as_array();
  const auto weights = w.as_array();
  for (std::size_t k = 0; k < values.size(); ++k) {
    if (!std::isfinite(values[k])) {
      throw Error(ErrorCode::kNonFinite, std::string(kLossNames[k]) + " = " + std::to_string(values[k]));
    }
  }
  LossBundle b;
  b.components = c;
  for (std::size_t k = 0; k < values.size(); ++k) b.total += weights[k] * values[k];
  return b;
}

}  // namespace vmae
