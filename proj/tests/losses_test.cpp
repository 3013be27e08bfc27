#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "vmae/gradcheck.hpp"
#include "vmae/losses.hpp"

namespace vmae {
namespace {

MatD row(std::initializer_list<double> v) {
  MatD m(1, static_cast<Eigen::Index>(v.size()));
  Eigen::Index k = 0;
  for (double x : v) m(0, k++) = x;
  return m;
}

// Plain-loop cross-entropy, written independently of the Eigen expressions.
double cross_entropy_oracle(const MatD& p, const MatD& q) {
  double s = 0;
  for (Eigen::Index r = 0; r < p.rows(); ++r)
    for (Eigen::Index c = 0; c < p.cols(); ++c) s -= p(r, c) * std::log(std::max(q(r, c), 1e-12));
  return s;
}

TEST(ReconstructionLoss, Examples) {
  const MatD t = row({0.2, 0.4, 0.9});
  EXPECT_EQ(reconstruction_loss(t, t), 0.0);
  EXPECT_NEAR(reconstruction_loss(row({1.0}), row({0.5})), 0.25, 1e-15);
  EXPECT_NEAR(reconstruction_loss(row({1.0, 0.0}), row({0.0, 1.0})), 1.0, 1e-15);
  try {
    reconstruction_loss(MatD(0, 3), MatD(0, 3));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kEmptyMaskSet);
  }
}

TEST(MimLoss, Examples) {
  EXPECT_NEAR(mim_loss(row({1, 0}), row({0.5, 0.5})), 0.6931471805599453, 1e-12);
  EXPECT_LE(std::abs(mim_loss(row({0, 1, 0}), row({0, 1, 0}))), 1e-11);
  EXPECT_THROW(mim_loss(row({1, 0}), row({0.5, 0.25, 0.25})), Error);
}

TEST(MimLoss, MatchesOracleOnRandomRows) {
  Rng rng = make_rng(3);
  for (int k = 0; k < 100; ++k) {
    const MatD p = detail::random_distribution_rows(rng, 5, 7);
    const MatD q = detail::random_distribution_rows(rng, 5, 7);
    EXPECT_NEAR(mim_loss(p, q), cross_entropy_oracle(p, q), 1e-9);
  }
}

TEST(MimLoss, BoundedBelowByTeacherEntropy) {
  Rng rng = make_rng(4);
  for (int k = 0; k < 200; ++k) {
    const MatD p = detail::random_distribution_rows(rng, 3, 6);
    const MatD q = detail::random_distribution_rows(rng, 3, 6);
    EXPECT_GE(mim_loss(p, q), entropy(p) - 1e-9);
    EXPECT_NEAR(mim_loss(p, p), entropy(p), 1e-9);
  }
}

TEST(ClsDistillLoss, Examples) {
  EXPECT_LE(std::abs(cls_distill_loss(row({1, 0, 0}), row({1, 0, 0}))), 1e-11);
  EXPECT_NEAR(cls_distill_loss(row({1, 0}), row({0.5, 0.5})), 0.6931471805599453, 1e-12);
  Rng rng = make_rng(5);
  for (int k = 0; k < 100; ++k) {
    EXPECT_GE(cls_distill_loss(detail::random_distribution_rows(rng, 1, 7), detail::random_distribution_rows(rng, 1, 7)),
              0.0);
  }
  EXPECT_THROW(cls_distill_loss<double>(MatD::Constant(2, 2, 0.5), MatD::Constant(2, 2, 0.5)), Error);
}

TEST(ClipFeatureLoss, AnalyticValues) {
  EXPECT_NEAR(clip_feature_loss(row({1, 2, 3}), row({5, 10, 15})), 0.0, 1e-12);
  EXPECT_NEAR(clip_feature_loss(row({0, 1, 0}), row({0, -1, 0})), 4.0, 1e-12);
  EXPECT_NEAR(clip_feature_loss(row({1, 0}), row({0, 1})), 2.0, 1e-12);
  try {
    clip_feature_loss(row({0, 0}), row({0, 1}));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kZeroVector);
  }
}

TEST(SimilarityDistribution, Examples) {
  const MatD f = row({1, 0});
  MatD texts(2, 2);
  texts << 0, 1, 0, -1;
  const MatD even = similarity_distribution<double>(f, texts, 1.0);
  EXPECT_NEAR(even(0, 0), 0.5, 1e-15);
  EXPECT_NEAR(even(0, 1), 0.5, 1e-15);

  MatD three(3, 2);
  three << 1, 0, 0, 1, -1, 0;
  const MatD p = similarity_distribution<double>(f, three, 1.0);
  EXPECT_NEAR(p(0, 0), 0.66524, 1e-5);
  EXPECT_NEAR(p(0, 1), 0.24473, 1e-5);
  EXPECT_NEAR(p(0, 2), 0.09003, 1e-5);

  const MatD hot = similarity_distribution<double>(f, three, 1e6);
  for (Eigen::Index k = 0; k < 3; ++k) EXPECT_NEAR(hot(0, k), 1.0 / 3, 1e-6);
  EXPECT_THROW(similarity_distribution<double>(f, three, 0.0), Error);
}

TEST(SimilarityConsistencyLoss, Examples) {
  const MatD u = row({0.25, 0.25, 0.25, 0.25});
  EXPECT_NEAR(similarity_consistency_loss(u, u), std::log(4.0), 1e-12);
  EXPECT_LE(std::abs(similarity_consistency_loss(row({0, 1, 0}), row({0, 1, 0}))), 1e-11);
  Rng rng = make_rng(6);
  for (int k = 0; k < 100; ++k) {
    const MatD p = detail::random_distribution_rows(rng, 1, 5);
    const MatD q = detail::random_distribution_rows(rng, 1, 5);
    EXPECT_GE(kl_divergence(p, q), -1e-9);
    EXPECT_GE(similarity_consistency_loss(p, q), 0.0);
    EXPECT_NEAR(similarity_consistency_loss(p, q), kl_divergence(p, q) + entropy(q), 1e-12);
  }
}

TEST(VisionTextContrastiveLoss, Examples) {
  EXPECT_NEAR(vision_text_contrastive_loss(row({1, 2}), row({2, 4})), 0.0, 1e-12);
  EXPECT_NEAR(vision_text_contrastive_loss(row({1, 0}), row({0, 3})), 1.0, 1e-12);
  MatD img(2, 2), txt(2, 2);
  img << 1, 0, 1, 0;
  txt << 5, 0, 0, 1;
  EXPECT_NEAR(vision_text_contrastive_loss(img, txt), 0.5, 1e-12);
  try {
    vision_text_contrastive_loss(MatD(0, 2), MatD(0, 2));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kEmptyBatch);
  }
}

TEST(ScaleInvariance, CosineBasedLosses) {
  Rng rng = make_rng(8);
  for (int k = 0; k < 50; ++k) {
    const MatD a = detail::random_matrix(rng, 1, 8), b = detail::random_matrix(rng, 1, 8);
    const double s1 = uniform(rng, 0.01, 100), s2 = uniform(rng, 0.01, 100);
    EXPECT_NEAR(clip_feature_loss(a, b), clip_feature_loss<double>(a * s1, b * s2), 1e-9);
    EXPECT_NEAR(vision_text_contrastive_loss(a, b), vision_text_contrastive_loss<double>(a * s1, b * s2), 1e-9);
  }
}

TEST(TotalLoss, WeightedSum) {
  LossComponents ones{1, 1, 1, 1, 1, 1};
  EXPECT_NEAR(total_loss(ones, LossWeights{}).total, 7.04, 1e-12);
  EXPECT_NEAR(total_loss(ones, LossWeights::ones()).total, 6.0, 1e-12);

  Rng rng = make_rng(9);
  for (int k = 0; k < 100; ++k) {
    LossComponents c{uniform(rng, 0, 5), uniform(rng, 0, 5), uniform(rng, 0, 5),
                     uniform(rng, 0, 5), uniform(rng, 0, 5), uniform(rng, 0, 5)};
    LossWeights w{uniform(rng, 0, 5), uniform(rng, 0, 5), uniform(rng, 0, 5),
                  uniform(rng, 0, 5), uniform(rng, 0, 5), uniform(rng, 0, 5)};
    const Eigen::Matrix<double, 6, 1> cv(c.as_array().data()), wv(w.as_array().data());
    const double oracle = cv.dot(wv);
    EXPECT_NEAR(total_loss(c, w).total, oracle, 1e-12 * std::abs(oracle));
  }

  LossComponents bad = ones;
  bad.consistency = std::numeric_limits<double>::quiet_NaN();
  try {
    total_loss(bad, LossWeights{});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kNonFinite);
  }
}

TEST(GradientSuite, AllLossesWithinTolerance) {
  for (const auto& r : run_gradient_suite(7, 20)) {
    EXPECT_LE(r.max_relative_error, 1e-4) << r.name;
  }
}

}  // namespace
}  // namespace vmae
