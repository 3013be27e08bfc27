#include <gtest/gtest.h>

#include <cmath>

#include "vmae/backbone.hpp"
#include "vmae/gradcheck.hpp"

namespace vmae {
namespace {

// 32x32 image, patch 8: a 4x4 grid.
BackboneConfig small_config() {
  BackboneConfig c = BackboneConfig::tiny();
  c.image_height = 32;
  c.image_width = 32;
  return c;
}

Image random_image(int h, int w, std::uint64_t seed) {
  Image img(h, w, 3);
  Rng rng = make_rng(seed);
  for (double& v : img.data) v = uniform01(rng);
  return img;
}

MaskPlan plan_with_ratio(const PatchGrid& grid, double ratio, std::uint64_t seed = 5) {
  MaskConfig mc;
  mc.ratio = ratio;
  mc.rng_seed = seed;
  return random_mask(grid, mc);
}

MatD softmax_oracle(const MatD& logits) {
  MatD out(logits.rows(), logits.cols());
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    double m = logits(r, 0);
    for (Eigen::Index c = 1; c < logits.cols(); ++c) m = std::max(m, logits(r, c));
    double s = 0;
    for (Eigen::Index c = 0; c < logits.cols(); ++c) s += std::exp(logits(r, c) - m);
    for (Eigen::Index c = 0; c < logits.cols(); ++c) out(r, c) = std::exp(logits(r, c) - m) / s;
  }
  return out;
}

TEST(BackboneConfig, PresetsValidate) {
  const auto paper = BackboneConfig::paper();
  EXPECT_EQ(paper.patch_size, 16);
  EXPECT_EQ(paper.enc_dim, 768);
  EXPECT_EQ(paper.enc_depth, 12);
  EXPECT_EQ(paper.dec_dim, 512);
  EXPECT_EQ(paper.dec_depth, 8);
  EXPECT_EQ(paper.dist_dim, 1024);
  EXPECT_NO_THROW(paper.validate());
  const auto tiny = BackboneConfig::tiny();
  EXPECT_EQ(tiny.enc_dim, 64);
  EXPECT_EQ(tiny.enc_depth, 2);
  EXPECT_EQ(tiny.dec_depth, 1);
  EXPECT_NO_THROW(tiny.validate());

  auto bad = tiny;
  bad.enc_heads = 3;
  EXPECT_THROW(bad.validate(), Error);
  bad = tiny;
  bad.image_width = 60;
  EXPECT_THROW(bad.validate(), Error);

  nlohmann::json j = tiny;
  EXPECT_EQ(j.get<BackboneConfig>(), tiny);
  EXPECT_EQ(nlohmann::json::parse(R"({"enc_dim": 32})").get<BackboneConfig>().enc_dim, 32);
}

TEST(Backbone, TokenCountsOnTinyGrid) {
  Backbone<double> net(small_config(), 1);
  ASSERT_EQ(net.grid().size(), 16u);
  const Image img = random_image(32, 32, 2);
  const MaskPlan plan = plan_with_ratio(net.grid(), 0.75);
  ASSERT_EQ(plan.masked_count(), 12u);

  Tape<double> tape(false);
  auto tokens = net.patch_embed(tape, img, plan);
  EXPECT_EQ(tokens.size(), 5u);
  EXPECT_EQ(tape.rows(tokens.features), 5);
  EXPECT_EQ(tape.cols(tokens.features), 64);

  auto encoded = net.encode(tape, net.add_encoder_positions(tape, tokens));
  EXPECT_EQ(tape.rows(encoded.features), 5);
  auto projected = net.project_to_decoder(tape, encoded);
  auto dec_in = net.assemble_decoder_input(tape, projected, plan);
  EXPECT_EQ(dec_in.size(), 17u);
  EXPECT_EQ(tape.rows(dec_in.features), 17);
  auto decoded = net.decode(tape, dec_in);
  Var pixels = net.reconstruct_pixels(tape, decoded);
  EXPECT_EQ(tape.rows(pixels), 16);
  EXPECT_EQ(tape.cols(pixels), 8 * 8 * 3);

  const MaskPlan none = plan_with_ratio(net.grid(), 0.0);
  auto all = net.patch_embed(tape, img, none);
  EXPECT_EQ(all.size(), 17u);
  auto dec_all = net.assemble_decoder_input(tape, net.project_to_decoder(tape, all), none);
  for (auto k : dec_all.kinds) EXPECT_NE(k, TokenKind::kMasked);
}

TEST(Backbone, PaperWidthsWithShallowStacks) {
  BackboneConfig c = BackboneConfig::paper();
  c.enc_depth = 1;
  c.dec_depth = 1;
  Backbone<float> net(c, 3);
  Image img(224, 224, 3, 0.5);
  const MaskPlan plan = plan_with_ratio(net.grid(), 0.75);
  Tape<float> tape(false);
  auto tokens = net.add_encoder_positions(tape, net.patch_embed(tape, img, plan));
  EXPECT_EQ(tape.rows(tokens.features), 50);
  EXPECT_EQ(tape.cols(tokens.features), 768);
  EXPECT_EQ(net.params().at("encoder.pos_embed").value.rows(), 197);
  auto projected = net.project_to_decoder(tape, net.encode(tape, tokens));
  EXPECT_EQ(tape.rows(projected.features), 50);
  EXPECT_EQ(tape.cols(projected.features), 512);
  auto dec_in = net.assemble_decoder_input(tape, projected, plan);
  EXPECT_EQ(tape.rows(dec_in.features), 197);
  EXPECT_EQ(tape.cols(dec_in.features), 512);
  EXPECT_EQ(net.params().at("decoder.pos_embed").value.rows(), 197);
  Var pixels = net.reconstruct_pixels(tape, net.decode(tape, dec_in));
  EXPECT_EQ(tape.rows(pixels), 196);
  EXPECT_EQ(tape.cols(pixels), 768);
}

TEST(Backbone, PatchFlatteningIsRowMajorChannelLast) {
  const PatchGrid grid = PatchGrid::build(4, 4, 2);
  Image img(4, 4, 3);
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 4; ++x)
      for (int c = 0; c < 3; ++c) img.at(y, x, c) = 100 * y + 10 * x + c;
  const MatD rows = patch_pixels<double>(img, grid, {3});  // patch (1, 1): pixels y 2..3, x 2..3
  const double expected[] = {220, 221, 222, 230, 231, 232, 320, 321, 322, 330, 331, 332};
  ASSERT_EQ(rows.cols(), 12);
  for (int k = 0; k < 12; ++k) EXPECT_EQ(rows(0, k), expected[k]);
}

TEST(Backbone, PatchEmbedIsLinearMapOfVisiblePatches) {
  Backbone<double> net(small_config(), 4);
  const Image img = random_image(32, 32, 6);
  const MaskPlan plan = plan_with_ratio(net.grid(), 0.5);
  Tape<double> tape(false);
  auto tokens = net.patch_embed(tape, img, plan);
  const auto visible = plan.visible_indices();
  const MatD px = patch_pixels<double>(img, net.grid(), visible);
  const MatD expected = (px * net.params().at("encoder.patch_embed.weight").value).rowwise() +
                        net.params().at("encoder.patch_embed.bias").value.row(0);
  EXPECT_LT((tape.value(tokens.features).bottomRows(visible.size()) - expected).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_EQ(tape.value(tokens.features).row(0), net.params().at("encoder.cls_token").value.row(0));
  EXPECT_THROW(net.patch_embed(tape, random_image(64, 64, 1), plan), Error);
}

TEST(Backbone, ZeroPositionTableIsIdentity) {
  Backbone<double> net(small_config(), 7);
  const Image img = random_image(32, 32, 8);
  const MaskPlan plan = plan_with_ratio(net.grid(), 0.75);
  Tape<double> tape(false);
  auto tokens = net.patch_embed(tape, img, plan);
  auto with_pos = net.add_position_encoding(tape, tokens, tape.constant(MatD::Zero(17, 64)));
  EXPECT_EQ(tape.value(with_pos.features), tape.value(tokens.features));
  EXPECT_THROW(net.add_position_encoding(tape, tokens, tape.constant(MatD::Zero(17, 32))), Error);
}

TEST(Backbone, DepthZeroStacksAreIdentities) {
  BackboneConfig c = small_config();
  c.enc_depth = 0;
  c.dec_depth = 0;
  Backbone<double> net(c, 9);
  Tape<double> tape(false);
  Rng rng = make_rng(10);
  TokenBatch enc{tape.constant(detail::random_matrix(rng, 5, 64)), {}, {}};
  EXPECT_EQ(tape.value(net.encode(tape, enc).features), tape.value(enc.features));
  TokenBatch dec{tape.constant(detail::random_matrix(rng, 17, 64)), {}, {}};
  EXPECT_EQ(tape.value(net.decode(tape, dec).features), tape.value(dec.features));
}

TEST(Backbone, StacksPreserveShape) {
  for (int depth : {1, 2, 3}) {
    BackboneConfig c = small_config();
    c.enc_depth = depth;
    c.dec_depth = depth;
    Backbone<double> net(c, 11);
    Tape<double> tape(false);
    Rng rng = make_rng(12);
    TokenBatch t{tape.constant(detail::random_matrix(rng, 7, 64)), {}, {}};
    Var out = net.encode(tape, t).features;
    EXPECT_EQ(tape.rows(out), 7);
    EXPECT_EQ(tape.cols(out), 64);
    out = net.decode(tape, t).features;
    EXPECT_EQ(tape.rows(out), 7);
    EXPECT_EQ(tape.cols(out), 64);
  }
}

TEST(Backbone, ProjectionIdentityAndLinearity) {
  Backbone<double> net(small_config(), 13);
  net.params().at("decoder.embed.weight").value = MatD::Identity(64, 64);
  Tape<double> tape(false);
  Rng rng = make_rng(14);
  const MatD a = detail::random_matrix(rng, 5, 64), b = detail::random_matrix(rng, 5, 64);
  TokenBatch ta{tape.constant(a), {}, {}};
  EXPECT_EQ(tape.value(net.project_to_decoder(tape, ta).features), a);

  Backbone<double> fresh(small_config(), 15);
  auto f = [&](const MatD& x) {
    TokenBatch t{tape.constant(x), {}, {}};
    return MatD(tape.value(fresh.project_to_decoder(tape, t).features));
  };
  EXPECT_LT((f(a + b) - f(a) - f(b)).cwiseAbs().maxCoeff(), 1e-6);
}

TEST(Backbone, ReconstructionHeadZeroAndLinear) {
  Backbone<double> net(small_config(), 16);
  Tape<double> tape(false);
  Rng rng = make_rng(17);
  auto run = [&](const MatD& x) {
    TokenBatch t{tape.constant(x), std::vector<TokenKind>(17, TokenKind::kVisible), std::vector<long>(17, 0)};
    return MatD(tape.value(net.reconstruct_pixels(tape, t)));
  };
  const MatD a = detail::random_matrix(rng, 17, 64), b = detail::random_matrix(rng, 17, 64);
  EXPECT_LT((run(a + b) - run(a) - run(b)).cwiseAbs().maxCoeff(), 1e-9);
  net.params().at("decoder.pred.weight").value.setZero();
  EXPECT_EQ(run(a).cwiseAbs().maxCoeff(), 0.0);
}

TEST(Backbone, DistributionHeads) {
  Backbone<double> net(small_config(), 18);
  Tape<double> tape(false);
  Rng rng = make_rng(19);
  for (auto head : {DistributionHead::kStudent, DistributionHead::kTeacher}) {
    const MatD x = detail::random_matrix(rng, 6, 64, -5, 5);
    const MatD p = tape.value(net.project_patch_distribution(tape, tape.constant(x), head));
    ASSERT_EQ(p.cols(), 64);
    for (Eigen::Index r = 0; r < p.rows(); ++r) EXPECT_NEAR(p.row(r).sum(), 1.0, 1e-9);
    EXPECT_GE(p.minCoeff(), 0.0);
    const MatD c = tape.value(net.project_cls_distribution(tape, tape.constant(MatD(x.topRows(1))), head));
    EXPECT_NEAR(c.sum(), 1.0, 1e-9);
    EXPECT_THROW(net.project_cls_distribution(tape, tape.constant(x), head), Error);
  }

  // Zero weights give zero logits, hence uniform rows.
  auto& w = net.params().at("heads.patch_student.weight").value;
  w.setZero();
  const MatD u = tape.value(
      net.project_patch_distribution(tape, tape.constant(detail::random_matrix(rng, 3, 64)), DistributionHead::kStudent));
  EXPECT_LT((u.array() - 1.0 / 64).abs().maxCoeff(), 1e-15);

  // One logit of 20, the rest 0, K = 4.
  BackboneConfig c4 = small_config();
  c4.dist_dim = 4;
  Backbone<double> k4(c4, 20);
  auto& w4 = k4.params().at("heads.cls_teacher.weight").value;
  w4.setZero();
  w4(0, 2) = 20.0;
  MatD x = MatD::Zero(1, 64);
  x(0, 0) = 1.0;
  const MatD p = tape.value(k4.project_cls_distribution(tape, tape.constant(x), DistributionHead::kTeacher));
  MatD logits = MatD::Zero(1, 4);
  logits(0, 2) = 20.0;
  const MatD oracle = softmax_oracle(logits);
  EXPECT_LT((p - oracle).cwiseAbs().maxCoeff(), 1e-15);
  EXPECT_GT(p(0, 2), 1.0 - 1e-8);
}

TEST(Backbone, PatchIndexSurvivesThePipeline) {
  Backbone<double> net(small_config(), 21);
  const Image img = random_image(32, 32, 22);
  const MaskPlan plan = plan_with_ratio(net.grid(), 0.75, 99);
  Tape<double> tape(false);
  auto tokens = net.patch_embed(tape, img, plan);
  const auto visible = plan.visible_indices();
  ASSERT_EQ(tokens.patch_index.size(), visible.size() + 1);
  EXPECT_EQ(tokens.patch_index[0], -1);
  for (std::size_t k = 0; k < visible.size(); ++k) EXPECT_EQ(tokens.patch_index[k + 1], static_cast<long>(visible[k]));

  auto encoded = net.encode(tape, net.add_encoder_positions(tape, tokens));
  auto projected = net.project_to_decoder(tape, encoded);
  EXPECT_EQ(encoded.patch_index, tokens.patch_index);
  EXPECT_EQ(projected.patch_index, tokens.patch_index);
  auto dec = net.assemble_decoder_input(tape, projected, plan);
  for (std::size_t i = 0; i < 16; ++i) {
    EXPECT_EQ(dec.patch_index[i + 1], static_cast<long>(i));
    EXPECT_EQ(dec.kinds[i + 1] == TokenKind::kMasked, plan.masked[i] != 0);
  }

  // Visible rows carry the projected features, masked rows the mask token,
  // each plus the decoder position row.
  const MatD& feats = tape.value(dec.features);
  const MatD& pos = net.params().at("decoder.pos_embed").value;
  const MatD& proj = tape.value(projected.features);
  const MatD& mtok = net.params().at("decoder.mask_token").value;
  std::size_t slot = 1;
  for (std::size_t i = 0; i < 16; ++i) {
    const auto r = static_cast<Eigen::Index>(i + 1);
    const MatD expected = plan.masked[i] ? MatD(mtok + pos.row(r)) : MatD(proj.row(slot++) + pos.row(r));
    EXPECT_LT((feats.row(r) - expected).cwiseAbs().maxCoeff(), 1e-12);
  }

  const MaskPlan other = plan_with_ratio(net.grid(), 0.75, 100);
  ASSERT_NE(other.masked, plan.masked);
  try {
    net.assemble_decoder_input(tape, projected, other);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kPlanMismatch);
  }
}

TEST(Backbone, ForwardIsBitReproducible) {
  auto run = [] {
    Backbone<double> net(small_config(), 23);
    const Image img = random_image(32, 32, 24);
    const MaskPlan plan = plan_with_ratio(net.grid(), 0.75);
    Tape<double> tape(false);
    auto enc = net.encode(tape, net.add_encoder_positions(tape, net.patch_embed(tape, img, plan)));
    auto dec = net.decode(tape, net.assemble_decoder_input(tape, net.project_to_decoder(tape, enc), plan));
    return MatD(tape.value(net.reconstruct_pixels(tape, dec)));
  };
  EXPECT_EQ(run(), run());
  Backbone<double> a(small_config(), 1), b(small_config(), 2);
  EXPECT_NE(a.params().at("encoder.patch_embed.weight").value, b.params().at("encoder.patch_embed.weight").value);
}

TEST(Backbone, TeacherHeadsAreFrozen) {
  Backbone<double> net(small_config(), 25);
  EXPECT_FALSE(net.params().at("heads.patch_teacher.weight").trainable);
  EXPECT_FALSE(net.params().at("heads.cls_teacher.bias").trainable);
  EXPECT_TRUE(net.params().at("heads.patch_student.weight").trainable);
  EXPECT_TRUE(net.params().at("encoder.patch_embed.weight").decay);
  EXPECT_FALSE(net.params().at("encoder.patch_embed.bias").decay);
  EXPECT_FALSE(net.params().at("encoder.norm.weight").decay);
}

// Whole reconstruction path, one coordinate per parameter tensor.
TEST(Backbone, ReconstructionGradientMatchesFiniteDifferences) {
  BackboneConfig c = small_config();
  c.enc_dim = 16;
  c.dec_dim = 16;
  c.enc_heads = 2;
  c.dec_heads = 2;
  c.dist_dim = 8;
  c.teacher_dim = 8;
  Backbone<double> net(c, 26);
  const Image img = random_image(32, 32, 27);
  const MaskPlan plan = plan_with_ratio(net.grid(), 0.5);
  const auto masked = plan.masked_indices();
  const MatD targets = patch_pixels<double>(img, net.grid(), masked);

  auto loss = [&](bool record) {
    Tape<double> tape(record);
    auto enc = net.encode(tape, net.add_encoder_positions(tape, net.patch_embed(tape, img, plan)));
    auto dec = net.decode(tape, net.assemble_decoder_input(tape, net.project_to_decoder(tape, enc), plan));
    std::vector<Eigen::Index> rows(masked.begin(), masked.end());
    Var pred = tape.gather_rows(net.reconstruct_pixels(tape, dec), rows);
    const auto lg = reconstruction_loss_with_grad<double>(targets, tape.value(pred));
    const MatD g = lg.grads[1];
    Var s = tape.custom({pred}, MatD::Constant(1, 1, lg.value), [g](const MatD& up) {
      return std::vector<MatD>{g * up(0, 0)};
    });
    if (record) tape.backward(s);
    return lg.value;
  };

  net.params().zero_grad();
  loss(true);
  Rng rng = make_rng(28);
  for (auto& [name, p] : net.params()) {
    if (name.rfind("heads.", 0) == 0) continue;
    const auto i = static_cast<Eigen::Index>(uniform_index(rng, static_cast<std::size_t>(p.value.size())));
    const double orig = p.value.data()[i];
    const double h = 1e-5;
    p.value.data()[i] = orig + h;
    const double up = loss(false);
    p.value.data()[i] = orig - h;
    const double down = loss(false);
    p.value.data()[i] = orig;
    const double numeric = (up - down) / (2 * h);
    EXPECT_NEAR(p.grad.data()[i], numeric, 1e-6 + 1e-4 * std::abs(numeric)) << name;
  }
}

}  // namespace
}  // namespace vmae
