#pragma once

// Asymmetric masked-autoencoder backbone: patch embedding, learnable position
// tables, pre-norm transformer encoder and decoder, the pixel head, and the
// probability heads used by the contour-guided losses.

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>


#include "vmae/autograd.hpp"
#include "vmae/error.hpp"
#include "vmae/geometry.hpp"
#include "vmae/image.hpp"
#include "vmae/json.hpp"
#include "vmae/masking.hpp"
#include "vmae/rng.hpp"

namespace vmae {

struct BackboneConfig {
  int image_height = 224;
  int image_width = 224;
  int patch_size = 16;
  int in_channels = 3;
  int enc_dim = 768;
  int enc_depth = 12;
  int enc_heads = 12;
  int dec_dim = 512;
  int dec_depth = 8;
  int dec_heads = 16;
  int mlp_ratio = 4;
  int dist_dim = 1024;   // K, width of the probability heads
  int teacher_dim = 512; // width of the frozen vision-language embeddings

  static BackboneConfig paper() { return {}; }

  static BackboneConfig tiny() {
    BackboneConfig c;
    c.image_height = 64;
    c.image_width = 64;
    c.patch_size = 8;
    c.enc_dim = 64;
    c.enc_depth = 2;
    c.enc_heads = 4;
    c.dec_dim = 64;
    c.dec_depth = 1;
    c.dec_heads = 4;
    c.dist_dim = 64;
    c.teacher_dim = 64;
    return c;
  }

  PatchGrid grid() const { return PatchGrid::build(image_height, image_width, patch_size); }
  int patch_pixels() const { return patch_size * patch_size * in_channels; }

  void validate() const {
    grid();
    auto positive = [](int v) { return v > 0; };
    if (!positive(enc_dim) || !positive(dec_dim) || !positive(dist_dim) || !positive(teacher_dim) ||
        !positive(mlp_ratio) || enc_depth < 0 || dec_depth < 0 || in_channels != 3) {
      throw Error(ErrorCode::kInvalidConfig, "backbone widths must be positive and depths non-negative");
    }
    if (enc_heads <= 0 || enc_dim % enc_heads != 0 || dec_heads <= 0 || dec_dim % dec_heads != 0) {
      throw Error(ErrorCode::kInvalidConfig, "feature width must be divisible by the head count");
    }
  }

  friend bool operator==(const BackboneConfig&, const BackboneConfig&) = default;
};

VMAE_DEFINE_JSON(BackboneConfig, image_height, image_width, patch_size, in_channels,
                                                enc_dim, enc_depth, enc_heads, dec_dim, dec_depth, dec_heads,
                                                mlp_ratio, dist_dim, teacher_dim)

enum class TokenKind { kCls, kVisible, kMasked };

/// Token features on a tape plus per-row provenance. patch_index is -1 for CLS.
struct TokenBatch {
  Var features;
  std::vector<TokenKind> kinds;
  std::vector<long> patch_index;

  std::size_t size() const { return kinds.size(); }
};

enum class DistributionHead { kStudent, kTeacher };

/// Flattens patch `index` row-major over pixels, channel-last.
template <typename Scalar>
void flatten_patch(const Image& image, const PatchGrid& grid, std::size_t index, Eigen::Ref<Mat<Scalar>> out_row) {
  const int ps = grid.patch_size();
  const int y0 = grid.row_of(index) * ps;
  const int x0 = grid.col_of(index) * ps;
  Eigen::Index k = 0;
  for (int py = 0; py < ps; ++py)
    for (int px = 0; px < ps; ++px)
      for (int c = 0; c < image.channels; ++c) out_row(0, k++) = static_cast<Scalar>(image.at(y0 + py, x0 + px, c));
}

/// Pixel targets for the listed patches, one row each.
template <typename Scalar>
Mat<Scalar> patch_pixels(const Image& image, const PatchGrid& grid, const std::vector<std::size_t>& indices) {
  const int width = grid.patch_size() * grid.patch_size() * image.channels;
  Mat<Scalar> out(static_cast<Eigen::Index>(indices.size()), width);
  for (std::size_t k = 0; k < indices.size(); ++k)
    flatten_patch<Scalar>(image, grid, indices[k], out.row(static_cast<Eigen::Index>(k)));
  return out;
}

template <typename Scalar>
class Backbone {
 public:
  using Matrix = Mat<Scalar>;

  Backbone(const BackboneConfig& config, std::uint64_t init_seed) : config_(config), grid_(config.grid()) {
    config_.validate();
    Rng rng = make_rng(init_seed, {0xBAC4B0E});
    const int n_pos = static_cast<int>(grid_.size()) + 1;
    const int pp = config_.patch_pixels();

    linear("encoder.patch_embed", pp, config_.enc_dim, rng);
    add_normal("encoder.cls_token", 1, config_.enc_dim, rng);
    add_normal("encoder.pos_embed", n_pos, config_.enc_dim, rng);
    for (int b = 0; b < config_.enc_depth; ++b) block("encoder.blocks." + std::to_string(b), config_.enc_dim, rng);
    norm("encoder.norm", config_.enc_dim);

    linear("decoder.embed", config_.enc_dim, config_.dec_dim, rng);
    add_normal("decoder.mask_token", 1, config_.dec_dim, rng);
    add_normal("decoder.pos_embed", n_pos, config_.dec_dim, rng);
    for (int b = 0; b < config_.dec_depth; ++b) block("decoder.blocks." + std::to_string(b), config_.dec_dim, rng);
    norm("decoder.norm", config_.dec_dim);
    linear("decoder.pred", config_.dec_dim, pp, rng);

    // Student heads read decoder features; teacher heads read contour-branch
    // encoder features and receive no gradient, so they are not trained.
    linear("heads.patch_student", config_.dec_dim, config_.dist_dim, rng);
    linear("heads.cls_student", config_.dec_dim, config_.dist_dim, rng);
    linear("heads.patch_teacher", config_.enc_dim, config_.dist_dim, rng, false);
    linear("heads.cls_teacher", config_.enc_dim, config_.dist_dim, rng, false);
    linear("heads.clip_feature", config_.dec_dim, config_.teacher_dim, rng);
    linear("heads.vision_text", config_.enc_dim, config_.teacher_dim, rng);
  }

  const BackboneConfig& config() const { return config_; }
  const PatchGrid& grid() const { return grid_; }
  ParameterStore<Scalar>& params() { return params_; }
  const ParameterStore<Scalar>& params() const { return params_; }

  // ----- embedding -----

  /// CLS token followed by one embedded token per visible patch, ascending
  /// patch order. No position encoding yet.
  TokenBatch patch_embed(Tape<Scalar>& tape, const Image& image, const MaskPlan& plan) {
    check_image(image);
    if (plan.masked.size() != grid_.size()) throw Error(ErrorCode::kShapeMismatch, "mask plan does not match grid");
    const auto visible = plan.visible_indices();

    TokenBatch out;
    out.kinds.push_back(TokenKind::kCls);
    out.patch_index.push_back(-1);
    for (auto i : visible) {
      out.kinds.push_back(TokenKind::kVisible);
      out.patch_index.push_back(static_cast<long>(i));
    }
    Var cls = tape.param(params_.at("encoder.cls_token"));
    if (visible.empty()) {
      out.features = cls;
      return out;
    }
    Var pixels = tape.constant(patch_pixels<Scalar>(image, grid_, visible));
    Var embedded = apply_linear(tape, "encoder.patch_embed", pixels);
    const Var parts[] = {cls, embedded};
    out.features = tape.concat_rows(parts);
    return out;
  }

  /// Adds the table rows selected by each token's position (row 0 is CLS,
  /// row 1 + p is patch p).
  TokenBatch add_position_encoding(Tape<Scalar>& tape, const TokenBatch& tokens, Var table) {
    if (tape.cols(table) != tape.cols(tokens.features)) {
      throw Error(ErrorCode::kShapeMismatch, "position table width differs from token width");
    }
    std::vector<Eigen::Index> rows;
    rows.reserve(tokens.size());
    for (long p : tokens.patch_index) {
      const Eigen::Index r = p < 0 ? 0 : p + 1;
      if (r >= tape.rows(table)) throw Error(ErrorCode::kIndexOutOfRange, "position table too short");
      rows.push_back(r);
    }
    TokenBatch out = tokens;
    out.features = tape.add(tokens.features, tape.gather_rows(table, std::move(rows)));
    return out;
  }

  TokenBatch add_encoder_positions(Tape<Scalar>& tape, const TokenBatch& tokens) {
    return add_position_encoding(tape, tokens, tape.param(params_.at("encoder.pos_embed")));
  }

  // ----- encoder / decoder -----

  TokenBatch encode(Tape<Scalar>& tape, const TokenBatch& tokens) {
    if (tape.cols(tokens.features) != config_.enc_dim) throw Error(ErrorCode::kShapeMismatch, "encoder width");
    TokenBatch out = tokens;
    out.features = run_stack(tape, "encoder", config_.enc_depth, config_.enc_heads, tokens.features);
    return out;
  }

  TokenBatch project_to_decoder(Tape<Scalar>& tape, const TokenBatch& encoded) {
    if (tape.cols(encoded.features) != config_.enc_dim) throw Error(ErrorCode::kShapeMismatch, "projection input");
    TokenBatch out = encoded;
    out.features = apply_linear(tape, "decoder.embed", encoded.features);
    return out;
  }

  /// Full-length decoder input in canonical order: CLS, then patch 0..N-1.
  /// Visible rows come from `visible`, masked rows share one mask token. The
  /// decoder position table is added.
  TokenBatch assemble_decoder_input(Tape<Scalar>& tape, const TokenBatch& visible, const MaskPlan& plan) {
    if (tape.cols(visible.features) != config_.dec_dim) throw Error(ErrorCode::kShapeMismatch, "decoder width");
    const auto expected = plan.visible_indices();
    if (visible.size() != expected.size() + 1 || visible.patch_index.front() != -1) {
      throw Error(ErrorCode::kPlanMismatch, "visible tokens do not match the mask plan");
    }
    std::vector<Eigen::Index> slot_of(grid_.size(), -1);
    for (std::size_t k = 0; k < expected.size(); ++k) {
      if (visible.patch_index[k + 1] != static_cast<long>(expected[k])) {
        throw Error(ErrorCode::kPlanMismatch, "visible token order disagrees with the mask plan");
      }
      slot_of[expected[k]] = static_cast<Eigen::Index>(k + 1);
    }
    const Eigen::Index mask_row = static_cast<Eigen::Index>(visible.size());
    const Var parts[] = {visible.features, tape.param(params_.at("decoder.mask_token"))};
    Var stacked = tape.concat_rows(parts);

    TokenBatch out;
    std::vector<Eigen::Index> order;
    order.reserve(grid_.size() + 1);
    order.push_back(0);
    out.kinds.push_back(TokenKind::kCls);
    out.patch_index.push_back(-1);
    for (std::size_t i = 0; i < grid_.size(); ++i) {
      const bool masked = plan.masked[i] != 0;
      order.push_back(masked ? mask_row : slot_of[i]);
      out.kinds.push_back(masked ? TokenKind::kMasked : TokenKind::kVisible);
      out.patch_index.push_back(static_cast<long>(i));
    }
    out.features = tape.gather_rows(stacked, std::move(order));
    return add_position_encoding(tape, out, tape.param(params_.at("decoder.pos_embed")));
  }

  TokenBatch decode(Tape<Scalar>& tape, const TokenBatch& tokens) {
    if (tape.cols(tokens.features) != config_.dec_dim) throw Error(ErrorCode::kShapeMismatch, "decoder width");
    TokenBatch out = tokens;
    out.features = run_stack(tape, "decoder", config_.dec_depth, config_.dec_heads, tokens.features);
    return out;
  }

  /// Pixel predictions for every patch, [N x patch_size^2 * 3]; CLS excluded.
  Var reconstruct_pixels(Tape<Scalar>& tape, const TokenBatch& decoded) {
    if (decoded.size() != grid_.size() + 1) throw Error(ErrorCode::kShapeMismatch, "decoder output length");
    std::vector<Eigen::Index> rows(grid_.size());
    for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = static_cast<Eigen::Index>(i + 1);
    return apply_linear(tape, "decoder.pred", tape.gather_rows(decoded.features, std::move(rows)));
  }

  // ----- heads -----

  Var project_patch_distribution(Tape<Scalar>& tape, Var features, DistributionHead head) {
    return tape.softmax_rows(
        apply_linear(tape, head == DistributionHead::kStudent ? "heads.patch_student" : "heads.patch_teacher", features));
  }

  Var project_cls_distribution(Tape<Scalar>& tape, Var cls_feature, DistributionHead head) {
    if (tape.rows(cls_feature) != 1) throw Error(ErrorCode::kShapeMismatch, "CLS feature must be one row");
    return tape.softmax_rows(
        apply_linear(tape, head == DistributionHead::kStudent ? "heads.cls_student" : "heads.cls_teacher", cls_feature));
  }

  /// Decoder CLS mapped to the vision-language embedding width.
  Var clip_feature(Tape<Scalar>& tape, Var decoder_cls) { return apply_linear(tape, "heads.clip_feature", decoder_cls); }

  /// Encoder CLS mapped to the vision-language embedding width.
  Var vision_text_feature(Tape<Scalar>& tape, Var encoder_cls) {
    return apply_linear(tape, "heads.vision_text", encoder_cls);
  }

  Var apply_linear(Tape<Scalar>& tape, const std::string& prefix, Var x) {
    return tape.linear(x, tape.param(params_.at(prefix + ".weight")), tape.param(params_.at(prefix + ".bias")));
  }

 private:
  void check_image(const Image& image) const {
    if (image.height != config_.image_height || image.width != config_.image_width ||
        image.channels != config_.in_channels) {
      throw Error(ErrorCode::kShapeMismatch, "image is " + std::to_string(image.height) + "x" +
                                                 std::to_string(image.width) + "x" + std::to_string(image.channels));
    }
  }

  Var run_stack(Tape<Scalar>& tape, const std::string& prefix, int depth, int heads, Var x) {
    if (depth == 0) return x;
    for (int b = 0; b < depth; ++b) x = apply_block(tape, prefix + ".blocks." + std::to_string(b), heads, x);
    return apply_norm(tape, prefix + ".norm", x);
  }

  Var apply_norm(Tape<Scalar>& tape, const std::string& prefix, Var x) {
    return tape.layer_norm(x, tape.param(params_.at(prefix + ".weight")), tape.param(params_.at(prefix + ".bias")));
  }

  // Pre-norm: x + attn(norm1(x)), then x + mlp(norm2(x)).
  Var apply_block(Tape<Scalar>& tape, const std::string& prefix, int heads, Var x) {
    const Eigen::Index dim = tape.cols(x);
    const Eigen::Index head_dim = dim / heads;
    const Scalar inv_sqrt = Scalar(1) / std::sqrt(static_cast<Scalar>(head_dim));

    Var h = apply_norm(tape, prefix + ".norm1", x);
    Var qkv = apply_linear(tape, prefix + ".attn.qkv", h);
    std::vector<Var> outs;
    outs.reserve(static_cast<std::size_t>(heads));
    for (int k = 0; k < heads; ++k) {
      Var q = tape.slice_cols(qkv, k * head_dim, head_dim);
      Var kk = tape.slice_cols(qkv, dim + k * head_dim, head_dim);
      Var v = tape.slice_cols(qkv, 2 * dim + k * head_dim, head_dim);
      Var attn = tape.softmax_rows(tape.scale(tape.matmul_nt(q, kk), inv_sqrt));
      outs.push_back(tape.matmul(attn, v));
    }
    Var merged = heads == 1 ? outs.front() : tape.concat_cols(outs);
    x = tape.add(x, apply_linear(tape, prefix + ".attn.proj", merged));

    Var m = apply_norm(tape, prefix + ".norm2", x);
    m = tape.gelu(apply_linear(tape, prefix + ".mlp.fc1", m));
    return tape.add(x, apply_linear(tape, prefix + ".mlp.fc2", m));
  }

  void linear(const std::string& prefix, int in, int out, Rng& rng, bool trainable = true) {
    const double limit = std::sqrt(6.0 / (in + out));
    Matrix w(in, out);
    for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = static_cast<Scalar>(uniform(rng, -limit, limit));
    params_.add(prefix + ".weight", std::move(w), trainable, true);
    params_.add(prefix + ".bias", Matrix::Zero(1, out), trainable, false);
  }

  void norm(const std::string& prefix, int dim) {
    params_.add(prefix + ".weight", Matrix::Ones(1, dim), true, false);
    params_.add(prefix + ".bias", Matrix::Zero(1, dim), true, false);
  }

  void add_normal(const std::string& name, int rows, int cols, Rng& rng) {
    Matrix m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<Scalar>(0.02 * normal(rng));
    params_.add(name, std::move(m), true, false);
  }

  void block(const std::string& prefix, int dim, Rng& rng) {
    norm(prefix + ".norm1", dim);
    linear(prefix + ".attn.qkv", dim, 3 * dim, rng);
    linear(prefix + ".attn.proj", dim, dim, rng);
    norm(prefix + ".norm2", dim);
    linear(prefix + ".mlp.fc1", dim, config_.mlp_ratio * dim, rng);
    linear(prefix + ".mlp.fc2", config_.mlp_ratio * dim, dim, rng);
  }

  BackboneConfig config_;
  PatchGrid grid_;
  ParameterStore<Scalar> params_;
};

}  // namespace vmae
