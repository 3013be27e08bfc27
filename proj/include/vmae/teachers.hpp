#pragma once

// Frozen vision-language teachers, the contour branch and the Sobel edge map.

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "vmae/autograd.hpp"
#include "vmae/backbone.hpp"
#include "vmae/error.hpp"
#include "vmae/image.hpp"
#include "vmae/rng.hpp"

namespace vmae {

/// Image and text encoders with fixed parameters. Implementations must be
/// pure: identical inputs give identical outputs for the life of the object.
class VisionLanguageTeacher {
 public:
  virtual ~VisionLanguageTeacher() = default;
  virtual int dim() const = 0;
  virtual std::string name() const = 0;
  /// One row of width dim().
  virtual Mat<double> image_embed(const Image& image) const = 0;
  /// One row per text; zero texts give a 0 x dim() matrix.
  virtual Mat<double> text_embed(const std::vector<std::string>& texts) const = 0;
};

namespace detail {

inline std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::vector<std::string> word_tokens(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isalnum(c) || c >= 0x80) {
      cur.push_back(static_cast<char>(std::tolower(c)));
    } else if (!cur.empty()) {
      out.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

}  // namespace detail

/// Linear image encoder over an average-pooled pool x pool x 3 thumbnail, and
/// a bag-of-words text encoder whose word vectors are drawn from a seed
/// hashed with the word. Built either from a seed (the toy teacher) or from a
/// weights file written by save().
class LinearTeacher final : public VisionLanguageTeacher {
 public:
  static constexpr int kDefaultPool = 8;

  static LinearTeacher from_seed(std::uint64_t seed, int dim, int pool = kDefaultPool) {
    if (dim <= 0 || pool <= 0) throw Error(ErrorCode::kInvalidConfig, "teacher dim and pool must be positive");
    LinearTeacher t;
    t.seed_ = seed;
    t.dim_ = dim;
    t.pool_ = pool;
    const int in = pool * pool * 3;
    Rng rng = make_rng(seed, {0x7EAC4E5});
    t.weight_.resize(in, dim);
    const double scale = 1.0 / std::sqrt(static_cast<double>(in));
    for (Eigen::Index i = 0; i < t.weight_.size(); ++i) t.weight_.data()[i] = scale * normal(rng);
    t.bias_.resize(1, dim);
    for (Eigen::Index i = 0; i < t.bias_.size(); ++i) t.bias_.data()[i] = 0.1 * normal(rng);
    return t;
  }

  /// Loads a weights file; any failure to open or parse is TeacherUnavailable.
  static LinearTeacher load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::kTeacherUnavailable, "cannot open teacher weights " + path.string());
    try {
      const auto j = nlohmann::json::parse(in);
      LinearTeacher t;
      t.seed_ = j.at("text_seed").get<std::uint64_t>();
      t.dim_ = j.at("dim").get<int>();
      t.pool_ = j.at("pool").get<int>();
      const auto w = j.at("image_weight").get<std::vector<double>>();
      const auto b = j.at("image_bias").get<std::vector<double>>();
      const auto in_dim = static_cast<std::size_t>(t.pool_) * t.pool_ * 3;
      if (t.dim_ <= 0 || t.pool_ <= 0 || w.size() != in_dim * t.dim_ || b.size() != static_cast<std::size_t>(t.dim_)) {
        throw Error(ErrorCode::kTeacherUnavailable, "teacher weights have inconsistent shapes");
      }
      t.weight_ = Eigen::Map<const Mat<double>>(w.data(), static_cast<Eigen::Index>(in_dim), t.dim_);
      t.bias_ = Eigen::Map<const Mat<double>>(b.data(), 1, t.dim_);
      return t;
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::kTeacherUnavailable, std::string("bad teacher weights: ") + e.what());
    }
  }

  void save(const std::filesystem::path& path) const {
    nlohmann::json j;
    j["format"] = "vmae-linear-teacher";
    j["text_seed"] = seed_;
    j["dim"] = dim_;
    j["pool"] = pool_;
    j["image_weight"] = std::vector<double>(weight_.data(), weight_.data() + weight_.size());
    j["image_bias"] = std::vector<double>(bias_.data(), bias_.data() + bias_.size());
    std::ofstream out(path);
    if (!out) throw Error(ErrorCode::kFileUnreadable, "cannot write " + path.string());
    out << j.dump() << '\n';
  }

  int dim() const override { return dim_; }
  int pool() const { return pool_; }
  std::string name() const override { return "linear-teacher"; }
  const Mat<double>& image_weight() const { return weight_; }
  const Mat<double>& image_bias() const { return bias_; }

  Mat<double> image_embed(const Image& image) const override {
    if (image.channels != 3 || image.height < pool_ || image.width < pool_) {
      throw Error(ErrorCode::kShapeMismatch, "teacher expects a 3-channel image of at least pool x pool");
    }
    return pooled(image) * weight_ + bias_;
  }

  Mat<double> text_embed(const std::vector<std::string>& texts) const override {
    Mat<double> out(static_cast<Eigen::Index>(texts.size()), dim_);
    for (std::size_t i = 0; i < texts.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = text_row(texts[i]);
    return out;
  }

  /// Average over pool x pool cells with floor boundaries, channel-last.
  Mat<double> pooled(const Image& image) const {
    Mat<double> row = Mat<double>::Zero(1, pool_ * pool_ * 3);
    for (int cy = 0; cy < pool_; ++cy) {
      const int y0 = cy * image.height / pool_, y1 = (cy + 1) * image.height / pool_;
      for (int cx = 0; cx < pool_; ++cx) {
        const int x0 = cx * image.width / pool_, x1 = (cx + 1) * image.width / pool_;
        const double inv = 1.0 / ((y1 - y0) * (x1 - x0));
        for (int c = 0; c < 3; ++c) {
          double s = 0;
          for (int y = y0; y < y1; ++y)
            for (int x = x0; x < x1; ++x) s += image.at(y, x, c);
          row(0, (cy * pool_ + cx) * 3 + c) = s * inv;
        }
      }
    }
    return row;
  }

 private:
  LinearTeacher() = default;

  Mat<double> word_vector(std::string_view word) const {
    Rng rng = make_rng(seed_, {0x7E47, detail::fnv1a(word)});
    Mat<double> v(1, dim_);
    for (Eigen::Index i = 0; i < v.size(); ++i) v.data()[i] = normal(rng);
    return v;
  }

  // A start marker keeps the empty string away from the zero vector.
  Mat<double> text_row(const std::string& text) const {
    Mat<double> acc = word_vector("<s>");
    const auto words = detail::word_tokens(text);
    for (const auto& w : words) acc += word_vector(w);
    return acc / std::sqrt(static_cast<double>(words.size() + 1));
  }

  std::uint64_t seed_ = 0;
  int dim_ = 0;
  int pool_ = kDefaultPool;
  Mat<double> weight_;
  Mat<double> bias_;
};

/// "toy" gives the seeded teacher; anything else is a weights-file path.
inline std::unique_ptr<VisionLanguageTeacher> make_teacher(const std::string& spec, std::uint64_t seed, int dim) {
  if (spec == "toy") return std::make_unique<LinearTeacher>(LinearTeacher::from_seed(seed, dim));
  auto t = std::make_unique<LinearTeacher>(LinearTeacher::load(spec));
  if (t->dim() != dim) {
    throw Error(ErrorCode::kTeacherUnavailable,
                "teacher width " + std::to_string(t->dim()) + " differs from config " + std::to_string(dim));
  }
  return t;
}

// ----- contour branch -----

/// Gradient-magnitude edge map of the grayscale image with 3x3 Sobel kernels
/// and replicated borders, divided by its maximum (all zeros if flat).
inline Image sobel_contour(const Image& image) {
  const Image g = to_grayscale(image);
  const int h = g.height, w = g.width;
  auto px = [&](int y, int x) { return g.at(std::clamp(y, 0, h - 1), std::clamp(x, 0, w - 1), 0); };
  Image out(h, w, 1);
  double peak = 0;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const double gx = (px(y - 1, x + 1) + 2 * px(y, x + 1) + px(y + 1, x + 1)) -
                        (px(y - 1, x - 1) + 2 * px(y, x - 1) + px(y + 1, x - 1));
      const double gy = (px(y + 1, x - 1) + 2 * px(y + 1, x) + px(y + 1, x + 1)) -
                        (px(y - 1, x - 1) + 2 * px(y - 1, x) + px(y - 1, x + 1));
      const double m = std::sqrt(gx * gx + gy * gy);
      out.at(y, x, 0) = m;
      peak = std::max(peak, m);
    }
  }
  if (peak > 0) {
    for (double& v : out.data) v /= peak;
  }
  return out;
}

/// Full token sequence of a single-channel contour map through the shared
/// patch embedding, encoder position table and encoder. The channel is
/// replicated to three. Use a non-recording tape to keep it out of the
/// gradient.
template <typename Scalar>
TokenBatch encode_contour(Backbone<Scalar>& net, Tape<Scalar>& tape, const Image& contour) {
  const auto& c = net.config();
  if (contour.channels != 1 || contour.height != c.image_height || contour.width != c.image_width) {
    throw Error(ErrorCode::kShapeMismatch, "contour map must be single-channel at the configured image size");
  }
  MaskPlan none;
  none.masked.assign(net.grid().size(), 0);
  auto tokens = net.patch_embed(tape, replicate_channels(contour, c.in_channels), none);
  return net.encode(tape, net.add_encoder_positions(tape, tokens));
}

}  // namespace vmae
