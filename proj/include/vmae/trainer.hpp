#pragma once

// Pre-training loop: per-sample forward/backward on a fresh tape, one AdamW
// update per batch, per-epoch checkpoints and a metrics row per step.
//
// Every random draw is derived from (seed, step, ...) rather than from a
// running generator, so a resumed run replays the same stream without
// storing generator state.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <numeric>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "vmae/backbone.hpp"
#include "vmae/checkpoint.hpp"
#include "vmae/config.hpp"
#include "vmae/error.hpp"
#include "vmae/losses.hpp"
#include "vmae/manifest.hpp"
#include "vmae/masking.hpp"
#include "vmae/metrics.hpp"
#include "vmae/optimizer.hpp"
#include "vmae/rng.hpp"
#include "vmae/teachers.hpp"
#include "vmae/textgen.hpp"

namespace vmae {

namespace seed_tag {
inline constexpr std::uint64_t kInit = 1;
inline constexpr std::uint64_t kShuffle = 2;
inline constexpr std::uint64_t kMask = 3;
inline constexpr std::uint64_t kCorpus = 4;
inline constexpr std::uint64_t kTeacher = 5;
}  // namespace seed_tag

struct TrainingData {
  std::vector<Sample> samples;
  AttributeCorpus corpus;
  std::vector<std::string> warnings;
};

/// Manifest records plus the attribute corpus named by the config (or a
/// synthetic one when none is named).
inline TrainingData load_training_data(const TrainConfig& config, const std::filesystem::path& manifest_path) {
  TrainingData d;
  const auto manifest = load_manifest(manifest_path);
  d.warnings = manifest.warnings;
  d.samples = load_samples(manifest, manifest_path, config.backbone);
  if (d.samples.empty()) throw Error(ErrorCode::kEmptyBatch, "manifest has no usable records");
  d.corpus = config.corpus.empty()
                 ? synthetic_attribute_corpus(static_cast<std::size_t>(config.synthetic_corpus_size), config.seed)
                 : load_attribute_corpus(config.corpus);
  return d;
}

struct StepResult {
  LossBundle losses;
  std::size_t masked_count = 0;
  std::array<std::size_t, 3> strategy_counts{};
  std::size_t unresolved_pairs = 0;
  std::size_t prompt_pairs = 0;
  double lr = 0;
};

struct RunOptions {
  std::filesystem::path out_dir;
  bool resume = false;
  long stop_at_step = -1;  // stop (with a checkpoint) once this many steps are done
  std::ostream* log = nullptr;
};

struct RunSummary {
  long first_step = 0;
  long end_step = 0;
  long total_steps = 0;
  std::filesystem::path checkpoint;
  std::filesystem::path metrics;
  std::vector<MetricsRow> rows;
};

inline constexpr const char* kCheckpointFile = "checkpoint.bin";
inline constexpr const char* kMetricsFile = "metrics.jsonl";

class Trainer {
 public:
  Trainer(TrainConfig config, TrainingData data, std::unique_ptr<VisionLanguageTeacher> teacher)
      : config_(std::move(config)),
        data_(std::move(data)),
        teacher_(std::move(teacher)),
        net_((config_.validate(), config_.backbone), derive_seed(config_.seed, {seed_tag::kInit})),
        optimizer_(AdamWConfig{config_.lr, config_.weight_decay, config_.beta1, config_.beta2, config_.adam_eps, 0}) {
    if (data_.samples.empty()) throw Error(ErrorCode::kEmptyBatch, "no training samples");
    if (!teacher_) throw Error(ErrorCode::kTeacherUnavailable, "no teacher");
    if (teacher_->dim() != config_.backbone.teacher_dim) {
      throw Error(ErrorCode::kShapeMismatch, "teacher width differs from backbone teacher_dim");
    }
    optimizer_ = AdamW<double>(AdamWConfig{config_.lr, config_.weight_decay, config_.beta1, config_.beta2,
                                           config_.adam_eps, warmup_steps()});
    cache_teacher_outputs();
  }

  const TrainConfig& config() const { return config_; }
  Backbone<double>& model() { return net_; }
  const Backbone<double>& model() const { return net_; }
  AdamW<double>& optimizer() { return optimizer_; }
  const TrainingData& data() const { return data_; }
  const VisionLanguageTeacher& teacher() const { return *teacher_; }
  long next_step() const { return next_step_; }

  long steps_per_epoch() const {
    const auto n = static_cast<long>(data_.samples.size());
    return (n + config_.batch_size - 1) / config_.batch_size;
  }

  long total_steps() const {
    const long all = steps_per_epoch() * config_.epochs;
    return config_.max_steps > 0 ? std::min(all, config_.max_steps) : all;
  }

  long warmup_steps() const {
    return static_cast<long>(std::ceil(config_.warmup_fraction * static_cast<double>(total_steps())));
  }

  /// Sample indices of step `step`: a seeded per-epoch permutation, cut into
  /// batches; the last batch of an epoch may be short.
  std::vector<std::size_t> batch_indices(long step) const {
    const long spe = steps_per_epoch();
    const long epoch = step / spe, b = step % spe;
    std::vector<std::size_t> perm(data_.samples.size());
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    Rng rng = make_rng(config_.seed, {seed_tag::kShuffle, static_cast<std::uint64_t>(epoch)});
    shuffle(perm.begin(), perm.end(), rng);
    const auto begin = static_cast<std::size_t>(b) * static_cast<std::size_t>(config_.batch_size);
    const auto end = std::min(perm.size(), begin + static_cast<std::size_t>(config_.batch_size));
    return {perm.begin() + static_cast<std::ptrdiff_t>(begin), perm.begin() + static_cast<std::ptrdiff_t>(end)};
  }

  MaskConfig mask_config(long step, std::size_t slot) const {
    MaskConfig mc = config_.mask;
    mc.rng_seed = derive_seed(config_.seed, {seed_tag::kMask, static_cast<std::uint64_t>(step), slot});
    return mc;
  }

  /// Unit-norm text rows used by the similarity terms at `step`.
  Mat<double> corpus_rows(long step) const {
    const auto m = corpus_unit_.rows();
    const auto k = std::min<Eigen::Index>(m, config_.corpus_sample);
    if (k == m) return corpus_unit_;
    std::vector<Eigen::Index> idx(static_cast<std::size_t>(m));
    std::iota(idx.begin(), idx.end(), Eigen::Index{0});
    Rng rng = make_rng(config_.seed, {seed_tag::kCorpus, static_cast<std::uint64_t>(step)});
    Mat<double> out(k, corpus_unit_.cols());
    for (Eigen::Index i = 0; i < k; ++i) {
      const auto j = i + static_cast<Eigen::Index>(uniform_index(rng, static_cast<std::size_t>(m - i)));
      std::swap(idx[static_cast<std::size_t>(i)], idx[static_cast<std::size_t>(j)]);
      out.row(i) = corpus_unit_.row(idx[static_cast<std::size_t>(i)]);
    }
    return out;
  }

  /// Forward and backward over the batch, then one optimizer update.
  /// Gradients are left in the parameters for inspection.
  StepResult train_step(const std::vector<std::size_t>& batch, long step) {
    StepResult res = accumulate_gradients(batch, step);
    res.lr = optimizer_.lr_at(optimizer_.step_count());
    optimizer_.step(net_.params());
    return res;
  }

  /// Loss bundle and parameter gradients for a batch, with no update.
  StepResult accumulate_gradients(const std::vector<std::size_t>& batch, long step) {
    if (batch.empty()) throw Error(ErrorCode::kEmptyBatch, "empty batch");
    net_.params().zero_grad();
    const Mat<double> texts = corpus_rows(step);
    const double inv_b = 1.0 / static_cast<double>(batch.size());
    std::size_t pairs = 0;
    for (auto i : batch) pairs += data_.samples.at(i).prompt ? 1 : 0;
    const double inv_p = pairs ? 1.0 / static_cast<double>(pairs) : 0.0;

    StepResult res;
    res.prompt_pairs = pairs;
    LossComponents sum;
    for (std::size_t k = 0; k < batch.size(); ++k) {
      const std::size_t idx = batch[k];
      const MaskPlan plan = make_mask_plan(net_.grid(), data_.samples[idx].annotation, mask_config(step, k));
      res.masked_count += plan.masked_count();
      ++res.strategy_counts[strategy_slot(plan.strategy)];
      res.unresolved_pairs += plan.unresolved_pairs.size();
      sample_pass(idx, plan, texts, inv_b, inv_p, sum);
    }
    res.losses = total_loss(sum, config_.weights);
    return res;
  }

  // ----- checkpoints -----

  Archive checkpoint() const {
    Archive a;
    a.meta["format"] = "vmae-pretrain";
    a.meta["config"] = config_;
    a.meta["next_step"] = next_step_;
    a.meta["optimizer_step"] = optimizer_.step_count();
    a.meta["teacher"] = teacher_->name();
    for (const auto& [name, p] : net_.params()) a.arrays.emplace("param/" + name, p.value);
    for (const auto& [name, mom] : optimizer_.moments()) {
      a.arrays.emplace("adam_m/" + name, mom.m);
      a.arrays.emplace("adam_v/" + name, mom.v);
    }
    return a;
  }

  void restore(const Archive& a) {
    try {
      if (a.meta.at("format") != "vmae-pretrain") throw Error(ErrorCode::kCheckpointFormat, "not a training checkpoint");
      if (a.meta.at("config") != nlohmann::json(config_)) {
        throw Error(ErrorCode::kInvalidConfig, "checkpoint was written with a different config");
      }
      auto& params = net_.params();
      for (auto& [name, p] : params) {
        const auto it = a.arrays.find("param/" + name);
        if (it == a.arrays.end()) throw Error(ErrorCode::kCheckpointFormat, "checkpoint lacks " + name);
        if (it->second.rows() != p.value.rows() || it->second.cols() != p.value.cols()) {
          throw Error(ErrorCode::kCheckpointFormat, "shape of " + name + " differs");
        }
        p.value = it->second;
      }
      optimizer_.moments().clear();
      for (const auto& [key, m] : a.arrays) {
        if (key.rfind("adam_m/", 0) != 0) continue;
        const std::string name = key.substr(7);
        const auto v = a.arrays.find("adam_v/" + name);
        if (!params.contains(name) || v == a.arrays.end()) {
          throw Error(ErrorCode::kCheckpointFormat, "stray optimizer state for " + name);
        }
        optimizer_.moments()[name] = {m, v->second};
      }
      optimizer_.set_step_count(a.meta.at("optimizer_step").get<long>());
      next_step_ = a.meta.at("next_step").get<long>();
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::kCheckpointFormat, std::string("bad checkpoint meta: ") + e.what());
    }
  }

  // ----- run loop -----

  RunSummary run(const RunOptions& opt) {
    namespace fs = std::filesystem;
    fs::create_directories(opt.out_dir);
    RunSummary s;
    s.checkpoint = opt.out_dir / kCheckpointFile;
    s.metrics = opt.out_dir / kMetricsFile;
    s.total_steps = total_steps();
    if (opt.resume && fs::exists(s.checkpoint)) restore(load_archive(s.checkpoint));
    s.first_step = next_step_;
    MetricsWriter writer(s.metrics, config_, next_step_);

    const long spe = steps_per_epoch();
    bool saved = false;
    while (next_step_ < s.total_steps) {
      if (opt.stop_at_step >= 0 && next_step_ >= opt.stop_at_step) break;
      const long step = next_step_;
      const auto t0 = std::chrono::steady_clock::now();
      StepResult r;
      try {
        r = train_step(batch_indices(step), step);
      } catch (const Error& e) {
        if (e.code() != ErrorCode::kNonFinite) throw;
        const std::string last = fs::exists(s.checkpoint) ? s.checkpoint.string() : "none";
        throw Error(ErrorCode::kNonFinite,
                    std::string(e.what()) + " at step " + std::to_string(step) + "; last good checkpoint: " + last);
      }
      ++next_step_;
      MetricsRow row;
      row.step = step;
      row.epoch = step / spe;
      row.losses = r.losses;
      row.masked_count = r.masked_count;
      row.strategy_counts = r.strategy_counts;
      row.unresolved_pairs = r.unresolved_pairs;
      row.prompt_pairs = r.prompt_pairs;
      row.lr = r.lr;
      row.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
      writer.append(row);
      s.rows.push_back(row);
      if (opt.log) {
        *opt.log << "step " << step << " epoch " << row.epoch << " total " << row.losses.total << " l_r "
                 << row.losses.components.reconstruction << '\n';
      }
      saved = false;
      if (next_step_ % spe == 0 || next_step_ == s.total_steps || next_step_ == opt.stop_at_step) {
        save_archive(checkpoint(), s.checkpoint);
        saved = true;
      }
    }
    if (!saved) save_archive(checkpoint(), s.checkpoint);
    s.end_step = next_step_;
    return s;
  }

 private:
  void cache_teacher_outputs() {
    teacher_image_.reserve(data_.samples.size());
    prompt_embed_.reserve(data_.samples.size());
    for (const auto& s : data_.samples) {
      teacher_image_.push_back(teacher_->image_embed(s.image));
      if (s.prompt) {
        prompt_embed_.emplace_back(teacher_->text_embed({*s.prompt}));
      } else {
        prompt_embed_.emplace_back(std::nullopt);
      }
    }
    corpus_unit_ = teacher_->text_embed(data_.corpus.texts);
    for (Eigen::Index i = 0; i < corpus_unit_.rows(); ++i) {
      const double n = corpus_unit_.row(i).norm();
      if (!(n >= 1e-12)) throw Error(ErrorCode::kZeroVector, "corpus text embeds to a zero vector");
      corpus_unit_.row(i) /= n;
    }
  }

  // One sample's contribution. Each loss is computed in closed form on tape
  // values; a single custom node feeds the weighted gradients back.
  void sample_pass(std::size_t idx, const MaskPlan& plan, const Mat<double>& texts, double inv_b, double inv_p,
                   LossComponents& sum) {
    const Sample& s = data_.samples[idx];
    const LossWeights& w = config_.weights;
    const auto masked = plan.masked_indices();

    Tape<double> tape;
    const auto encoded = net_.encode(tape, net_.add_encoder_positions(tape, net_.patch_embed(tape, s.image, plan)));
    const auto decoded =
        net_.decode(tape, net_.assemble_decoder_input(tape, net_.project_to_decoder(tape, encoded), plan));

    std::vector<Var> inputs;
    std::vector<Mat<double>> grads;
    double value = 0;
    auto attach = [&](Var v, const Mat<double>& g, double weight, double loss) {
      inputs.push_back(v);
      grads.push_back(g * weight);
      value += weight * loss;
    };

    Var dec_cls = tape.gather_rows(decoded.features, {0});
    if (!masked.empty()) {
      std::vector<Eigen::Index> pixel_rows(masked.begin(), masked.end());
      std::vector<Eigen::Index> token_rows;
      for (auto i : masked) token_rows.push_back(static_cast<Eigen::Index>(i) + 1);

      Var pred = tape.gather_rows(net_.reconstruct_pixels(tape, decoded), pixel_rows);
      const auto lr = reconstruction_loss_with_grad<double>(patch_pixels<double>(s.image, net_.grid(), masked),
                                                            tape.value(pred));
      attach(pred, lr.grads[1], w.reconstruction * inv_b, lr.value);
      sum.reconstruction += lr.value * inv_b;

      // Contour branch: shared encoder, frozen heads, no gradient.
      Tape<double> frozen(false);
      const auto skeleton = encode_contour(net_, frozen, s.contour);
      const Mat<double> t_patch = frozen.value(net_.project_patch_distribution(
          frozen, frozen.gather_rows(skeleton.features, token_rows), DistributionHead::kTeacher));
      const Mat<double> t_cls = frozen.value(net_.project_cls_distribution(
          frozen, frozen.gather_rows(skeleton.features, {0}), DistributionHead::kTeacher));

      Var s_patch = net_.project_patch_distribution(tape, tape.gather_rows(decoded.features, token_rows),
                                                    DistributionHead::kStudent);
      const auto lmim = mim_loss_with_grad<double>(t_patch, tape.value(s_patch));
      attach(s_patch, lmim.grads[1], w.mim * inv_b, lmim.value);
      sum.mim += lmim.value * inv_b;

      Var s_cls = net_.project_cls_distribution(tape, dec_cls, DistributionHead::kStudent);
      const auto lcls = cls_distill_loss_with_grad<double>(t_cls, tape.value(s_cls));
      attach(s_cls, lcls.grads[1], w.cls * inv_b, lcls.value);
      sum.cls += lcls.value * inv_b;
    }

    // Image-level semantics against the frozen vision-language teacher.
    Var u = net_.clip_feature(tape, dec_cls);
    const Mat<double>& vc = teacher_image_[idx];
    const Mat<double> uval = tape.value(u);
    const auto lcf = clip_feature_loss_with_grad<double>(uval, vc);
    attach(u, lcf.grads[0], w.clip_feature * inv_b, lcf.value);
    sum.clip_feature += lcf.value * inv_b;

    if (texts.rows() > 0) {
      const double un = detail::checked_norm(uval);
      const Mat<double> uu = uval / un;
      const Mat<double> vu = vc / detail::checked_norm(vc);
      const Mat<double> p = similarity_distribution<double>(vu, texts, config_.tau);
      const Mat<double> q = similarity_distribution<double>(uu, texts, config_.tau);
      const auto lcs = similarity_consistency_loss_with_grad<double>(p, q);
      const auto pulled = similarity_distribution_vjp<double>(uu, texts, config_.tau, lcs.grads[1]);
      attach(u, detail::normalize_vjp<double>(uu, un, pulled[0]), w.consistency * inv_b, lcs.value);
      sum.consistency += lcs.value * inv_b;
    }

    if (prompt_embed_[idx]) {
      Var f = net_.vision_text_feature(tape, tape.gather_rows(encoded.features, {0}));
      const auto lvt = vision_text_contrastive_loss_with_grad<double>(tape.value(f), *prompt_embed_[idx]);
      attach(f, lvt.grads[0], w.vision_text * inv_p, lvt.value);
      sum.vision_text += lvt.value * inv_p;
    }

    Var root = tape.custom(inputs, Mat<double>::Constant(1, 1, value), [grads](const Mat<double>& g) {
      std::vector<Mat<double>> out;
      out.reserve(grads.size());
      for (const auto& d : grads) out.push_back(d * g(0, 0));
      return out;
    });
    tape.backward(root);
  }

  TrainConfig config_;
  TrainingData data_;
  std::unique_ptr<VisionLanguageTeacher> teacher_;
  Backbone<double> net_;
  AdamW<double> optimizer_;
  std::vector<Mat<double>> teacher_image_;
  std::vector<std::optional<Mat<double>>> prompt_embed_;
  Mat<double> corpus_unit_;
  long next_step_ = 0;
};

/// Builds the teacher named by the config and a trainer over the manifest.
inline Trainer make_trainer(const TrainConfig& config, const std::filesystem::path& manifest_path) {
  config.validate();
  auto data = load_training_data(config, manifest_path);
  auto teacher = make_teacher(config.teacher, derive_seed(config.seed, {seed_tag::kTeacher}), config.backbone.teacher_dim);
  return Trainer(config, std::move(data), std::move(teacher));
}

}  // namespace vmae
