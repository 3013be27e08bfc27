// vmae: pre-training, mask-plan rendering, gradient checks, prompt
// generation, synthetic data and loss plots.
//
// Exit status: 0 ok, 1 invalid input or configuration, 2 runtime failure.

#include <cstdlib>
#include <filesystem>
#include <iomanip>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "vmae/gradcheck.hpp"
#include "vmae/plot.hpp"
#include "vmae/synth.hpp"
#include "vmae/trainer.hpp"

namespace fs = std::filesystem;
using namespace vmae;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitInvalid = 1;
constexpr int kExitRuntime = 2;

int exit_code_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidConfig:
    case ErrorCode::kInvalidAnnotation:
    case ErrorCode::kNonDivisibleDimensions:
    case ErrorCode::kParseError:
    case ErrorCode::kFileUnreadable:
    case ErrorCode::kMissingImage:
    case ErrorCode::kEmptyCorpus:
    case ErrorCode::kShapeMismatch:
    case ErrorCode::kCheckpointFormat:
    case ErrorCode::kTeacherUnavailable:
      return kExitInvalid;
    default:
      return kExitRuntime;
  }
}

struct Common {
  std::string config;
  std::string preset = "tiny";
  std::string manifest;
  std::string out;
  std::optional<std::uint64_t> seed;
};

void add_common(CLI::App* cmd, Common& c, bool needs_manifest) {
  cmd->add_option("--config", c.config, "JSON config laid over the preset")->check(CLI::ExistingFile);
  cmd->add_option("--preset", c.preset, "tiny or paper")->check(CLI::IsMember({"tiny", "paper"}));
  auto* m = cmd->add_option("--manifest", c.manifest, "newline-delimited JSON manifest");
  if (needs_manifest) m->required();
  cmd->add_option("--out", c.out, "output directory (env VMAE_OUT_DIR)");
  cmd->add_option("--seed", c.seed, "run seed (env VMAE_SEED)");
}

std::optional<std::uint64_t> env_seed() {
  const char* s = std::getenv("VMAE_SEED");
  if (!s || !*s) return std::nullopt;
  try {
    std::size_t used = 0;
    const auto v = std::stoull(s, &used);
    if (used != std::string(s).size()) throw std::invalid_argument("trailing characters");
    return v;
  } catch (const std::exception&) {
    throw Error(ErrorCode::kInvalidConfig, std::string("VMAE_SEED is not an unsigned integer: ") + s);
  }
}

// Flags beat the environment, which beats the config file.
TrainConfig resolve_config(const Common& c) {
  TrainConfig cfg = c.config.empty() ? TrainConfig::preset(c.preset) : load_train_config(c.config, c.preset);
  if (c.seed) {
    cfg.seed = *c.seed;
  } else if (const auto s = env_seed()) {
    cfg.seed = *s;
  }
  cfg.validate();
  return cfg;
}

fs::path resolve_out(const Common& c, const std::string& fallback) {
  if (!c.out.empty()) return c.out;
  if (const char* e = std::getenv("VMAE_OUT_DIR"); e && *e) return e;
  return fallback;
}

int cmd_pretrain(const Common& c, bool resume, long max_steps, long stop_at) {
  TrainConfig cfg = resolve_config(c);
  if (max_steps > 0) cfg.max_steps = max_steps;
  const fs::path out = resolve_out(c, "runs/pretrain");
  Trainer trainer = make_trainer(cfg, c.manifest);
  for (const auto& w : trainer.data().warnings) std::cerr << "warning: " << w << '\n';
  std::cerr << "samples " << trainer.data().samples.size() << ", steps/epoch " << trainer.steps_per_epoch()
            << ", total steps " << trainer.total_steps() << ", params " << trainer.model().params().scalar_count()
            << '\n';
  RunOptions opt;
  opt.out_dir = out;
  opt.resume = resume;
  opt.stop_at_step = stop_at;
  opt.log = &std::cerr;
  const auto s = trainer.run(opt);
  std::cout << "checkpoint " << s.checkpoint.string() << "\nmetrics " << s.metrics.string() << "\nsteps "
            << s.first_step << ".." << s.end_step << " of " << s.total_steps << '\n';
  return kExitOk;
}

int cmd_mask_plan(const Common& c, long record) {
  const TrainConfig cfg = resolve_config(c);
  const auto manifest = load_manifest(c.manifest);
  if (manifest.records.empty()) throw Error(ErrorCode::kInvalidConfig, "manifest has no usable records");
  std::size_t pick = 0;
  if (record >= 0) {
    if (static_cast<std::size_t>(record) >= manifest.records.size()) {
      throw Error(ErrorCode::kInvalidConfig, "--record " + std::to_string(record) + " is out of range");
    }
    pick = static_cast<std::size_t>(record);
  } else {
    while (pick < manifest.records.size() && manifest.records[pick].annotation().kind() != AnnotationKind::kBoxAndAngle)
      ++pick;
    if (pick == manifest.records.size()) pick = 0;
  }
  ManifestLoad one;
  one.records = {manifest.records[pick]};
  const Sample s = load_samples(one, c.manifest, cfg.backbone).front();
  const PatchGrid grid = cfg.backbone.grid();
  MaskConfig mc = cfg.mask;
  mc.rng_seed = cfg.seed;
  const fs::path out = resolve_out(c, "mask_plans");
  fs::create_directories(out);

  struct Entry {
    const char* name;
    std::optional<MaskPlan> plan;
  };
  const auto& a = s.annotation;
  Entry entries[] = {
      {"random", random_mask(grid, mc)},
      {"box_guided", a.box() ? std::optional(box_guided_mask(grid, *a.box(), mc)) : std::nullopt},
      {"symmetry_guided", a.angle() ? std::optional(symmetry_guided_mask(grid, a, mc)) : std::nullopt},
  };
  std::cout << "record " << pick << " (" << s.id << "), kind " << to_string(a.kind()) << '\n';
  for (const auto& e : entries) {
    if (!e.plan) {
      std::cout << e.name << ": skipped, annotation lacks the needed fields\n";
      continue;
    }
    const auto path = out / (std::string("mask_") + e.name + ".ppm");
    write_netpbm(mask_overlay(s.image, grid, *e.plan, a), path);
    std::cout << e.name << ": " << e.plan->masked_count() << " masked, " << e.plan->unresolved_pairs.size()
              << " unresolved pairs -> " << path.string() << '\n';
  }
  return kExitOk;
}

int cmd_check_grads(std::uint64_t seed, int instances) {
  const auto results = run_gradient_suite(seed, instances);
  bool ok = true;
  std::cout << std::left << std::setw(10) << "loss" << std::setw(11) << "instances" << "max_rel_err\n";
  for (const auto& r : results) {
    const bool pass = r.max_relative_error <= 1e-4;
    ok = ok && pass;
    std::cout << std::left << std::setw(10) << r.name << std::setw(11) << r.instances << std::scientific
              << std::setprecision(3) << r.max_relative_error << (pass ? "" : "  FAIL") << '\n'
              << std::defaultfloat;
  }
  return ok ? kExitOk : kExitRuntime;
}

int cmd_gen_prompts(const Common& c, const std::string& target) {
  const auto manifest = load_manifest(c.manifest);
  for (const auto& w : manifest.warnings) std::cerr << "warning: " << w << '\n';
  const auto base = fs::path(c.manifest).parent_path();
  auto records = manifest.records;
  std::size_t made = 0;
  for (auto& r : records) {
    const Image img = read_netpbm(resolve_path(base, r.image_path));
    const auto p = generate_prompt(r.annotation(), img.height, img.width);
    r.prompt = p ? std::optional(p->text) : std::nullopt;
    r.has_pair = p.has_value();
    made += p ? 1 : 0;
  }
  // Image paths stay relative to the original manifest's directory.
  fs::path out = target.empty() ? fs::path(c.manifest) : fs::path(target);
  if (fs::weakly_canonical(out.parent_path()) != fs::weakly_canonical(base)) {
    for (auto& r : records) {
      auto rebase = [&](const std::string& p) {
        return fs::path(p).is_absolute() ? p : fs::absolute(resolve_path(base, p)).lexically_normal().string();
      };
      r.image_path = rebase(r.image_path);
      if (r.contour_path) r.contour_path = rebase(*r.contour_path);
    }
  }
  write_manifest(records, out);
  std::cout << made << " of " << records.size() << " records have prompts -> " << out.string() << '\n';
  return kExitOk;
}

int cmd_synth(const Common& c, std::size_t count, int size, std::size_t corpus_size) {
  std::uint64_t seed = c.seed ? *c.seed : env_seed().value_or(0);
  SynthOptions opt;
  opt.height = opt.width = size;
  const fs::path out = resolve_out(c, "synthetic");
  const auto r = write_synthetic_dataset(out, count, seed, opt, corpus_size);
  std::array<std::size_t, 3> kinds{};
  for (const auto& rec : r.records) ++kinds[static_cast<std::size_t>(rec.annotation().kind())];
  std::cout << "wrote " << r.records.size() << " samples (none " << kinds[0] << ", box " << kinds[1]
            << ", box+angle " << kinds[2] << ")\nmanifest " << r.manifest.string() << "\ncorpus "
            << r.corpus.string() << '\n';
  return kExitOk;
}

int cmd_plot(const std::string& metrics, const Common& c) {
  const fs::path out = resolve_out(c, "plots");
  const auto paths = plot_metrics(read_metrics(metrics), out);
  for (const auto& p : paths) std::cout << p.string() << '\n';
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"vehicle masked-autoencoder pre-training"};
  app.require_subcommand(1);

  Common pre;
  bool resume = false;
  long max_steps = 0, stop_at = -1;
  auto* pretrain = app.add_subcommand("pretrain", "train from a manifest");
  add_common(pretrain, pre, true);
  pretrain->add_flag("--resume", resume, "continue from <out>/checkpoint.bin when present");
  pretrain->add_option("--max-steps", max_steps, "cap on optimizer steps")->check(CLI::NonNegativeNumber);
  pretrain->add_option("--stop-at", stop_at, "stop after this many steps without changing the schedule");

  Common mp;
  long record = -1;
  auto* mask_plan = app.add_subcommand("mask-plan", "render the three mask strategies for one record");
  add_common(mask_plan, mp, true);
  mask_plan->add_option("--record", record, "record index (default: first box+angle record)");

  std::uint64_t grad_seed = 0;
  int instances = 20;
  auto* check = app.add_subcommand("check-grads", "finite-difference check of every loss");
  check->add_option("--seed", grad_seed, "instance seed");
  check->add_option("--instances", instances, "instances per loss")->check(CLI::PositiveNumber);

  Common gp;
  std::string gp_target;
  auto* gen = app.add_subcommand("gen-prompts", "fill manifest prompts from box/angle annotations");
  add_common(gen, gp, true);
  gen->add_option("--write", gp_target, "output manifest (default: rewrite in place)");

  Common sy;
  std::size_t count = 64, corpus_size = 512;
  int size = 64;
  auto* synth = app.add_subcommand("synth", "write a synthetic manifest with images and contours");
  add_common(synth, sy, false);
  synth->add_option("--count", count, "number of samples")->check(CLI::PositiveNumber);
  synth->add_option("--size", size, "image side in pixels")->check(CLI::Range(16, 4096));
  synth->add_option("--corpus-size", corpus_size, "attribute corpus lines")->check(CLI::PositiveNumber);

  Common pl;
  std::string metrics;
  auto* plot = app.add_subcommand("plot", "loss-curve images from a metrics file");
  plot->add_option("--metrics", metrics, "metrics.jsonl")->required()->check(CLI::ExistingFile);
  plot->add_option("--out", pl.out, "output directory (env VMAE_OUT_DIR)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitInvalid;
  }

  try {
    if (*pretrain) return cmd_pretrain(pre, resume, max_steps, stop_at);
    if (*mask_plan) return cmd_mask_plan(mp, record);
    if (*check) return cmd_check_grads(grad_seed, instances);
    if (*gen) return cmd_gen_prompts(gp, gp_target);
    if (*synth) return cmd_synth(sy, count, size, corpus_size);
    if (*plot) return cmd_plot(metrics, pl);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return exit_code_for(e.code());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitInvalid;
}
