#pragma once

// Per-step metrics as newline-delimited JSON. The first line is a comment
// ("# config: {...}") holding the resolved training config.

#include <array>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "vmae/error.hpp"
#include "vmae/losses.hpp"
#include "vmae/masking.hpp"

namespace vmae {

struct MetricsRow {
  long step = 0;
  long epoch = 0;
  LossBundle losses;
  std::size_t masked_count = 0;                 // summed over the batch
  std::array<std::size_t, 3> strategy_counts{};  // random, box_guided, symmetry_guided
  std::size_t unresolved_pairs = 0;
  std::size_t prompt_pairs = 0;
  double lr = 0;
  double wall_ms = 0;  // not part of the deterministic record
};

inline nlohmann::json to_json(const MetricsRow& r, bool with_wall_clock = true) {
  nlohmann::json j;
  j["step"] = r.step;
  j["epoch"] = r.epoch;
  const auto values = r.losses.components.as_array();
  for (std::size_t k = 0; k < values.size(); ++k) j[kLossNames[k]] = values[k];
  j["total"] = r.losses.total;
  j["masked_count"] = r.masked_count;
  j["strategy"] = {{"random", r.strategy_counts[0]},
                   {"box_guided", r.strategy_counts[1]},
                   {"symmetry_guided", r.strategy_counts[2]}};
  j["unresolved_pairs"] = r.unresolved_pairs;
  j["prompt_pairs"] = r.prompt_pairs;
  j["lr"] = r.lr;
  if (with_wall_clock) j["wall_ms"] = r.wall_ms;
  return j;
}

inline std::size_t strategy_slot(MaskStrategy s) {
  switch (s) {
    case MaskStrategy::kRandom: return 0;
    case MaskStrategy::kBoxGuided: return 1;
    case MaskStrategy::kSymmetryGuided: return 2;
  }
  return 0;
}

struct MetricsFile {
  nlohmann::json config;
  std::vector<nlohmann::json> rows;
};

inline constexpr const char* kMetricsHeaderPrefix = "# config: ";

inline MetricsFile read_metrics(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kFileUnreadable, "cannot read metrics " + path.string());
  MetricsFile f;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.empty()) continue;
    try {
      if (line.rfind(kMetricsHeaderPrefix, 0) == 0) {
        f.config = nlohmann::json::parse(line.substr(std::string(kMetricsHeaderPrefix).size()));
      } else if (line[0] != '#') {
        f.rows.push_back(nlohmann::json::parse(line));
      }
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::kParseError, path.string() + ":" + std::to_string(n) + ": " + e.what());
    }
  }
  return f;
}

/// Append-only writer. Opening for a resumed run keeps the rows with
/// step < first_step and drops the rest, so steps stay monotone.
class MetricsWriter {
 public:
  MetricsWriter(const std::filesystem::path& path, const nlohmann::json& config, long first_step = 0) : path_(path) {
    std::vector<nlohmann::json> keep;
    if (first_step > 0 && std::filesystem::exists(path)) {
      for (auto& r : read_metrics(path).rows) {
        if (r.at("step").get<long>() < first_step) keep.push_back(std::move(r));
      }
    }
    out_.open(path, std::ios::binary | std::ios::trunc);
    if (!out_) throw Error(ErrorCode::kFileUnreadable, "cannot write metrics " + path.string());
    out_ << kMetricsHeaderPrefix << config.dump() << '\n';
    for (const auto& r : keep) out_ << r.dump() << '\n';
    out_.flush();
  }

  void append(const MetricsRow& row) {
    out_ << to_json(row).dump() << '\n';
    out_.flush();
  }

  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
  std::ofstream out_;
};

/// Rows with the wall-clock field removed, for run-to-run comparison.
inline std::vector<nlohmann::json> deterministic_rows(const MetricsFile& f) {
  std::vector<nlohmann::json> out;
  for (auto r : f.rows) {
    r.erase("wall_ms");
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace vmae
