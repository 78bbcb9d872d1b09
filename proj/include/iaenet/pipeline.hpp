// On-disk stages shared by the command-line tool and the tests: cohort ->
// patient split -> normalization stats -> per-lead window shards.
//
// Prepared directory layout:
//   split.json, norm_stats.json
//   lead_<m>/index.json, lead_<m>/{train,val,test}.bin
#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "iaenet/cohort_io.hpp"
#include "iaenet/dataset.hpp"
#include "iaenet/json_io.hpp"
#include "iaenet/labels.hpp"
#include "iaenet/preprocess.hpp"
#include "iaenet/schema.hpp"
#include "iaenet/trainer.hpp"

namespace iaenet {

inline constexpr std::array<const char*, 3> kSplitNames = {"train", "val", "test"};

struct PrepareConfig {
  std::string cohort;  // directory written by synth (or an ingested cohort in the same format)
  std::vector<int> lead_minutes = {5, 10, 15};
  double stride_s = kPeriodSeconds;
  std::size_t horizon_samples = kEventSegment;
  std::array<double, 3> split = {0.70, 0.10, 0.20};
  std::uint64_t seed = 1;

  std::size_t stride_steps() const { return static_cast<std::size_t>(std::llround(stride_s / kPeriodSeconds)); }

  void validate() const {
    require_config(!lead_minutes.empty(), "prepare.lead_minutes must not be empty");
    for (int m : lead_minutes) lead_steps_for_minutes(m);
    const double steps = stride_s / kPeriodSeconds;
    require_config(steps >= 1 && std::abs(steps - std::round(steps)) < 1e-9,
                   "prepare.stride_s must be a positive multiple of 2 s");
    require_config(horizon_samples >= kEventSegment, "prepare.horizon_samples must be >= 30");
    TrainConfig probe;
    probe.split = split;
    probe.validate();
  }

  nlohmann::json to_json() const {
    return {{"cohort", cohort},   {"lead_minutes", lead_minutes}, {"stride_s", stride_s},
            {"horizon_samples", horizon_samples}, {"split", split}, {"seed", seed}};
  }

  static PrepareConfig from_json(const nlohmann::json& j) {
    check_keys(j, {"cohort", "lead_minutes", "stride_s", "horizon_samples", "split", "seed"}, "prepare");
    PrepareConfig c;
    read_opt(j, "cohort", c.cohort, "prepare");
    if (j.contains("lead_minutes") && j.at("lead_minutes").is_number()) c.lead_minutes = {j.at("lead_minutes").get<int>()};
    else read_opt(j, "lead_minutes", c.lead_minutes, "prepare");
    read_opt(j, "stride_s", c.stride_s, "prepare");
    read_opt(j, "horizon_samples", c.horizon_samples, "prepare");
    read_opt(j, "split", c.split, "prepare");
    read_opt(j, "seed", c.seed, "prepare");
    c.validate();
    return c;
  }
};

/// Splits cases by patient, fits normalization on the training split only
/// and writes one shard per split and lead time. Returns written paths
/// relative to `out`.
inline std::vector<std::string> prepare_cohort(const std::vector<CaseRecord>& raw, const PrepareConfig& cfg,
                                               const std::filesystem::path& out) {
  cfg.validate();
  std::vector<CaseRecord> cases(raw.size());
  parallel_for(raw.size(), [&](std::size_t i) { cases[i] = process_case(raw[i]); });
  const SplitIndices split = split_patients(cases.size(), cfg.split, cfg.seed);
  const std::array<const std::vector<std::size_t>*, 3> parts = {&split.train, &split.val, &split.test};
  std::array<std::vector<CaseRecord>, 3> by_split;
  nlohmann::json split_json = {{"seed", cfg.seed}, {"fractions", cfg.split}};
  for (std::size_t s = 0; s < 3; ++s) {
    split_json[kSplitNames[s]] = nlohmann::json::array();
    for (std::size_t i : *parts[s]) {
      by_split[s].push_back(cases[i]);
      split_json[kSplitNames[s]].push_back(cases[i].case_id);
    }
  }
  std::vector<std::string> written;
  write_json(out / "split.json", split_json);
  written.push_back("split.json");
  const NormStats stats = fit_norm_stats(by_split[0]);
  write_json(out / "norm_stats.json", stats.to_json());
  written.push_back("norm_stats.json");

  for (int minutes : cfg.lead_minutes) {
    const std::size_t lead = lead_steps_for_minutes(minutes);
    const std::string dir = "lead_" + std::to_string(minutes);
    nlohmann::json index = {{"lead_minutes", minutes},
                            {"lead_steps", lead},
                            {"stride_steps", cfg.stride_steps()},
                            {"horizon_samples", cfg.horizon_samples},
                            {"shape", {{"w", kWindow}, {"d", kDynamic}, {"s", kStatic}, {"c", kEvents}}},
                            {"splits", nlohmann::json::object()}};
    for (std::size_t s = 0; s < 3; ++s) {
      const Dataset ds = build_dataset(by_split[s], stats, lead, cfg.stride_steps(), LabelMode{cfg.horizon_samples});
      const std::string file = std::string(kSplitNames[s]) + ".bin";
      std::filesystem::create_directories(out / dir);
      write_shard((out / dir / file).string(), ds);
      written.push_back(dir + "/" + file);
      index["splits"][kSplitNames[s]] = {{"file", file}, {"count", ds.size()}, {"runs", case_runs(ds)}};
    }
    write_json(out / dir / "index.json", index);
    written.push_back(dir + "/index.json");
  }
  return written;
}

/// Loads one split of a prepared directory.
inline Dataset load_split(const std::filesystem::path& prepared, int lead_minutes, const std::string& split) {
  lead_steps_for_minutes(lead_minutes);
  const auto dir = prepared / ("lead_" + std::to_string(lead_minutes));
  require(std::filesystem::exists(dir / "index.json"),
          "no prepared shards for lead " + std::to_string(lead_minutes) + " min in " + prepared.string());
  const auto index = read_json(dir / "index.json");
  require(index.at("splits").contains(split), "unknown split '" + split + "'");
  const auto& s = index.at("splits").at(split);
  return read_shard((dir / s.at("file").get<std::string>()).string(), s.at("count").get<std::size_t>(), s.at("runs"));
}

}  // namespace iaenet
