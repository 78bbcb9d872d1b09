// Cohort exchange format: one CSV per case (header `t_s,<15 channels>`,
// missing cells empty) plus cohort.json listing {case_id, statics, n_samples}.
// Real exported recordings use the same contract.
#pragma once

#include <charconv>
#include <filesystem>
#include <fstream>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "iaenet/case_record.hpp"
#include "iaenet/common.hpp"
#include "iaenet/json_io.hpp"
#include "iaenet/preprocess.hpp"
#include "iaenet/schema.hpp"

namespace iaenet {

inline nlohmann::json statics_to_json(const StaticCovariates& s) {
  return {{"age", s.age()}, {"sex", s.sex()}, {"weight", s.weight()}, {"height", s.height()}, {"asa", s.asa()}};
}

inline StaticCovariates statics_from_json(const nlohmann::json& j) {
  check_keys(j, {"age", "sex", "weight", "height", "asa"}, "statics");
  return StaticCovariates(j.at("age").get<int>(), j.at("sex").get<int>(), j.at("weight").get<double>(),
                          j.at("height").get<double>(), j.at("asa").get<int>());
}

inline std::string case_to_csv(const CaseRecord& rec) {
  std::string out = "t_s";
  for (auto name : kChannelNames) {
    out += ',';
    out += name;
  }
  out += '\n';
  for (std::size_t t = 0; t < rec.n_samples(); ++t) {
    out += format_double(static_cast<double>(t) * kPeriodSeconds);
    for (const auto& ch : rec.channels) {
      out += ',';
      if (!ch.missing[t]) out += format_double(ch.values[t]);
    }
    out += '\n';
  }
  return out;
}

namespace detail {
inline double parse_cell(std::string_view cell) {
  if (cell.empty()) return kMissingSentinel;
  double v = 0.0;
  auto [p, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), v);
  require(ec == std::errc() && p == cell.data() + cell.size(), "csv: bad number '" + std::string(cell) + "'");
  return v;
}
}  // namespace detail

/// Parses a case CSV onto the 2 s grid. Columns may appear in any order but
/// all 15 channels must be present. Negative and blank cells become missing.
inline CaseRecord case_from_csv(std::string_view text, std::string case_id, StaticCovariates statics,
                                std::size_t n_samples) {
  std::vector<std::string_view> lines;
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t nl = text.find('\n', pos);
    if (nl == std::string_view::npos) nl = text.size();
    std::string_view line = text.substr(pos, nl - pos);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (!line.empty()) lines.push_back(line);
    pos = nl + 1;
  }
  require(!lines.empty(), case_id + ": empty csv");
  auto split = [](std::string_view line) {
    std::vector<std::string_view> cells;
    std::size_t p = 0;
    while (true) {
      std::size_t c = line.find(',', p);
      cells.push_back(line.substr(p, c == std::string_view::npos ? line.size() - p : c - p));
      if (c == std::string_view::npos) break;
      p = c + 1;
    }
    return cells;
  };
  const auto header = split(lines[0]);
  require(!header.empty() && header[0] == "t_s", case_id + ": csv must start with a t_s column");
  std::vector<int> column_of(kDynamic, -1);
  for (std::size_t i = 1; i < header.size(); ++i) {
    auto ch = channel_from_name(header[i]);
    require(ch.has_value(), case_id + ": unknown channel column '" + std::string(header[i]) + "'");
    column_of[index_of(*ch)] = static_cast<int>(i);
  }
  for (std::size_t c = 0; c < kDynamic; ++c)
    require(column_of[c] >= 0, case_id + ": missing column " + std::string(kChannelNames[c]));

  std::vector<std::vector<RawSample>> raw(kDynamic);
  for (std::size_t r = 1; r < lines.size(); ++r) {
    const auto cells = split(lines[r]);
    require(cells.size() == header.size(), case_id + ": ragged csv row " + std::to_string(r));
    const double t = detail::parse_cell(cells[0]);
    require(std::isfinite(t), case_id + ": missing timestamp");
    for (std::size_t c = 0; c < kDynamic; ++c)
      raw[c].push_back({t, detail::parse_cell(cells[static_cast<std::size_t>(column_of[c])])});
  }
  require(!raw[0].empty(), "empty channel");
  const double t0 = std::ceil(raw[0].front().t_s / kPeriodSeconds - 1e-9) * kPeriodSeconds;

  CaseRecord rec;
  rec.case_id = std::move(case_id);
  rec.statics = statics;
  rec.channels.reserve(kDynamic);
  for (std::size_t c = 0; c < kDynamic; ++c)
    rec.channels.push_back(resample_channel(static_cast<Channel>(c), raw[c], t0, n_samples));
  return rec;
}

inline nlohmann::json cohort_manifest(std::span<const CaseRecord> cases) {
  nlohmann::json j;
  j["cases"] = nlohmann::json::array();
  for (const auto& c : cases)
    j["cases"].push_back({{"case_id", c.case_id}, {"statics", statics_to_json(c.statics)},
                          {"n_samples", c.n_samples()}});
  return j;
}

/// Writes <dir>/cases/<case_id>.csv and <dir>/cohort.json.
inline void write_cohort(const std::filesystem::path& dir, std::span<const CaseRecord> cases) {
  std::filesystem::create_directories(dir / "cases");
  for (const auto& c : cases) write_text(dir / "cases" / (c.case_id + ".csv"), case_to_csv(c));
  write_json(dir / "cohort.json", cohort_manifest(cases));
}

inline std::vector<CaseRecord> read_cohort(const std::filesystem::path& dir) {
  const auto manifest = read_json(dir / "cohort.json");
  std::vector<CaseRecord> out;
  for (const auto& entry : manifest.at("cases")) {
    check_keys(entry, {"case_id", "statics", "n_samples"}, "cohort.json case");
    const auto id = entry.at("case_id").get<std::string>();
    const auto text = read_text(dir / "cases" / (id + ".csv"));
    out.push_back(case_from_csv(text, id, statics_from_json(entry.at("statics")),
                                entry.at("n_samples").get<std::size_t>()));
  }
  return out;
}

}  // namespace iaenet
