// Resampling, imputation, infusion-rate conversion, normalization and
// windowing of case records.
#pragma once

#include <array>
#include <cmath>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "iaenet/case_record.hpp"
#include "iaenet/common.hpp"
#include "iaenet/labels.hpp"
#include "iaenet/schema.hpp"

namespace iaenet {

struct RawSample {
  double t_s;
  double value;  // NaN for a blank cell
};

/// Places irregular observations on a uniform grid t0 + k*period, k < n.
/// Grid point t takes the last valid observation in (t - period, t].
/// Negative and blank observations are dropped before binning, so a bin
/// without a valid observation is missing.
inline ChannelSeries resample_channel(Channel channel, std::span<const RawSample> raw,
                                      double t0, std::size_t n, double period_s = kPeriodSeconds) {
  ChannelSeries out{channel, std::vector<double>(n, kMissingSentinel), std::vector<bool>(n, true)};
  double prev_t = -std::numeric_limits<double>::infinity();
  for (const auto& s : raw) {
    require(s.t_s >= prev_t, "resample_channel: timestamps must be nondecreasing");
    prev_t = s.t_s;
    if (!std::isfinite(s.value) || s.value < 0.0) continue;
    // smallest k with t0 + k*period >= t
    const double k_real = std::ceil((s.t_s - t0) / period_s - 1e-9);
    if (k_real < 0.0 || k_real >= static_cast<double>(n)) continue;
    const auto k = static_cast<std::size_t>(k_real);
    out.values[k] = s.value;  // later observations in the bin overwrite
    out.missing[k] = false;
  }
  return out;
}

/// Grid spanning the observations: starts at the first timestamp rounded up
/// to a period multiple and ends at the last one rounded up.
inline ChannelSeries resample_channel(Channel channel, std::span<const RawSample> raw,
                                      double period_s = kPeriodSeconds) {
  require(!raw.empty(), "empty channel");
  const double t0 = std::ceil(raw.front().t_s / period_s - 1e-9) * period_s;
  const double t1 = std::ceil(raw.back().t_s / period_s - 1e-9) * period_s;
  const auto n = static_cast<std::size_t>(std::llround((t1 - t0) / period_s)) + 1;
  return resample_channel(channel, raw, t0, n, period_s);
}

/// Forward fill, then backward fill for a leading gap.
inline ChannelSeries impute_missing(const ChannelSeries& series) {
  ChannelSeries out = series;
  std::size_t first = 0;
  while (first < out.size() && out.missing[first]) ++first;
  if (first == out.size()) throw Error(std::string(channel_name(series.channel)) + ": unimputable channel");
  for (std::size_t i = 0; i < first; ++i) out.values[i] = out.values[first];
  for (std::size_t i = first + 1; i < out.size(); ++i) {
    if (out.missing[i]) out.values[i] = out.values[i - 1];
  }
  std::fill(out.missing.begin(), out.missing.end(), false);
  return out;
}

/// Cumulative infusion volume to a per-second rate. A drop in volume (pump
/// reset) yields rate 0 for that step.
inline ChannelSeries volume_to_rate(const ChannelSeries& series, double period_s = kPeriodSeconds) {
  require(is_volume_channel(series.channel),
          std::string("volume_to_rate: ") + std::string(channel_name(series.channel)) +
              " is not a volume channel");
  require(series.missing_count() == 0, "volume_to_rate: series must be imputed first");
  ChannelSeries out = series;
  if (out.size() == 0) return out;
  out.values[0] = 0.0;
  for (std::size_t i = 1; i < series.size(); ++i)
    out.values[i] = std::max(0.0, (series.values[i] - series.values[i - 1]) / period_s);
  return out;
}

/// Imputes every channel and converts infusion volumes to rates. Throws if
/// any channel has no observation at all.
inline CaseRecord process_case(const CaseRecord& rec) {
  CaseRecord out = rec;
  for (auto& ch : out.channels) {
    ch = impute_missing(ch);
    if (is_volume_channel(ch.channel)) ch = volume_to_rate(ch);
  }
  return out;
}

/// Fixed clinical min-max ranges for the scalar covariates.
struct StaticRange {
  double lo, hi;
};
inline constexpr StaticRange kAgeRange{18.0, 100.0};
inline constexpr StaticRange kWeightRange{35.0, 150.0};
inline constexpr StaticRange kHeightRange{120.0, 210.0};

/// Per-channel z-score statistics, fitted on the training split only.
struct NormStats {
  static constexpr double kStdFloor = 1e-6;

  std::array<double, kDynamic> mean{};
  std::array<double, kDynamic> stddev{};

  double normalize(std::size_t ch, double v) const { return (v - mean[ch]) / stddev[ch]; }
  double denormalize(std::size_t ch, double z) const { return z * stddev[ch] + mean[ch]; }

  static std::array<double, kStatic> normalize_statics(const StaticCovariates& s) {
    auto mm = [](double v, StaticRange r) { return (v - r.lo) / (r.hi - r.lo); };
    return {mm(s.age(), kAgeRange), static_cast<double>(s.sex()), mm(s.weight(), kWeightRange),
            mm(s.height(), kHeightRange), static_cast<double>(s.asa())};
  }

  static std::array<double, kStatic> denormalize_statics(const std::array<double, kStatic>& z) {
    auto inv = [](double v, StaticRange r) { return v * (r.hi - r.lo) + r.lo; };
    return {inv(z[0], kAgeRange), z[1], inv(z[2], kWeightRange), inv(z[3], kHeightRange), z[4]};
  }

  nlohmann::json to_json() const {
    nlohmann::json j;
    for (std::size_t i = 0; i < kDynamic; ++i) {
      j["channels"].push_back({{"name", kChannelNames[i]}, {"mean", mean[i]}, {"stddev", stddev[i]}});
    }
    return j;
  }

  static NormStats from_json(const nlohmann::json& j) {
    NormStats s;
    const auto& chans = j.at("channels");
    require_config(chans.size() == kDynamic, "norm stats: expected 15 channels");
    for (std::size_t i = 0; i < kDynamic; ++i) {
      s.mean[i] = chans[i].at("mean").get<double>();
      s.stddev[i] = chans[i].at("stddev").get<double>();
    }
    return s;
  }

  bool operator==(const NormStats&) const = default;
};

/// Population mean/stddev of every dynamic channel over all training samples.
/// Cases must be processed (no missing values).
inline NormStats fit_norm_stats(std::span<const CaseRecord> train_cases) {
  require(!train_cases.empty(), "fit_norm_stats: empty training split");
  NormStats st;
  for (std::size_t ch = 0; ch < kDynamic; ++ch) {
    double sum = 0.0;
    std::size_t n = 0;
    for (const auto& c : train_cases) {
      const auto& s = c.channels[ch];
      require(s.missing_count() == 0, c.case_id + ": fit_norm_stats needs imputed cases");
      for (double v : s.values) sum += v;
      n += s.size();
    }
    require(n > 0, "fit_norm_stats: no samples");
    const double mean = sum / static_cast<double>(n);
    double ss = 0.0;
    for (const auto& c : train_cases)
      for (double v : c.channels[ch].values) ss += (v - mean) * (v - mean);
    st.mean[ch] = mean;
    st.stddev[ch] = std::max(std::sqrt(ss / static_cast<double>(n)), NormStats::kStdFloor);
  }
  return st;
}

/// One model input: x_d is W x D row-major (time-major), x_s has S entries.
struct WindowSample {
  std::vector<float> x_d;
  std::array<float, kStatic> x_s{};
  std::uint64_t anchor_t = 0;
  std::string case_id;
};

/// Anchor t is admissible when t >= W and the event segment
/// [t+lead, t+lead+horizon) fits inside the case.
inline std::size_t first_anchor() { return kWindow; }

inline std::size_t window_count(std::size_t n_samples, std::size_t lead_steps,
                                std::size_t stride_steps = 1,
                                std::size_t horizon = kEventSegment) {
  require(stride_steps >= 1, "stride must be at least one step");
  if (n_samples < kWindow + lead_steps + horizon) return 0;
  const std::size_t last = n_samples - lead_steps - horizon;
  return (last - kWindow) / stride_steps + 1;
}

inline void fill_window(const CaseRecord& rec, const NormStats& stats, std::size_t anchor,
                        std::span<float> x_d) {
  for (std::size_t w = 0; w < kWindow; ++w) {
    const std::size_t t = anchor - kWindow + w;
    for (std::size_t ch = 0; ch < kDynamic; ++ch) {
      const auto& s = rec.channels[ch];
      require(!s.missing[t], rec.case_id + ": window reads a missing sample");
      x_d[w * kDynamic + ch] = static_cast<float>(stats.normalize(ch, s.values[t]));
    }
  }
}

/// Windows of a processed case at every admissible anchor, stepping by
/// `stride_steps` samples (1 step = 2 s).
inline std::vector<WindowSample> slice_windows(const CaseRecord& rec, const NormStats& stats,
                                               std::size_t lead_steps, std::size_t stride_steps = 1,
                                               std::size_t horizon = kEventSegment) {
  std::vector<WindowSample> out;
  const std::size_t n = window_count(rec.n_samples(), lead_steps, stride_steps, horizon);
  out.reserve(n);
  const auto xs = NormStats::normalize_statics(rec.statics);
  for (std::size_t k = 0; k < n; ++k) {
    WindowSample ws;
    ws.anchor_t = first_anchor() + k * stride_steps;
    ws.case_id = rec.case_id;
    ws.x_d.resize(kWindow * kDynamic);
    fill_window(rec, stats, ws.anchor_t, ws.x_d);
    for (std::size_t i = 0; i < kStatic; ++i) ws.x_s[i] = static_cast<float>(xs[i]);
    out.push_back(std::move(ws));
  }
  return out;
}

}  // namespace iaenet
