// Deterministic synthetic perioperative cohorts.
//
// Each channel is a clipped mean-reverting random walk around a per-case
// baseline. Adverse episodes are injected on the event source channels as
// ramp-hold-ramp excursions past the event threshold, preceded by a slow
// drift toward (but never across) the threshold so that windows ahead of an
// episode carry signal. Case i depends only on (seed, i).
#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "iaenet/case_record.hpp"
#include "iaenet/common.hpp"
#include "iaenet/json_io.hpp"
#include "iaenet/schema.hpp"

namespace iaenet {

/// Positive-rate band accepted without `allow_rate_override`.
inline constexpr double kMinEventRate = 0.00189;
inline constexpr double kMaxEventRate = 0.02531;

struct SynthConfig {
  std::size_t n_cases = 100;
  std::uint64_t seed = 1;
  std::array<double, kEvents> event_rates = {0.025, 0.02, 0.015, 0.003, 0.01, 0.008};
  std::array<double, kDynamic> missing_rates = {0.02, 0.02, 0.05, 0.05, 0.01, 0.05, 0.03, 0.03,
                                                0.03, 0.04, 0.02, 0.10, 0.10, 0.15, 0.20};
  int horizon_minutes = 5;
  bool allow_rate_override = false;
  double min_duration_s = 7200.0;
  double max_duration_s = 9000.0;
  double min_hold_s = 90.0;
  double max_hold_s = 240.0;
  double precursor_minutes = 20.0;
  /// Probability that a hypotension episode comes with a simultaneous
  /// bradycardia episode.
  double cooccurrence = 0.6;

  void validate() const {
    require_config(n_cases >= 1, "synth: n_cases must be >= 1");
    for (std::size_t e = 0; e < kEvents; ++e) {
      const double r = event_rates[e];
      if (allow_rate_override) {
        require_config(r >= 0.0 && r <= 0.05,
                       "synth: event rate for " + std::string(kEventNames[e]) + " outside [0, 0.05]");
      } else {
        require_config(r >= kMinEventRate && r <= kMaxEventRate,
                       "synth: event rate for " + std::string(kEventNames[e]) +
                           " outside the observed band [0.00189, 0.02531]");
      }
    }
    for (std::size_t c = 0; c < kDynamic; ++c)
      require_config(missing_rates[c] >= 0.0 && missing_rates[c] <= 0.25,
                     "synth: missing rate for " + std::string(kChannelNames[c]) + " outside [0, 0.25]");
    require_config(horizon_minutes == 5 || horizon_minutes == 10 || horizon_minutes == 15,
                   "synth: horizon_minutes must be 5, 10 or 15");
    require_config(min_duration_s >= 7200.0 && max_duration_s >= min_duration_s,
                   "synth: durations must satisfy 7200 <= min <= max");
    require_config(min_hold_s >= 60.0 && max_hold_s >= min_hold_s,
                   "synth: hold must satisfy 60 <= min_hold_s <= max_hold_s");
    require_config(precursor_minutes >= 0.0, "synth: precursor_minutes must be >= 0");
    require_config(cooccurrence >= 0.0 && cooccurrence <= 1.0, "synth: cooccurrence must be in [0, 1]");
  }

  static SynthConfig from_json(const nlohmann::json& j) {
    check_keys(j, {"n_cases", "seed", "event_rates", "missing_rates", "horizon_minutes",
                   "allow_rate_override", "min_duration_s", "max_duration_s", "min_hold_s",
                   "max_hold_s", "precursor_minutes", "cooccurrence"},
               "synth");
    SynthConfig c;
    read_opt(j, "n_cases", c.n_cases, "synth");
    read_opt(j, "seed", c.seed, "synth");
    read_opt(j, "horizon_minutes", c.horizon_minutes, "synth");
    read_opt(j, "allow_rate_override", c.allow_rate_override, "synth");
    read_opt(j, "min_duration_s", c.min_duration_s, "synth");
    read_opt(j, "max_duration_s", c.max_duration_s, "synth");
    read_opt(j, "min_hold_s", c.min_hold_s, "synth");
    read_opt(j, "max_hold_s", c.max_hold_s, "synth");
    read_opt(j, "precursor_minutes", c.precursor_minutes, "synth");
    read_opt(j, "cooccurrence", c.cooccurrence, "synth");
    if (auto it = j.find("event_rates"); it != j.end()) {
      require_config(it->is_object(), "synth.event_rates: expected an object keyed by event name");
      for (const auto& [k, v] : it->items()) {
        auto e = event_from_name(k);
        require_config(e.has_value(), "synth.event_rates: unknown event '" + k + "'");
        require_config(v.is_number(), "synth.event_rates: values must be numbers");
        c.event_rates[index_of(*e)] = v.get<double>();
      }
    }
    if (auto it = j.find("missing_rates"); it != j.end()) {
      require_config(it->is_object(), "synth.missing_rates: expected an object keyed by channel name");
      for (const auto& [k, v] : it->items()) {
        auto ch = channel_from_name(k);
        require_config(ch.has_value(), "synth.missing_rates: unknown channel '" + k + "'");
        require_config(v.is_number(), "synth.missing_rates: values must be numbers");
        c.missing_rates[index_of(*ch)] = v.get<double>();
      }
    }
    c.validate();
    return c;
  }

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["n_cases"] = n_cases;
    j["seed"] = seed;
    for (std::size_t e = 0; e < kEvents; ++e) j["event_rates"][std::string(kEventNames[e])] = event_rates[e];
    for (std::size_t c = 0; c < kDynamic; ++c)
      j["missing_rates"][std::string(kChannelNames[c])] = missing_rates[c];
    j["horizon_minutes"] = horizon_minutes;
    j["allow_rate_override"] = allow_rate_override;
    j["min_duration_s"] = min_duration_s;
    j["max_duration_s"] = max_duration_s;
    j["min_hold_s"] = min_hold_s;
    j["max_hold_s"] = max_hold_s;
    j["precursor_minutes"] = precursor_minutes;
    j["cooccurrence"] = cooccurrence;
    return j;
  }
};

/// One injected adverse episode. The hold spans
/// [hold_start, hold_start + hold_len) samples.
struct Episode {
  EventId event;
  std::size_t hold_start;
  std::size_t hold_len;
  int direction;  // -1: event below threshold, +1: above (tachycardia)
  double plateau;
  bool correlated = false;
};

struct SynthCase {
  CaseRecord record;
  std::vector<Episode> episodes;
};

namespace synth_detail {

inline constexpr std::size_t kRampSamples = 30;  // 60 s

struct ChannelModel {
  double mean_lo, mean_hi;  // per-case baseline drawn uniformly from this band
  double sd;                // stationary noise stddev
  double clip_lo, clip_hi;  // keeps the baseline clear of every threshold
};

inline ChannelModel model_for(Channel c) {
  switch (c) {
    case Channel::PPF20_VOL: return {0.010, 0.030, 0.004, 0.0, 1e9};  // mL/s increments
    case Channel::RFTN20_VOL: return {0.005, 0.015, 0.002, 0.0, 1e9};
    case Channel::PPF20_CE: return {2.0, 4.0, 0.2, 0.5, 8.0};
    case Channel::RFTN20_CE: return {2.0, 5.0, 0.3, 0.5, 10.0};
    case Channel::HR: return {65.0, 90.0, 3.0, 61.0, 99.0};
    case Channel::BT: return {36.2, 37.0, 0.1, 36.0, 37.5};
    case Channel::ART_DBP: return {0.0, 0.0, 2.0, 20.0, 120.0};  // derived from MAP
    case Channel::ART_SBP: return {0.0, 0.0, 3.0, 50.0, 220.0};  // derived from MAP
    case Channel::ART_MBP: return {78.0, 95.0, 3.0, 67.0, 110.0};
    case Channel::ETCO2: return {35.0, 40.0, 1.0, 33.0, 45.0};
    case Channel::PLETH_SPO2: return {97.0, 99.5, 0.5, 95.0, 100.0};
    case Channel::VENT_TV: return {400.0, 550.0, 15.0, 300.0, 700.0};
    case Channel::VENT_RR: return {10.0, 14.0, 0.5, 8.0, 20.0};
    case Channel::BIS: return {43.0, 55.0, 3.0, 41.0, 60.0};
    case Channel::ECG_II: return {0.3, 0.8, 0.1, 0.05, 2.0};
  }
  return {0.0, 1.0, 0.1, 0.0, 1.0};
}

/// Minimum distance kept from the threshold outside of episodes.
inline double safe_margin(EventId e) {
  switch (e) {
    case EventId::hypothermia: return 0.1;
    case EventId::hypoxemia:
    case EventId::hypocapnia: return 1.0;
    default: return 1.5;
  }
}

/// How far past the threshold an episode plateau sits: U[lo, hi].
inline std::pair<double, double> plateau_depth(EventId e) {
  switch (e) {
    case EventId::hypotension: return {3.0, 8.0};
    case EventId::low_doa: return {3.0, 8.0};
    case EventId::arrhythmia: return {4.0, 10.0};
    case EventId::hypoxemia: return {2.0, 5.0};
    case EventId::hypothermia: return {0.3, 0.8};
    case EventId::hypocapnia: return {2.0, 5.0};
  }
  return {1.0, 2.0};
}

/// Stationary AR(1) path with unit variance, scaled and clipped.
inline std::vector<double> mean_reverting(std::mt19937_64& rng, std::size_t n, double mean,
                                          double sd, double lo, double hi) {
  constexpr double kTheta = 0.05;
  const double keep = 1.0 - kTheta;
  const double innov = std::sqrt(1.0 - keep * keep);
  std::normal_distribution<double> nd(0.0, 1.0);
  std::vector<double> out(n);
  double z = nd(rng);
  for (std::size_t i = 0; i < n; ++i) {
    out[i] = std::clamp(mean + sd * z, lo, hi);
    z = keep * z + innov * nd(rng);
  }
  return out;
}

inline double hypotension_risk(int asa) {
  static constexpr std::array<double, 5> f = {0.6, 1.0, 1.6, 2.0, 2.0};
  return f[static_cast<std::size_t>(asa - 1)];
}

inline StaticCovariates draw_statics(std::mt19937_64& rng) {
  std::normal_distribution<double> age(60.0, 14.0), weight(63.0, 12.0), height(164.0, 8.5);
  std::bernoulli_distribution male(0.58);
  std::discrete_distribution<int> asa({20.2, 68.5, 11.0, 0.3});
  const int a = static_cast<int>(std::clamp(std::round(age(rng)), 18.0, 90.0));
  const int s = male(rng) ? 1 : 0;
  const double w = std::clamp(std::round(weight(rng) * 10.0) / 10.0, 36.0, 150.0);
  const double h = std::clamp(std::round(height(rng) * 10.0) / 10.0, 140.0, 200.0);
  return StaticCovariates(a, s, w, h, asa(rng) + 1);
}

/// Expected number of positive segment starts one episode produces:
/// hold plus the ramp portions past threshold, minus the 29-sample overhang.
inline double expected_positive_starts(double base, double thr, double plateau, double mean_hold) {
  const double span = std::abs(base - plateau);
  const double past = span > 0.0 ? std::clamp(std::abs(thr - plateau) / span, 0.0, 1.0) : 0.0;
  return std::max(1.0, mean_hold + 2.0 * kRampSamples * past - static_cast<double>(kEventSegment - 1));
}

}  // namespace synth_detail

/// Generates case `case_index` of the cohort, including the episode list.
inline SynthCase generate_case_detailed(const SynthConfig& cfg, std::size_t case_index) {
  using namespace synth_detail;
  cfg.validate();
  require_config(case_index < cfg.n_cases, "generate_case: case_index out of range");
  std::mt19937_64 rng(mix_seed(cfg.seed, case_index));
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  auto uniform = [&](double lo, double hi) { return lo + (hi - lo) * unif(rng); };

  SynthCase out;
  CaseRecord& rec = out.record;
  char id[32];
  std::snprintf(id, sizeof(id), "case_%05zu", case_index);
  rec.case_id = id;
  rec.statics = draw_statics(rng);

  const auto min_n = static_cast<std::size_t>(std::ceil(cfg.min_duration_s / kPeriodSeconds));
  const auto max_n = static_cast<std::size_t>(std::floor(cfg.max_duration_s / kPeriodSeconds));
  const std::size_t n = std::uniform_int_distribution<std::size_t>(min_n, max_n)(rng);

  // Baselines.
  std::array<double, kDynamic> case_mean{};
  std::array<std::vector<double>, kDynamic> vals;
  for (std::size_t c = 0; c < kDynamic; ++c) {
    const auto m = model_for(static_cast<Channel>(c));
    case_mean[c] = uniform(m.mean_lo, m.mean_hi);
    vals[c] = mean_reverting(rng, n, case_mean[c], m.sd, m.clip_lo, m.clip_hi);
  }

  // Episodes.
  const std::size_t lead = lead_steps_for_minutes(cfg.horizon_minutes);
  const std::size_t first_start = kWindow + lead;
  const auto hold_lo = static_cast<std::size_t>(std::ceil(cfg.min_hold_s / kPeriodSeconds));
  const auto hold_hi = static_cast<std::size_t>(std::floor(cfg.max_hold_s / kPeriodSeconds));
  const double mean_hold = 0.5 * static_cast<double>(hold_lo + hold_hi);
  const double n_windows =
      n >= kWindow + lead + kEventSegment ? static_cast<double>(n - kWindow - lead - kEventSegment + 1) : 0.0;

  auto draw_plateau = [&](EventId e, int dir) {
    const auto [lo, hi] = plateau_depth(e);
    return event_threshold(e) + dir * uniform(lo, hi);
  };
  auto overlaps = [&](EventId e, std::size_t start, std::size_t len) {
    for (const auto& ep : out.episodes) {
      if (ep.event != e) continue;
      const std::size_t a0 = ep.hold_start > kRampSamples ? ep.hold_start - kRampSamples : 0;
      const std::size_t a1 = ep.hold_start + ep.hold_len + 2 * kRampSamples;
      if (start < a1 && a0 < start + len + kRampSamples) return true;
    }
    return false;
  };
  // Hold starts in [first_start, n - hold - ramp - 30) so the run past the
  // threshold is reachable by some anchor.
  auto place = [&](EventId e, std::size_t hold, int dir, double plateau, bool correlated,
                   std::optional<std::size_t> forced_start) -> bool {
    std::size_t start = 0;
    if (!forced_start) {
      if (n < first_start + hold + kRampSamples + kEventSegment + 1) return false;
      const std::size_t hi = n - hold - kRampSamples - kEventSegment;
      bool found = false;
      for (int attempt = 0; attempt < 50 && !found; ++attempt) {
        start = std::uniform_int_distribution<std::size_t>(first_start, hi)(rng);
        found = !overlaps(e, start, hold);
      }
      if (!found) return false;
    } else {
      start = *forced_start;
      if (overlaps(e, start, hold)) return false;
    }
    out.episodes.push_back({e, start, hold, dir, plateau, correlated});
    return true;
  };

  double hypotension_lambda = 0.0;  // before the ASA risk factor
  for (EventId e : kAllEvents) {
    const double rate = cfg.event_rates[index_of(e)];
    if (rate <= 0.0 || n_windows <= 0.0) continue;
    const std::size_t ch = index_of(source_channel(e));
    const double thr = event_threshold(e);
    const auto [dlo, dhi] = plateau_depth(e);
    const double typical_plateau = thr - 0.5 * (dlo + dhi);
    const double per_episode = expected_positive_starts(case_mean[ch], thr, typical_plateau, mean_hold);
    double lambda = rate * n_windows / per_episode;
    if (e == EventId::hypotension) {
      hypotension_lambda = lambda;
      lambda *= hypotension_risk(rec.statics.asa());
    }
    if (e == EventId::arrhythmia) {
      // Bradycardia accompanying hypotension counts toward the arrhythmia
      // budget; only the remainder is drawn independently.
      const std::size_t existing = out.episodes.size();
      for (std::size_t k = 0; k < existing; ++k) {
        const Episode ep = out.episodes[k];
        if (ep.event != EventId::hypotension || unif(rng) >= cfg.cooccurrence) continue;
        place(EventId::arrhythmia, ep.hold_len, -1, draw_plateau(EventId::arrhythmia, -1), true,
              ep.hold_start);
      }
      lambda = std::max(0.0, lambda - cfg.cooccurrence * hypotension_lambda);
    }
    const std::size_t k = std::poisson_distribution<std::size_t>(lambda)(rng);
    for (std::size_t i = 0; i < k; ++i) {
      const std::size_t hold = std::uniform_int_distribution<std::size_t>(hold_lo, hold_hi)(rng);
      int dir = -1;
      if (e == EventId::arrhythmia && unif(rng) < 0.5) dir = +1;
      place(e, hold, dir, draw_plateau(e, dir), false, std::nullopt);
    }
  }

  // Shape each episode: precursor drift, ramp in, hold, ramp out.
  const auto precursor = static_cast<std::size_t>(cfg.precursor_minutes * 60.0 / kPeriodSeconds);
  // Samples inside an episode (ramps and hold); drifts of neighbouring
  // episodes must not touch them.
  std::array<std::vector<bool>, kDynamic> inside;
  for (const auto& ep : out.episodes) {
    auto& mask = inside[index_of(source_channel(ep.event))];
    if (mask.empty()) mask.assign(n, false);
    const std::size_t a = ep.hold_start >= kRampSamples ? ep.hold_start - kRampSamples : 0;
    const std::size_t b = std::min(n, ep.hold_start + ep.hold_len + kRampSamples);
    for (std::size_t t = a; t < b; ++t) mask[t] = true;
  }
  for (const auto& ep : out.episodes) {
    const std::size_t ch = index_of(source_channel(ep.event));
    auto& v = vals[ch];
    const double thr = ep.direction < 0 ? event_threshold(ep.event) : kTachycardiaThreshold;
    const double margin = safe_margin(ep.event);
    const double base = case_mean[ch];
    const double sd = model_for(static_cast<Channel>(ch)).sd;
    auto keep_safe = [&](double x) {
      return ep.direction < 0 ? std::max(x, thr + margin) : std::min(x, thr - margin);
    };
    auto keep_past = [&](double x) {
      const double m = 0.25 * margin;
      return ep.direction < 0 ? std::min(x, thr - m) : std::max(x, thr + m);
    };
    const std::size_t ramp_in = ep.hold_start >= kRampSamples ? ep.hold_start - kRampSamples : 0;
    if (precursor > 0) {
      const std::size_t p0 = ramp_in >= precursor ? ramp_in - precursor : 0;
      const double shift = 0.6 * (thr - base);
      const auto& mask = inside[ch];
      for (std::size_t t = p0; t < ramp_in; ++t) {
        if (mask[t]) continue;
        const double frac = static_cast<double>(t - p0 + 1) / static_cast<double>(precursor);
        v[t] = keep_safe(v[t] + frac * shift);
      }
    }
    const double pre_level = precursor > 0 ? base + 0.6 * (thr - base) : base;
    std::normal_distribution<double> nd(0.0, 0.3 * sd);
    for (std::size_t t = ramp_in; t < ep.hold_start; ++t) {
      const double a = static_cast<double>(t - ramp_in + 1) / static_cast<double>(kRampSamples + 1);
      v[t] = (1.0 - a) * keep_safe(v[t] + (pre_level - base)) + a * ep.plateau;
    }
    for (std::size_t t = ep.hold_start; t < ep.hold_start + ep.hold_len && t < n; ++t)
      v[t] = keep_past(ep.plateau + nd(rng));
    const std::size_t hold_end = ep.hold_start + ep.hold_len;
    for (std::size_t t = hold_end; t < std::min(n, hold_end + kRampSamples); ++t) {
      const double a = static_cast<double>(t - hold_end + 1) / static_cast<double>(kRampSamples + 1);
      v[t] = (1.0 - a) * ep.plateau + a * v[t];
    }
  }

  // Diastolic and systolic pressure follow the final mean pressure.
  {
    auto& mbp = vals[index_of(Channel::ART_MBP)];
    const auto dm = model_for(Channel::ART_DBP);
    const auto sm = model_for(Channel::ART_SBP);
    const double pulse = uniform(35.0, 50.0);
    auto dn = mean_reverting(rng, n, 0.0, dm.sd, -3 * dm.sd, 3 * dm.sd);
    auto sn = mean_reverting(rng, n, 0.0, sm.sd, -3 * sm.sd, 3 * sm.sd);
    auto& dbp = vals[index_of(Channel::ART_DBP)];
    auto& sbp = vals[index_of(Channel::ART_SBP)];
    for (std::size_t t = 0; t < n; ++t) {
      dbp[t] = std::clamp(mbp[t] - pulse / 3.0 + dn[t], dm.clip_lo, dm.clip_hi);
      sbp[t] = std::clamp(mbp[t] + 2.0 * pulse / 3.0 + sn[t], sm.clip_lo, sm.clip_hi);
    }
  }

  // Infusion volumes are cumulative sums of nonnegative increments.
  for (Channel c : {Channel::PPF20_VOL, Channel::RFTN20_VOL}) {
    auto& v = vals[index_of(c)];
    double total = uniform(0.0, 5.0);
    for (std::size_t t = 0; t < n; ++t) {
      total += std::max(0.0, v[t]) * kPeriodSeconds;
      v[t] = total;
    }
  }

  rec.channels.resize(kDynamic);
  for (std::size_t c = 0; c < kDynamic; ++c) {
    std::bernoulli_distribution miss(cfg.missing_rates[c]);
    ChannelSeries s{static_cast<Channel>(c), std::move(vals[c]), std::vector<bool>(n, false)};
    for (std::size_t t = 0; t < n; ++t) {
      if (miss(rng)) {
        s.missing[t] = true;
        s.values[t] = kMissingSentinel;
      }
    }
    rec.channels[c] = std::move(s);
  }
  rec.validate();
  return out;
}

inline CaseRecord generate_case(const SynthConfig& cfg, std::size_t case_index) {
  return generate_case_detailed(cfg, case_index).record;
}

inline std::vector<CaseRecord> generate_cohort(const SynthConfig& cfg) {
  cfg.validate();
  std::vector<CaseRecord> out(cfg.n_cases);
  parallel_for(cfg.n_cases, [&](std::size_t i) { out[i] = generate_case(cfg, i); });
  return out;
}

}  // namespace iaenet
