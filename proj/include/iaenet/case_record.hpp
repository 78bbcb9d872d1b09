// Surgical case containers shared by the generator, ingestion and preprocessing.
#pragma once

#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "iaenet/common.hpp"
#include "iaenet/schema.hpp"

namespace iaenet {

/// Value written at masked positions. Nothing downstream of imputation may
/// read it.
inline constexpr double kMissingSentinel = std::numeric_limits<double>::quiet_NaN();

/// Static covariates. The constructor enforces the cohort exclusion criteria.
class StaticCovariates {
 public:
  StaticCovariates() = default;
  StaticCovariates(int age, int sex, double weight, double height, int asa)
      : age_(age), sex_(sex), weight_(weight), height_(height), asa_(asa) {
    require_config(age >= 18, "static covariates: age must be >= 18");
    require_config(sex == 0 || sex == 1, "static covariates: sex must be 0 or 1");
    require_config(weight > 35.0, "static covariates: weight must be > 35 kg");
    require_config(height > 0.0, "static covariates: height must be > 0");
    require_config(asa >= 1 && asa <= 5, "static covariates: asa must be in 1..5");
  }

  int age() const { return age_; }
  int sex() const { return sex_; }
  double weight() const { return weight_; }
  double height() const { return height_; }
  int asa() const { return asa_; }

  bool operator==(const StaticCovariates&) const = default;

 private:
  int age_ = 18;
  int sex_ = 0;
  double weight_ = 60.0;
  double height_ = 165.0;
  int asa_ = 1;
};

struct ChannelSeries {
  Channel channel = Channel::HR;
  std::vector<double> values;
  std::vector<bool> missing;

  std::size_t size() const { return values.size(); }

  std::size_t missing_count() const {
    std::size_t n = 0;
    for (bool m : missing) n += m ? 1 : 0;
    return n;
  }

  /// Throws unless sizes match and every observed value is finite.
  void validate() const {
    require(values.size() == missing.size(),
            std::string(channel_name(channel)) + ": values/mask length mismatch");
    for (std::size_t i = 0; i < values.size(); ++i) {
      require(missing[i] || std::isfinite(values[i]),
              std::string(channel_name(channel)) + ": non-finite observed value");
    }
  }

  bool operator==(const ChannelSeries& o) const {
    if (channel != o.channel || missing != o.missing || values.size() != o.values.size())
      return false;
    for (std::size_t i = 0; i < values.size(); ++i) {
      if (missing[i]) continue;
      if (values[i] != o.values[i]) return false;
    }
    return true;
  }
};

struct CaseRecord {
  std::string case_id;
  StaticCovariates statics;
  std::vector<ChannelSeries> channels;  // indexed by Channel

  std::size_t n_samples() const { return channels.empty() ? 0 : channels.front().size(); }
  double duration_s() const { return static_cast<double>(n_samples()) * kPeriodSeconds; }

  const ChannelSeries& channel(Channel c) const { return channels[index_of(c)]; }
  ChannelSeries& channel(Channel c) { return channels[index_of(c)]; }

  /// Structural checks: 15 channels in schema order, equal lengths, finite
  /// observations and at least two hours of recording.
  void validate() const {
    require(channels.size() == kDynamic, case_id + ": expected 15 dynamic channels");
    for (std::size_t i = 0; i < kDynamic; ++i) {
      require(channels[i].channel == static_cast<Channel>(i),
              case_id + ": channels out of schema order");
      require(channels[i].size() == n_samples(), case_id + ": channel lengths differ");
      channels[i].validate();
    }
    require(duration_s() >= 7200.0, case_id + ": duration shorter than 2 hours");
  }

  bool operator==(const CaseRecord&) const = default;
};

}  // namespace iaenet
