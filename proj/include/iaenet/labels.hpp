// Adverse-event conditions, window labels and the label co-occurrence matrix.
#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "iaenet/case_record.hpp"
#include "iaenet/common.hpp"
#include "iaenet/schema.hpp"

namespace iaenet {

/// Six binary event indicators in EventId order.
struct LabelVector {
  std::array<std::uint8_t, kEvents> y{};

  std::uint8_t operator[](EventId e) const { return y[index_of(e)]; }
  std::uint8_t& operator[](EventId e) { return y[index_of(e)]; }
  bool any() const {
    return std::any_of(y.begin(), y.end(), [](std::uint8_t v) { return v != 0; });
  }
  bool operator==(const LabelVector&) const = default;
};

/// Sustained-threshold test over one minute (30 samples) of the event's
/// source channel. Every sample must lie past the threshold, so the test
/// reduces to the segment max (or min for tachycardia).
inline bool event_condition(EventId event, std::span<const double> segment) {
  require(segment.size() == kEventSegment, "event_condition: segment must have 30 samples");
  const auto [lo, hi] = std::minmax_element(segment.begin(), segment.end());
  const double thr = event_threshold(event);
  if (event == EventId::arrhythmia) return *hi < thr || *lo > kTachycardiaThreshold;
  return *hi < thr;
}

/// How the event window after the lead time is read.
struct LabelMode {
  /// Event-window length T in samples. 30 (1 min) tests exactly the one
  /// segment starting at t+lead. Longer T sets a label if any 30-sample
  /// sub-window inside [t+lead, t+lead+T) satisfies the condition.
  std::size_t horizon_samples = kEventSegment;
};

/// Labels the window anchored at `anchor` (input covers [anchor-W, anchor)).
/// The case must already be imputed; channel values are in physical units.
inline LabelVector label_window(const CaseRecord& rec, std::size_t anchor,
                                std::size_t lead_steps, LabelMode mode = {}) {
  require(mode.horizon_samples >= kEventSegment, "label_window: horizon shorter than 1 minute");
  require(anchor + lead_steps + mode.horizon_samples <= rec.n_samples(),
          "label_window: horizon exceeds case");
  LabelVector out;
  const std::size_t start = anchor + lead_steps;
  const std::size_t last_start = start + mode.horizon_samples - kEventSegment;
  for (EventId e : kAllEvents) {
    const auto& values = rec.channel(source_channel(e)).values;
    for (std::size_t s = start; s <= last_start; ++s) {
      if (event_condition(e, std::span<const double>(values.data() + s, kEventSegment))) {
        out[e] = 1;
        break;
      }
    }
  }
  return out;
}

/// Normalized label co-occurrence matrix. Counts are accumulated batch by
/// batch (sum of Y_b^T Y_b) and normalized by the largest entry plus epsilon.
class CoMatrix {
 public:
  static constexpr double kEpsilon = 1e-8;

  explicit CoMatrix(std::size_t n_classes = kEvents)
      : n_(n_classes), counts_(n_classes * n_classes, 0) {}

  std::size_t size() const { return n_; }

  /// Adds Y^T Y for a row-major batch of binary labels (rows x n_classes).
  void accumulate(std::span<const std::uint8_t> labels) {
    require(labels.size() % n_ == 0, "co_occurrence: label buffer not a multiple of C");
    const std::size_t rows = labels.size() / n_;
    for (std::size_t r = 0; r < rows; ++r) {
      const std::uint8_t* y = labels.data() + r * n_;
      for (std::size_t i = 0; i < n_; ++i) {
        if (!y[i]) continue;
        for (std::size_t j = 0; j < n_; ++j) counts_[i * n_ + j] += y[j] ? 1 : 0;
      }
    }
  }

  std::uint64_t count(std::size_t i, std::size_t j) const { return counts_[i * n_ + j]; }

  /// co_matrix[i][j] = M[i][j] / (max M + eps)
  double operator()(std::size_t i, std::size_t j) const {
    const auto mx = *std::max_element(counts_.begin(), counts_.end());
    return static_cast<double>(counts_[i * n_ + j]) / (static_cast<double>(mx) + kEpsilon);
  }

  std::vector<double> normalized() const {
    std::vector<double> out(n_ * n_);
    for (std::size_t i = 0; i < n_; ++i)
      for (std::size_t j = 0; j < n_; ++j) out[i * n_ + j] = (*this)(i, j);
    return out;
  }

  /// Matrix built directly from normalized values (used when loading JSON).
  static CoMatrix from_normalized(std::size_t n, std::vector<double> values) {
    require(values.size() == n * n, "co_matrix: wrong number of entries");
    CoMatrix m(n);
    m.loaded_ = std::move(values);
    return m;
  }

  /// Normalized values, preferring loaded values when present.
  std::vector<double> values() const { return loaded_.empty() ? normalized() : loaded_; }

  bool operator==(const CoMatrix&) const = default;

 private:
  std::size_t n_;
  std::vector<std::uint64_t> counts_;
  std::vector<double> loaded_;
};

inline CoMatrix co_occurrence(std::span<const std::uint8_t> labels, std::size_t n_classes = kEvents) {
  require(!labels.empty(), "co_occurrence: need at least one row");
  CoMatrix m(n_classes);
  m.accumulate(labels);
  return m;
}

/// JSON form: {"events": [...], "matrix": [[...]...], "counts": [[...]...]}.
inline nlohmann::json co_matrix_to_json(const CoMatrix& m) {
  nlohmann::json j;
  const std::size_t n = m.size();
  std::vector<std::string> names;
  for (std::size_t i = 0; i < n; ++i)
    names.emplace_back(n == kEvents ? std::string(kEventNames[i]) : "label_" + std::to_string(i));
  j["events"] = names;
  const auto vals = m.values();
  nlohmann::json rows = nlohmann::json::array();
  nlohmann::json counts = nlohmann::json::array();
  for (std::size_t i = 0; i < n; ++i) {
    nlohmann::json row = nlohmann::json::array();
    nlohmann::json crow = nlohmann::json::array();
    for (std::size_t j2 = 0; j2 < n; ++j2) {
      row.push_back(vals[i * n + j2]);
      crow.push_back(m.count(i, j2));
    }
    rows.push_back(row);
    counts.push_back(crow);
  }
  j["matrix"] = rows;
  j["counts"] = counts;
  return j;
}

inline CoMatrix co_matrix_from_json(const nlohmann::json& j) {
  const auto& rows = j.at("matrix");
  const std::size_t n = rows.size();
  std::vector<double> vals;
  for (const auto& row : rows) {
    require_config(row.size() == n, "co_matrix: matrix must be square");
    for (const auto& v : row) vals.push_back(v.get<double>());
  }
  return CoMatrix::from_normalized(n, std::move(vals));
}

}  // namespace iaenet
