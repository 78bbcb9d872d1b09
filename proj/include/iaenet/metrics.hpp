// Multi-label evaluation over N x C probability and label matrices
// (row-major): pooled micro scores, per-class rank AUC and their summary.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>

#include "iaenet/common.hpp"
#include "iaenet/schema.hpp"

namespace iaenet {

struct Counts {
  std::uint64_t tp = 0, fp = 0, fn = 0, tn = 0;
};

struct MicroScores {
  double precision = 0, recall = 0, f1 = 0, accuracy = 0, hamming = 0;
  Counts counts;
};

inline double f1_from(double p, double r) { return p + r > 0 ? 2 * p * r / (p + r) : 0.0; }

inline MicroScores scores_from_counts(const Counts& c) {
  MicroScores s;
  s.counts = c;
  const auto total = static_cast<double>(c.tp + c.fp + c.fn + c.tn);
  s.precision = c.tp + c.fp > 0 ? static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fp) : 0.0;
  s.recall = c.tp + c.fn > 0 ? static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fn) : 0.0;
  s.f1 = f1_from(s.precision, s.recall);
  // The larger of the two is computed from counts and the other as its
  // complement, which keeps accuracy + hamming == 1 exact in floating point.
  const auto right = c.tp + c.tn, wrong = c.fp + c.fn;
  if (right >= wrong) {
    s.accuracy = static_cast<double>(right) / total;
    s.hamming = 1.0 - s.accuracy;
  } else {
    s.hamming = static_cast<double>(wrong) / total;
    s.accuracy = 1.0 - s.hamming;
  }
  return s;
}

inline void check_shapes(std::span<const double> probs, std::span<const std::uint8_t> labels, std::size_t n_classes) {
  require(n_classes > 0 && !probs.empty() && probs.size() % n_classes == 0, "metrics: need N >= 1 rows");
  require(labels.size() == probs.size(), "metrics: probs/labels size mismatch");
}

/// Binarizes at `threshold` (p >= threshold is positive) and pools all N x C decisions.
inline MicroScores micro_scores(std::span<const double> probs, std::span<const std::uint8_t> labels,
                                std::size_t n_classes, double threshold = 0.5) {
  check_shapes(probs, labels, n_classes);
  Counts c;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    const bool pred = probs[i] >= threshold, truth = labels[i] != 0;
    if (pred && truth) ++c.tp;
    else if (pred) ++c.fp;
    else if (truth) ++c.fn;
    else ++c.tn;
  }
  return scores_from_counts(c);
}

/// Rank-statistic AUC of one score column; ties share the average rank.
/// Empty when the column lacks either a positive or a negative.
inline std::optional<double> column_auc(std::span<const double> probs, std::span<const std::uint8_t> labels,
                                        std::size_t n_classes, std::size_t c) {
  const std::size_t n = probs.size() / n_classes;
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  auto score = [&](std::size_t i) { return probs[i * n_classes + c]; };
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return score(a) < score(b); });
  double pos_rank_sum = 0.0;
  std::uint64_t n_pos = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && score(order[j]) == score(order[i])) ++j;
    const double avg_rank = 0.5 * static_cast<double>(i + 1 + j);  // ranks i+1 .. j
    for (std::size_t k = i; k < j; ++k) {
      if (labels[order[k] * n_classes + c]) {
        pos_rank_sum += avg_rank;
        ++n_pos;
      }
    }
    i = j;
  }
  const std::uint64_t n_neg = n - n_pos;
  if (n_pos == 0 || n_neg == 0) return std::nullopt;
  const double np = static_cast<double>(n_pos);
  return (pos_rank_sum - np * (np + 1) / 2) / (np * static_cast<double>(n_neg));
}

struct AucResult {
  double macro = std::numeric_limits<double>::quiet_NaN();
  std::vector<std::optional<double>> per_class;
  std::vector<std::size_t> excluded;  // classes with a single label value
};

/// Per-class AUC averaged over the classes where it is defined.
inline AucResult macro_auc_detail(std::span<const double> probs, std::span<const std::uint8_t> labels,
                                  std::size_t n_classes) {
  check_shapes(probs, labels, n_classes);
  AucResult r;
  r.per_class.resize(n_classes);
  parallel_for(n_classes, [&](std::size_t c) { r.per_class[c] = column_auc(probs, labels, n_classes, c); });
  double sum = 0.0;
  std::size_t used = 0;
  for (std::size_t c = 0; c < n_classes; ++c) {
    if (r.per_class[c]) {
      sum += *r.per_class[c];
      ++used;
    } else {
      r.excluded.push_back(c);
    }
  }
  if (used > 0) r.macro = sum / static_cast<double>(used);
  return r;
}

inline double macro_auc(std::span<const double> probs, std::span<const std::uint8_t> labels, std::size_t n_classes) {
  const AucResult r = macro_auc_detail(probs, labels, n_classes);
  require(r.excluded.size() < n_classes, "AUC undefined: no class has both positives and negatives");
  return r.macro;
}

struct EventScore {
  double f1 = 0.0;
  std::optional<double> auc;
};

struct EvalReport {
  double micro_f1 = 0, micro_precision = 0, micro_recall = 0, micro_accuracy = 0, hamming = 0;
  double macro_auc = std::numeric_limits<double>::quiet_NaN();  // NaN when undefined for every class
  std::vector<EventScore> per_event;
  std::vector<std::size_t> auc_excluded;
  double threshold = 0.5;
  std::size_t n_samples = 0;
  std::optional<double> bce;  // plain BCE when logits were available

  nlohmann::json to_json() const {
    auto num = [](double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); };
    nlohmann::json per = nlohmann::json::object();
    for (std::size_t c = 0; c < per_event.size(); ++c) {
      const std::string name = per_event.size() == kEvents ? std::string(kEventNames[c]) : "class" + std::to_string(c);
      per[name] = {{"f1", per_event[c].f1},
                   {"auc", per_event[c].auc ? nlohmann::json(*per_event[c].auc) : nlohmann::json(nullptr)}};
    }
    nlohmann::json j = {{"micro_f1", micro_f1},
                        {"micro_precision", micro_precision},
                        {"micro_recall", micro_recall},
                        {"micro_accuracy", micro_accuracy},
                        {"hamming", hamming},
                        {"macro_auc", num(macro_auc)},
                        {"auc_excluded", auc_excluded},
                        {"per_event", per},
                        {"threshold", threshold},
                        {"n_samples", n_samples}};
    if (bce) j["bce"] = *bce;
    return j;
  }
};

inline EvalReport evaluate(std::span<const double> probs, std::span<const std::uint8_t> labels, std::size_t n_classes,
                           double threshold = 0.5) {
  const MicroScores m = micro_scores(probs, labels, n_classes, threshold);
  const AucResult auc = macro_auc_detail(probs, labels, n_classes);
  EvalReport r;
  r.micro_f1 = m.f1;
  r.micro_precision = m.precision;
  r.micro_recall = m.recall;
  r.micro_accuracy = m.accuracy;
  r.hamming = m.hamming;
  r.macro_auc = auc.macro;
  r.auc_excluded = auc.excluded;
  r.threshold = threshold;
  r.n_samples = probs.size() / n_classes;
  r.per_event.resize(n_classes);
  for (std::size_t c = 0; c < n_classes; ++c) {
    Counts k;
    for (std::size_t i = c; i < probs.size(); i += n_classes) {
      const bool pred = probs[i] >= threshold, truth = labels[i] != 0;
      k.tp += pred && truth;
      k.fp += pred && !truth;
      k.fn += !pred && truth;
    }
    const double p = k.tp + k.fp ? static_cast<double>(k.tp) / static_cast<double>(k.tp + k.fp) : 0.0;
    const double rc = k.tp + k.fn ? static_cast<double>(k.tp) / static_cast<double>(k.tp + k.fn) : 0.0;
    r.per_event[c] = {f1_from(p, rc), auc.per_class[c]};
  }
  return r;
}

}  // namespace iaenet
