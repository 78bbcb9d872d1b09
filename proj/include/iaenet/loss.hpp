// Training objectives over a batch of logits laid out row-major (N x C):
// frequency-reweighted BCE, the co-occurrence consistency regularizer, their
// combination, and the reference losses used for comparison. Every loss
// returns its value together with d(loss)/d(logits).
#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "iaenet/common.hpp"
#include "iaenet/json_io.hpp"

namespace iaenet {

enum class Scheme { none, inverse, log_inverse, sqrt_inverse, cubic_inverse };
enum class WeightScope { batch, global };
enum class CoSource { train_set, batch };
enum class RegSpace { probability, logit };

inline constexpr std::array<const char*, 5> kSchemeNames = {"none", "inverse", "log_inverse", "sqrt_inverse",
                                                            "cubic_inverse"};

inline std::string scheme_name(Scheme s) { return kSchemeNames[static_cast<std::size_t>(s)]; }

inline Scheme scheme_from_name(const std::string& name) {
  for (std::size_t i = 0; i < kSchemeNames.size(); ++i)
    if (name == kSchemeNames[i]) return static_cast<Scheme>(i);
  throw ConfigError("unknown weighting scheme: " + name);
}

struct LcrConfig {
  Scheme scheme = Scheme::sqrt_inverse;
  double lambda = 0.02;
  WeightScope weight_scope = WeightScope::batch;
  CoSource co_source = CoSource::train_set;
  RegSpace reg_space = RegSpace::probability;
  double weight_clip = 100.0;
  bool mean_over_batch = false;  // divide the weighted BCE by N as well as C

  void validate() const {
    require_config(std::isfinite(lambda) && lambda >= 0.0, "lcr.lambda must be finite and >= 0");
    require_config(std::isfinite(weight_clip) && weight_clip >= 1.0, "lcr.weight_clip must be >= 1");
  }

  nlohmann::json to_json() const {
    return {{"scheme", scheme_name(scheme)},
            {"lambda", lambda},
            {"weight_scope", weight_scope == WeightScope::batch ? "batch" : "global"},
            {"co_source", co_source == CoSource::train_set ? "train_set" : "batch"},
            {"reg_space", reg_space == RegSpace::probability ? "probability" : "logit"},
            {"weight_clip", weight_clip},
            {"mean_over_batch", mean_over_batch}};
  }

  static LcrConfig from_json(const nlohmann::json& j) {
    check_keys(j, {"scheme", "lambda", "weight_scope", "co_source", "reg_space", "weight_clip", "mean_over_batch"},
               "lcr");
    LcrConfig c;
    std::string scheme = scheme_name(c.scheme), scope = "batch", co = "train_set", space = "probability";
    read_opt(j, "scheme", scheme, "lcr");
    read_opt(j, "lambda", c.lambda, "lcr");
    read_opt(j, "weight_scope", scope, "lcr");
    read_opt(j, "co_source", co, "lcr");
    read_opt(j, "reg_space", space, "lcr");
    read_opt(j, "weight_clip", c.weight_clip, "lcr");
    read_opt(j, "mean_over_batch", c.mean_over_batch, "lcr");
    c.scheme = scheme_from_name(scheme);
    require_config(scope == "batch" || scope == "global", "lcr.weight_scope must be batch or global");
    require_config(co == "train_set" || co == "batch", "lcr.co_source must be train_set or batch");
    require_config(space == "probability" || space == "logit", "lcr.reg_space must be probability or logit");
    c.weight_scope = scope == "batch" ? WeightScope::batch : WeightScope::global;
    c.co_source = co == "train_set" ? CoSource::train_set : CoSource::batch;
    c.reg_space = space == "probability" ? RegSpace::probability : RegSpace::logit;
    c.validate();
    return c;
  }
};

/// Per-class weights for positive and negative samples.
struct BatchWeights {
  std::vector<double> q_pos, q_neg;
};

struct LossResult {
  double value = 0.0;
  std::vector<double> grad;  // d(value)/d(logits), same layout as the logits
};

inline double sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

/// log(1 + exp(x)) without overflow.
inline double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

/// Binary cross-entropy of sigmoid(z) against y in log-sum-exp form.
inline double stable_bce(double z, double y) { return std::max(z, 0.0) - z * y + std::log1p(std::exp(-std::abs(z))); }

/// Weight for a class occupying fraction f of the batch. Empty classes get
/// `clip`; every weight is capped at `clip` and stays positive.
inline double scheme_weight(Scheme scheme, double f, double clip) {
  if (scheme == Scheme::none) return 1.0;
  if (f <= 0.0) return clip;
  double q = 1.0;
  switch (scheme) {
    case Scheme::inverse: q = 1.0 / f; break;
    case Scheme::sqrt_inverse: q = 1.0 / std::sqrt(f); break;
    case Scheme::cubic_inverse: q = 1.0 / std::cbrt(f); break;
    case Scheme::log_inverse: q = std::max(std::log(1.0 / f), 1.0 / clip); break;
    case Scheme::none: break;
  }
  return std::min(q, clip);
}

/// Weights from given positive fractions (global scope uses training-split rates).
inline BatchWeights frequency_weights(std::span<const double> pos_rates, Scheme scheme, double clip) {
  BatchWeights w;
  for (double f : pos_rates) {
    w.q_pos.push_back(scheme_weight(scheme, f, clip));
    w.q_neg.push_back(scheme_weight(scheme, 1.0 - f, clip));
  }
  return w;
}

/// Weights recomputed from one batch's label counts.
inline BatchWeights batch_weights(std::span<const std::uint8_t> labels, std::size_t n_classes, Scheme scheme,
                                  double clip) {
  require(n_classes > 0 && !labels.empty() && labels.size() % n_classes == 0, "batch_weights: bad label shape");
  const std::size_t n = labels.size() / n_classes;
  std::vector<double> rates(n_classes, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t c = 0; c < n_classes; ++c) rates[c] += labels[i * n_classes + c];
  for (auto& r : rates) r /= static_cast<double>(n);
  return frequency_weights(rates, scheme, clip);
}

namespace loss_detail {

inline std::size_t rows(std::span<const double> z, std::span<const std::uint8_t> y, std::size_t n_classes) {
  require(n_classes > 0 && !z.empty() && z.size() % n_classes == 0, "loss: logits shape");
  require(y.size() == z.size(), "loss: labels shape");
  return z.size() / n_classes;
}

}  // namespace loss_detail

/// Sum over classes of q-weighted per-sample BCE sums, divided by C
/// (and by N when `mean_over_batch`).
inline LossResult weighted_bce(std::span<const double> z, std::span<const std::uint8_t> y, std::size_t n_classes,
                               const BatchWeights& w, bool mean_over_batch = false) {
  const std::size_t n = loss_detail::rows(z, y, n_classes);
  require(w.q_pos.size() == n_classes && w.q_neg.size() == n_classes, "weighted_bce: weight size");
  const double scale = 1.0 / static_cast<double>(n_classes) / (mean_over_batch ? static_cast<double>(n) : 1.0);
  LossResult r;
  r.grad.resize(z.size());
  for (std::size_t i = 0; i < z.size(); ++i) {
    const std::size_t c = i % n_classes;
    const double t = y[i] ? 1.0 : 0.0;
    const double q = y[i] ? w.q_pos[c] : w.q_neg[c];
    r.value += q * stable_bce(z[i], t);
    r.grad[i] = scale * q * (sigmoid(z[i]) - t);
  }
  r.value *= scale;
  return r;
}

/// Sum over label pairs of co[i][j] times the mean over the batch of the
/// squared difference between prediction columns i and j.
inline LossResult co_loss(std::span<const double> z, std::size_t n_classes, std::span<const double> co,
                          RegSpace space = RegSpace::probability) {
  require(n_classes > 0 && !z.empty() && z.size() % n_classes == 0, "co_loss: logits shape");
  require(co.size() == n_classes * n_classes, "co_loss: co-matrix size");
  const std::size_t n = z.size() / n_classes;
  std::vector<double> u(z.size());
  for (std::size_t i = 0; i < z.size(); ++i) u[i] = space == RegSpace::probability ? sigmoid(z[i]) : z[i];
  LossResult r;
  r.grad.assign(z.size(), 0.0);
  const double inv_n = 1.0 / static_cast<double>(n);
  for (std::size_t s = 0; s < n; ++s) {
    const double* row = u.data() + s * n_classes;
    double* g = r.grad.data() + s * n_classes;
    for (std::size_t i = 0; i < n_classes; ++i) {
      for (std::size_t j = 0; j < n_classes; ++j) {
        const double c = co[i * n_classes + j];
        if (c == 0.0) continue;
        const double d = row[i] - row[j];
        r.value += c * d * d * inv_n;
        g[i] += 2.0 * c * d * inv_n;
        g[j] -= 2.0 * c * d * inv_n;
      }
    }
  }
  if (space == RegSpace::probability)
    for (std::size_t i = 0; i < z.size(); ++i) r.grad[i] *= u[i] * (1.0 - u[i]);
  return r;
}

/// Weighted BCE plus lambda times the co-occurrence regularizer. Batch weights
/// are recomputed from `y` unless fixed weights are supplied.
inline LossResult lcr_loss(std::span<const double> z, std::span<const std::uint8_t> y, std::size_t n_classes,
                           std::span<const double> co, const LcrConfig& cfg,
                           const BatchWeights* fixed_weights = nullptr) {
  const BatchWeights w = fixed_weights ? *fixed_weights : batch_weights(y, n_classes, cfg.scheme, cfg.weight_clip);
  LossResult r = weighted_bce(z, y, n_classes, w, cfg.mean_over_batch);
  if (cfg.lambda > 0.0) {
    const LossResult reg = co_loss(z, n_classes, co, cfg.reg_space);
    r.value += cfg.lambda * reg.value;
    for (std::size_t i = 0; i < r.grad.size(); ++i) r.grad[i] += cfg.lambda * reg.grad[i];
  }
  return r;
}

/// Plain BCE averaged over all N x C decisions. Validation and test use this;
/// it takes no weights.
inline double eval_bce(std::span<const double> z, std::span<const std::uint8_t> y) {
  require(!z.empty() && z.size() == y.size(), "eval_bce: shape");
  double s = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) s += stable_bce(z[i], y[i] ? 1.0 : 0.0);
  return s / static_cast<double>(z.size());
}

enum class LossKind { bce, wbce, focal, asl, lcr };

inline LossKind loss_kind_from_name(const std::string& name) {
  if (name == "bce") return LossKind::bce;
  if (name == "wbce") return LossKind::wbce;
  if (name == "focal") return LossKind::focal;
  if (name == "asl") return LossKind::asl;
  if (name == "lcr") return LossKind::lcr;
  throw ConfigError("unknown loss kind: " + name);
}

inline std::string loss_kind_name(LossKind k) {
  static constexpr std::array<const char*, 5> names = {"bce", "wbce", "focal", "asl", "lcr"};
  return names[static_cast<std::size_t>(k)];
}

struct ReferenceParams {
  double focal_gamma = 2.0;
  double focal_alpha = -1.0;  // < 0 disables class balancing
  double asl_gamma_pos = 0.0;
  double asl_gamma_neg = 4.0;
  double asl_margin = 0.05;
  BatchWeights wbce_weights;  // empty: inverse-frequency weights from the batch itself

  nlohmann::json to_json() const {
    return {{"focal_gamma", focal_gamma},
            {"focal_alpha", focal_alpha},
            {"asl_gamma_pos", asl_gamma_pos},
            {"asl_gamma_neg", asl_gamma_neg},
            {"asl_margin", asl_margin}};
  }

  static ReferenceParams from_json(const nlohmann::json& j) {
    check_keys(j, {"focal_gamma", "focal_alpha", "asl_gamma_pos", "asl_gamma_neg", "asl_margin"}, "reference");
    ReferenceParams p;
    read_opt(j, "focal_gamma", p.focal_gamma, "reference");
    read_opt(j, "focal_alpha", p.focal_alpha, "reference");
    read_opt(j, "asl_gamma_pos", p.asl_gamma_pos, "reference");
    read_opt(j, "asl_gamma_neg", p.asl_gamma_neg, "reference");
    read_opt(j, "asl_margin", p.asl_margin, "reference");
    require_config(p.focal_gamma >= 0 && p.asl_gamma_pos >= 0 && p.asl_gamma_neg >= 0,
                   "reference: focusing parameters must be >= 0");
    require_config(p.asl_margin >= 0 && p.asl_margin < 1, "reference: asl_margin must be in [0, 1)");
    require_config(p.focal_alpha < 0 || p.focal_alpha <= 1, "reference: focal_alpha must be <= 1");
    return p;
  }
};

namespace loss_detail {

struct Elem {
  double value, grad;
};

inline Elem focal(double z, bool pos, double gamma, double alpha) {
  const double p = sigmoid(z);
  Elem e{};
  if (pos) {
    const double logp = -softplus(-z), m = 1.0 - p;
    e.value = -std::pow(m, gamma) * logp;
    e.grad = gamma * p * std::pow(m, gamma) * logp - std::pow(m, gamma + 1.0);
    if (alpha >= 0) e.value *= alpha, e.grad *= alpha;
  } else {
    const double log1mp = -softplus(z);
    e.value = -std::pow(p, gamma) * log1mp;
    e.grad = -gamma * std::pow(p, gamma) * (1.0 - p) * log1mp + std::pow(p, gamma + 1.0);
    if (alpha >= 0) e.value *= 1.0 - alpha, e.grad *= 1.0 - alpha;
  }
  return e;
}

inline Elem asl(double z, bool pos, double gamma_pos, double gamma_neg, double margin) {
  const double p = sigmoid(z);
  if (pos) return focal(z, true, gamma_pos, -1.0);
  const double pm = std::max(p - margin, 0.0);
  if (pm <= 0.0) return {0.0, 0.0};
  // log(1 - pm) with 1 - pm = sigmoid(-z) + margin.
  const double log1mpm = margin == 0.0 ? -softplus(z) : std::log(sigmoid(-z) + margin);
  const double w = std::pow(pm, gamma_neg);
  double dl_dpm = w / (1.0 - pm);
  if (gamma_neg > 0.0) dl_dpm -= gamma_neg * std::pow(pm, gamma_neg - 1.0) * log1mpm;
  return {-w * log1mpm, dl_dpm * p * (1.0 - p)};
}

}  // namespace loss_detail

/// Reference losses, each a batch mean over all N x C decisions.
inline LossResult reference_loss(LossKind kind, std::span<const double> z, std::span<const std::uint8_t> y,
                                 std::size_t n_classes, const ReferenceParams& params = {}) {
  loss_detail::rows(z, y, n_classes);
  LossResult r;
  r.grad.resize(z.size());
  const double inv = 1.0 / static_cast<double>(z.size());
  BatchWeights w;
  if (kind == LossKind::wbce)
    w = params.wbce_weights.q_pos.empty() ? batch_weights(y, n_classes, Scheme::inverse, 100.0) : params.wbce_weights;
  for (std::size_t i = 0; i < z.size(); ++i) {
    const bool pos = y[i] != 0;
    loss_detail::Elem e{};
    switch (kind) {
      case LossKind::bce:
        e = {stable_bce(z[i], pos), sigmoid(z[i]) - (pos ? 1.0 : 0.0)};
        break;
      case LossKind::wbce: {
        const double q = pos ? w.q_pos[i % n_classes] : w.q_neg[i % n_classes];
        e = {q * stable_bce(z[i], pos), q * (sigmoid(z[i]) - (pos ? 1.0 : 0.0))};
        break;
      }
      case LossKind::focal:
        e = loss_detail::focal(z[i], pos, params.focal_gamma, params.focal_alpha);
        break;
      case LossKind::asl:
        e = loss_detail::asl(z[i], pos, params.asl_gamma_pos, params.asl_gamma_neg, params.asl_margin);
        break;
      case LossKind::lcr:
        throw Error("reference_loss: lcr is not a reference loss; use lcr_loss");
    }
    r.value += e.value * inv;
    r.grad[i] = e.grad * inv;
  }
  return r;
}

/// Single-logit derivative dL/dz of a reference loss at each grid point.
inline std::vector<double> gradient_curve(LossKind kind, int target, std::span<const double> z_grid,
                                          const ReferenceParams& params = {}) {
  require(target == 0 || target == 1, "gradient_curve: target must be 0 or 1");
  std::vector<double> out;
  out.reserve(z_grid.size());
  const bool pos = target == 1;
  for (double z : z_grid) {
    switch (kind) {
      case LossKind::bce: out.push_back(sigmoid(z) - target); break;
      case LossKind::wbce: out.push_back(sigmoid(z) - target); break;
      case LossKind::focal: out.push_back(loss_detail::focal(z, pos, params.focal_gamma, params.focal_alpha).grad); break;
      case LossKind::asl:
        out.push_back(loss_detail::asl(z, pos, params.asl_gamma_pos, params.asl_gamma_neg, params.asl_margin).grad);
        break;
      case LossKind::lcr: throw Error("gradient_curve: use the LcrConfig overload for lcr");
    }
  }
  return out;
}

/// Weighted-BCE part of the LCR derivative with a representative positive
/// fraction: q * (sigmoid(z) - y), q taken from the scheme at f (positives)
/// or 1 - f (negatives).
inline std::vector<double> gradient_curve(const LcrConfig& cfg, int target, std::span<const double> z_grid,
                                          double positive_fraction = 0.25) {
  require(target == 0 || target == 1, "gradient_curve: target must be 0 or 1");
  require(positive_fraction > 0 && positive_fraction < 1, "gradient_curve: positive fraction must be in (0, 1)");
  const double f = target == 1 ? positive_fraction : 1.0 - positive_fraction;
  const double q = scheme_weight(cfg.scheme, f, cfg.weight_clip);
  std::vector<double> out;
  out.reserve(z_grid.size());
  for (double z : z_grid) out.push_back(q * (sigmoid(z) - target));
  return out;
}

/// Co-term derivative on a two-label probe: label 0 has logit z, label 1 has
/// a fixed probability `partner_prob`, and both off-diagonal co entries are
/// `co_value`. Returns lambda * dL_co/dz per grid point.
inline std::vector<double> co_probe_curve(std::span<const double> z_grid, double partner_prob, double co_value,
                                          double lambda, RegSpace space = RegSpace::probability) {
  require(partner_prob > 0 && partner_prob < 1, "co_probe_curve: partner probability must be in (0, 1)");
  const std::vector<double> co = {0.0, co_value, co_value, 0.0};
  const double partner_z = std::log(partner_prob / (1.0 - partner_prob));
  std::vector<double> out;
  out.reserve(z_grid.size());
  for (double z : z_grid) {
    const std::vector<double> logits = {z, partner_z};
    out.push_back(lambda * co_loss(logits, 2, co, space).grad[0]);
  }
  return out;
}

}  // namespace iaenet
