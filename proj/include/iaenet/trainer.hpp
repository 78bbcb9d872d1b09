// Patient-level splitting, mini-batch training with early stopping on
// validation BCE, evaluation and one-axis ablation sweeps.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "iaenet/common.hpp"
#include "iaenet/dataset.hpp"
#include "iaenet/json_io.hpp"
#include "iaenet/labels.hpp"
#include "iaenet/loss.hpp"
#include "iaenet/metrics.hpp"
#include "iaenet/model.hpp"
#include "iaenet/optim.hpp"

namespace iaenet {

struct TrainConfig {
  double lr = 1e-3;
  std::size_t batch_size = 64;
  std::size_t max_epochs = 10;
  std::size_t patience = 3;
  std::array<double, 3> split = {0.70, 0.10, 0.20};
  std::uint64_t seed = 1;
  int lead_minutes = 5;
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  LossKind loss = LossKind::lcr;
  ReferenceParams reference;
  std::size_t max_steps = 0;  // 0: no cap
  double threshold = 0.5;

  void validate() const {
    require_config(lr >= 0 && std::isfinite(lr), "train.lr must be finite and >= 0");
    require_config(batch_size >= 1, "train.batch_size must be >= 1");
    require_config(max_epochs >= 1, "train.max_epochs must be >= 1");
    require_config(patience >= 1, "train.patience must be >= 1");
    const double total = split[0] + split[1] + split[2];
    require_config(split[0] > 0 && split[1] >= 0 && split[2] >= 0 && std::abs(total - 1.0) < 1e-9,
                   "train.split must be three non-negative fractions summing to 1");
    lead_steps_for_minutes(lead_minutes);
    require_config(threshold > 0 && threshold < 1, "train.threshold must be in (0, 1)");
  }

  RadamConfig radam() const { return {lr, beta1, beta2, eps}; }

  nlohmann::json to_json() const {
    return {{"lr", lr},
            {"batch_size", batch_size},
            {"max_epochs", max_epochs},
            {"patience", patience},
            {"split", split},
            {"seed", seed},
            {"lead_minutes", lead_minutes},
            {"beta1", beta1},
            {"beta2", beta2},
            {"eps", eps},
            {"loss", loss_kind_name(loss)},
            {"reference", reference.to_json()},
            {"max_steps", max_steps},
            {"threshold", threshold}};
  }

  static TrainConfig from_json(const nlohmann::json& j) {
    check_keys(j, {"lr", "batch_size", "max_epochs", "patience", "split", "seed", "lead_minutes", "beta1", "beta2",
                   "eps", "loss", "reference", "max_steps", "threshold"},
               "train");
    TrainConfig c;
    read_opt(j, "lr", c.lr, "train");
    read_opt(j, "batch_size", c.batch_size, "train");
    read_opt(j, "max_epochs", c.max_epochs, "train");
    read_opt(j, "patience", c.patience, "train");
    read_opt(j, "split", c.split, "train");
    read_opt(j, "seed", c.seed, "train");
    read_opt(j, "lead_minutes", c.lead_minutes, "train");
    read_opt(j, "beta1", c.beta1, "train");
    read_opt(j, "beta2", c.beta2, "train");
    read_opt(j, "eps", c.eps, "train");
    std::string loss = loss_kind_name(c.loss);
    read_opt(j, "loss", loss, "train");
    c.loss = loss_kind_from_name(loss);
    if (j.contains("reference")) c.reference = ReferenceParams::from_json(j.at("reference"));
    read_opt(j, "max_steps", c.max_steps, "train");
    read_opt(j, "threshold", c.threshold, "train");
    c.validate();
    return c;
  }
};

struct SplitIndices {
  std::vector<std::size_t> train, val, test;
};

/// Seeded shuffle of case positions cut at the rounded train and validation
/// fractions; the remainder is the test split.
inline SplitIndices split_patients(std::size_t n_cases, const std::array<double, 3>& fractions, std::uint64_t seed) {
  require(n_cases >= 3, "split_patients: need at least 3 cases");
  std::vector<std::size_t> order(n_cases);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  const auto n = static_cast<double>(n_cases);
  const auto n_train = static_cast<std::size_t>(std::llround(fractions[0] * n));
  const auto n_val = std::min(n_cases - n_train, static_cast<std::size_t>(std::llround(fractions[1] * n)));
  SplitIndices s;
  s.train.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_train));
  s.val.assign(order.begin() + static_cast<std::ptrdiff_t>(n_train),
               order.begin() + static_cast<std::ptrdiff_t>(n_train + n_val));
  s.test.assign(order.begin() + static_cast<std::ptrdiff_t>(n_train + n_val), order.end());
  for (auto* part : {&s.train, &s.val, &s.test}) std::sort(part->begin(), part->end());
  return s;
}

/// Stops once the monitored loss has failed to improve for `patience`
/// consecutive epochs. Epochs are 1-based.
class EarlyStopper {
 public:
  explicit EarlyStopper(std::size_t patience) : patience_(patience) {}

  /// Returns true when training should stop after this epoch.
  bool update(std::size_t epoch, double loss) {
    if (loss < best_) {
      best_ = loss;
      best_epoch_ = epoch;
      bad_ = 0;
      return false;
    }
    return ++bad_ >= patience_;
  }

  bool improved_at(std::size_t epoch) const { return best_epoch_ == epoch; }
  std::size_t best_epoch() const { return best_epoch_; }
  double best() const { return best_; }

 private:
  std::size_t patience_;
  double best_ = std::numeric_limits<double>::infinity();
  std::size_t best_epoch_ = 0;
  std::size_t bad_ = 0;
};

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0;
  double val_bce = std::numeric_limits<double>::quiet_NaN();
  double val_f1 = std::numeric_limits<double>::quiet_NaN();
};

struct RunRecord {
  std::vector<EpochRecord> epochs;
  std::size_t best_epoch = 0;
  std::size_t stop_epoch = 0;
  bool stopped_early = false;
  std::size_t steps = 0;
  std::string checkpoint;
  std::optional<EvalReport> test;

  nlohmann::json to_json() const {
    auto num = [](double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); };
    nlohmann::json ep = nlohmann::json::array();
    for (const auto& e : epochs)
      ep.push_back({{"epoch", e.epoch}, {"train_loss", e.train_loss}, {"val_bce", num(e.val_bce)},
                    {"val_micro_f1", num(e.val_f1)}});
    nlohmann::json j = {{"epochs", ep},           {"best_epoch", best_epoch}, {"stop_epoch", stop_epoch},
                        {"stopped_early", stopped_early}, {"steps", steps},   {"checkpoint", checkpoint}};
    j["test"] = test ? test->to_json() : nlohmann::json(nullptr);
    return j;
  }
};

namespace train_detail {

inline constexpr std::size_t kChunk = 8;  // samples per gradient accumulation chunk

template <class S>
Mat<S> window_x_d(const Dataset& ds, std::size_t i) {
  return Eigen::Map<const Mat<float>>(ds.window_x_d(i).data(), static_cast<Eigen::Index>(ds.w),
                                      static_cast<Eigen::Index>(ds.d))
      .template cast<S>();
}

template <class S>
Mat<S> window_x_s(const Dataset& ds, std::size_t i) {
  return Eigen::Map<const Mat<float>>(ds.window_x_s(i).data(), 1, static_cast<Eigen::Index>(ds.s))
      .template cast<S>();
}

}  // namespace train_detail

/// Inference logits for every window (N x C, row-major).
template <class S>
std::vector<double> predict_logits(const Model<S>& model, const Dataset& ds) {
  const std::size_t c = model.config().n_classes;
  std::vector<double> out(ds.size() * c);
  parallel_for(ds.size(), [&](std::size_t i) {
    const RowVec<S> z = model.forward(train_detail::window_x_d<S>(ds, i), train_detail::window_x_s<S>(ds, i));
    for (std::size_t k = 0; k < c; ++k) out[i * c + k] = static_cast<double>(z(static_cast<Eigen::Index>(k)));
  });
  return out;
}

inline std::vector<double> sigmoid_all(std::span<const double> z) {
  std::vector<double> p(z.size());
  for (std::size_t i = 0; i < z.size(); ++i) p[i] = sigmoid(z[i]);
  return p;
}

/// Metrics plus plain BCE over a dataset.
template <class S>
EvalReport evaluate_model(const Model<S>& model, const Dataset& ds, double threshold = 0.5) {
  require(!ds.empty(), "evaluate: empty dataset");
  const auto z = predict_logits(model, ds);
  EvalReport r = evaluate(sigmoid_all(z), ds.labels, model.config().n_classes, threshold);
  r.bce = eval_bce(z, ds.labels);
  return r;
}

/// Loss over one batch given its logits and labels.
struct BatchObjective {
  const TrainConfig* train;
  const LcrConfig* lcr;
  std::span<const double> co;           // train-split co matrix (train_set source)
  const BatchWeights* global_weights;   // global scope only
  std::size_t n_classes;

  LossResult operator()(std::span<const double> z, std::span<const std::uint8_t> y) const {
    if (train->loss != LossKind::lcr) return reference_loss(train->loss, z, y, n_classes, train->reference);
    if (lcr->co_source == CoSource::batch) {
      const auto batch_co = co_occurrence(y, n_classes).normalized();
      return lcr_loss(z, y, n_classes, batch_co, *lcr, global_weights);
    }
    return lcr_loss(z, y, n_classes, co, *lcr, global_weights);
  }
};

/// Forward, loss and backward over the given windows. Gradients are summed
/// per fixed-size chunk and the chunks reduced in order, so the result does
/// not depend on the number of worker threads.
template <class S>
double batch_gradient(const Model<S>& model, const Dataset& ds, std::span<const std::size_t> idx,
                      const BatchObjective& objective, std::uint64_t dropout_seed, Weights<S>& grad) {
  const std::size_t n = idx.size(), c = model.config().n_classes;
  std::vector<ForwardCache<S>> caches(n);
  std::vector<double> z(n * c);
  std::vector<std::uint8_t> y(n * c);
  parallel_for(n, [&](std::size_t k) {
    std::mt19937_64 drop(mix_seed(dropout_seed, k));
    const RowVec<S> out = model.forward(train_detail::window_x_d<S>(ds, idx[k]),
                                        train_detail::window_x_s<S>(ds, idx[k]), &caches[k], &drop);
    for (std::size_t j = 0; j < c; ++j) z[k * c + j] = static_cast<double>(out(static_cast<Eigen::Index>(j)));
    const auto lab = ds.window_labels(idx[k]);
    std::copy(lab.begin(), lab.end(), y.begin() + static_cast<std::ptrdiff_t>(k * c));
  });
  const LossResult loss = objective(z, y);

  const std::size_t chunks = (n + train_detail::kChunk - 1) / train_detail::kChunk;
  std::vector<Weights<S>> partial(chunks);
  parallel_for(chunks, [&](std::size_t ch) {
    partial[ch] = model.zero_grad();
    const std::size_t end = std::min(n, (ch + 1) * train_detail::kChunk);
    for (std::size_t k = ch * train_detail::kChunk; k < end; ++k) {
      RowVec<S> dz(static_cast<Eigen::Index>(c));
      for (std::size_t j = 0; j < c; ++j) dz(static_cast<Eigen::Index>(j)) = static_cast<S>(loss.grad[k * c + j]);
      model.backward(caches[k], dz, partial[ch]);
    }
  });
  grad.set_zero();
  for (const auto& p : partial) grad += p;
  return loss.value;
}

struct TrainData {
  const Dataset* train = nullptr;
  const Dataset* val = nullptr;   // may be empty: no early stopping
  const Dataset* test = nullptr;  // may be empty: no test report
  std::optional<std::vector<double>> co;  // defaults to the train-split co-occurrence
};

struct TrainResult {
  Model<float> model;
  RunRecord record;
};

/// Mini-batch RAdam training. Batches are reshuffled each epoch from a seeded
/// generator; the best validation-BCE weights are restored at the end.
inline TrainResult train(const ModelConfig& model_cfg, const TrainConfig& cfg, const LcrConfig& lcr,
                         const TrainData& data, const std::string& checkpoint_path = {}) {
  cfg.validate();
  lcr.validate();
  require(data.train && !data.train->empty(), "train: empty training set");
  const Dataset& tr = *data.train;
  const bool have_val = data.val && !data.val->empty();
  const std::size_t c = model_cfg.n_classes;
  require(tr.c == c && tr.w == model_cfg.w && tr.d == model_cfg.d && tr.s == model_cfg.s,
          "train: dataset layout does not match the model configuration");

  std::vector<double> co = data.co ? *data.co : co_occurrence(tr.labels, c).normalized();
  require(co.size() == c * c, "train: co-occurrence matrix size mismatch");
  std::optional<BatchWeights> global;
  if (lcr.weight_scope == WeightScope::global) global = frequency_weights(tr.positive_rates(), lcr.scheme, lcr.weight_clip);
  const BatchObjective objective{&cfg, &lcr, co, global ? &*global : nullptr, c};

  Model<float> model(model_cfg, mix_seed(cfg.seed, 0));
  Radam<float> opt(model.weights(), cfg.radam());
  Weights<float> grad = model.zero_grad();
  Weights<float> best = model.weights();
  EarlyStopper stopper(cfg.patience);
  RunRecord rec;

  std::vector<std::size_t> order(tr.size());
  bool capped = false;
  for (std::size_t epoch = 1; epoch <= cfg.max_epochs && !capped; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 shuffle_rng(mix_seed(cfg.seed, 1000 + epoch));
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    double loss_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      const std::span<const std::size_t> idx(order.data() + start, end - start);
      const double loss = batch_gradient(model, tr, idx, objective, mix_seed(cfg.seed, 1u << 20 | rec.steps), grad);
      if (!std::isfinite(loss))
        throw Error("training diverged: non-finite loss at epoch " + std::to_string(epoch) + ", step " +
                    std::to_string(rec.steps + 1));
      opt.step(model.weights(), grad);
      loss_sum += loss;
      ++batches;
      ++rec.steps;
      if (cfg.max_steps && rec.steps >= cfg.max_steps) {
        capped = true;
        break;
      }
    }
    EpochRecord er;
    er.epoch = epoch;
    er.train_loss = loss_sum / static_cast<double>(batches);
    rec.stop_epoch = epoch;
    if (have_val) {
      const EvalReport v = evaluate_model(model, *data.val, cfg.threshold);
      er.val_bce = *v.bce;
      er.val_f1 = v.micro_f1;
      rec.epochs.push_back(er);
      const bool stop = stopper.update(epoch, er.val_bce);
      if (stopper.improved_at(epoch)) best = model.weights();
      if (stop) {
        rec.stopped_early = true;
        break;
      }
    } else {
      rec.epochs.push_back(er);
      best = model.weights();
    }
  }
  rec.best_epoch = have_val ? stopper.best_epoch() : rec.stop_epoch;
  model.weights() = best;
  if (!checkpoint_path.empty()) {
    save_checkpoint(checkpoint_path, model, {{"best_epoch", rec.best_epoch}});
    rec.checkpoint = checkpoint_path;
  }
  if (data.test && !data.test->empty()) rec.test = evaluate_model(model, *data.test, cfg.threshold);
  return {std::move(model), std::move(rec)};
}

enum class AblationAxis { scheme, batch_size, lambda };

inline AblationAxis ablation_axis_from_name(const std::string& name) {
  if (name == "scheme") return AblationAxis::scheme;
  if (name == "batch_size") return AblationAxis::batch_size;
  if (name == "lambda") return AblationAxis::lambda;
  throw ConfigError("unknown ablation axis: " + name);
}

inline std::vector<nlohmann::json> default_ablation_values(AblationAxis axis) {
  switch (axis) {
    case AblationAxis::scheme: return {"none", "inverse", "log_inverse", "sqrt_inverse", "cubic_inverse"};
    case AblationAxis::batch_size: return {64, 128, 256, "All"};
    case AblationAxis::lambda: return {0.001, 0.01, 0.02, 0.05, 0.1, 0.2};
  }
  return {};
}

struct AblationRow {
  std::string setting;
  double f1 = 0, auc = 0, precision = 0, recall = 0;
  std::size_t stop_epoch = 0;
};

/// Applies one axis value to copies of the base configs. On the batch_size
/// axis a number selects the co-occurrence batch (co computed per training
/// batch of that size) and "All" the full training split.
inline void apply_ablation(AblationAxis axis, const nlohmann::json& value, TrainConfig& cfg, LcrConfig& lcr) {
  switch (axis) {
    case AblationAxis::scheme:
      require_config(value.is_string(), "ablate: scheme values must be strings");
      lcr.scheme = scheme_from_name(value.get<std::string>());
      break;
    case AblationAxis::lambda:
      require_config(value.is_number() && value.get<double>() >= 0, "ablate: lambda values must be numbers >= 0");
      lcr.lambda = value.get<double>();
      break;
    case AblationAxis::batch_size:
      if (value.is_string()) {
        require_config(value.get<std::string>() == "All", "ablate: batch_size values must be integers or \"All\"");
        lcr.co_source = CoSource::train_set;
      } else {
        require_config(value.is_number_integer() && value.get<std::int64_t>() >= 1,
                       "ablate: batch_size values must be integers or \"All\"");
        lcr.co_source = CoSource::batch;
        cfg.batch_size = value.get<std::size_t>();
      }
      break;
  }
  lcr.validate();
  cfg.validate();
}

inline std::string setting_label(const nlohmann::json& v) {
  return v.is_string() ? v.get<std::string>() : v.dump();
}

/// One full train and test evaluation per axis value, seeds held fixed.
inline std::vector<AblationRow> ablate(AblationAxis axis, const std::vector<nlohmann::json>& values,
                                       const ModelConfig& model_cfg, const TrainConfig& base_train,
                                       const LcrConfig& base_lcr, const TrainData& data) {
  require(data.test && !data.test->empty(), "ablate: a test split is required");
  std::vector<AblationRow> rows;
  for (const auto& v : values) {
    TrainConfig cfg = base_train;
    LcrConfig lcr = base_lcr;
    apply_ablation(axis, v, cfg, lcr);
    const TrainResult res = train(model_cfg, cfg, lcr, data);
    const EvalReport& t = *res.record.test;
    rows.push_back({setting_label(v), t.micro_f1, t.macro_auc, t.micro_precision, t.micro_recall,
                    res.record.stop_epoch});
  }
  return rows;
}

inline std::string ablation_csv(const std::string& axis, const std::vector<AblationRow>& rows) {
  std::string out = axis + ",f1,auc,precision,recall,stop_epoch\n";
  for (const auto& r : rows)
    out += r.setting + "," + format_double(r.f1) + "," + format_double(r.auc) + "," + format_double(r.precision) +
           "," + format_double(r.recall) + "," + std::to_string(r.stop_epoch) + "\n";
  return out;
}

}  // namespace iaenet
