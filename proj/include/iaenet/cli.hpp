// Command layer behind the `iaenet` executable. Each command reads one JSON
// config, writes its artifacts into an output directory and leaves a single
// manifest.json (or error.json on failure) next to them.
#pragma once

#include <algorithm>
#include <chrono>
#include <ctime>
#include <filesystem>
#include <functional>
#include <iomanip>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "iaenet/cohort_io.hpp"
#include "iaenet/json_io.hpp"
#include "iaenet/labels.hpp"
#include "iaenet/loss.hpp"
#include "iaenet/model.hpp"
#include "iaenet/pipeline.hpp"
#include "iaenet/synthgen.hpp"
#include "iaenet/trainer.hpp"

namespace iaenet::cli {

namespace fs = std::filesystem;

inline constexpr const char* kVersion = "0.1.0";
inline constexpr int kManifestVersion = 1;
inline const std::vector<std::string> kCommands = {"synth", "prepare", "train", "eval", "gradplot", "ablate", "cooc"};

struct Options {
  std::string command;
  std::string config_path;  // empty: all defaults
  std::string out_dir;
  std::optional<std::uint64_t> seed;
  std::optional<int> lead_minutes;
};

/// Content hash of a file, or of a directory as the sorted list of
/// (relative path, file hash) pairs.
inline std::string hash_path(const fs::path& p) {
  if (fs::is_regular_file(p)) return hex64(fnv1a64(read_text(p)));
  require(fs::is_directory(p), "cannot hash missing path " + p.string());
  std::vector<std::string> lines;
  for (const auto& e : fs::recursive_directory_iterator(p))
    if (e.is_regular_file()) lines.push_back(fs::relative(e.path(), p).generic_string() + ":" + hash_path(e.path()));
  std::sort(lines.begin(), lines.end());
  std::string all;
  for (const auto& l : lines) all += l + "\n";
  return hex64(fnv1a64(all));
}

inline std::string utc_now() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::ostringstream os;
  os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return os.str();
}

/// State shared by one command invocation.
struct Context {
  Options opts;
  nlohmann::json config;  // effective config after overrides
  fs::path config_dir;
  fs::path out;
  nlohmann::json inputs = nlohmann::json::array();
  std::vector<std::string> outputs;  // relative to out
  std::optional<std::uint64_t> seed;
  std::ostream* log = nullptr;

  fs::path resolve(const std::string& p) const {
    const fs::path path(p);
    return path.is_absolute() ? path : config_dir / path;
  }

  fs::path input(const std::string& key, const std::string& p) {
    const fs::path path = resolve(p);
    require(fs::exists(path), key + ": input not found: " + path.string());
    inputs.push_back({{"role", key}, {"path", path.string()}, {"hash", hash_path(path)}});
    return path;
  }

  std::string required_string(const std::string& key) const {
    require_config(config.contains(key) && config.at(key).is_string(),
                   opts.command + ": config key '" + key + "' (string) is required");
    return config.at(key).get<std::string>();
  }

  template <class T>
  T section(const std::string& key) const {
    return T::from_json(config.contains(key) ? config.at(key) : nlohmann::json::object());
  }

  void emit(const std::string& rel) { outputs.push_back(rel); }
  void emit_json(const std::string& rel, const nlohmann::json& j) {
    write_json(out / rel, j);
    emit(rel);
  }
  void emit_text(const std::string& rel, const std::string& text) {
    write_text(out / rel, text);
    emit(rel);
  }
};

// Per-command config keys. Unknown keys are rejected before anything runs.
inline const std::map<std::string, std::vector<std::string_view>> kConfigKeys = {
    {"synth", {}},  // checked by SynthConfig itself
    {"prepare", {}},
    {"cooc", {"data", "lead_minutes"}},
    {"train", {"data", "model", "train", "lcr", "co_matrix"}},
    {"eval", {"data", "checkpoint", "split", "threshold", "lead_minutes"}},
    {"gradplot", {"z_min", "z_max", "points", "positive_fraction", "reference", "lcr", "partner_prob", "co_value"}},
    {"ablate", {"data", "model", "train", "lcr", "co_matrix", "axis", "values"}},
};

inline void check_command_keys(const Context& ctx) {
  const auto& keys = kConfigKeys.at(ctx.opts.command);
  if (keys.empty()) return;
  require_config(ctx.config.is_object(), ctx.opts.command + ": config must be a JSON object");
  for (const auto& [key, _] : ctx.config.items())
    require_config(std::find(keys.begin(), keys.end(), key) != keys.end(),
                   ctx.opts.command + ": unknown key '" + key + "'");
}

inline int lead_of(const Context& ctx, int fallback) {
  int lead = fallback;
  read_opt(ctx.config, "lead_minutes", lead, ctx.opts.command);
  if (ctx.opts.lead_minutes) lead = *ctx.opts.lead_minutes;
  lead_steps_for_minutes(lead);
  return lead;
}

inline void run_synth(Context& ctx) {
  nlohmann::json j = ctx.config;
  if (ctx.opts.seed) j["seed"] = *ctx.opts.seed;
  const SynthConfig cfg = SynthConfig::from_json(j);
  ctx.config = cfg.to_json();
  ctx.seed = cfg.seed;
  const auto cases = generate_cohort(cfg);
  write_cohort(ctx.out, cases);
  for (const auto& c : cases) ctx.emit("cases/" + c.case_id + ".csv");
  ctx.emit("cohort.json");
  *ctx.log << "synth: " << cases.size() << " cases -> " << ctx.out.string() << "\n";
}

inline void run_prepare(Context& ctx) {
  PrepareConfig cfg = PrepareConfig::from_json(ctx.config);
  require_config(!cfg.cohort.empty(), "prepare: config key 'cohort' is required");
  if (ctx.opts.seed) cfg.seed = *ctx.opts.seed;
  if (ctx.opts.lead_minutes) cfg.lead_minutes = {*ctx.opts.lead_minutes};
  cfg.validate();
  ctx.seed = cfg.seed;
  const fs::path cohort = ctx.input("cohort", cfg.cohort);
  ctx.config = cfg.to_json();
  for (const auto& rel : prepare_cohort(read_cohort(cohort), cfg, ctx.out)) ctx.emit(rel);
  for (int m : cfg.lead_minutes) {
    const auto index = read_json(ctx.out / ("lead_" + std::to_string(m)) / "index.json");
    *ctx.log << "prepare: lead " << m << " min (" << index.at("lead_steps").get<std::size_t>() << " steps):";
    for (const char* s : kSplitNames) *ctx.log << " " << s << "=" << index.at("splits").at(s).at("count").get<std::size_t>();
    *ctx.log << "\n";
  }
}

inline void run_cooc(Context& ctx) {
  const fs::path data = ctx.input("data", ctx.required_string("data"));
  const int lead = lead_of(ctx, 5);
  ctx.config["lead_minutes"] = lead;
  const Dataset tr = load_split(data, lead, "train");
  require(!tr.empty(), "cooc: training split has no windows");
  ctx.emit_json("co_matrix.json", co_matrix_to_json(co_occurrence(tr.labels, tr.c)));
  *ctx.log << "cooc: " << tr.size() << " training windows\n";
}

struct TrainInputs {
  ModelConfig model;
  TrainConfig train;
  LcrConfig lcr;
  Dataset tr, va, te;
  std::optional<std::vector<double>> co;
  TrainData data() const {
    return {&tr, va.empty() ? nullptr : &va, te.empty() ? nullptr : &te, co};
  }
};

inline TrainInputs load_train_inputs(Context& ctx) {
  TrainInputs in;
  in.model = ctx.section<ModelConfig>("model");
  in.train = ctx.section<TrainConfig>("train");
  in.lcr = ctx.section<LcrConfig>("lcr");
  if (ctx.opts.seed) in.train.seed = *ctx.opts.seed;
  if (ctx.opts.lead_minutes) in.train.lead_minutes = *ctx.opts.lead_minutes;
  in.train.validate();
  ctx.seed = in.train.seed;
  ctx.config["model"] = in.model.to_json();
  ctx.config["train"] = in.train.to_json();
  ctx.config["lcr"] = in.lcr.to_json();
  const fs::path data = ctx.input("data", ctx.required_string("data"));
  in.tr = load_split(data, in.train.lead_minutes, "train");
  in.va = load_split(data, in.train.lead_minutes, "val");
  in.te = load_split(data, in.train.lead_minutes, "test");
  if (ctx.config.contains("co_matrix")) {
    const fs::path co = ctx.input("co_matrix", ctx.required_string("co_matrix"));
    in.co = co_matrix_from_json(read_json(co)).values();
  }
  return in;
}

inline void print_report(std::ostream& os, const EvalReport& r) {
  const auto old = os.flags();
  os << std::fixed << std::setprecision(4);
  os << "  n=" << r.n_samples << " thr=" << r.threshold << "  micro F1 " << r.micro_f1 << "  P "
     << r.micro_precision << "  R " << r.micro_recall << "  acc " << r.micro_accuracy << "  hamming " << r.hamming
     << "  macro AUC ";
  if (std::isfinite(r.macro_auc)) os << r.macro_auc;
  else os << "n/a";
  os << "\n";
  for (std::size_t c = 0; c < r.per_event.size(); ++c) {
    os << "  " << std::left << std::setw(14) << (r.per_event.size() == kEvents ? kEventNames[c] : "class") << std::right
       << " F1 " << r.per_event[c].f1 << "  AUC ";
    if (r.per_event[c].auc) os << *r.per_event[c].auc;
    else os << "n/a";
    os << "\n";
  }
  os.flags(old);
}

inline void run_train(Context& ctx) {
  const TrainInputs in = load_train_inputs(ctx);
  *ctx.log << "train: " << in.tr.size() << " train / " << in.va.size() << " val / " << in.te.size()
           << " test windows, " << Model<float>(in.model, 0).weights().parameter_count() << " parameters\n";
  const TrainResult res = train(in.model, in.train, in.lcr, in.data(), (ctx.out / "checkpoint.bin").string());
  ctx.emit("checkpoint.bin");
  nlohmann::json record = res.record.to_json();
  record["checkpoint"] = "checkpoint.bin";
  ctx.emit_json("run_record.json", record);
  for (const auto& e : res.record.epochs)
    *ctx.log << "  epoch " << e.epoch << " loss " << e.train_loss << " val_bce " << e.val_bce << " val_f1 " << e.val_f1
             << "\n";
  *ctx.log << "  best epoch " << res.record.best_epoch << ", " << res.record.steps << " steps\n";
  if (res.record.test) {
    ctx.emit_json("eval_report.json", res.record.test->to_json());
    print_report(*ctx.log, *res.record.test);
  }
}

inline void run_eval(Context& ctx) {
  const fs::path data = ctx.input("data", ctx.required_string("data"));
  const fs::path ckpt = ctx.input("checkpoint", ctx.required_string("checkpoint"));
  std::string split = "test";
  double threshold = 0.5;
  read_opt(ctx.config, "split", split, "eval");
  read_opt(ctx.config, "threshold", threshold, "eval");
  require_config(threshold > 0 && threshold < 1, "eval.threshold must be in (0, 1)");
  require_config(split == "train" || split == "val" || split == "test", "eval.split must be train, val or test");
  const int lead = lead_of(ctx, 5);
  ctx.config["split"] = split;
  ctx.config["threshold"] = threshold;
  ctx.config["lead_minutes"] = lead;
  const Model<float> model = load_checkpoint<float>(ckpt.string());
  const Dataset ds = load_split(data, lead, split);
  require(!ds.empty(), "eval: split '" + split + "' has no windows");
  const EvalReport r = evaluate_model(model, ds, threshold);
  ctx.emit_json("eval_report.json", r.to_json());
  *ctx.log << "eval: " << split << " split, lead " << lead << " min\n";
  print_report(*ctx.log, r);
}

inline std::string curve_csv(std::span<const double> z, std::span<const double> g) {
  std::string out = "z,grad\n";
  for (std::size_t i = 0; i < z.size(); ++i) out += format_double(z[i]) + "," + format_double(g[i]) + "\n";
  return out;
}

inline void run_gradplot(Context& ctx) {
  double z_min = -10, z_max = 10, positive_fraction = 0.25, partner_prob = 0.9, co_value = 0.8;
  std::size_t points = 201;
  read_opt(ctx.config, "z_min", z_min, "gradplot");
  read_opt(ctx.config, "z_max", z_max, "gradplot");
  read_opt(ctx.config, "points", points, "gradplot");
  read_opt(ctx.config, "positive_fraction", positive_fraction, "gradplot");
  read_opt(ctx.config, "partner_prob", partner_prob, "gradplot");
  read_opt(ctx.config, "co_value", co_value, "gradplot");
  require_config(z_max > z_min && points >= 2, "gradplot: need z_max > z_min and points >= 2");
  require_config(positive_fraction > 0 && positive_fraction < 1, "gradplot.positive_fraction must be in (0, 1)");
  require_config(partner_prob > 0 && partner_prob < 1, "gradplot.partner_prob must be in (0, 1)");
  const ReferenceParams ref = ctx.section<ReferenceParams>("reference");
  const LcrConfig lcr = ctx.section<LcrConfig>("lcr");
  ctx.config = {{"z_min", z_min},       {"z_max", z_max},         {"points", points},
                {"positive_fraction", positive_fraction},       {"partner_prob", partner_prob},
                {"co_value", co_value}, {"reference", ref.to_json()}, {"lcr", lcr.to_json()}};

  std::vector<double> z(points);
  for (std::size_t i = 0; i < points; ++i)
    z[i] = z_min + (z_max - z_min) * static_cast<double>(i) / static_cast<double>(points - 1);
  for (int target : {0, 1}) {
    const std::string suffix = "_t" + std::to_string(target) + ".csv";
    for (LossKind k : {LossKind::bce, LossKind::focal, LossKind::asl})
      ctx.emit_text("grad_" + loss_kind_name(k) + suffix, curve_csv(z, gradient_curve(k, target, z, ref)));
    for (Scheme s : {Scheme::inverse, Scheme::log_inverse, Scheme::sqrt_inverse, Scheme::cubic_inverse}) {
      LcrConfig c = lcr;
      c.scheme = s;
      ctx.emit_text("grad_lcr_" + scheme_name(s) + suffix, curve_csv(z, gradient_curve(c, target, z, positive_fraction)));
    }
  }
  ctx.emit_text("co_probe.csv", curve_csv(z, co_probe_curve(z, partner_prob, co_value, lcr.lambda, lcr.reg_space)));
  *ctx.log << "gradplot: " << ctx.outputs.size() << " curves over [" << z_min << ", " << z_max << "]\n";
}

inline void run_ablate(Context& ctx) {
  const std::string axis_name = ctx.required_string("axis");
  const AblationAxis axis = ablation_axis_from_name(axis_name);
  std::vector<nlohmann::json> values = default_ablation_values(axis);
  if (ctx.config.contains("values")) {
    require_config(ctx.config.at("values").is_array() && !ctx.config.at("values").empty(),
                   "ablate.values must be a non-empty array");
    values = ctx.config.at("values").get<std::vector<nlohmann::json>>();
  }
  ctx.config["values"] = values;
  const TrainInputs in = load_train_inputs(ctx);
  const auto rows = ablate(axis, values, in.model, in.train, in.lcr, in.data());
  ctx.emit_text("ablation.csv", ablation_csv(axis_name, rows));
  nlohmann::json j = {{"axis", axis_name}, {"rows", nlohmann::json::array()}};
  for (const auto& r : rows)
    j["rows"].push_back({{"setting", r.setting}, {"f1", r.f1}, {"auc", std::isfinite(r.auc) ? nlohmann::json(r.auc) : nlohmann::json(nullptr)},
                         {"precision", r.precision}, {"recall", r.recall}, {"stop_epoch", r.stop_epoch}});
  ctx.emit_json("ablation.json", j);
  *ctx.log << ablation_csv(axis_name, rows);
}

inline const std::map<std::string, std::function<void(Context&)>>& handlers() {
  static const std::map<std::string, std::function<void(Context&)>> h = {
      {"synth", run_synth}, {"prepare", run_prepare}, {"cooc", run_cooc},   {"train", run_train},
      {"eval", run_eval},   {"gradplot", run_gradplot}, {"ablate", run_ablate}};
  return h;
}

/// Hash over output names and contents; equal across reruns with identical
/// config and inputs.
inline std::string outputs_digest(const nlohmann::json& outputs) {
  std::string all;
  for (const auto& o : outputs) all += o.at("path").get<std::string>() + ":" + o.at("hash").get<std::string>() + "\n";
  return hex64(fnv1a64(all));
}

/// Runs one command. Returns 0 on success, 2 for config errors and 1 for
/// runtime failures; failures leave error.json in the output directory.
inline int run(const Options& opts, std::ostream& log) {
  const std::string started = utc_now();
  Context ctx;
  ctx.opts = opts;
  ctx.log = &log;
  ctx.out = opts.out_dir;
  int status = 0;
  std::string kind, message;
  try {
    require_config(handlers().count(opts.command) == 1, "unknown command '" + opts.command + "'");
    require_config(!opts.out_dir.empty(), "--out is required");
    ctx.config = nlohmann::json::object();
    if (!opts.config_path.empty()) {
      require_config(fs::exists(opts.config_path), "config not found: " + opts.config_path);
      try {
        ctx.config = nlohmann::json::parse(read_text(opts.config_path));
      } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError(std::string("config is not valid JSON: ") + e.what());
      }
      ctx.config_dir = fs::absolute(opts.config_path).parent_path();
    } else {
      ctx.config_dir = fs::current_path();
    }
    require_config(ctx.config.is_object(), "config must be a JSON object");
    check_command_keys(ctx);
    fs::create_directories(ctx.out);
    fs::remove(ctx.out / "error.json");
    handlers().at(opts.command)(ctx);
  } catch (const ConfigError& e) {
    status = 2, kind = "config", message = e.what();
  } catch (const nlohmann::json::exception& e) {
    status = 2, kind = "config", message = e.what();
  } catch (const std::exception& e) {
    status = 1, kind = "runtime", message = e.what();
  }

  if (status != 0) {
    log << "error: " << message << "\n";
    if (!opts.out_dir.empty()) {
      std::error_code ec;
      fs::create_directories(ctx.out, ec);
      if (!ec)
        write_json(ctx.out / "error.json",
                   {{"command", opts.command}, {"exit_code", status}, {"kind", kind}, {"message", message},
                    {"timestamp", utc_now()}});
    }
    return status;
  }

  nlohmann::json outputs = nlohmann::json::array();
  for (const auto& rel : ctx.outputs) outputs.push_back({{"path", rel}, {"hash", hash_path(ctx.out / rel)}});
  const nlohmann::json manifest = {
      {"command", opts.command},
      {"config_hash", hex64(fnv1a64(ctx.config.dump()))},
      {"config", ctx.config},
      {"config_path", opts.config_path},
      {"inputs", ctx.inputs},
      {"outputs", outputs},
      {"outputs_digest", outputs_digest(outputs)},
      {"seed", ctx.seed ? nlohmann::json(*ctx.seed) : nlohmann::json(nullptr)},
      {"versions", {{"iaenet", kVersion}, {"manifest", kManifestVersion}, {"shard", kShardVersion}, {"checkpoint", kCheckpointVersion}}},
      {"started_at", started},
      {"finished_at", utc_now()}};
  write_json(ctx.out / "manifest.json", manifest);
  return 0;
}

}  // namespace iaenet::cli
