#pragma once

#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "elr/models.hpp"
#include "elr/optim.hpp"
#include "elr/schedule.hpp"
#include "elr/tasks.hpp"
#include "elr/theory.hpp"

namespace elr {

/// Everything a run needs, flat. The schema below maps each field to one
/// `key = value` line of a config file.
struct RunConfig {
  std::string experiment = "grok";  // grok | warmstart | theory
  std::optional<std::uint64_t> seed;
  std::string out_dir = "runs/default";

  // model
  std::string model = "transformer";  // transformer | mlp
  std::vector<std::size_t> mlp_hidden{256, 256};
  bool mlp_norm = false;
  bool mlp_bias = false;
  std::size_t d_model = 128;
  std::size_t num_heads = 4;
  std::size_t qkv_dim = 32;
  std::size_t ffn_hidden = 512;
  bool transformer_norm = true;

  // optimizer
  std::string optimizer = "adam";
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double weight_decay = 0.0;
  double scale_decay = 0.0;
  bool projection = false;
  std::uint64_t projection_interval = 1;
  std::vector<std::string> projection_roles{"weight"};
  std::string per_layer = "constant";

  // schedule
  std::string schedule = "constant";
  double lr = 1e-3;
  std::uint64_t warmup = 1000;
  std::uint64_t total = 10000;
  std::uint64_t hold = 0;
  double peak = 1e-2;
  double floor = 1e-4;
  std::uint64_t period = 1000;
  double lr_min = 1e-4;
  double lr_max = 1e-3;
  std::optional<std::uint64_t> stop_after_cycles;
  std::optional<double> terminal_lr;
  std::optional<std::uint64_t> cooldown;
  std::optional<double> rewarm_peak;
  std::size_t cusum_window = 200;
  double cusum_drift = 0.5;
  double cusum_threshold = 10.0;
  bool cusum_relative = true;

  // modular arithmetic
  int modulus = 23;
  double train_fraction = 0.2;
  std::string split = "unordered";

  // dense classification
  std::string data_source = "synthetic";  // synthetic | cifar10
  int classes = 8;
  std::size_t dim = 64;
  std::size_t samples_per_class = 500;
  std::size_t test_samples_per_class = 500;
  double spread = 1.0;
  double separation = 1.0;
  std::vector<std::string> cifar_train;
  std::vector<std::string> cifar_test;
  std::size_t cifar_records_per_file = 10000;
  double initial_fraction = 1.0;
  std::size_t phase_epochs = 70;

  // training loop
  std::uint64_t steps = 50000;     // grok budget
  std::size_t batch_size = 0;      // 0 = full batch
  std::uint64_t cadence = 100;
  std::size_t probe_size = 256;
  std::optional<double> stop_at_test_acc;

  // theory grid
  std::vector<double> theory_lrs{0.1, 0.5, 1.0};
  std::vector<double> theory_grad_stds{0.25, 0.5, 1.0};
  std::vector<double> theory_alphas{1.0, 2.0};
  std::size_t theory_input_dim = 512;
  std::size_t theory_width = 512;
  std::size_t theory_samples = 100000;
  double theory_rel_tol = 0.01;
  double theory_se_mult = 3.0;
};

// ---------------------------------------------------------------------------
// Value codecs

namespace config_detail {

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

inline std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  if (trim(s).empty()) return out;
  std::stringstream in(s);
  std::string item;
  while (std::getline(in, item, ',')) {
    item = trim(item);
    if (item.empty()) throw ConfigError("empty list element in '" + s + "'");
    out.push_back(item);
  }
  return out;
}

template <class T>
T parse_number(const std::string& key, const std::string& text) {
  T value{};
  const char* first = text.data();
  const char* last = first + text.size();
  auto [ptr, ec] = std::from_chars(first, last, value);
  if (ec != std::errc{} || ptr != last) throw ConfigError(key + ": cannot parse '" + text + "' as a number");
  return value;
}

inline double parse_double(const std::string& key, const std::string& text) {
  const double v = parse_number<double>(key, text);
  if (!std::isfinite(v)) throw ConfigError(key + ": value must be finite");
  return v;
}

inline bool parse_bool(const std::string& key, const std::string& text) {
  if (text == "true") return true;
  if (text == "false") return false;
  throw ConfigError(key + ": expected true or false, got '" + text + "'");
}

inline std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

template <class T>
std::string join(const std::vector<T>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ",";
    if constexpr (std::is_same_v<T, double>) {
      out += format_double(v[i]);
    } else if constexpr (std::is_same_v<T, std::string>) {
      out += v[i];
    } else {
      out += std::to_string(v[i]);
    }
  }
  return out;
}

struct Field {
  std::string key;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

template <class M>
Field field(std::string key, M RunConfig::*member) {
  using T = std::remove_cvref_t<decltype(std::declval<RunConfig>().*member)>;
  Field f;
  f.key = key;
  f.set = [key, member](RunConfig& c, const std::string& text) {
    if constexpr (std::is_same_v<T, std::string>) {
      c.*member = text;
    } else if constexpr (std::is_same_v<T, bool>) {
      c.*member = parse_bool(key, text);
    } else if constexpr (std::is_same_v<T, double>) {
      c.*member = parse_double(key, text);
    } else if constexpr (std::is_integral_v<T>) {
      c.*member = parse_number<T>(key, text);
    } else if constexpr (std::is_same_v<T, std::optional<double>>) {
      if (text == "none") c.*member = std::nullopt;
      else c.*member = parse_double(key, text);
    } else if constexpr (std::is_same_v<T, std::optional<std::uint64_t>>) {
      if (text == "none") c.*member = std::nullopt;
      else c.*member = parse_number<std::uint64_t>(key, text);
    } else if constexpr (std::is_same_v<T, std::vector<std::string>>) {
      c.*member = split_list(text);
    } else if constexpr (std::is_same_v<T, std::vector<double>>) {
      std::vector<double> v;
      for (const auto& s : split_list(text)) v.push_back(parse_double(key, s));
      c.*member = v;
    } else if constexpr (std::is_same_v<T, std::vector<std::size_t>>) {
      std::vector<std::size_t> v;
      for (const auto& s : split_list(text)) v.push_back(parse_number<std::size_t>(key, s));
      c.*member = v;
    } else {
      static_assert(sizeof(T) == 0, "unsupported config field type");
    }
  };
  f.get = [member](const RunConfig& c) -> std::string {
    const T& v = c.*member;
    if constexpr (std::is_same_v<T, std::string>) {
      return v;
    } else if constexpr (std::is_same_v<T, bool>) {
      return v ? "true" : "false";
    } else if constexpr (std::is_same_v<T, double>) {
      return format_double(v);
    } else if constexpr (std::is_integral_v<T>) {
      return std::to_string(v);
    } else if constexpr (std::is_same_v<T, std::optional<double>>) {
      return v ? format_double(*v) : "none";
    } else if constexpr (std::is_same_v<T, std::optional<std::uint64_t>>) {
      return v ? std::to_string(*v) : "none";
    } else {
      return join(v);
    }
  };
  return f;
}

}  // namespace config_detail

/// The config schema, in the order keys are echoed.
inline const std::vector<config_detail::Field>& config_schema() {
  using config_detail::field;
  using C = RunConfig;
  static const std::vector<config_detail::Field> schema = {
      field("experiment", &C::experiment),
      field("seed", &C::seed),
      field("out_dir", &C::out_dir),
      field("model", &C::model),
      field("mlp.hidden", &C::mlp_hidden),
      field("mlp.norm", &C::mlp_norm),
      field("mlp.bias", &C::mlp_bias),
      field("transformer.d_model", &C::d_model),
      field("transformer.num_heads", &C::num_heads),
      field("transformer.qkv_dim", &C::qkv_dim),
      field("transformer.ffn_hidden", &C::ffn_hidden),
      field("transformer.norm", &C::transformer_norm),
      field("optimizer", &C::optimizer),
      field("optimizer.beta1", &C::beta1),
      field("optimizer.beta2", &C::beta2),
      field("optimizer.eps", &C::adam_eps),
      field("decay.weight", &C::weight_decay),
      field("decay.scale", &C::scale_decay),
      field("projection", &C::projection),
      field("projection.interval", &C::projection_interval),
      field("projection.roles", &C::projection_roles),
      field("per_layer", &C::per_layer),
      field("schedule", &C::schedule),
      field("schedule.lr", &C::lr),
      field("schedule.warmup", &C::warmup),
      field("schedule.total", &C::total),
      field("schedule.hold", &C::hold),
      field("schedule.peak", &C::peak),
      field("schedule.floor", &C::floor),
      field("schedule.period", &C::period),
      field("schedule.lr_min", &C::lr_min),
      field("schedule.lr_max", &C::lr_max),
      field("schedule.stop_after_cycles", &C::stop_after_cycles),
      field("schedule.terminal_lr", &C::terminal_lr),
      field("schedule.cooldown", &C::cooldown),
      field("schedule.rewarm_peak", &C::rewarm_peak),
      field("cusum.window", &C::cusum_window),
      field("cusum.drift", &C::cusum_drift),
      field("cusum.threshold", &C::cusum_threshold),
      field("cusum.relative", &C::cusum_relative),
      field("task.modulus", &C::modulus),
      field("task.train_fraction", &C::train_fraction),
      field("task.split", &C::split),
      field("data.source", &C::data_source),
      field("data.classes", &C::classes),
      field("data.dim", &C::dim),
      field("data.samples_per_class", &C::samples_per_class),
      field("data.test_samples_per_class", &C::test_samples_per_class),
      field("data.spread", &C::spread),
      field("data.separation", &C::separation),
      field("data.cifar_train", &C::cifar_train),
      field("data.cifar_test", &C::cifar_test),
      field("data.cifar_records_per_file", &C::cifar_records_per_file),
      field("warmstart.initial_fraction", &C::initial_fraction),
      field("warmstart.phase_epochs", &C::phase_epochs),
      field("train.steps", &C::steps),
      field("train.batch_size", &C::batch_size),
      field("train.stop_at_test_acc", &C::stop_at_test_acc),
      field("metrics.cadence", &C::cadence),
      field("metrics.probe_size", &C::probe_size),
      field("theory.lrs", &C::theory_lrs),
      field("theory.grad_stds", &C::theory_grad_stds),
      field("theory.alphas", &C::theory_alphas),
      field("theory.input_dim", &C::theory_input_dim),
      field("theory.width", &C::theory_width),
      field("theory.samples", &C::theory_samples),
      field("theory.rel_tol", &C::theory_rel_tol),
      field("theory.se_mult", &C::theory_se_mult),
  };
  return schema;
}

/// Raw `key = value` pairs in file order. '#' starts a comment.
using KeyValues = std::vector<std::pair<std::string, std::string>>;

inline KeyValues parse_key_values(std::istream& in, const std::string& origin) {
  KeyValues out;
  std::string line;
  std::size_t lineno = 0;
  std::map<std::string, std::size_t> seen;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const std::string body = config_detail::trim(line);
    if (body.empty()) continue;
    const auto eq = body.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(origin + ":" + std::to_string(lineno) + ": expected 'key = value'");
    }
    std::string key = config_detail::trim(std::string_view(body).substr(0, eq));
    std::string value = config_detail::trim(std::string_view(body).substr(eq + 1));
    if (key.empty()) throw ConfigError(origin + ":" + std::to_string(lineno) + ": empty key");
    if (auto it = seen.find(key); it != seen.end()) {
      throw ConfigError(origin + ":" + std::to_string(lineno) + ": '" + key + "' already set on line " +
                        std::to_string(it->second));
    }
    seen[key] = lineno;
    out.emplace_back(std::move(key), std::move(value));
  }
  return out;
}

inline std::pair<std::string, std::string> parse_override(const std::string& text) {
  const auto eq = text.find('=');
  if (eq == std::string::npos) throw ConfigError("override '" + text + "' is not key=value");
  return {config_detail::trim(std::string_view(text).substr(0, eq)),
          config_detail::trim(std::string_view(text).substr(eq + 1))};
}

/// Applies pairs onto `cfg`; unknown keys are errors.
inline void apply_key_values(RunConfig& cfg, const KeyValues& kv) {
  const auto& schema = config_schema();
  for (const auto& [key, value] : kv) {
    auto it = std::find_if(schema.begin(), schema.end(), [&](const auto& f) { return f.key == key; });
    if (it == schema.end()) throw ConfigError("unknown config key '" + key + "'");
    it->set(cfg, value);
  }
}

/// Resolved configuration, one `key = value` per line in schema order.
inline std::string echo(const RunConfig& cfg) {
  std::string out;
  for (const auto& f : config_schema()) out += f.key + " = " + f.get(cfg) + "\n";
  return out;
}

/// 64-bit FNV-1a.
inline std::uint64_t fnv1a(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string config_hash(const RunConfig& cfg) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a(echo(cfg))));
  return buf;
}

// ---------------------------------------------------------------------------
// Typed views

inline OptimizerKind optimizer_kind(const RunConfig& c) {
  if (c.optimizer == "adam") return OptimizerKind::adam;
  if (c.optimizer == "sgd") return OptimizerKind::sgd;
  throw ConfigError("optimizer: expected adam or sgd, got '" + c.optimizer + "'");
}

inline ScheduleSpec schedule_spec(const RunConfig& c) {
  ScheduleSpec spec;
  const WarmupCosineSchedule wc{c.warmup, c.total, c.peak, c.floor, c.hold};
  if (c.schedule == "constant") {
    spec = ConstantSchedule{c.lr};
  } else if (c.schedule == "warmup_cosine") {
    spec = wc;
  } else if (c.schedule == "cyclic") {
    spec = CyclicSchedule{c.period, c.lr_min, c.lr_max, c.stop_after_cycles, c.terminal_lr};
  } else if (c.schedule == "adaptive") {
    spec = AdaptiveSchedule{wc, CusumSpec{c.cusum_window, c.cusum_drift, c.cusum_threshold, c.cusum_relative},
                            c.cooldown, c.rewarm_peak};
  } else {
    throw ConfigError("schedule: unknown kind '" + c.schedule + "'");
  }
  validate(spec);
  return spec;
}

inline ProjectionConfig projection_config(const RunConfig& c) {
  ProjectionConfig p;
  p.interval = c.projection_interval;
  if (p.interval == 0) throw ConfigError("projection.interval must be at least 1");
  p.roles.clear();
  for (const auto& r : c.projection_roles) {
    try {
      p.roles.insert(parse_role(r));
    } catch (const ContractError& e) {
      throw ConfigError(std::string("projection.roles: ") + e.what());
    }
  }
  return p;
}

inline DecayConfig decay_config(const RunConfig& c) {
  if (c.weight_decay < 0.0 || c.scale_decay < 0.0) throw ConfigError("decay rates must be non-negative");
  DecayConfig d;
  d.weight_decay = c.weight_decay;
  d.scale_decay = c.scale_decay;
  return d;
}

inline ModArithSpec modular_spec(const RunConfig& c) {
  ModArithSpec s{c.modulus, c.train_fraction, *c.seed, parse_split_mode(c.split)};
  validate(s);
  return s;
}

inline TheoryGrid theory_grid(const RunConfig& c) {
  TheoryGrid g;
  g.lrs = c.theory_lrs;
  g.grad_stds = c.theory_grad_stds;
  g.alphas = c.theory_alphas;
  g.input_dim = c.theory_input_dim;
  g.width = c.theory_width;
  g.samples = c.theory_samples;
  g.seed = *c.seed;
  g.rel_tol = c.theory_rel_tol;
  g.se_mult = c.theory_se_mult;
  if (g.lrs.empty() || g.grad_stds.empty() || g.alphas.empty()) throw ConfigError("theory grid axes must be non-empty");
  return g;
}

/// Checks cross-field consistency that the typed views do not cover.
inline void validate(const RunConfig& c) {
  if (!c.seed) throw ConfigError("seed is mandatory");
  if (c.experiment != "grok" && c.experiment != "warmstart" && c.experiment != "theory") {
    throw ConfigError("experiment: expected grok, warmstart or theory, got '" + c.experiment + "'");
  }
  if (c.experiment == "theory") {
    theory_grid(c);
    return;
  }
  optimizer_kind(c);
  schedule_spec(c);
  projection_config(c);
  decay_config(c);
  parse_per_layer_kind(c.per_layer);
  if (c.cadence == 0) throw ConfigError("metrics.cadence must be at least 1");
  if (c.probe_size == 0) throw ConfigError("metrics.probe_size must be at least 1");
  if (c.stop_at_test_acc && !(*c.stop_at_test_acc > 0.0 && *c.stop_at_test_acc <= 1.0)) {
    throw ConfigError("train.stop_at_test_acc must lie in (0, 1]");
  }
  if (c.experiment == "grok") {
    if (c.model != "transformer") throw ConfigError("grok experiments use model = transformer");
    modular_spec(c);
  } else {
    if (c.model != "mlp") throw ConfigError("warmstart experiments use model = mlp");
    if (c.mlp_hidden.empty()) throw ConfigError("mlp.hidden must list at least one width");
    if (c.data_source != "synthetic" && c.data_source != "cifar10") {
      throw ConfigError("data.source: expected synthetic or cifar10, got '" + c.data_source + "'");
    }
    if (c.data_source == "cifar10" && (c.cifar_train.empty() || c.cifar_test.empty())) {
      throw ConfigError("data.cifar_train and data.cifar_test are required for cifar10");
    }
    if (!(c.initial_fraction > 0.0 && c.initial_fraction <= 1.0)) {
      throw ConfigError("warmstart.initial_fraction must lie in (0, 1]");
    }
    if (c.phase_epochs == 0) throw ConfigError("warmstart.phase_epochs must be positive");
  }
}

/// Reads a config file, applies overrides, and validates the result.
inline RunConfig load_config(const std::filesystem::path& path, const std::vector<std::string>& overrides = {},
                             std::optional<std::uint64_t> seed = std::nullopt) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  RunConfig cfg;
  apply_key_values(cfg, parse_key_values(in, path.string()));
  KeyValues extra;
  for (const auto& o : overrides) extra.push_back(parse_override(o));
  apply_key_values(cfg, extra);
  if (seed) cfg.seed = seed;
  validate(cfg);
  return cfg;
}

}  // namespace elr
