#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <memory>
#include <nlohmann/json.hpp>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "elr/config.hpp"
#include "elr/logging.hpp"
#include "elr/metrics.hpp"

namespace elr {

inline constexpr const char* kVersion = "elrlab 0.1.0";

// ---------------------------------------------------------------------------
// Problems: a model plus the data it is trained and evaluated on

enum class Subset { train, test };

class Problem {
 public:
  virtual ~Problem() = default;
  virtual const ModelSpec& model() const = 0;
  virtual std::size_t size(Subset s) const = 0;
  virtual int label(Subset s, std::size_t row) const = 0;
  virtual ForwardOutput forward(Tape& tape, const NamedVars& vars, Subset s, std::span<const std::size_t> rows) const = 0;
};

class SequenceProblem final : public Problem {
 public:
  SequenceProblem(TransformerSpec spec, DatasetSplit data) : spec_(spec), model_(spec), data_(std::move(data)) {}

  const ModelSpec& model() const override { return model_; }
  std::size_t size(Subset s) const override { return set(s).size(); }
  int label(Subset s, std::size_t row) const override { return set(s).labels.at(row); }
  ForwardOutput forward(Tape& tape, const NamedVars& vars, Subset s, std::span<const std::size_t> rows) const override {
    std::vector<std::vector<int>> seqs;
    seqs.reserve(rows.size());
    for (auto r : rows) seqs.push_back(set(s).sequences.at(r));
    return transformer_forward(tape, vars, spec_, seqs);
  }
  const DatasetSplit& data() const { return data_; }

 private:
  const SequenceSet& set(Subset s) const { return s == Subset::train ? data_.train : data_.test; }
  TransformerSpec spec_;
  ModelSpec model_;
  DatasetSplit data_;
};

class DenseProblem final : public Problem {
 public:
  DenseProblem(MlpSpec spec, LabeledData train, LabeledData test)
      : spec_(spec), model_(spec), train_(std::move(train)), test_(std::move(test)) {}

  const ModelSpec& model() const override { return model_; }
  std::size_t size(Subset s) const override { return set(s).size(); }
  int label(Subset s, std::size_t row) const override { return set(s).labels.at(row); }
  ForwardOutput forward(Tape& tape, const NamedVars& vars, Subset s, std::span<const std::size_t> rows) const override {
    const LabeledData& d = set(s);
    Tensor x({rows.size(), d.inputs.cols()});
    for (std::size_t i = 0; i < rows.size(); ++i) {
      auto src = d.inputs.row(rows[i]);
      std::copy(src.begin(), src.end(), x.row(i).begin());
    }
    return mlp_forward(tape, vars, spec_, x);
  }

 private:
  const LabeledData& set(Subset s) const { return s == Subset::train ? train_ : test_; }
  MlpSpec spec_;
  ModelSpec model_;
  LabeledData train_, test_;
};

inline std::unique_ptr<Problem> make_problem(const RunConfig& cfg) {
  if (cfg.experiment == "grok") {
    const ModArithSpec task = modular_spec(cfg);
    TransformerSpec spec;
    spec.modulus = static_cast<std::size_t>(cfg.modulus);
    spec.d_model = cfg.d_model;
    spec.num_heads = cfg.num_heads;
    spec.qkv_dim = cfg.qkv_dim;
    spec.ffn_hidden = cfg.ffn_hidden;
    spec.use_norm = cfg.transformer_norm;
    validate(spec);
    return std::make_unique<SequenceProblem>(spec, gen_modular_dataset(task));
  }
  if (cfg.experiment == "warmstart") {
    LabeledData train, test;
    if (cfg.data_source == "synthetic") {
      // test draws use a different stream of the same clusters
      train = gen_synthetic_classification(cfg.classes, cfg.dim, cfg.samples_per_class, cfg.spread, *cfg.seed,
                                           cfg.separation);
      test = gen_synthetic_classification(cfg.classes, cfg.dim, cfg.test_samples_per_class, cfg.spread,
                                          *cfg.seed ^ 0x5DEECE66DULL, cfg.separation);
    } else {
      auto paths = [](const std::vector<std::string>& v) {
        return std::vector<std::filesystem::path>(v.begin(), v.end());
      };
      train = load_cifar10({paths(cfg.cifar_train), cfg.cifar_records_per_file});
      test = load_cifar10({paths(cfg.cifar_test), cfg.cifar_records_per_file});
    }
    const int classes = cfg.data_source == "synthetic" ? cfg.classes : 10;
    MlpSpec spec{train.inputs.cols(), cfg.mlp_hidden, static_cast<std::size_t>(classes), cfg.mlp_norm, cfg.mlp_bias};
    validate(spec);
    return std::make_unique<DenseProblem>(spec, std::move(train), std::move(test));
  }
  throw ConfigError("experiment '" + cfg.experiment + "' has no training loop");
}

// ---------------------------------------------------------------------------
// Evaluation

struct Evaluation {
  double loss = 0.0;
  double accuracy = 0.0;
};

inline NamedVars bind_constants(Tape& tape, const Parameters& params) {
  NamedVars vars;
  for (const auto& [name, e] : params.entries) vars.emplace(name, tape.constant(e.value));
  return vars;
}

inline std::vector<int> labels_for(const Problem& p, Subset s, std::span<const std::size_t> rows) {
  std::vector<int> out;
  out.reserve(rows.size());
  for (auto r : rows) out.push_back(p.label(s, r));
  return out;
}

inline double accuracy(const Tensor& logits, std::span<const int> labels) {
  std::size_t right = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    auto row = logits.row(i);
    const auto best = std::max_element(row.begin(), row.end()) - row.begin();
    right += best == labels[i];
  }
  return static_cast<double>(right) / static_cast<double>(labels.size());
}

inline Evaluation evaluate(const Problem& p, const Parameters& params, Subset s, std::size_t chunk = 1024) {
  const std::size_t n = p.size(s);
  if (n == 0) return {kMissing, kMissing};
  double loss = 0.0, acc = 0.0;
  for (std::size_t start = 0; start < n; start += chunk) {
    const std::size_t end = std::min(n, start + chunk);
    std::vector<std::size_t> rows(end - start);
    std::iota(rows.begin(), rows.end(), start);
    const auto labels = labels_for(p, s, rows);
    Tape tape;
    ForwardOutput out = p.forward(tape, bind_constants(tape, params), s, rows);
    const double w = static_cast<double>(rows.size());
    loss += w * cross_entropy(out.logits, labels).value().item();
    acc += w * accuracy(out.logits.value(), labels);
  }
  return {loss / static_cast<double>(n), acc / static_cast<double>(n)};
}

// ---------------------------------------------------------------------------
// Run directory artifacts

inline std::string utc_timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

inline void write_json(const std::filesystem::path& path, const nlohmann::json& j) {
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp);
    out << j.dump(2) << '\n';
    if (!out) throw IoError("write failed for " + tmp);
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot move " + tmp + " to " + path.string() + ": " + ec.message());
}

inline nlohmann::json config_json(const RunConfig& cfg) {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& f : config_schema()) j[f.key] = f.get(cfg);
  return j;
}

/// Written with status "pending" before the first step, rewritten at the end.
class RunManifest {
 public:
  RunManifest(std::filesystem::path path, const RunConfig& cfg) : path_(std::move(path)) {
    doc_["config_hash"] = config_hash(cfg);
    doc_["config"] = config_json(cfg);
    doc_["version"] = kVersion;
    doc_["started_at"] = utc_timestamp();
    doc_["finished_at"] = nullptr;
    doc_["status"] = "pending";
    write_json(path_, doc_);
  }

  void finish(const std::string& status, const nlohmann::json& extra = nlohmann::json::object()) {
    doc_["status"] = status;
    doc_["finished_at"] = utc_timestamp();
    for (const auto& [k, v] : extra.items()) doc_[k] = v;
    write_json(path_, doc_);
  }

 private:
  std::filesystem::path path_;
  nlohmann::json doc_;
};

inline nlohmann::json params_to_json(const Parameters& params) {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [name, e] : params.entries) {
    j[name] = {{"role", role_name(e.role)},
               {"shape", e.value.shape()},
               {"values", std::vector<double>(e.value.values().begin(), e.value.values().end())}};
  }
  return j;
}

inline Parameters params_from_json(const nlohmann::json& j) {
  Parameters p;
  for (const auto& [name, v] : j.items()) {
    p.add(name, Tensor(v.at("shape").get<Shape>(), v.at("values").get<std::vector<double>>()),
          parse_role(v.at("role").get<std::string>()));
  }
  return p;
}

// ---------------------------------------------------------------------------
// The training loop

struct RunResult {
  Parameters params;
  std::filesystem::path out_dir;
  std::filesystem::path log_path;
  std::string status;  // completed | stopped_early | diverged
  std::uint64_t steps = 0;
  std::vector<MetricRecord> records;
};

/// Optional hooks for tests: observe the state right after each phase of a step.
struct LoopObserver {
  std::function<void(std::uint64_t step, const Parameters&)> after_update;
  std::function<void(std::uint64_t step, const Parameters&)> after_projection;
  std::function<void(std::uint64_t step, bool triggered)> after_trigger_check;
};

namespace runner_detail {

struct Phase {
  std::vector<std::size_t> rows;
  std::uint64_t steps = 0;
  std::size_t batch = 0;
};

/// Steps are either a fixed budget (grok) or whole epochs per phase (warmstart).
inline std::vector<Phase> plan_phases(const RunConfig& cfg, const Problem& p) {
  const std::size_t n = p.size(Subset::train);
  if (n == 0) throw ConfigError("training set is empty");
  auto epoch_steps = [&](std::size_t rows, std::size_t batch) { return (rows + batch - 1) / batch; };
  std::vector<Phase> phases;
  if (cfg.experiment == "grok") {
    Phase ph;
    ph.rows.resize(n);
    std::iota(ph.rows.begin(), ph.rows.end(), std::size_t{0});
    ph.batch = cfg.batch_size == 0 ? n : std::min(cfg.batch_size, n);
    ph.steps = cfg.steps;
    phases.push_back(std::move(ph));
    return phases;
  }
  const auto stream = warm_start_stream({cfg.initial_fraction, cfg.phase_epochs, *cfg.seed}, n);
  for (const auto& s : stream) {
    Phase ph;
    ph.rows = s.rows;
    ph.batch = cfg.batch_size == 0 ? ph.rows.size() : std::min(cfg.batch_size, ph.rows.size());
    ph.steps = s.epochs * epoch_steps(ph.rows.size(), ph.batch);
    phases.push_back(std::move(ph));
  }
  return phases;
}

inline std::vector<std::string> tracked_layers(const ModelSpec& spec) {
  if (const auto* m = std::get_if<MlpSpec>(&spec)) {
    std::vector<std::string> out;
    for (std::size_t i = 0; i < m->hidden_dims.size(); ++i) out.push_back(mlp_layer(i));
    return out;
  }
  return {"mlp"};
}

struct ProbeView {
  std::map<std::string, Tensor> features;
  std::map<std::string, ActivationPattern> patterns;
  double dead = 0.0;
  double effective_rank = kMissing;
};

inline ProbeView probe(const Problem& p, const Parameters& params, std::span<const std::size_t> rows) {
  Tape tape;
  ForwardOutput out = p.forward(tape, bind_constants(tape, params), Subset::test, rows);
  ProbeView v;
  for (const auto& [layer, pre] : out.preactivations) {
    v.features[layer] = out.layer_features.at(layer);
    v.patterns[layer] = activation_pattern(pre);
    v.dead += static_cast<double>(dead_units(v.patterns[layer]));
  }
  if (!out.attention_output.empty() && out.attention_output.frobenius_norm() > 0.0) {
    v.effective_rank = effective_rank(out.attention_output);
  }
  return v;
}

}  // namespace runner_detail

/// Runs one experiment. Each step performs the optimizer update, then the
/// norm projection, then feeds the loss to the schedule (which may re-warm).
/// A record is logged at step 0, every `cadence` steps and at the end.
inline RunResult train_loop(const RunConfig& cfg, const LoopObserver& observer = {}) {
  validate(cfg);
  const std::filesystem::path dir = cfg.out_dir;
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());

  const auto problem = make_problem(cfg);
  const std::uint64_t seed = *cfg.seed;
  Parameters params = init_params(problem->model(), seed);
  const OptimizerKind kind = optimizer_kind(cfg);
  OptimizerState opt;
  opt.kind = kind;
  opt.beta1 = cfg.beta1;
  opt.beta2 = cfg.beta2;
  opt.eps = cfg.adam_eps;
  const DecayConfig decay = decay_config(cfg);
  const ProjectionConfig projection = projection_config(cfg);
  const ScheduleSpec schedule = schedule_spec(cfg);
  ScheduleState sched;
  const LrMultipliers multipliers = per_layer_multipliers(parse_per_layer_kind(cfg.per_layer), params);
  const auto phases = runner_detail::plan_phases(cfg, *problem);

  // probe rows: a seeded draw from the test set, fixed for the whole run
  std::vector<std::size_t> probe_rows(problem->size(Subset::test));
  std::iota(probe_rows.begin(), probe_rows.end(), std::size_t{0});
  std::mt19937_64 data_rng(seed ^ 0xA5A5A5A5ULL);
  std::shuffle(probe_rows.begin(), probe_rows.end(), data_rng);
  probe_rows.resize(std::min(probe_rows.size(), cfg.probe_size));
  std::sort(probe_rows.begin(), probe_rows.end());

  MetricSchema schema;
  for (const auto& [name, e] : params.entries) schema.params.push_back(name);
  schema.layers = runner_detail::tracked_layers(problem->model());

  RunManifest manifest(dir / "manifest.json", cfg);
  MetricLogger logger(dir, schema);

  RunResult result;
  result.out_dir = dir;
  result.log_path = logger.csv_path();

  double lr = lr_at(schedule, sched);
  std::uint64_t step = 0, phase_samples = 0, epoch_base = 0, triggers = 0;
  std::uint64_t phase_index = 0;
  std::size_t train_size = phases.front().rows.size();
  UpdateNorms last_update;
  runner_detail::ProbeView last_probe = runner_detail::probe(*problem, params, probe_rows);

  auto log_record = [&](bool first) {
    MetricRecord r;
    r.step = step;
    r.phase = phase_index;
    r.epoch = epoch_base + phase_samples / train_size;
    const Evaluation tr = evaluate(*problem, params, Subset::train);
    const Evaluation te = evaluate(*problem, params, Subset::test);
    r.train_loss = tr.loss;
    r.train_acc = tr.accuracy;
    r.test_loss = te.loss;
    r.test_acc = te.accuracy;
    r.lr = lr;
    r.rewarm_triggered = triggers;
    triggers = 0;
    for (const auto& [name, e] : params.entries) {
      const double norm = e.value.frobenius_norm();
      const double m = multipliers.count(name) ? multipliers.at(name) : 1.0;
      r.param_norm[name] = norm;
      if (norm > 0.0) r.elr[name] = effective_lr(lr * m, norm, kind);
      if (!first) r.update_norm[name] = last_update.at(name);
    }
    runner_detail::ProbeView now = runner_detail::probe(*problem, params, probe_rows);
    r.dead_units = now.dead;
    r.effective_rank = now.effective_rank;
    if (!first) {
      for (const auto& layer : schema.layers) {
        const Tensor& before = last_probe.features.at(layer);
        const Tensor& after = now.features.at(layer);
        if (before.frobenius_norm() > 0.0 && after.frobenius_norm() > 0.0) r.delta_c[layer] = delta_c(before, after);
        r.delta_a[layer] = delta_a(last_probe.patterns.at(layer), now.patterns.at(layer));
      }
    }
    last_probe = std::move(now);
    logger.append(r);
    result.records.push_back(r);
    return r;
  };

  auto fail = [&](const std::string& status, const std::string& message) {
    result.status = status;
    result.steps = step;
    manifest.finish(status, {{"steps", step}, {"error", message}});
  };

  std::string status = "completed";
  try {
    log_record(true);
    std::mt19937_64 batch_rng(seed ^ 0x3C3C3C3CULL);
    bool stop = false;
    for (phase_index = 0; phase_index < phases.size() && !stop; ++phase_index) {
      const auto& ph = phases[phase_index];
      train_size = ph.rows.size();
      phase_samples = 0;
      std::vector<std::size_t> order = ph.rows;
      std::size_t cursor = order.size();
      for (std::uint64_t s = 0; s < ph.steps; ++s) {
        std::vector<std::size_t> rows;
        if (ph.batch == ph.rows.size()) {
          rows = ph.rows;
        } else {
          if (cursor >= order.size()) {
            std::shuffle(order.begin(), order.end(), batch_rng);
            cursor = 0;
          }
          const std::size_t end = std::min(order.size(), cursor + ph.batch);
          rows.assign(order.begin() + static_cast<std::ptrdiff_t>(cursor), order.begin() + static_cast<std::ptrdiff_t>(end));
          cursor = end;
        }
        const auto labels = labels_for(*problem, Subset::train, rows);

        Tape tape;
        const NamedVars vars = bind(tape, params);
        ForwardOutput out = problem->forward(tape, vars, Subset::train, rows);
        Var loss = cross_entropy(out.logits, labels);
        const double loss_value = loss.value().item();
        if (!std::isfinite(loss_value)) {
          throw DivergenceError("non-finite training loss at step " + std::to_string(step));
        }
        const GradMap grads = tape.backward(loss);

        opt.lr = lr;
        last_update = optimizer_step(params, grads, opt, decay, multipliers);
        if (observer.after_update) observer.after_update(step + 1, params);
        if (cfg.projection) project_on_schedule(params, projection, opt.step);
        if (observer.after_projection) observer.after_projection(step + 1, params);
        const ControllerStep ctl = schedule_step(schedule, sched, loss_value);
        if (observer.after_trigger_check) observer.after_trigger_check(step + 1, ctl.triggered);
        triggers += ctl.triggered;
        lr = ctl.lr;

        ++step;
        phase_samples += rows.size();
        const bool phase_end = s + 1 == ph.steps;
        if (phase_end) {
          epoch_base += phase_samples / train_size;
          phase_samples = 0;
        }
        if (step % cfg.cadence == 0 || phase_end) {
          const MetricRecord r = log_record(false);
          if (cfg.stop_at_test_acc && r.test_acc >= *cfg.stop_at_test_acc) {
            status = "stopped_early";
            stop = true;
            break;
          }
        }
      }
    }
  } catch (const DivergenceError& e) {
    fail("diverged", e.what());
    throw;
  } catch (const DegenerateError& e) {
    fail("diverged", e.what());
    throw DivergenceError(e.what());
  } catch (const std::exception& e) {
    fail("failed", e.what());
    throw;
  }

  write_json(dir / "params.json", params_to_json(params));
  result.params = std::move(params);
  result.status = status;
  result.steps = step;
  const MetricRecord& last = result.records.back();
  manifest.finish(status, {{"steps", step},
                           {"final_train_acc", last.train_acc},
                           {"final_test_acc", last.test_acc},
                           {"rewarm_resets", sched.resets}});
  return result;
}

}  // namespace elr
