// elrlab: runs experiments, validates the perturbation formulas, summarizes logs.

#include <CLI11.hpp>
#include <cstdio>
#include <fstream>
#include <iostream>

#include "elr/elr.hpp"

namespace {

enum Exit { ok = 0, failed = 1, config = 2, divergence = 3, io = 4 };

struct Common {
  std::optional<std::uint64_t> seed;
  std::string out;
  std::vector<std::string> overrides;
};

elr::RunConfig load(const std::string& path, const Common& c) {
  elr::RunConfig cfg = elr::load_config(path, c.overrides, c.seed);
  if (!c.out.empty()) cfg.out_dir = c.out;
  return cfg;
}

int run_theory(const elr::RunConfig& cfg) {
  const auto rows = elr::validate_theory_grid(elr::theory_grid(cfg));
  std::filesystem::create_directories(cfg.out_dir);
  const auto path = std::filesystem::path(cfg.out_dir) / "theory.csv";
  std::ofstream out(path);
  if (!out) throw elr::IoError("cannot write " + path.string());
  const std::string header = "quantity,lr,grad_std,alpha,closed_form,mc_mean,mc_se,pass";
  out << header << '\n';
  std::cout << header << '\n';
  bool all = true;
  for (const auto& r : rows) {
    const std::string line = r.quantity + "," + elr::format_value(r.lr) + "," + elr::format_value(r.grad_std) + "," +
                             elr::format_value(r.alpha) + "," + elr::format_value(r.closed_form) + "," +
                             elr::format_value(r.mc_mean) + "," + elr::format_value(r.mc_se) + "," +
                             (r.pass ? "pass" : "fail");
    out << line << '\n';
    std::cout << line << '\n';
    all = all && r.pass;
  }
  if (!out) throw elr::IoError("write failed for " + path.string());
  return all ? ok : failed;
}

int run(const std::string& path, const Common& c) {
  const elr::RunConfig cfg = load(path, c);
  if (cfg.experiment == "theory") return run_theory(cfg);
  const elr::RunResult res = elr::train_loop(cfg);
  const auto& last = res.records.back();
  std::printf("%s: %llu steps, train_acc %.4f, test_acc %.4f, log %s\n", res.status.c_str(),
              static_cast<unsigned long long>(res.steps), last.train_acc, last.test_acc, res.log_path.c_str());
  return ok;
}

int summarize(const std::string& dir) {
  const elr::MetricLog log = elr::read_metrics_csv(std::filesystem::path(dir) / "metrics.csv");
  const elr::GrokSummary s = elr::grok_step_summary(log.records);
  const auto& last = log.records.back();
  std::printf("records           %zu\n", log.records.size());
  std::printf("final step        %llu\n", static_cast<unsigned long long>(last.step));
  std::printf("final train acc   %.4f\n", last.train_acc);
  std::printf("final test acc    %.4f\n", last.test_acc);
  std::printf("memorization step %s\n", elr::format_step(s.memorization_step).c_str());
  std::printf("grok step         %s\n", elr::format_step(s.grok_step).c_str());
  std::printf("gap               %s\n", s.gap ? std::to_string(*s.gap).c_str() : "none");
  std::uint64_t resets = 0;
  for (const auto& r : log.records) resets += r.rewarm_triggered;
  std::printf("re-warm triggers  %llu\n", static_cast<unsigned long long>(resets));
  return ok;
}

int report_warmstart(const std::vector<std::string>& dirs, double tolerance) {
  if (dirs.size() != 3) throw elr::ConfigError("report-warmstart takes three log dirs: fresh, warm+constant, warm+rewarm");
  auto records = [](const std::string& d) { return elr::read_metrics_csv(std::filesystem::path(d) / "metrics.csv").records; };
  const auto rep = elr::warmstart_report(records(dirs[0]), records(dirs[1]), records(dirs[2]), tolerance);
  std::printf("arm             final_test_acc  gap_to_fresh\n");
  std::printf("fresh           %.4f\n", rep.fresh_acc);
  std::printf("warm+constant   %.4f          %+.4f\n", rep.warm_constant_acc, rep.gap_constant);
  std::printf("warm+rewarm     %.4f          %+.4f\n", rep.warm_rewarm_acc, rep.gap_rewarm);
  std::printf("gap exists (>= %.4f): %s\n", tolerance, rep.gap_exists ? "yes" : "no");
  std::printf("gap closed (<= %.4f): %s\n", tolerance, rep.closed ? "yes" : "no");
  return ok;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Effective learning rate experiments"};
  app.require_subcommand(1);
  Common common;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--seed", common.seed, "Override the config seed");
    sub->add_option("--out", common.out, "Output directory");
    sub->add_option("--override", common.overrides, "key=value, repeatable");
  };

  std::string config_path;
  auto* run_cmd = app.add_subcommand("run", "Train per a config file");
  run_cmd->add_option("config", config_path, "Config file")->required();
  add_common(run_cmd);

  auto* theory_cmd = app.add_subcommand("validate-theory", "Monte-Carlo check of the perturbation formulas");
  theory_cmd->add_option("config", config_path, "Config file")->required();
  add_common(theory_cmd);

  std::string log_dir;
  auto* sum_cmd = app.add_subcommand("summarize", "Summarize a run directory");
  sum_cmd->add_option("log-dir", log_dir, "Run directory")->required();

  std::vector<std::string> dirs;
  double tolerance = 0.01;
  auto* rep_cmd = app.add_subcommand("report-warmstart", "Gap table for fresh, warm+constant, warm+rewarm runs");
  rep_cmd->add_option("log-dirs", dirs, "Run directories in arm order")->required();
  rep_cmd->add_option("--tolerance", tolerance, "Closure tolerance in accuracy units");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? ok : config;
  }

  try {
    if (*run_cmd) return run(config_path, common);
    if (*theory_cmd) {
      elr::RunConfig cfg = load(config_path, common);
      return run_theory(cfg);
    }
    if (*sum_cmd) return summarize(log_dir);
    if (*rep_cmd) return report_warmstart(dirs, tolerance);
  } catch (const elr::ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return config;
  } catch (const elr::DivergenceError& e) {
    std::fprintf(stderr, "diverged: %s\n", e.what());
    return divergence;
  } catch (const elr::IoError& e) {
    std::fprintf(stderr, "i/o error: %s\n", e.what());
    return io;
  } catch (const elr::FormatError& e) {
    std::fprintf(stderr, "format error: %s\n", e.what());
    return io;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return failed;
  }
  return failed;
}
