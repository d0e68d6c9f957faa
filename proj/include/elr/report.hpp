#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "elr/logging.hpp"

namespace elr {

struct GrokSummary {
  std::optional<std::uint64_t> memorization_step;  // first logged step with train acc >= threshold
  std::optional<std::uint64_t> grok_step;          // same for test acc
  std::optional<std::int64_t> gap;                 // grok - memorization, when both exist
};

inline GrokSummary grok_step_summary(const std::vector<MetricRecord>& records, double threshold = 0.99) {
  if (records.empty()) throw FormatError("grok summary: log has no records");
  GrokSummary s;
  for (const auto& r : records) {
    if (!s.memorization_step && r.train_acc >= threshold) s.memorization_step = r.step;
    if (!s.grok_step && r.test_acc >= threshold) s.grok_step = r.step;
  }
  if (s.memorization_step && s.grok_step) {
    s.gap = static_cast<std::int64_t>(*s.grok_step) - static_cast<std::int64_t>(*s.memorization_step);
  }
  return s;
}

inline std::string format_step(const std::optional<std::uint64_t>& step) {
  return step ? std::to_string(*step) : "none";
}

struct WarmstartReport {
  double fresh_acc = 0.0;
  double warm_constant_acc = 0.0;
  double warm_rewarm_acc = 0.0;
  double gap_constant = 0.0;  // fresh - warm+constant
  double gap_rewarm = 0.0;    // fresh - warm+rewarm
  double tolerance = 0.01;
  bool gap_exists = false;    // gap_constant >= tolerance
  bool closed = false;        // gap_rewarm <= tolerance
};

/// Compares the final records of the three arms. Their training budgets,
/// counted in epochs, must agree.
inline WarmstartReport warmstart_report(const std::vector<MetricRecord>& fresh,
                                        const std::vector<MetricRecord>& warm_constant,
                                        const std::vector<MetricRecord>& warm_rewarm, double tolerance = 0.01) {
  if (fresh.empty() || warm_constant.empty() || warm_rewarm.empty()) {
    throw FormatError("warmstart report: every log needs at least one record");
  }
  const auto& f = fresh.back();
  const auto& c = warm_constant.back();
  const auto& r = warm_rewarm.back();
  if (f.epoch != c.epoch || f.epoch != r.epoch) {
    throw ContractError("warmstart report: budget mismatch, final epochs are " + std::to_string(f.epoch) + ", " +
                        std::to_string(c.epoch) + " and " + std::to_string(r.epoch));
  }
  WarmstartReport rep;
  rep.fresh_acc = f.test_acc;
  rep.warm_constant_acc = c.test_acc;
  rep.warm_rewarm_acc = r.test_acc;
  rep.gap_constant = f.test_acc - c.test_acc;
  rep.gap_rewarm = f.test_acc - r.test_acc;
  rep.tolerance = tolerance;
  rep.gap_exists = rep.gap_constant >= tolerance;
  rep.closed = rep.gap_rewarm <= tolerance;
  return rep;
}

}  // namespace elr
