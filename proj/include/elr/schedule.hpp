#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>
#include <numbers>
#include <optional>
#include <string>
#include <variant>

#include "elr/optim.hpp"

namespace elr {

// ---------------------------------------------------------------------------
// Schedule shapes

struct ConstantSchedule {
  double lr = 1e-3;
};

/// Held at `floor` for `hold` steps, linear warmup from floor to peak over
/// `warmup` steps, then a half cosine from peak back to floor that ends at
/// step `total`. After `total` the rate stays at floor.
struct WarmupCosineSchedule {
  std::uint64_t warmup = 1000;
  std::uint64_t total = 10000;
  double peak = 1e-2;
  double floor = 1e-4;
  std::uint64_t hold = 0;
};

/// Smooth cosine oscillation starting at lr_max, reaching lr_min half way
/// through each period. Optionally stops after a number of cycles and stays
/// at terminal_lr (lr_min when unset) forever.
struct CyclicSchedule {
  std::uint64_t period = 1000;
  double lr_min = 1e-4;
  double lr_max = 1e-3;
  std::optional<std::uint64_t> stop_after_cycles;
  std::optional<double> terminal_lr;
};

/// One-sided CUSUM on the loss stream. With `relative` set, drift and
/// threshold are multiples of the reference window's standard deviation;
/// otherwise they are absolute loss units.
struct CusumSpec {
  std::size_t window = 200;
  double drift = 0.5;
  double threshold = 10.0;
  bool relative = true;
};

/// Warmup-cosine that restarts whenever the CUSUM detector fires. Restarts
/// skip the inner hold and may use a different peak.
struct AdaptiveSchedule {
  WarmupCosineSchedule inner;
  CusumSpec trigger;
  std::optional<std::uint64_t> cooldown;  // defaults to inner.total
  std::optional<double> rewarm_peak;

  std::uint64_t cooldown_steps() const { return cooldown.value_or(inner.total); }
};

using ScheduleSpec = std::variant<ConstantSchedule, WarmupCosineSchedule, CyclicSchedule, AdaptiveSchedule>;

struct CusumState {
  std::deque<double> reference;  // in-control losses, at most `window`
  std::deque<double> pending;    // losses seen since the statistic left zero
  double statistic = 0.0;        // S+, never negative
};

struct ScheduleState {
  std::uint64_t step = 0;             // total steps taken
  std::uint64_t steps_since_reset = 0;
  std::uint64_t completed_cycles = 0;
  std::uint64_t cooldown_remaining = 0;
  std::uint64_t resets = 0;
  CusumState cusum;
};

// ---------------------------------------------------------------------------
// Validation and bounds

inline void validate(const WarmupCosineSchedule& s) {
  if (!(s.floor > 0.0) || !(s.peak > 0.0)) throw ConfigError("warmup_cosine: rates must be positive");
  if (s.floor > s.peak) throw ConfigError("warmup_cosine: floor exceeds peak");
  if (s.total < s.hold + s.warmup) throw ConfigError("warmup_cosine: total shorter than hold + warmup");
}

inline void validate(const ConstantSchedule& s) {
  if (!(s.lr >= 0.0)) throw ConfigError("constant schedule: rate must be non-negative");
}

inline void validate(const CyclicSchedule& s) {
  if (!(s.lr_min > 0.0) || !(s.lr_max > 0.0)) throw ConfigError("cyclic: rates must be positive");
  if (s.lr_min > s.lr_max) throw ConfigError("cyclic: lr_min exceeds lr_max");
  if (s.period < 2) throw ConfigError("cyclic: period must be at least 2");
  if (s.terminal_lr && !(*s.terminal_lr > 0.0)) throw ConfigError("cyclic: terminal rate must be positive");
}

inline void validate(const CusumSpec& c) {
  if (c.window == 0) throw ConfigError("cusum: window must be positive");
  if (!(c.drift >= 0.0)) throw ConfigError("cusum: drift must be non-negative");
  if (!(c.threshold > 0.0)) throw ConfigError("cusum: threshold must be positive");
}

inline void validate(const AdaptiveSchedule& s) {
  validate(s.inner);
  validate(s.trigger);
  if (s.rewarm_peak && !(*s.rewarm_peak >= s.inner.floor)) throw ConfigError("adaptive: rewarm peak below floor");
}

inline void validate(const ScheduleSpec& spec) {
  std::visit([](const auto& s) { validate(s); }, spec);
}

struct RateBounds {
  double min = 0.0;
  double max = 0.0;
};

inline RateBounds rate_bounds(const ScheduleSpec& spec) {
  struct Visitor {
    RateBounds operator()(const ConstantSchedule& s) const { return {s.lr, s.lr}; }
    RateBounds operator()(const WarmupCosineSchedule& s) const { return {s.floor, s.peak}; }
    RateBounds operator()(const CyclicSchedule& s) const {
      const double t = s.terminal_lr.value_or(s.lr_min);
      return {std::min(s.lr_min, t), std::max(s.lr_max, t)};
    }
    RateBounds operator()(const AdaptiveSchedule& s) const {
      return {s.inner.floor, std::max(s.inner.peak, s.rewarm_peak.value_or(s.inner.peak))};
    }
  };
  return std::visit(Visitor{}, spec);
}

// ---------------------------------------------------------------------------
// Evaluation

inline double warmup_cosine_at(const WarmupCosineSchedule& s, std::uint64_t t, double peak) {
  if (t < s.hold) return s.floor;
  const std::uint64_t since = t - s.hold;
  if (since < s.warmup) {
    return s.floor + (peak - s.floor) * static_cast<double>(since) / static_cast<double>(s.warmup);
  }
  const std::uint64_t decay_len = s.total - s.hold - s.warmup;
  const std::uint64_t into = since - s.warmup;
  if (decay_len == 0) return into == 0 ? peak : s.floor;
  if (into >= decay_len) return s.floor;
  const double phase = static_cast<double>(into) / static_cast<double>(decay_len);
  return s.floor + (peak - s.floor) * 0.5 * (1.0 + std::cos(std::numbers::pi * phase));
}

inline double cyclic_at(const CyclicSchedule& s, std::uint64_t t) {
  if (s.stop_after_cycles && t >= *s.stop_after_cycles * s.period) return s.terminal_lr.value_or(s.lr_min);
  const double phase = static_cast<double>(t % s.period) / static_cast<double>(s.period);
  return s.lr_min + (s.lr_max - s.lr_min) * 0.5 * (1.0 + std::cos(2.0 * std::numbers::pi * phase));
}

/// Learning rate for the next optimizer step.
inline double lr_at(const ScheduleSpec& spec, const ScheduleState& state) {
  struct Visitor {
    const ScheduleState& st;
    double operator()(const ConstantSchedule& s) const { return s.lr; }
    double operator()(const WarmupCosineSchedule& s) const { return warmup_cosine_at(s, st.steps_since_reset, s.peak); }
    double operator()(const CyclicSchedule& s) const { return cyclic_at(s, st.steps_since_reset); }
    double operator()(const AdaptiveSchedule& s) const {
      if (st.resets == 0) return warmup_cosine_at(s.inner, st.steps_since_reset, s.inner.peak);
      return warmup_cosine_at(s.inner, s.inner.hold + st.steps_since_reset, s.rewarm_peak.value_or(s.inner.peak));
    }
  };
  return std::visit(Visitor{state}, spec);
}

/// Moves the schedule clock forward by one optimizer step.
inline void advance(const ScheduleSpec& spec, ScheduleState& state) {
  ++state.step;
  ++state.steps_since_reset;
  if (state.cooldown_remaining > 0) --state.cooldown_remaining;
  if (const auto* c = std::get_if<CyclicSchedule>(&spec)) state.completed_cycles = state.steps_since_reset / c->period;
}

// ---------------------------------------------------------------------------
// Changepoint detection

namespace detail {

inline void push_reference(const CusumSpec& spec, CusumState& st, double loss) {
  st.reference.push_back(loss);
  while (st.reference.size() > spec.window) st.reference.pop_front();
}

}  // namespace detail

/// One step of the detector without any cooldown gate. Returns whether S+
/// exceeds the threshold.
///
/// The reference (mean and spread) is the trailing window of in-control
/// losses. While S+ > 0 new losses are held back; they join the reference if
/// S+ returns to zero, so a shift cannot leak into its own baseline. Nothing
/// is tested until the reference window is full.
inline bool cusum_step(const CusumSpec& spec, CusumState& st, double loss) {
  if (!std::isfinite(loss)) throw DivergenceError("cusum: non-finite loss " + std::to_string(loss));
  if (st.reference.size() < spec.window) {
    detail::push_reference(spec, st, loss);
    return false;
  }
  double mean = 0.0;
  for (double v : st.reference) mean += v;
  mean /= static_cast<double>(st.reference.size());
  double drift = spec.drift;
  double threshold = spec.threshold;
  if (spec.relative) {
    double var = 0.0;
    for (double v : st.reference) var += (v - mean) * (v - mean);
    const double n = static_cast<double>(st.reference.size());
    const double sd = n > 1 ? std::sqrt(var / (n - 1.0)) : 0.0;
    drift *= sd;
    threshold *= sd;
  }
  st.statistic = std::max(0.0, st.statistic + (loss - mean - drift));
  st.pending.push_back(loss);
  if (st.statistic == 0.0) {
    for (double v : st.pending) detail::push_reference(spec, st, v);
    st.pending.clear();
  }
  return st.statistic > threshold;
}

/// Clears the detector after an alarm so the new regime builds its own
/// reference.
inline void cusum_clear(CusumState& st) {
  st.statistic = 0.0;
  st.reference.clear();
  st.pending.clear();
}

/// Detector step gated by the cooldown: an alarm only counts when no cooldown
/// is running. On an alarm the statistic resets and the cooldown starts.
inline bool cusum_update(const AdaptiveSchedule& spec, ScheduleState& state, double loss) {
  const bool over = cusum_step(spec.trigger, state.cusum, loss);
  if (!over || state.cooldown_remaining > 0) return false;
  cusum_clear(state.cusum);
  state.cooldown_remaining = spec.cooldown_steps();
  return true;
}

/// Restarts the inner schedule from its warmup. Optimizer moments live in
/// OptimizerState and are not touched.
inline void reset_lr(const AdaptiveSchedule& spec, ScheduleState& state) {
  state.steps_since_reset = 0;
  state.cooldown_remaining = spec.cooldown_steps();
  ++state.resets;
}

struct ControllerStep {
  double lr = 0.0;
  bool triggered = false;
};

/// Post-update bookkeeping for one step of adaptive re-warming: feed the
/// step's loss to the detector, restart the schedule on an alarm, otherwise
/// advance it. Returns the rate for the next optimizer step.
inline ControllerStep rewarm_controller_step(const AdaptiveSchedule& spec, ScheduleState& state, double loss) {
  ControllerStep out;
  out.triggered = cusum_update(spec, state, loss);
  if (out.triggered) {
    reset_lr(spec, state);
  } else {
    ++state.steps_since_reset;
    if (state.cooldown_remaining > 0) --state.cooldown_remaining;
  }
  ++state.step;
  const double peak = state.resets == 0 ? spec.inner.peak : spec.rewarm_peak.value_or(spec.inner.peak);
  const std::uint64_t offset = state.resets == 0 ? 0 : spec.inner.hold;
  out.lr = warmup_cosine_at(spec.inner, offset + state.steps_since_reset, peak);
  return out;
}

/// Schedule-agnostic step: adaptive specs run the controller, others advance.
inline ControllerStep schedule_step(const ScheduleSpec& spec, ScheduleState& state, double loss) {
  if (const auto* a = std::get_if<AdaptiveSchedule>(&spec)) return rewarm_controller_step(*a, state, loss);
  advance(spec, state);
  return {lr_at(spec, state), false};
}

// ---------------------------------------------------------------------------
// Per-layer learning rates

enum class PerLayerKind { constant, fast_features, slow_features, even_ratio_abs };

inline PerLayerKind parse_per_layer_kind(const std::string& s) {
  if (s == "constant") return PerLayerKind::constant;
  if (s == "fast_features") return PerLayerKind::fast_features;
  if (s == "slow_features") return PerLayerKind::slow_features;
  if (s == "even_ratio_abs") return PerLayerKind::even_ratio_abs;
  throw ConfigError("unknown per-layer assignment '" + s + "'");
}

inline const char* per_layer_name(PerLayerKind k) {
  switch (k) {
    case PerLayerKind::constant: return "constant";
    case PerLayerKind::fast_features: return "fast_features";
    case PerLayerKind::slow_features: return "slow_features";
    case PerLayerKind::even_ratio_abs: return "even_ratio_abs";
  }
  return "?";
}

/// fast_features divides the output head's rate by 10, slow_features every
/// other tensor's. even_ratio_abs makes each weight-like tensor's rate
/// proportional to its mean absolute entry, scaled so the largest is 1; norm
/// scales and biases keep 1.
inline LrMultipliers per_layer_multipliers(PerLayerKind kind, const Parameters& params) {
  if (params.entries.empty()) throw ContractError("per_layer_multipliers: no parameters");
  LrMultipliers out;
  switch (kind) {
    case PerLayerKind::constant:
      for (const auto& [name, e] : params.entries) out[name] = 1.0;
      break;
    case PerLayerKind::fast_features:
      for (const auto& [name, e] : params.entries) out[name] = e.role == ParamRole::head ? 0.1 : 1.0;
      break;
    case PerLayerKind::slow_features:
      for (const auto& [name, e] : params.entries) out[name] = e.role == ParamRole::head ? 1.0 : 0.1;
      break;
    case PerLayerKind::even_ratio_abs: {
      double largest = 0.0;
      for (const auto& [name, e] : params.entries) {
        if (e.role == ParamRole::norm_scale || e.role == ParamRole::bias) {
          out[name] = 1.0;
          continue;
        }
        double total = 0.0;
        for (double v : e.value.values()) total += std::abs(v);
        out[name] = total / static_cast<double>(e.value.size());
        largest = std::max(largest, out[name]);
      }
      if (!(largest > 0.0)) throw DegenerateError("per_layer_multipliers: all weights are zero");
      for (const auto& [name, e] : params.entries) {
        if (e.role != ParamRole::norm_scale && e.role != ParamRole::bias) out[name] /= largest;
      }
      break;
    }
  }
  return out;
}

}  // namespace elr
