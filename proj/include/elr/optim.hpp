#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <set>
#include <string>

#include "elr/models.hpp"

namespace elr {

enum class OptimizerKind { sgd, adam };

inline const char* kind_name(OptimizerKind k) { return k == OptimizerKind::sgd ? "sgd" : "adam"; }

struct OptimizerState {
  std::uint64_t step = 0;
  OptimizerKind kind = OptimizerKind::adam;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double lr = 1e-3;
  GradMap first_moment;   // adam only
  GradMap second_moment;  // adam only
};

struct ProjectionConfig {
  std::uint64_t interval = 1;  // project every k optimizer steps
  std::set<ParamRole> roles{ParamRole::weight};
};

/// Decoupled decay: added to the update after any adaptive rescaling.
struct DecayConfig {
  double weight_decay = 0.0;
  double scale_decay = 0.0;  // norm_scale parameters only
  std::set<ParamRole> weight_decay_roles{ParamRole::weight};
};

/// Per-tensor learning-rate factors; absent names use 1.
using LrMultipliers = std::map<std::string, double>;

/// Euclidean norm of the change applied to each tensor by one step.
using UpdateNorms = std::map<std::string, double>;

namespace detail {

inline void check_step_inputs(const Parameters& params, const GradMap& grads, const OptimizerState& state) {
  if (!(state.lr >= 0.0)) throw ContractError("optimizer: learning rate must be non-negative");
  for (const auto& [name, e] : params.entries) {
    auto it = grads.find(name);
    if (it == grads.end()) throw DimensionError("optimizer: no gradient for '" + name + "'");
    e.value.require_same_shape(it->second, ("optimizer gradient for " + name).c_str());
  }
}

inline double decay_rate(ParamRole role, const DecayConfig& decay) {
  if (role == ParamRole::norm_scale) return decay.scale_decay;
  return decay.weight_decay_roles.contains(role) ? decay.weight_decay : 0.0;
}

inline double multiplier(const LrMultipliers& m, const std::string& name) {
  auto it = m.find(name);
  return it == m.end() ? 1.0 : it->second;
}

}  // namespace detail

/// theta <- theta - lr * m * (g + decay * theta)
inline UpdateNorms sgd_step(Parameters& params, const GradMap& grads, OptimizerState& state,
                            const DecayConfig& decay = {}, const LrMultipliers& multipliers = {}) {
  detail::check_step_inputs(params, grads, state);
  UpdateNorms norms;
  for (auto& [name, e] : params.entries) {
    const Tensor& g = grads.at(name);
    const double lam = detail::decay_rate(e.role, decay);
    const double lr = state.lr * detail::multiplier(multipliers, name);
    double sq = 0.0;
    for (std::size_t i = 0; i < e.value.size(); ++i) {
      const double delta = lr * (g[i] + lam * e.value[i]);
      e.value[i] -= delta;
      sq += delta * delta;
    }
    norms[name] = std::sqrt(sq);
  }
  ++state.step;
  return norms;
}

/// Adam with bias correction; decay is decoupled from the moments.
inline UpdateNorms adam_step(Parameters& params, const GradMap& grads, OptimizerState& state,
                             const DecayConfig& decay = {}, const LrMultipliers& multipliers = {}) {
  detail::check_step_inputs(params, grads, state);
  const std::uint64_t t = state.step + 1;
  const double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(t));
  const double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(t));
  UpdateNorms norms;
  for (auto& [name, e] : params.entries) {
    const Tensor& g = grads.at(name);
    Tensor& m = state.first_moment[name];
    Tensor& v = state.second_moment[name];
    if (m.empty()) m = Tensor(e.value.shape());
    if (v.empty()) v = Tensor(e.value.shape());
    const double lam = detail::decay_rate(e.role, decay);
    const double lr = state.lr * detail::multiplier(multipliers, name);
    double sq = 0.0;
    for (std::size_t i = 0; i < e.value.size(); ++i) {
      m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g[i];
      v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g[i] * g[i];
      const double mhat = m[i] / c1;
      const double vhat = v[i] / c2;
      const double delta = lr * (mhat / (std::sqrt(vhat) + state.eps) + lam * e.value[i]);
      e.value[i] -= delta;
      sq += delta * delta;
    }
    norms[name] = std::sqrt(sq);
  }
  state.step = t;
  return norms;
}

inline UpdateNorms optimizer_step(Parameters& params, const GradMap& grads, OptimizerState& state,
                                  const DecayConfig& decay = {}, const LrMultipliers& multipliers = {}) {
  return state.kind == OptimizerKind::sgd ? sgd_step(params, grads, state, decay, multipliers)
                                          : adam_step(params, grads, state, decay, multipliers);
}

/// Rescales every tensor whose role is projected back to its initial
/// Frobenius norm.
inline void project(Parameters& params, const ProjectionConfig& cfg) {
  for (auto& [name, e] : params.entries) {
    if (!cfg.roles.contains(e.role)) continue;
    const double target = params.initial_norms.at(name);
    const double current = e.value.frobenius_norm();
    if (!(current > 0.0) || !std::isfinite(current)) {
      throw DegenerateError("project: '" + name + "' has norm " + std::to_string(current) +
                            "; parameters collapsed");
    }
    e.value *= target / current;
  }
}

/// Projects when `step` (the count of completed optimizer updates) is a
/// multiple of the interval. Returns whether a projection happened.
inline bool project_on_schedule(Parameters& params, const ProjectionConfig& cfg, std::uint64_t step) {
  if (cfg.interval == 0) throw ContractError("projection interval must be at least 1");
  if (step % cfg.interval != 0) return false;
  project(params, cfg);
  return true;
}

/// lr / |theta|^2 for gradient descent, lr / |theta| for adaptive methods.
inline double effective_lr(double lr, double param_norm, OptimizerKind kind) {
  if (!(param_norm > 0.0)) throw DegenerateError("effective_lr: parameter norm must be positive");
  return kind == OptimizerKind::sgd ? lr / (param_norm * param_norm) : lr / param_norm;
}

// ---------------------------------------------------------------------------

/// Scalar function of a single [1 x n] parameter row, recorded on a tape.
using ScalarFunction = std::function<Var(Tape&, Var theta)>;

namespace detail {

inline double value_and_grad(const ScalarFunction& f, const Tensor& theta, Tensor* grad) {
  Tape tape;
  Var p = tape.parameter("theta", theta);
  Var y = f(tape, p);
  const double value = y.value().item();
  if (grad) *grad = tape.backward(y).at("theta");
  return value;
}

}  // namespace detail

/// Runs gradient descent from theta0 with rate lr and, in parallel, from
/// alpha*theta0 with rate alpha^2*lr. For a scale-invariant f the two
/// trajectories are the same point up to scale, so the function values agree
/// at every step. Returns the largest value gap seen.
inline double elr_equivalence_trace(const ScalarFunction& f, const Tensor& theta0, double lr, double alpha,
                                    std::size_t steps) {
  if (alpha == 0.0) throw ContractError("elr_equivalence_trace: alpha must be nonzero");
  Tensor a = theta0;
  Tensor b = theta0;
  b *= alpha;
  const double fa0 = detail::value_and_grad(f, a, nullptr);
  const double fb0 = detail::value_and_grad(f, b, nullptr);
  if (std::abs(fa0 - fb0) > 1e-8) {
    throw ContractError("elr_equivalence_trace: f is not scale invariant at theta0 (gap " +
                        std::to_string(std::abs(fa0 - fb0)) + ")");
  }
  double worst = std::abs(fa0 - fb0);
  const double lr_b = alpha * alpha * lr;
  Tensor ga, gb;
  for (std::size_t s = 0; s < steps; ++s) {
    detail::value_and_grad(f, a, &ga);
    detail::value_and_grad(f, b, &gb);
    for (std::size_t i = 0; i < a.size(); ++i) {
      a[i] -= lr * ga[i];
      b[i] -= lr_b * gb[i];
    }
    const double fa = detail::value_and_grad(f, a, nullptr);
    const double fb = detail::value_and_grad(f, b, nullptr);
    worst = std::max(worst, std::abs(fa - fb));
  }
  return worst;
}

}  // namespace elr
