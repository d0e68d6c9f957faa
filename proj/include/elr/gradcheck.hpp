#pragma once

#include <cmath>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "elr/autodiff.hpp"

namespace elr {

using NamedTensors = std::map<std::string, Tensor>;
using NamedVars = std::map<std::string, Var>;

/// Builds a scalar loss on `tape` from parameters already registered on it.
using LossBuilder = std::function<Var(Tape&, const NamedVars&)>;

struct GradCheckReport {
  double max_relative_error = 0.0;
  std::size_t checked = 0;
  std::size_t excluded = 0;  // coordinates dropped by the kink rule
  std::string worst_parameter;
  std::size_t worst_index = 0;
};

namespace detail {

struct Evaluation {
  double loss = 0.0;
  std::vector<double> relu_inputs;  // flattened, in tape order
};

inline Evaluation evaluate(const LossBuilder& build, const NamedTensors& theta, GradMap* grads) {
  Tape tape;
  NamedVars vars;
  for (const auto& [name, value] : theta) vars.emplace(name, tape.parameter(name, value));
  Var loss = build(tape, vars);
  Evaluation ev;
  ev.loss = loss.value().item();
  for (int id : tape.relu_inputs()) {
    const auto vals = tape.value(id).values();
    ev.relu_inputs.insert(ev.relu_inputs.end(), vals.begin(), vals.end());
  }
  if (grads) *grads = tape.backward(loss);
  return ev;
}

}  // namespace detail

/// Compares reverse-mode gradients against central differences with step
/// `eps`, coordinate by coordinate. The error for one coordinate is
/// |analytic - numeric| / (|analytic| + |numeric| + 1e-12).
///
/// Kink rule: a coordinate is excluded when its stencil moves any ReLU
/// pre-activation that sits within 10*eps of zero, or flips the sign of any
/// pre-activation between theta - eps and theta + eps.
inline GradCheckReport finite_diff_check(const LossBuilder& build, const NamedTensors& theta, double eps) {
  if (!(eps > 0.0)) throw ContractError("finite_diff_check: step must be positive");
  GradMap analytic;
  const detail::Evaluation base = detail::evaluate(build, theta, &analytic);
  const double near = 10.0 * eps;

  GradCheckReport report;
  NamedTensors probe = theta;
  for (auto& [name, tensor] : probe) {
    const Tensor& grad = analytic.at(name);
    for (std::size_t i = 0; i < tensor.size(); ++i) {
      const double saved = tensor[i];
      tensor[i] = saved + eps;
      const detail::Evaluation plus = detail::evaluate(build, probe, nullptr);
      tensor[i] = saved - eps;
      const detail::Evaluation minus = detail::evaluate(build, probe, nullptr);
      tensor[i] = saved;

      bool kink = false;
      for (std::size_t u = 0; u < base.relu_inputs.size() && !kink; ++u) {
        const double z0 = base.relu_inputs[u];
        const double zp = plus.relu_inputs[u];
        const double zm = minus.relu_inputs[u];
        if ((zp > 0.0) != (zm > 0.0)) kink = true;
        if (std::abs(z0) < near && zp != zm) kink = true;
      }
      if (kink) {
        ++report.excluded;
        continue;
      }
      const double numeric = (plus.loss - minus.loss) / (2.0 * eps);
      const double a = grad[i];
      const double err = std::abs(a - numeric) / (std::abs(a) + std::abs(numeric) + 1e-12);
      ++report.checked;
      if (err > report.max_relative_error) {
        report.max_relative_error = err;
        report.worst_parameter = name;
        report.worst_index = i;
      }
    }
  }
  return report;
}

}  // namespace elr
