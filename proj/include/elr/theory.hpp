#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "elr/optim.hpp"

namespace elr {

/// One perturbation experiment: a first layer of width `width` on unit inputs
/// of dimension `input_dim`, weights at scale `alpha`, one gradient step of
/// size `lr` with per-entry gradient variance grad_std^2 / width.
struct PerturbModel {
  std::size_t input_dim = 512;
  std::size_t width = 512;
  double grad_std = 1.0;
  double alpha = 1.0;
  double lr = 1.0;
  std::size_t samples = 100000;
  std::uint64_t seed = 0;
};

inline void validate(const PerturbModel& m) {
  if (m.input_dim == 0 || m.width == 0 || m.samples == 0) throw ConfigError("perturbation model: sizes must be positive");
  if (m.alpha == 0.0) throw DomainError("perturbation model: alpha must be nonzero");
  if (!(m.lr >= 0.0) || !(m.grad_std >= 0.0)) throw ConfigError("perturbation model: lr and grad_std must be >= 0");
}

struct McEstimate {
  double mean = 0.0;
  double std_error = 0.0;
  std::size_t count = 0;
};

/// lr * grad_std / alpha^2, the effective step seen by a unit at scale alpha.
inline double perturbation_ratio(double lr, double grad_std, double alpha) {
  if (alpha == 0.0) throw DomainError("alpha must be nonzero");
  return effective_lr(lr, std::abs(alpha), OptimizerKind::sgd) * grad_std;
}

/// 1 / sqrt(1 + lr^2 grad_std^2 / alpha^2)
inline double rotation_cosine_closed_form(double lr, double grad_std, double alpha) {
  if (alpha == 0.0) throw DomainError("rotation_cosine: alpha must be nonzero");
  const double r = lr * grad_std / alpha;
  return 1.0 / std::sqrt(1.0 + r * r);
}

/// 1/2 - atan(alpha^2 / (lr grad_std)) / pi, only where lr grad_std / alpha^2 <= 1.
inline double flip_prob_closed_form(double lr, double grad_std, double alpha) {
  const double ratio = perturbation_ratio(lr, grad_std, alpha);
  if (ratio > 1.0) {
    throw DomainError("flip_prob: lr*grad_std/alpha^2 = " + std::to_string(ratio) + " is outside the valid range [0, 1]");
  }
  if (ratio == 0.0) return 0.0;
  return 0.5 - std::atan(1.0 / ratio) / std::numbers::pi;
}

namespace detail {

struct Moments {
  double sum = 0.0;
  double sumsq = 0.0;
  std::size_t n = 0;

  void add(double v) {
    sum += v;
    sumsq += v * v;
    ++n;
  }
  McEstimate estimate() const {
    McEstimate e;
    e.count = n;
    if (n == 0) return e;
    e.mean = sum / static_cast<double>(n);
    const double var = n > 1 ? std::max(0.0, (sumsq - e.mean * sum) / static_cast<double>(n - 1)) : 0.0;
    e.std_error = std::sqrt(var / static_cast<double>(n));
    return e;
  }
};

inline double cosine(const std::vector<double>& a, const std::vector<double>& b) {
  double ab = 0.0, aa = 0.0, bb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ab += a[i] * b[i];
    aa += a[i] * a[i];
    bb += b[i] * b[i];
  }
  return ab / std::sqrt(aa * bb);
}

}  // namespace detail

/// Cosine between the embeddings W x and (W - lr g) x.
///
/// For Gaussian W and g independent of a unit x, W x ~ N(0, alpha^2/m I) and
/// g x ~ N(0, grad_std^2/d I) independently, so the sampler draws those two
/// d-vectors directly instead of the full matrices.
inline McEstimate rotation_cosine_mc(const PerturbModel& model) {
  validate(model);
  std::mt19937_64 rng(model.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  const double w_std = std::abs(model.alpha) / std::sqrt(static_cast<double>(model.input_dim));
  const double g_std = model.grad_std / std::sqrt(static_cast<double>(model.width));
  std::vector<double> before(model.width), after(model.width);
  detail::Moments acc;
  for (std::size_t s = 0; s < model.samples; ++s) {
    for (std::size_t i = 0; i < model.width; ++i) {
      before[i] = w_std * normal(rng);
      after[i] = before[i] - model.lr * g_std * normal(rng);
    }
    acc.add(detail::cosine(before, after));
  }
  return acc.estimate();
}

/// Same quantity drawn the long way: full W, g and a uniform unit x.
inline McEstimate rotation_cosine_mc_full(const PerturbModel& model) {
  validate(model);
  std::mt19937_64 rng(model.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  const std::size_t m = model.input_dim, d = model.width;
  const double w_std = std::abs(model.alpha) / std::sqrt(static_cast<double>(m));
  const double g_std = model.grad_std / std::sqrt(static_cast<double>(d));
  std::vector<double> w(d * m), g(d * m), x(m), before(d), after(d);
  detail::Moments acc;
  for (std::size_t s = 0; s < model.samples; ++s) {
    for (auto& v : w) v = w_std * normal(rng);
    for (auto& v : g) v = g_std * normal(rng);
    double xn = 0.0;
    for (auto& v : x) {
      v = normal(rng);
      xn += v * v;
    }
    xn = std::sqrt(xn);
    for (auto& v : x) v /= xn;
    for (std::size_t i = 0; i < d; ++i) {
      double wx = 0.0, gx = 0.0;
      for (std::size_t j = 0; j < m; ++j) {
        wx += w[i * m + j] * x[j];
        gx += g[i * m + j] * x[j];
      }
      before[i] = wx;
      after[i] = wx - model.lr * gx;
    }
    acc.add(detail::cosine(before, after));
  }
  return acc.estimate();
}

/// Frequency with which an active unit turns off after the step. The
/// pre-activation is alpha * N(0, 1) and the perturbation N(0, lr^2 grad_std^2)
/// / alpha; only samples with a positive pre-activation count.
inline McEstimate flip_prob_mc(const PerturbModel& model) {
  validate(model);
  std::mt19937_64 rng(model.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  const double a = std::abs(model.alpha);
  detail::Moments acc;
  for (std::size_t s = 0; s < model.samples; ++s) {
    const double pre = a * normal(rng);
    const double shift = model.lr * model.grad_std * normal(rng) / a;
    if (pre > 0.0) acc.add(pre - shift < 0.0 ? 1.0 : 0.0);
  }
  return acc.estimate();
}

// ---------------------------------------------------------------------------

struct TheoryGrid {
  std::vector<double> lrs{0.1, 0.5, 1.0};
  std::vector<double> grad_stds{0.25, 0.5, 1.0};
  std::vector<double> alphas{1.0, 2.0};
  std::size_t input_dim = 512;
  std::size_t width = 512;
  std::size_t samples = 100000;
  std::uint64_t seed = 0;
  double rel_tol = 0.01;
  double se_mult = 3.0;
};

struct TheoryRow {
  std::string quantity;  // rotation_cosine or flip_prob
  double lr = 0.0;
  double grad_std = 0.0;
  double alpha = 0.0;
  double closed_form = 0.0;
  double mc_mean = 0.0;
  double mc_se = 0.0;
  bool pass = false;
};

/// Tolerance used for each grid comparison: max(se_mult * SE, rel_tol * |closed form|).
inline bool within_tolerance(double closed, const McEstimate& mc, double se_mult, double rel_tol) {
  return std::abs(mc.mean - closed) <= std::max(se_mult * mc.std_error, rel_tol * std::abs(closed));
}

inline std::vector<TheoryRow> validate_theory_grid(const TheoryGrid& grid) {
  std::vector<TheoryRow> rows;
  std::uint64_t point = 0;
  for (double lr : grid.lrs) {
    for (double gs : grid.grad_stds) {
      for (double alpha : grid.alphas) {
        PerturbModel model{grid.input_dim, grid.width, gs, alpha, lr, grid.samples,
                           grid.seed + 0x9E3779B97F4A7C15ULL * (point + 1)};
        ++point;
        const McEstimate rot = rotation_cosine_mc(model);
        const double rot_cf = rotation_cosine_closed_form(lr, gs, alpha);
        rows.push_back({"rotation_cosine", lr, gs, alpha, rot_cf, rot.mean, rot.std_error,
                        within_tolerance(rot_cf, rot, grid.se_mult, grid.rel_tol)});
        const McEstimate flip = flip_prob_mc(model);
        const double flip_cf = flip_prob_closed_form(lr, gs, alpha);
        rows.push_back({"flip_prob", lr, gs, alpha, flip_cf, flip.mean, flip.std_error,
                        within_tolerance(flip_cf, flip, grid.se_mult, grid.rel_tol)});
      }
    }
  }
  return rows;
}

}  // namespace elr
