#pragma once

#include <Eigen/SVD>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "elr/ops.hpp"

namespace elr {

/// Binary matrix: entry (i, j) is 1 when unit j is active on input i.
struct ActivationPattern {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<std::uint8_t> bits;

  std::uint8_t operator()(std::size_t r, std::size_t c) const { return bits[r * cols + c]; }
  friend bool operator==(const ActivationPattern&, const ActivationPattern&) = default;
};

/// Features of one layer on a fixed probe set, with the pre-activations that
/// produced them.
struct FeatureSnapshot {
  std::string layer;
  std::uint64_t step = 0;
  Tensor features;
  ActivationPattern pattern;
};

inline ActivationPattern activation_pattern(const Tensor& preactivations) {
  if (preactivations.rank() != 2) throw DimensionError("activation_pattern: expected a matrix");
  ActivationPattern p{preactivations.rows(), preactivations.cols(), {}};
  p.bits.resize(preactivations.size());
  for (std::size_t i = 0; i < preactivations.size(); ++i) p.bits[i] = preactivations[i] > 0.0 ? 1 : 0;
  return p;
}

inline FeatureSnapshot make_snapshot(std::string layer, std::uint64_t step, const Tensor& features,
                                     const Tensor& preactivations) {
  features.require_same_shape(preactivations, "make_snapshot");
  return {std::move(layer), step, features, activation_pattern(preactivations)};
}

/// f f^T / |f|_F^2 over the rows of f. Its trace is 1.
inline Tensor feature_cov(const Tensor& features) {
  if (features.rank() != 2) throw DimensionError("feature_cov: expected a matrix");
  double sq = 0.0;
  for (double v : features.values()) sq += v * v;
  if (!(sq > 0.0)) throw DegenerateError("feature_cov: feature matrix is zero");
  const auto f = detail::as_matrix(features);
  Tensor c({features.rows(), features.rows()});
  auto cm = detail::as_matrix(c);
  cm.noalias() = f * f.transpose();
  cm /= sq;
  return c;
}

inline double delta_c(const Tensor& before, const Tensor& after) {
  if (before.shape() != after.shape()) {
    throw DimensionError("delta_c: snapshots have shapes " + to_string(before.shape()) + " and " +
                         to_string(after.shape()));
  }
  const Tensor a = feature_cov(before);
  const Tensor b = feature_cov(after);
  double sq = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) sq += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(sq);
}

inline double delta_c(const FeatureSnapshot& before, const FeatureSnapshot& after) {
  return delta_c(before.features, after.features);
}

/// Fraction of entries whose activity differs.
inline double delta_a(const ActivationPattern& before, const ActivationPattern& after) {
  if (before.rows != after.rows || before.cols != after.cols) {
    throw DimensionError("delta_a: patterns are " + std::to_string(before.rows) + "x" + std::to_string(before.cols) +
                         " and " + std::to_string(after.rows) + "x" + std::to_string(after.cols));
  }
  if (before.bits.empty()) throw DegenerateError("delta_a: empty pattern");
  std::size_t differ = 0;
  for (std::size_t i = 0; i < before.bits.size(); ++i) differ += before.bits[i] != after.bits[i];
  return static_cast<double>(differ) / static_cast<double>(before.bits.size());
}

inline double delta_a(const FeatureSnapshot& before, const FeatureSnapshot& after) {
  return delta_a(before.pattern, after.pattern);
}

/// Units (columns) that are inactive on every probe input.
inline std::size_t dead_units(const ActivationPattern& pattern) {
  if (pattern.rows == 0) throw DegenerateError("dead_units: empty evaluation set");
  std::vector<std::uint8_t> alive(pattern.cols, 0);
  for (std::size_t r = 0; r < pattern.rows; ++r) {
    for (std::size_t c = 0; c < pattern.cols; ++c) alive[c] |= pattern(r, c);
  }
  std::size_t dead = 0;
  for (auto a : alive) dead += a == 0;
  return dead;
}

/// exp of the entropy of the singular values normalized to sum to one.
inline double effective_rank(const Tensor& m) {
  if (m.rank() != 2) throw DimensionError("effective_rank: expected a matrix");
  const Eigen::MatrixXd dense = detail::as_matrix(m);
  const Eigen::VectorXd sv = Eigen::JacobiSVD<Eigen::MatrixXd>(dense).singularValues();
  const double total = sv.sum();
  if (!(total > 0.0)) throw DegenerateError("effective_rank: matrix is zero");
  double entropy = 0.0;
  for (Eigen::Index i = 0; i < sv.size(); ++i) {
    const double p = sv[i] / total;
    if (p > 0.0) entropy -= p * std::log(p);
  }
  return std::exp(entropy);
}

}  // namespace elr
