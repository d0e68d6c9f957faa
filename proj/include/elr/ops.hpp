#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "elr/autodiff.hpp"

namespace elr {

/// Guard inside rms_norm; keeps all-zero rows finite.
inline constexpr double kRmsNormEps = 1e-6;

namespace detail {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMatrix>;
using ConstMatMap = Eigen::Map<const RowMatrix>;

inline ConstMatMap as_matrix(const Tensor& t) {
  return ConstMatMap(t.data(), static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.cols()));
}
inline MatMap as_matrix(Tensor& t) {
  return MatMap(t.data(), static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.cols()));
}

inline void require_rank2(const Tensor& t, const char* op) {
  if (t.rank() != 2) throw DimensionError(std::string(op) + " expects a matrix, got " + to_string(t.shape()));
}

inline void require_same_tape(Var a, Var b) {
  if (a.tape != b.tape) throw ContractError("operands recorded on different tapes");
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Linear algebra

/// a[n x k] * b[k x m]
inline Var matmul(Var a, Var b) {
  detail::require_same_tape(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  detail::require_rank2(av, "matmul");
  detail::require_rank2(bv, "matmul");
  if (av.cols() != bv.rows()) {
    throw DimensionError("matmul: inner extents differ, " + to_string(av.shape()) + " x " + to_string(bv.shape()));
  }
  Tensor out({av.rows(), bv.cols()});
  detail::as_matrix(out).noalias() = detail::as_matrix(av) * detail::as_matrix(bv);
  return a.tape->record(std::move(out), {a.id, b.id}, [](Tape& tape, int self) {
    const auto& in = tape.node(self).inputs;
    auto g = detail::as_matrix(static_cast<const Tensor&>(tape.grad(self)));
    if (tape.requires_grad(in[0])) {
      detail::as_matrix(tape.grad(in[0])).noalias() += g * detail::as_matrix(tape.value(in[1])).transpose();
    }
    if (tape.requires_grad(in[1])) {
      detail::as_matrix(tape.grad(in[1])).noalias() += detail::as_matrix(tape.value(in[0])).transpose() * g;
    }
  });
}

/// x[n x in] * w[out x in]^T, the layout used for every dense layer.
inline Var linear(Var x, Var w) {
  detail::require_same_tape(x, w);
  const Tensor& xv = x.value();
  const Tensor& wv = w.value();
  detail::require_rank2(xv, "linear");
  detail::require_rank2(wv, "linear");
  if (xv.cols() != wv.cols()) {
    throw DimensionError("linear: input width " + std::to_string(xv.cols()) + " vs weight " + to_string(wv.shape()));
  }
  Tensor out({xv.rows(), wv.rows()});
  detail::as_matrix(out).noalias() = detail::as_matrix(xv) * detail::as_matrix(wv).transpose();
  return x.tape->record(std::move(out), {x.id, w.id}, [](Tape& tape, int self) {
    const auto& in = tape.node(self).inputs;
    auto g = detail::as_matrix(static_cast<const Tensor&>(tape.grad(self)));
    if (tape.requires_grad(in[0])) {
      detail::as_matrix(tape.grad(in[0])).noalias() += g * detail::as_matrix(tape.value(in[1]));
    }
    if (tape.requires_grad(in[1])) {
      detail::as_matrix(tape.grad(in[1])).noalias() += g.transpose() * detail::as_matrix(tape.value(in[0]));
    }
  });
}

// ---------------------------------------------------------------------------
// Elementwise

inline Var add(Var a, Var b) {
  detail::require_same_tape(a, b);
  a.value().require_same_shape(b.value(), "add");
  Tensor out = a.value();
  out += b.value();
  return a.tape->record(std::move(out), {a.id, b.id}, [](Tape& tape, int self) {
    const auto& in = tape.node(self).inputs;
    const Tensor& g = tape.grad(self);
    tape.accumulate(in[0], g);
    tape.accumulate(in[1], g);
  });
}

inline Var mul(Var a, Var b) {
  detail::require_same_tape(a, b);
  a.value().require_same_shape(b.value(), "mul");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
  return a.tape->record(std::move(out), {a.id, b.id}, [](Tape& tape, int self) {
    const auto& in = tape.node(self).inputs;
    const Tensor g = tape.grad(self);
    for (int k = 0; k < 2; ++k) {
      if (!tape.requires_grad(in[k])) continue;
      const Tensor& other = tape.value(in[1 - k]);
      Tensor& dst = tape.grad(in[k]);
      for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i] * other[i];
    }
  });
}

inline Var scale(Var x, double factor) {
  Tensor out = x.value();
  out *= factor;
  return x.tape->record(std::move(out), {x.id}, [factor](Tape& tape, int self) {
    const int in = tape.node(self).inputs[0];
    Tensor delta = tape.grad(self);
    delta *= factor;
    tape.accumulate(in, delta);
  });
}

/// Adds a length-d vector to every row of x[n x d].
inline Var add_row_vector(Var x, Var bias) {
  detail::require_same_tape(x, bias);
  const Tensor& xv = x.value();
  const std::size_t d = xv.cols();
  if (bias.value().size() != d) {
    throw DimensionError("add_row_vector: bias length " + std::to_string(bias.value().size()) + " vs width " +
                         std::to_string(d));
  }
  Tensor out = xv;
  for (std::size_t r = 0; r < out.rows(); ++r)
    for (std::size_t c = 0; c < d; ++c) out(r, c) += bias.value()[c];
  return x.tape->record(std::move(out), {x.id, bias.id}, [d](Tape& tape, int self) {
    const auto& in = tape.node(self).inputs;
    const Tensor& g = tape.grad(self);
    tape.accumulate(in[0], g);
    if (tape.requires_grad(in[1])) {
      Tensor& gb = tape.grad(in[1]);
      for (std::size_t r = 0; r < g.rows(); ++r)
        for (std::size_t c = 0; c < d; ++c) gb[c] += g(r, c);
    }
  });
}

/// max(x, 0) with subgradient 0 at the kink, so the backward mask is exactly
/// the activation-pattern indicator 1[x > 0].
inline Var relu(Var x) {
  x.tape->note_relu_input(x.id);
  Tensor out = x.value();
  for (double& v : out.values()) v = v > 0.0 ? v : 0.0;
  return x.tape->record(std::move(out), {x.id}, [](Tape& tape, int self) {
    const int in = tape.node(self).inputs[0];
    if (!tape.requires_grad(in)) return;
    const Tensor& g = tape.grad(self);
    const Tensor& xv = tape.value(in);
    Tensor& dst = tape.grad(in);
    for (std::size_t i = 0; i < g.size(); ++i)
      if (xv[i] > 0.0) dst[i] += g[i];
  });
}

// ---------------------------------------------------------------------------
// Normalization

/// Row-wise x / sqrt(mean(x^2) + eps) * scale.
inline Var rms_norm(Var x, Var gain) {
  detail::require_same_tape(x, gain);
  const Tensor& xv = x.value();
  detail::require_rank2(xv, "rms_norm");
  const std::size_t n = xv.rows();
  const std::size_t d = xv.cols();
  if (gain.value().size() != d) {
    throw DimensionError("rms_norm: scale length " + std::to_string(gain.value().size()) + " vs width " +
                         std::to_string(d));
  }
  std::vector<double> inv_rms(n);
  Tensor out({n, d});
  for (std::size_t r = 0; r < n; ++r) {
    double ms = 0.0;
    for (double v : xv.row(r)) ms += v * v;
    ms /= static_cast<double>(d);
    inv_rms[r] = 1.0 / std::sqrt(ms + kRmsNormEps);
    for (std::size_t c = 0; c < d; ++c) out(r, c) = xv(r, c) * inv_rms[r] * gain.value()[c];
  }
  return x.tape->record(std::move(out), {x.id, gain.id}, [inv_rms = std::move(inv_rms), d](Tape& tape, int self) {
    const auto& in = tape.node(self).inputs;
    const Tensor& g = tape.grad(self);
    const Tensor& xv = tape.value(in[0]);
    const Tensor& s = tape.value(in[1]);
    const bool need_x = tape.requires_grad(in[0]);
    const bool need_s = tape.requires_grad(in[1]);
    Tensor* gx = need_x ? &tape.grad(in[0]) : nullptr;
    Tensor* gs = need_s ? &tape.grad(in[1]) : nullptr;
    for (std::size_t r = 0; r < xv.rows(); ++r) {
      const double ir = inv_rms[r];
      if (need_s) {
        for (std::size_t c = 0; c < d; ++c) (*gs)[c] += g(r, c) * xv(r, c) * ir;
      }
      if (need_x) {
        double dot = 0.0;
        for (std::size_t c = 0; c < d; ++c) dot += g(r, c) * s[c] * xv(r, c);
        const double coeff = dot * ir * ir * ir / static_cast<double>(d);
        for (std::size_t c = 0; c < d; ++c) (*gx)(r, c) += g(r, c) * s[c] * ir - xv(r, c) * coeff;
      }
    }
  });
}

/// Row-wise division by the Euclidean norm, with no epsilon: exactly scale
/// invariant, and a zero row is a degenerate input.
inline Var l2_normalize_rows(Var x) {
  const Tensor& xv = x.value();
  const std::size_t n = xv.rows();
  const std::size_t d = xv.cols();
  std::vector<double> inv_norm(n);
  Tensor out = xv;
  for (std::size_t r = 0; r < n; ++r) {
    double ss = 0.0;
    for (double v : xv.row(r)) ss += v * v;
    if (ss == 0.0) throw DegenerateError("l2_normalize_rows: zero row " + std::to_string(r));
    inv_norm[r] = 1.0 / std::sqrt(ss);
    for (std::size_t c = 0; c < d; ++c) out(r, c) *= inv_norm[r];
  }
  return x.tape->record(std::move(out), {x.id}, [inv_norm = std::move(inv_norm), d](Tape& tape, int self) {
    const int in = tape.node(self).inputs[0];
    if (!tape.requires_grad(in)) return;
    const Tensor& g = tape.grad(self);
    const Tensor& y = tape.value(self);
    Tensor& gx = tape.grad(in);
    for (std::size_t r = 0; r < y.rows(); ++r) {
      double dot = 0.0;
      for (std::size_t c = 0; c < d; ++c) dot += g(r, c) * y(r, c);
      for (std::size_t c = 0; c < d; ++c) gx(r, c) += (g(r, c) - y(r, c) * dot) * inv_norm[r];
    }
  });
}

// ---------------------------------------------------------------------------
// Softmax and losses

namespace detail {

inline void softmax_row_inplace(std::span<double> row) {
  const double mx = *std::max_element(row.begin(), row.end());
  double sum = 0.0;
  for (double& v : row) {
    v = std::exp(v - mx);
    sum += v;
  }
  for (double& v : row) v /= sum;
}

}  // namespace detail

inline Var softmax_rows(Var x) {
  detail::require_rank2(x.value(), "softmax_rows");
  Tensor out = x.value();
  for (std::size_t r = 0; r < out.rows(); ++r) detail::softmax_row_inplace(out.row(r));
  return x.tape->record(std::move(out), {x.id}, [](Tape& tape, int self) {
    const int in = tape.node(self).inputs[0];
    if (!tape.requires_grad(in)) return;
    const Tensor& g = tape.grad(self);
    const Tensor& y = tape.value(self);
    Tensor& gx = tape.grad(in);
    for (std::size_t r = 0; r < y.rows(); ++r) {
      double dot = 0.0;
      for (std::size_t c = 0; c < y.cols(); ++c) dot += g(r, c) * y(r, c);
      for (std::size_t c = 0; c < y.cols(); ++c) gx(r, c) += y(r, c) * (g(r, c) - dot);
    }
  });
}

/// Mean negative log-softmax probability of the true class.
inline Var cross_entropy(Var logits, std::span<const int> labels) {
  const Tensor& z = logits.value();
  detail::require_rank2(z, "cross_entropy");
  const std::size_t n = z.rows();
  const std::size_t c = z.cols();
  if (labels.size() != n) {
    throw DimensionError("cross_entropy: " + std::to_string(labels.size()) + " labels for " + std::to_string(n) +
                         " rows");
  }
  std::vector<int> y(labels.begin(), labels.end());
  for (std::size_t i = 0; i < n; ++i) {
    if (y[i] < 0 || static_cast<std::size_t>(y[i]) >= c) {
      throw IndexError("cross_entropy: label " + std::to_string(y[i]) + " at row " + std::to_string(i) +
                       " outside [0, " + std::to_string(c) + ")");
    }
  }
  Tensor probs = z;
  double loss = 0.0;
  for (std::size_t r = 0; r < n; ++r) {
    auto row = z.row(r);
    const double mx = *std::max_element(row.begin(), row.end());
    double sum = 0.0;
    for (double v : row) sum += std::exp(v - mx);
    const double lse = mx + std::log(sum);
    loss += lse - row[static_cast<std::size_t>(y[r])];
    for (std::size_t k = 0; k < c; ++k) probs(r, k) = std::exp(row[k] - lse);
  }
  loss /= static_cast<double>(n);
  return logits.tape->record(Tensor::scalar(loss), {logits.id},
                             [probs = std::move(probs), y = std::move(y)](Tape& tape, int self) {
                               const int in = tape.node(self).inputs[0];
                               if (!tape.requires_grad(in)) return;
                               const double g = tape.grad(self)[0] / static_cast<double>(probs.rows());
                               Tensor& gz = tape.grad(in);
                               for (std::size_t r = 0; r < probs.rows(); ++r) {
                                 for (std::size_t k = 0; k < probs.cols(); ++k) {
                                   const double target = static_cast<int>(k) == y[r] ? 1.0 : 0.0;
                                   gz(r, k) += g * (probs(r, k) - target);
                                 }
                               }
                             });
}

inline Var sum(Var x) {
  double total = 0.0;
  for (double v : x.value().values()) total += v;
  return x.tape->record(Tensor::scalar(total), {x.id}, [](Tape& tape, int self) {
    const int in = tape.node(self).inputs[0];
    if (!tape.requires_grad(in)) return;
    const double g = tape.grad(self)[0];
    for (double& v : tape.grad(in).values()) v += g;
  });
}

// ---------------------------------------------------------------------------
// Indexing

/// Rows of table[v x d] selected by ids; the embedding lookup.
inline Var gather_rows(Var table, std::span<const int> ids) {
  const Tensor& t = table.value();
  detail::require_rank2(t, "gather_rows");
  const std::size_t d = t.cols();
  std::vector<int> idx(ids.begin(), ids.end());
  Tensor out({idx.size(), d});
  for (std::size_t r = 0; r < idx.size(); ++r) {
    if (idx[r] < 0 || static_cast<std::size_t>(idx[r]) >= t.rows()) {
      throw IndexError("gather_rows: id " + std::to_string(idx[r]) + " outside table of " + std::to_string(t.rows()));
    }
    std::copy_n(t.row(static_cast<std::size_t>(idx[r])).data(), d, out.row(r).data());
  }
  return table.tape->record(std::move(out), {table.id}, [idx = std::move(idx), d](Tape& tape, int self) {
    const int in = tape.node(self).inputs[0];
    if (!tape.requires_grad(in)) return;
    const Tensor& g = tape.grad(self);
    Tensor& gt = tape.grad(in);
    for (std::size_t r = 0; r < idx.size(); ++r)
      for (std::size_t c = 0; c < d; ++c) gt(static_cast<std::size_t>(idx[r]), c) += g(r, c);
  });
}

/// x[(b*period) x d] plus pattern[period x d] tiled down the rows.
inline Var add_tiled(Var x, Var pattern) {
  detail::require_same_tape(x, pattern);
  const Tensor& xv = x.value();
  const Tensor& pv = pattern.value();
  detail::require_rank2(xv, "add_tiled");
  detail::require_rank2(pv, "add_tiled");
  const std::size_t period = pv.rows();
  if (pv.cols() != xv.cols() || xv.rows() % period != 0) {
    throw DimensionError("add_tiled: " + to_string(xv.shape()) + " is not a tiling of " + to_string(pv.shape()));
  }
  Tensor out = xv;
  for (std::size_t r = 0; r < out.rows(); ++r)
    for (std::size_t c = 0; c < out.cols(); ++c) out(r, c) += pv(r % period, c);
  return x.tape->record(std::move(out), {x.id, pattern.id}, [period](Tape& tape, int self) {
    const auto& in = tape.node(self).inputs;
    const Tensor& g = tape.grad(self);
    tape.accumulate(in[0], g);
    if (tape.requires_grad(in[1])) {
      Tensor& gp = tape.grad(in[1]);
      for (std::size_t r = 0; r < g.rows(); ++r)
        for (std::size_t c = 0; c < g.cols(); ++c) gp(r % period, c) += g(r, c);
    }
  });
}

/// Row `offset` of every consecutive block of `period` rows.
inline Var strided_rows(Var x, std::size_t period, std::size_t offset) {
  const Tensor& xv = x.value();
  detail::require_rank2(xv, "strided_rows");
  if (period == 0 || offset >= period || xv.rows() % period != 0) {
    throw DimensionError("strided_rows: bad period/offset for " + to_string(xv.shape()));
  }
  const std::size_t blocks = xv.rows() / period;
  const std::size_t d = xv.cols();
  Tensor out({blocks, d});
  for (std::size_t b = 0; b < blocks; ++b) std::copy_n(xv.row(b * period + offset).data(), d, out.row(b).data());
  return x.tape->record(std::move(out), {x.id}, [period, offset, d](Tape& tape, int self) {
    const int in = tape.node(self).inputs[0];
    if (!tape.requires_grad(in)) return;
    const Tensor& g = tape.grad(self);
    Tensor& gx = tape.grad(in);
    for (std::size_t b = 0; b < g.rows(); ++b)
      for (std::size_t c = 0; c < d; ++c) gx(b * period + offset, c) += g(b, c);
  });
}

// ---------------------------------------------------------------------------
// Attention

struct AttentionResult {
  Var output;       // [batch x heads*head_dim]
  Tensor weights;   // [batch*heads x seq], each row sums to 1
};

/// Multi-head scaled dot-product attention for a single query per sequence.
/// q is [batch x heads*head_dim]; keys and values are [batch*seq x heads*head_dim]
/// with each sequence's positions stored contiguously.
inline AttentionResult single_query_attention(Var q, Var k, Var v, std::size_t seq_len, std::size_t heads) {
  detail::require_same_tape(q, k);
  detail::require_same_tape(q, v);
  const Tensor& qv = q.value();
  const Tensor& kv = k.value();
  const Tensor& vv = v.value();
  const std::size_t batch = qv.rows();
  const std::size_t width = qv.cols();
  if (heads == 0 || width % heads != 0) throw DimensionError("attention: width not divisible by heads");
  if (kv.rows() != batch * seq_len || vv.rows() != batch * seq_len || kv.cols() != width || vv.cols() != width) {
    throw DimensionError("attention: keys/values " + to_string(kv.shape()) + "/" + to_string(vv.shape()) +
                         " do not match queries " + to_string(qv.shape()) + " with seq " + std::to_string(seq_len));
  }
  const std::size_t hd = width / heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(hd));

  Tensor weights({batch * heads, seq_len});
  Tensor out({batch, width});
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t h = 0; h < heads; ++h) {
      auto w = weights.row(b * heads + h);
      for (std::size_t s = 0; s < seq_len; ++s) {
        double dot = 0.0;
        for (std::size_t j = 0; j < hd; ++j) dot += qv(b, h * hd + j) * kv(b * seq_len + s, h * hd + j);
        w[s] = dot * inv_sqrt;
      }
      detail::softmax_row_inplace(w);
      for (std::size_t s = 0; s < seq_len; ++s)
        for (std::size_t j = 0; j < hd; ++j) out(b, h * hd + j) += w[s] * vv(b * seq_len + s, h * hd + j);
    }
  }

  Tensor saved = weights;
  Var result = q.tape->record(
      std::move(out), {q.id, k.id, v.id},
      [a = std::move(saved), seq_len, heads, hd, inv_sqrt](Tape& tape, int self) {
        const auto& in = tape.node(self).inputs;
        const Tensor& g = tape.grad(self);
        const Tensor& qv = tape.value(in[0]);
        const Tensor& kv = tape.value(in[1]);
        const Tensor& vv = tape.value(in[2]);
        const bool nq = tape.requires_grad(in[0]);
        const bool nk = tape.requires_grad(in[1]);
        const bool nv = tape.requires_grad(in[2]);
        Tensor* gq = nq ? &tape.grad(in[0]) : nullptr;
        Tensor* gk = nk ? &tape.grad(in[1]) : nullptr;
        Tensor* gv = nv ? &tape.grad(in[2]) : nullptr;
        std::vector<double> ga(seq_len);
        for (std::size_t b = 0; b < qv.rows(); ++b) {
          for (std::size_t h = 0; h < heads; ++h) {
            auto w = a.row(b * heads + h);
            double mix = 0.0;
            for (std::size_t s = 0; s < seq_len; ++s) {
              double dot = 0.0;
              for (std::size_t j = 0; j < hd; ++j) dot += g(b, h * hd + j) * vv(b * seq_len + s, h * hd + j);
              ga[s] = dot;
              mix += w[s] * dot;
            }
            for (std::size_t s = 0; s < seq_len; ++s) {
              const std::size_t row = b * seq_len + s;
              const double gscore = w[s] * (ga[s] - mix) * inv_sqrt;
              for (std::size_t j = 0; j < hd; ++j) {
                const std::size_t col = h * hd + j;
                if (nq) (*gq)(b, col) += gscore * kv(row, col);
                if (nk) (*gk)(row, col) += gscore * qv(b, col);
                if (nv) (*gv)(row, col) += w[s] * g(b, col);
              }
            }
          }
        }
      });
  return {result, std::move(weights)};
}

}  // namespace elr
