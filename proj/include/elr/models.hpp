#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "elr/gradcheck.hpp"
#include "elr/ops.hpp"

namespace elr {

// ---------------------------------------------------------------------------
// Parameters

/// Governs which update rules touch a tensor: projection applies to `weight`
/// by default, scale decay only to `norm_scale`.
enum class ParamRole { weight, norm_scale, embedding, head, bias };

inline const char* role_name(ParamRole role) {
  switch (role) {
    case ParamRole::weight: return "weight";
    case ParamRole::norm_scale: return "norm_scale";
    case ParamRole::embedding: return "embedding";
    case ParamRole::head: return "head";
    case ParamRole::bias: return "bias";
  }
  return "?";
}

inline ParamRole parse_role(const std::string& s) {
  if (s == "weight") return ParamRole::weight;
  if (s == "norm_scale") return ParamRole::norm_scale;
  if (s == "embedding") return ParamRole::embedding;
  if (s == "head") return ParamRole::head;
  if (s == "bias") return ParamRole::bias;
  throw ContractError("unknown parameter role '" + s + "'");
}

struct ParamEntry {
  Tensor value;
  ParamRole role = ParamRole::weight;

  friend bool operator==(const ParamEntry&, const ParamEntry&) = default;
};

struct Parameters {
  std::map<std::string, ParamEntry> entries;
  std::map<std::string, double> initial_norms;

  void add(const std::string& name, Tensor value, ParamRole role) {
    initial_norms[name] = value.frobenius_norm();
    entries[name] = ParamEntry{std::move(value), role};
  }

  const Tensor& operator[](const std::string& name) const { return lookup(name).value; }
  Tensor& operator[](const std::string& name) { return const_cast<ParamEntry&>(lookup(name)).value; }
  ParamRole role(const std::string& name) const { return lookup(name).role; }
  bool contains(const std::string& name) const { return entries.contains(name); }

  NamedTensors tensors() const {
    NamedTensors out;
    for (const auto& [name, e] : entries) out.emplace(name, e.value);
    return out;
  }

  std::size_t count() const {
    std::size_t n = 0;
    for (const auto& [name, e] : entries) n += e.value.size();
    return n;
  }

  friend bool operator==(const Parameters&, const Parameters&) = default;

 private:
  const ParamEntry& lookup(const std::string& name) const {
    auto it = entries.find(name);
    if (it == entries.end()) throw ContractError("no parameter named '" + name + "'");
    return it->second;
  }
};

/// Registers every parameter on the tape as a differentiable leaf.
inline NamedVars bind(Tape& tape, const Parameters& params) {
  NamedVars vars;
  for (const auto& [name, e] : params.entries) vars.emplace(name, tape.parameter(name, e.value));
  return vars;
}

// ---------------------------------------------------------------------------
// Specs

struct MlpSpec {
  std::size_t input_dim = 0;
  std::vector<std::size_t> hidden_dims;
  std::size_t num_classes = 0;
  bool use_norm = false;  // RMSNorm before each ReLU
  bool bias = false;
};

/// Single attention block followed by a two-layer MLP, pre-norm residual.
struct TransformerSpec {
  std::size_t modulus = 23;
  std::size_t special_tokens = 3;  // operator, equals, blank
  std::size_t d_model = 128;
  std::size_t num_heads = 4;
  std::size_t qkv_dim = 32;  // total across heads
  std::size_t ffn_hidden = 512;
  std::size_t seq_len = 5;
  bool use_norm = true;

  std::size_t vocab_size() const { return modulus + special_tokens; }
  std::size_t num_classes() const { return modulus; }
  int blank_token() const { return static_cast<int>(modulus + 2); }
};

using ModelSpec = std::variant<MlpSpec, TransformerSpec>;

inline void validate(const MlpSpec& spec) {
  if (spec.input_dim == 0 || spec.num_classes == 0) throw ContractError("mlp: dimensions must be positive");
  if (spec.hidden_dims.empty()) throw ContractError("mlp: at least one hidden layer is required");
  for (auto h : spec.hidden_dims)
    if (h == 0) throw ContractError("mlp: hidden widths must be positive");
}

inline void validate(const TransformerSpec& spec) {
  if (spec.modulus < 2) throw ContractError("transformer: modulus must be at least 2");
  if (spec.seq_len != 5) throw ContractError("transformer: sequences are x . y = blank, length 5");
  if (spec.num_heads == 0 || spec.qkv_dim % spec.num_heads != 0) {
    throw ContractError("transformer: qkv_dim must split evenly across heads");
  }
  if (spec.d_model == 0 || spec.ffn_hidden == 0) throw ContractError("transformer: widths must be positive");
  if (spec.special_tokens < 3) throw ContractError("transformer: need operator, equals and blank tokens");
}

inline void validate(const ModelSpec& spec) {
  std::visit([](const auto& s) { validate(s); }, spec);
}

inline std::string mlp_layer(std::size_t i) { return "fc" + std::to_string(i + 1); }

// ---------------------------------------------------------------------------
// Initialization

namespace detail {

/// Rows of an [out x in] matrix with entries N(0, 1/in), so each row has
/// expected squared norm 1.
inline Tensor fan_in_matrix(std::size_t out, std::size_t in, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0 / std::sqrt(static_cast<double>(in)));
  Tensor w({out, in});
  for (double& v : w.values()) v = normal(rng);
  return w;
}

inline Tensor gaussian(Shape shape, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, stddev);
  Tensor t(std::move(shape));
  for (double& v : t.values()) v = normal(rng);
  return t;
}

}  // namespace detail

inline Parameters init_params(const MlpSpec& spec, std::uint64_t seed) {
  validate(spec);
  std::mt19937_64 rng(seed);
  Parameters p;
  std::size_t in = spec.input_dim;
  for (std::size_t i = 0; i < spec.hidden_dims.size(); ++i) {
    const std::string name = mlp_layer(i);
    const std::size_t out = spec.hidden_dims[i];
    p.add(name + ".weight", detail::fan_in_matrix(out, in, rng), ParamRole::weight);
    if (spec.bias) p.add(name + ".bias", Tensor({out}), ParamRole::bias);
    if (spec.use_norm) p.add(name + ".scale", Tensor({out}, 1.0), ParamRole::norm_scale);
    in = out;
  }
  p.add("head.weight", detail::fan_in_matrix(spec.num_classes, in, rng), ParamRole::head);
  if (spec.bias) p.add("head.bias", Tensor({spec.num_classes}), ParamRole::bias);
  return p;
}

/// Token and position tables are N(0, 1) (fan-in 1 for a one-hot input).
inline Parameters init_params(const TransformerSpec& spec, std::uint64_t seed) {
  validate(spec);
  std::mt19937_64 rng(seed);
  Parameters p;
  const std::size_t d = spec.d_model;
  p.add("embed.token", detail::gaussian({spec.vocab_size(), d}, 1.0, rng), ParamRole::embedding);
  p.add("embed.pos", detail::gaussian({spec.seq_len, d}, 1.0, rng), ParamRole::embedding);
  if (spec.use_norm) p.add("attn.norm", Tensor({d}, 1.0), ParamRole::norm_scale);
  p.add("attn.query", detail::fan_in_matrix(spec.qkv_dim, d, rng), ParamRole::weight);
  p.add("attn.key", detail::fan_in_matrix(spec.qkv_dim, d, rng), ParamRole::weight);
  p.add("attn.value", detail::fan_in_matrix(spec.qkv_dim, d, rng), ParamRole::weight);
  p.add("attn.out", detail::fan_in_matrix(d, spec.qkv_dim, rng), ParamRole::weight);
  if (spec.use_norm) p.add("mlp.norm", Tensor({d}, 1.0), ParamRole::norm_scale);
  p.add("mlp.fc1", detail::fan_in_matrix(spec.ffn_hidden, d, rng), ParamRole::weight);
  p.add("mlp.fc2", detail::fan_in_matrix(d, spec.ffn_hidden, rng), ParamRole::weight);
  if (spec.use_norm) p.add("out.norm", Tensor({d}, 1.0), ParamRole::norm_scale);
  p.add("head", detail::fan_in_matrix(spec.num_classes(), d, rng), ParamRole::head);
  return p;
}

inline Parameters init_params(const ModelSpec& spec, std::uint64_t seed) {
  return std::visit([seed](const auto& s) { return init_params(s, seed); }, spec);
}

// ---------------------------------------------------------------------------
// Forward passes

struct ForwardOutput {
  Var logits;
  std::map<std::string, Tensor> layer_features;  // post-ReLU, [n x width]
  std::map<std::string, Tensor> preactivations;  // ReLU inputs, same shapes
  Tensor attention_output;                        // transformer only, [n x d_model]
  Tensor attention_weights;                       // transformer only, [n*heads x seq]
};

inline ForwardOutput mlp_forward(Tape& tape, const NamedVars& vars, const MlpSpec& spec, const Tensor& x) {
  if (x.rank() != 2 || x.cols() != spec.input_dim) {
    throw DimensionError("mlp_forward: input " + to_string(x.shape()) + " but input_dim is " +
                         std::to_string(spec.input_dim));
  }
  ForwardOutput out;
  Var h = tape.constant(x);
  for (std::size_t i = 0; i < spec.hidden_dims.size(); ++i) {
    const std::string name = mlp_layer(i);
    Var z = linear(h, vars.at(name + ".weight"));
    if (spec.bias) z = add_row_vector(z, vars.at(name + ".bias"));
    if (spec.use_norm) z = rms_norm(z, vars.at(name + ".scale"));
    h = relu(z);
    out.preactivations[name] = z.value();
    out.layer_features[name] = h.value();
  }
  Var logits = linear(h, vars.at("head.weight"));
  if (spec.bias) logits = add_row_vector(logits, vars.at("head.bias"));
  out.logits = logits;
  return out;
}

/// Logits are read at the blank (last) position. With one attention block only
/// the blank position's residual stream reaches the output, so the MLP and
/// head run on that row alone.
inline ForwardOutput transformer_forward(Tape&, const NamedVars& vars, const TransformerSpec& spec,
                                         std::span<const std::vector<int>> sequences) {
  const std::size_t n = sequences.size();
  const std::size_t len = spec.seq_len;
  if (n == 0) throw ContractError("transformer_forward: empty batch");
  std::vector<int> ids;
  ids.reserve(n * len);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& s = sequences[i];
    if (s.size() != len) {
      throw ContractError("transformer_forward: sequence " + std::to_string(i) + " has length " +
                          std::to_string(s.size()) + ", expected " + std::to_string(len));
    }
    if (s.back() != spec.blank_token()) {
      throw ContractError("transformer_forward: sequence " + std::to_string(i) + " does not end in the blank token");
    }
    ids.insert(ids.end(), s.begin(), s.end());
  }
  const std::size_t last = len - 1;
  auto norm = [&](Var v, const char* name) { return spec.use_norm ? rms_norm(v, vars.at(name)) : v; };

  Var h0 = add_tiled(gather_rows(vars.at("embed.token"), ids), vars.at("embed.pos"));
  Var x = norm(h0, "attn.norm");
  Var q = linear(strided_rows(x, len, last), vars.at("attn.query"));
  Var k = linear(x, vars.at("attn.key"));
  Var v = linear(x, vars.at("attn.value"));
  AttentionResult att = single_query_attention(q, k, v, len, spec.num_heads);
  Var a = linear(att.output, vars.at("attn.out"));
  Var h1 = add(strided_rows(h0, len, last), a);

  Var z = linear(norm(h1, "mlp.norm"), vars.at("mlp.fc1"));
  Var r = relu(z);
  Var h2 = add(h1, linear(r, vars.at("mlp.fc2")));
  Var logits = linear(norm(h2, "out.norm"), vars.at("head"));

  ForwardOutput out;
  out.logits = logits;
  out.preactivations["mlp"] = z.value();
  out.layer_features["mlp"] = r.value();
  out.attention_output = a.value();
  out.attention_weights = std::move(att.weights);
  return out;
}

// ---------------------------------------------------------------------------
// Probes and perturbations

/// Largest per-output relative change in the logits when one hidden layer's
/// weight matrix is multiplied by `alpha`. Only defined for layers whose
/// output feeds a normalization layer.
inline double scale_invariance_deviation(const MlpSpec& spec, const Parameters& params, const std::string& layer,
                                         double alpha, const Tensor& x) {
  if (alpha == 0.0) throw ContractError("scale_invariance_deviation: alpha must be nonzero");
  const bool hidden = layer.rfind("fc", 0) == 0 && params.contains(layer + ".weight");
  if (!spec.use_norm || !hidden) {
    throw ContractError("scale_invariance_deviation: layer '" + layer + "' is not followed by a normalization layer");
  }
  if (spec.bias) throw ContractError("scale_invariance_deviation: a bias breaks invariance of '" + layer + "'");
  auto logits = [&](const Parameters& p) {
    Tape tape;
    return mlp_forward(tape, bind(tape, p), spec, x).logits.value();
  };
  Parameters scaled = params;
  scaled[layer + ".weight"] *= alpha;
  const Tensor base = logits(params);
  const Tensor moved = logits(scaled);
  double worst = 0.0;
  for (std::size_t i = 0; i < base.size(); ++i) {
    worst = std::max(worst, std::abs(moved[i] - base[i]) / (std::abs(base[i]) + 1e-12));
  }
  return worst;
}

/// Every weight-like tensor becomes shrink * w + perturb_scale * fresh, where
/// `fresh` is an independent draw from the initialization distribution. The
/// perturbation scale defaults to 1 - shrink. Norm scales and biases are kept.
inline Parameters shrink_perturb(const ModelSpec& spec, const Parameters& params, double shrink, std::uint64_t seed,
                                 std::optional<double> perturb_scale = std::nullopt) {
  if (!(shrink > 0.0 && shrink < 1.0)) throw ContractError("shrink_perturb: shrink must lie in (0, 1)");
  const double noise = perturb_scale.value_or(1.0 - shrink);
  const Parameters fresh = init_params(spec, seed);
  Parameters out = params;
  for (auto& [name, e] : out.entries) {
    if (e.role == ParamRole::norm_scale || e.role == ParamRole::bias) continue;
    const Tensor& f = fresh[name];
    e.value.require_same_shape(f, "shrink_perturb");
    for (std::size_t i = 0; i < e.value.size(); ++i) e.value[i] = shrink * e.value[i] + noise * f[i];
  }
  return out;
}

}  // namespace elr
