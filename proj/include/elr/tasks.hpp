#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "elr/tensor.hpp"

namespace elr {

// ---------------------------------------------------------------------------
// Modular arithmetic

/// How the train/test split is drawn. `unordered` assigns each pair {x, y}
/// with both of its orderings to one side; `ordered` samples the p^2 ordered
/// pairs independently, so (x, y) and (y, x) can land on different sides.
enum class SplitMode { unordered, ordered };

inline SplitMode parse_split_mode(const std::string& s) {
  if (s == "unordered") return SplitMode::unordered;
  if (s == "ordered") return SplitMode::ordered;
  throw ConfigError("unknown split mode '" + s + "' (expected unordered or ordered)");
}

inline const char* split_mode_name(SplitMode m) { return m == SplitMode::unordered ? "unordered" : "ordered"; }

struct ModArithSpec {
  int modulus = 23;
  double train_fraction = 0.2;
  std::uint64_t seed = 0;
  SplitMode split = SplitMode::unordered;
};

inline void validate(const ModArithSpec& s) {
  if (s.modulus < 2) throw ConfigError("modular task: modulus must be at least 2");
  if (!(s.train_fraction > 0.0 && s.train_fraction < 1.0)) {
    throw ConfigError("modular task: train fraction must lie in (0, 1)");
  }
}

/// Token ids: numbers are 0..p-1, then operator p, equals p+1, blank p+2.
struct ModTokens {
  int modulus;
  int op() const { return modulus; }
  int equals() const { return modulus + 1; }
  int blank() const { return modulus + 2; }
  std::vector<int> sequence(int x, int y) const { return {x, op(), y, equals(), blank()}; }
};

struct SequenceSet {
  std::vector<std::vector<int>> sequences;
  std::vector<int> labels;

  std::size_t size() const { return labels.size(); }
  void push(std::vector<int> seq, int label) {
    sequences.push_back(std::move(seq));
    labels.push_back(label);
  }
};

struct DatasetSplit {
  SequenceSet train;
  SequenceSet test;
  std::size_t unordered_pair_count = 0;
  std::size_t train_draws = 0;  // pairs drawn into train: unordered or ordered per split mode
};

inline std::size_t floor_count(double fraction, std::size_t total) {
  // the small slack keeps 0.2 * 6903 style products from rounding down a whole unit
  return static_cast<std::size_t>(std::floor(fraction * static_cast<double>(total) + 1e-9));
}

inline DatasetSplit gen_modular_dataset(const ModArithSpec& spec) {
  validate(spec);
  const int p = spec.modulus;
  const ModTokens tok{p};
  std::mt19937_64 rng(spec.seed);
  DatasetSplit out;
  out.unordered_pair_count = static_cast<std::size_t>(p) * static_cast<std::size_t>(p + 1) / 2;

  std::vector<std::pair<int, int>> pairs;
  if (spec.split == SplitMode::unordered) {
    for (int x = 0; x < p; ++x)
      for (int y = x; y < p; ++y) pairs.emplace_back(x, y);
  } else {
    for (int x = 0; x < p; ++x)
      for (int y = 0; y < p; ++y) pairs.emplace_back(x, y);
  }
  std::vector<std::size_t> order(pairs.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::shuffle(order.begin(), order.end(), rng);
  out.train_draws = floor_count(spec.train_fraction, pairs.size());
  std::vector<bool> in_train(pairs.size(), false);
  for (std::size_t i = 0; i < out.train_draws; ++i) in_train[order[i]] = true;

  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const auto [x, y] = pairs[i];
    SequenceSet& dst = in_train[i] ? out.train : out.test;
    const int label = (x + y) % p;
    dst.push(tok.sequence(x, y), label);
    if (spec.split == SplitMode::unordered && x != y) dst.push(tok.sequence(y, x), label);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Dense classification data

struct LabeledData {
  Tensor inputs;  // [n x dim]
  std::vector<int> labels;

  std::size_t size() const { return labels.size(); }
};

inline LabeledData select_rows(const LabeledData& data, const std::vector<std::size_t>& rows) {
  if (rows.empty()) throw ContractError("select_rows: empty selection");
  const std::size_t dim = data.inputs.cols();
  LabeledData out{Tensor({rows.size(), dim}), {}};
  out.labels.reserve(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= data.size()) throw IndexError("select_rows: row " + std::to_string(rows[i]) + " out of range");
    auto src = data.inputs.row(rows[i]);
    std::copy(src.begin(), src.end(), out.inputs.row(i).begin());
    out.labels.push_back(data.labels[rows[i]]);
  }
  return out;
}

/// Isotropic Gaussian clusters around separation * e_c for class c, so the
/// class means sit on a scaled simplex. Samples are shuffled.
inline LabeledData gen_synthetic_classification(int num_classes, std::size_t dim, std::size_t samples_per_class,
                                                double cluster_spread, std::uint64_t seed, double separation = 1.0) {
  if (num_classes < 2) throw ConfigError("synthetic task: need at least two classes");
  if (dim < static_cast<std::size_t>(num_classes)) throw ConfigError("synthetic task: dim must be >= num_classes");
  if (samples_per_class == 0) throw ConfigError("synthetic task: samples_per_class must be positive");
  if (!(cluster_spread >= 0.0) || !(separation > 0.0)) throw ConfigError("synthetic task: bad spread or separation");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, 1.0);
  const std::size_t n = samples_per_class * static_cast<std::size_t>(num_classes);
  std::vector<int> labels(n);
  for (std::size_t i = 0; i < n; ++i) labels[i] = static_cast<int>(i / samples_per_class);
  std::shuffle(labels.begin(), labels.end(), rng);
  LabeledData out{Tensor({n, dim}), labels};
  for (std::size_t i = 0; i < n; ++i) {
    auto row = out.inputs.row(i);
    for (std::size_t j = 0; j < dim; ++j) row[j] = cluster_spread * noise(rng);
    row[static_cast<std::size_t>(labels[i])] += separation;
  }
  return out;
}

/// Accuracy of the Bayes classifier for the clusters above:
/// integral of phi(z) * Phi(z + separation/spread)^(K-1) dz.
inline double synthetic_bayes_accuracy(int num_classes, double cluster_spread, double separation = 1.0) {
  if (!(cluster_spread > 0.0)) return 1.0;
  const double shift = separation / cluster_spread;
  const int n = 40000;
  const double lo = -12.0, hi = 12.0, h = (hi - lo) / n;
  double total = 0.0;
  for (int i = 0; i <= n; ++i) {
    const double z = lo + h * i;
    const double phi = std::exp(-0.5 * z * z) / std::sqrt(2.0 * std::numbers::pi);
    const double cdf = 0.5 * std::erfc(-(z + shift) / std::sqrt(2.0));
    const double w = (i == 0 || i == n) ? 0.5 : 1.0;
    total += w * phi * std::pow(cdf, num_classes - 1);
  }
  return total * h;
}

// ---------------------------------------------------------------------------
// Warm starting

struct WarmStartSpec {
  double initial_fraction = 0.1;
  std::size_t phase_epochs = 70;
  std::uint64_t seed = 0;
};

struct WarmStartPhase {
  std::vector<std::size_t> rows;  // indices into the full dataset, ascending
  std::size_t epochs = 0;
};

/// Phase one trains on a seeded subset, phase two on everything.
inline std::array<WarmStartPhase, 2> warm_start_stream(const WarmStartSpec& spec, std::size_t dataset_size) {
  if (!(spec.initial_fraction > 0.0 && spec.initial_fraction <= 1.0)) {
    throw ConfigError("warm start: initial fraction must lie in (0, 1]");
  }
  if (dataset_size == 0) throw ContractError("warm start: empty dataset");
  std::vector<std::size_t> all(dataset_size);
  std::iota(all.begin(), all.end(), std::size_t{0});
  std::vector<std::size_t> subset = all;
  std::mt19937_64 rng(spec.seed);
  std::shuffle(subset.begin(), subset.end(), rng);
  subset.resize(std::max<std::size_t>(1, floor_count(spec.initial_fraction, dataset_size)));
  std::sort(subset.begin(), subset.end());
  return {WarmStartPhase{std::move(subset), spec.phase_epochs}, WarmStartPhase{std::move(all), spec.phase_epochs}};
}

// ---------------------------------------------------------------------------
// CIFAR-10 binary batches

inline constexpr std::size_t kCifarPixels = 3072;
inline constexpr std::size_t kCifarRecordBytes = 1 + kCifarPixels;

struct CifarRecord {
  std::uint8_t label = 0;
  std::array<std::uint8_t, kCifarPixels> pixels{};  // 1024 red, 1024 green, 1024 blue, row-major 32x32

  friend bool operator==(const CifarRecord&, const CifarRecord&) = default;
};

struct Cifar10Source {
  std::vector<std::filesystem::path> files;
  std::size_t records_per_file = 10000;
};

inline std::vector<CifarRecord> read_cifar10_file(const std::filesystem::path& path, std::size_t records_per_file) {
  std::error_code ec;
  const auto actual = std::filesystem::file_size(path, ec);
  if (ec) throw IoError("cifar10: cannot stat " + path.string() + ": " + ec.message());
  const std::size_t expected = records_per_file * kCifarRecordBytes;
  if (actual != expected) {
    throw FormatError("cifar10: " + path.string() + " has " + std::to_string(actual) + " bytes, expected " +
                      std::to_string(expected));
  }
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cifar10: cannot open " + path.string());
  std::vector<CifarRecord> records(records_per_file);
  std::array<char, kCifarRecordBytes> buf{};
  for (std::size_t r = 0; r < records_per_file; ++r) {
    if (!in.read(buf.data(), buf.size())) throw IoError("cifar10: short read in " + path.string());
    const auto label = static_cast<std::uint8_t>(buf[0]);
    if (label > 9) {
      throw FormatError("cifar10: corrupt record " + std::to_string(r) + " in " + path.string() + " (label " +
                        std::to_string(label) + ")");
    }
    records[r].label = label;
    std::memcpy(records[r].pixels.data(), buf.data() + 1, kCifarPixels);
  }
  return records;
}

inline void write_cifar10_file(const std::filesystem::path& path, const std::vector<CifarRecord>& records) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cifar10: cannot write " + path.string());
  for (const auto& r : records) {
    out.put(static_cast<char>(r.label));
    out.write(reinterpret_cast<const char*>(r.pixels.data()), kCifarPixels);
  }
  if (!out) throw IoError("cifar10: write failed for " + path.string());
}

/// Images as [N x 3072] in [0, 1], channel-major as stored on disk.
inline LabeledData load_cifar10(const Cifar10Source& source) {
  if (source.files.empty()) throw ConfigError("cifar10: no batch files given");
  std::vector<CifarRecord> all;
  for (const auto& f : source.files) {
    auto part = read_cifar10_file(f, source.records_per_file);
    all.insert(all.end(), part.begin(), part.end());
  }
  LabeledData out{Tensor({all.size(), kCifarPixels}), {}};
  out.labels.reserve(all.size());
  for (std::size_t i = 0; i < all.size(); ++i) {
    auto row = out.inputs.row(i);
    for (std::size_t j = 0; j < kCifarPixels; ++j) row[j] = all[i].pixels[j] / 255.0;
    out.labels.push_back(all[i].label);
  }
  return out;
}

}  // namespace elr
