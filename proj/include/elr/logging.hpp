#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <nlohmann/json.hpp>
#include <sstream>
#include <string>
#include <vector>

#include "elr/errors.hpp"

namespace elr {

inline constexpr double kMissing = std::numeric_limits<double>::quiet_NaN();

/// One logging step. Absent measurements are NaN.
struct MetricRecord {
  std::uint64_t step = 0;
  std::uint64_t epoch = 0;  // completed passes over the training set, all phases
  std::uint64_t phase = 0;
  double train_loss = kMissing;
  double train_acc = kMissing;
  double test_loss = kMissing;
  double test_acc = kMissing;
  double lr = kMissing;
  double dead_units = kMissing;
  double effective_rank = kMissing;
  std::uint64_t rewarm_triggered = 0;  // alarms since the previous record
  std::map<std::string, double> elr;
  std::map<std::string, double> param_norm;
  std::map<std::string, double> update_norm;
  std::map<std::string, double> delta_c;
  std::map<std::string, double> delta_a;
};

namespace log_detail {

inline bool same(double a, double b) { return (std::isnan(a) && std::isnan(b)) || a == b; }

inline double find_or_missing(const std::map<std::string, double>& m, const std::string& k) {
  auto it = m.find(k);
  return it == m.end() ? kMissing : it->second;
}

// an absent key and a NaN value both mean "not measured"
inline bool same(const std::map<std::string, double>& a, const std::map<std::string, double>& b) {
  for (const auto& [k, v] : a)
    if (!same(v, find_or_missing(b, k))) return false;
  for (const auto& [k, v] : b)
    if (!same(v, find_or_missing(a, k))) return false;
  return true;
}

}  // namespace log_detail

/// Field-wise equality in which two missing values match.
inline bool operator==(const MetricRecord& a, const MetricRecord& b) {
  using log_detail::same;
  return a.step == b.step && a.epoch == b.epoch && a.phase == b.phase && same(a.train_loss, b.train_loss) &&
         same(a.train_acc, b.train_acc) && same(a.test_loss, b.test_loss) && same(a.test_acc, b.test_acc) &&
         same(a.lr, b.lr) && same(a.dead_units, b.dead_units) && same(a.effective_rank, b.effective_rank) &&
         a.rewarm_triggered == b.rewarm_triggered && same(a.elr, b.elr) && same(a.param_norm, b.param_norm) &&
         same(a.update_norm, b.update_norm) && same(a.delta_c, b.delta_c) && same(a.delta_a, b.delta_a);
}

/// Column layout of a log: the fixed columns, then per-parameter and
/// per-layer groups in name order.
struct MetricSchema {
  std::vector<std::string> params;
  std::vector<std::string> layers;

  static const std::vector<std::string>& base_columns() {
    static const std::vector<std::string> cols = {"step",    "epoch", "phase",      "train_loss", "train_acc",
                                                  "test_loss", "test_acc", "lr", "dead_units", "effective_rank",
                                                  "rewarm_triggered"};
    return cols;
  }

  std::vector<std::string> columns() const {
    std::vector<std::string> cols = base_columns();
    for (const char* prefix : {"elr:", "norm:", "update_norm:"})
      for (const auto& p : params) cols.push_back(prefix + p);
    for (const char* prefix : {"delta_c:", "delta_a:"})
      for (const auto& l : layers) cols.push_back(prefix + l);
    return cols;
  }

  friend bool operator==(const MetricSchema&, const MetricSchema&) = default;
};

inline std::string format_value(double v) {
  if (std::isnan(v)) return "nan";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

namespace log_detail {

inline std::vector<std::string> row_values(const MetricSchema& schema, const MetricRecord& r) {
  std::vector<std::string> v = {std::to_string(r.step),     std::to_string(r.epoch),    std::to_string(r.phase),
                                format_value(r.train_loss), format_value(r.train_acc),  format_value(r.test_loss),
                                format_value(r.test_acc),   format_value(r.lr),         format_value(r.dead_units),
                                format_value(r.effective_rank), std::to_string(r.rewarm_triggered)};
  for (const auto* m : {&r.elr, &r.param_norm, &r.update_norm})
    for (const auto& p : schema.params) v.push_back(format_value(find_or_missing(*m, p)));
  for (const auto* m : {&r.delta_c, &r.delta_a})
    for (const auto& l : schema.layers) v.push_back(format_value(find_or_missing(*m, l)));
  return v;
}

inline nlohmann::json json_value(double v) { return std::isnan(v) ? nlohmann::json(nullptr) : nlohmann::json(v); }

}  // namespace log_detail

inline std::string csv_header(const MetricSchema& schema) {
  std::string out;
  const auto cols = schema.columns();
  for (std::size_t i = 0; i < cols.size(); ++i) out += (i ? "," : "") + cols[i];
  return out;
}

inline std::string csv_row(const MetricSchema& schema, const MetricRecord& r) {
  std::string out;
  const auto vals = log_detail::row_values(schema, r);
  for (std::size_t i = 0; i < vals.size(); ++i) out += (i ? "," : "") + vals[i];
  return out;
}

inline nlohmann::json to_json(const MetricSchema& schema, const MetricRecord& r) {
  using log_detail::json_value;
  using log_detail::find_or_missing;
  nlohmann::json j;
  j["step"] = r.step;
  j["epoch"] = r.epoch;
  j["phase"] = r.phase;
  j["train_loss"] = json_value(r.train_loss);
  j["train_acc"] = json_value(r.train_acc);
  j["test_loss"] = json_value(r.test_loss);
  j["test_acc"] = json_value(r.test_acc);
  j["lr"] = json_value(r.lr);
  j["dead_units"] = json_value(r.dead_units);
  j["effective_rank"] = json_value(r.effective_rank);
  j["rewarm_triggered"] = r.rewarm_triggered;
  for (const auto& p : schema.params) {
    j["elr"][p] = json_value(find_or_missing(r.elr, p));
    j["norm"][p] = json_value(find_or_missing(r.param_norm, p));
    j["update_norm"][p] = json_value(find_or_missing(r.update_norm, p));
  }
  for (const auto& l : schema.layers) {
    j["delta_c"][l] = json_value(find_or_missing(r.delta_c, l));
    j["delta_a"][l] = json_value(find_or_missing(r.delta_a, l));
  }
  return j;
}

/// Appends records to metrics.csv and metrics.jsonl, flushing after each row
/// so an interrupted run keeps every completed row.
class MetricLogger {
 public:
  MetricLogger(const std::filesystem::path& dir, MetricSchema schema) : schema_(std::move(schema)) {
    csv_path_ = dir / "metrics.csv";
    jsonl_path_ = dir / "metrics.jsonl";
    csv_.open(csv_path_, std::ios::trunc);
    if (!csv_) throw IoError("cannot write " + csv_path_.string());
    jsonl_.open(jsonl_path_, std::ios::trunc);
    if (!jsonl_) throw IoError("cannot write " + jsonl_path_.string());
    csv_ << csv_header(schema_) << '\n';
    flush();
  }

  void append(const MetricRecord& r) {
    csv_ << csv_row(schema_, r) << '\n';
    jsonl_ << to_json(schema_, r).dump() << '\n';
    flush();
  }

  const std::filesystem::path& csv_path() const { return csv_path_; }
  const std::filesystem::path& jsonl_path() const { return jsonl_path_; }
  const MetricSchema& schema() const { return schema_; }

 private:
  void flush() {
    csv_.flush();
    jsonl_.flush();
    if (!csv_) throw IoError("write failed for " + csv_path_.string());
    if (!jsonl_) throw IoError("write failed for " + jsonl_path_.string());
  }

  MetricSchema schema_;
  std::filesystem::path csv_path_, jsonl_path_;
  std::ofstream csv_, jsonl_;
};

// ---------------------------------------------------------------------------
// Reading logs back

struct MetricLog {
  MetricSchema schema;
  std::vector<MetricRecord> records;
};

namespace log_detail {

inline std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::stringstream in(line);
  while (std::getline(in, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

inline double parse_cell(const std::string& s, const std::string& where) {
  if (s == "nan") return kMissing;
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (s.empty() || end != s.c_str() + s.size()) throw FormatError(where + ": bad number '" + s + "'");
  return v;
}

inline std::uint64_t parse_count(const std::string& s, const std::string& where) {
  if (s.empty() || s.find_first_not_of("0123456789") != std::string::npos) {
    throw FormatError(where + ": bad integer '" + s + "'");
  }
  return std::stoull(s);
}

}  // namespace log_detail

inline MetricLog parse_metrics_csv(std::istream& in, const std::string& origin) {
  std::string line;
  if (!std::getline(in, line)) throw FormatError(origin + ": missing header");
  const auto header = log_detail::split_csv(line);
  const auto& base = MetricSchema::base_columns();
  if (header.size() < base.size() || !std::equal(base.begin(), base.end(), header.begin())) {
    throw FormatError(origin + ": header does not start with the fixed columns");
  }
  MetricLog log;
  std::vector<std::string> groups;
  for (std::size_t i = base.size(); i < header.size(); ++i) {
    const auto colon = header[i].find(':');
    if (colon == std::string::npos) throw FormatError(origin + ": unknown column '" + header[i] + "'");
    const std::string group = header[i].substr(0, colon);
    const std::string name = header[i].substr(colon + 1);
    if (group == "elr") log.schema.params.push_back(name);
    else if (group == "delta_c") log.schema.layers.push_back(name);
    else if (group != "norm" && group != "update_norm" && group != "delta_a")
      throw FormatError(origin + ": unknown column '" + header[i] + "'");
  }
  if (log.schema.columns() != header) throw FormatError(origin + ": columns are not in the documented order");

  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const std::string where = origin + ":" + std::to_string(lineno);
    const auto cells = log_detail::split_csv(line);
    if (cells.size() != header.size()) {
      throw FormatError(where + ": " + std::to_string(cells.size()) + " cells, expected " + std::to_string(header.size()));
    }
    MetricRecord r;
    using log_detail::parse_cell;
    using log_detail::parse_count;
    r.step = parse_count(cells[0], where);
    r.epoch = parse_count(cells[1], where);
    r.phase = parse_count(cells[2], where);
    r.train_loss = parse_cell(cells[3], where);
    r.train_acc = parse_cell(cells[4], where);
    r.test_loss = parse_cell(cells[5], where);
    r.test_acc = parse_cell(cells[6], where);
    r.lr = parse_cell(cells[7], where);
    r.dead_units = parse_cell(cells[8], where);
    r.effective_rank = parse_cell(cells[9], where);
    r.rewarm_triggered = parse_count(cells[10], where);
    std::size_t c = base.size();
    for (auto* m : {&r.elr, &r.param_norm, &r.update_norm})
      for (const auto& p : log.schema.params) {
        const double v = parse_cell(cells[c++], where);
        if (!std::isnan(v)) (*m)[p] = v;
      }
    for (auto* m : {&r.delta_c, &r.delta_a})
      for (const auto& l : log.schema.layers) {
        const double v = parse_cell(cells[c++], where);
        if (!std::isnan(v)) (*m)[l] = v;
      }
    log.records.push_back(std::move(r));
  }
  return log;
}

inline MetricLog read_metrics_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path.string());
  return parse_metrics_csv(in, path.string());
}

}  // namespace elr
