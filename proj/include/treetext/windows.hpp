#pragma once

// Multi-scale window summaries: nine statistics per variable over (t - W, t].

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <sstream>
#include <string>
#include <tuple>
#include <unordered_map>
#include <vector>

#include "treetext/common.hpp"
#include "treetext/ingest.hpp"

namespace treetext {

enum class Stat : int { kLast = 0, kMean, kStd, kMin, kMax, kCount, kDelta, kTsLastGap, kMissing };

inline constexpr int kNumStats = 9;
inline constexpr double kMissingFill = -1.0;

inline constexpr std::array<const char*, kNumStats> kStatNames = {
    "last", "mean", "std", "min", "max", "count", "delta", "ts_last_gap", "missing"};

inline const char* stat_name(Stat s) { return kStatNames[static_cast<int>(s)]; }

inline std::optional<Stat> parse_stat(std::string_view s) {
  for (int i = 0; i < kNumStats; ++i)
    if (s == kStatNames[i]) return static_cast<Stat>(i);
  return std::nullopt;
}

// Feature layout is variable-major: index = variable * 9 + stat.
inline std::size_t feature_index(std::size_t variable, Stat s) {
  return variable * kNumStats + static_cast<std::size_t>(s);
}

inline std::vector<std::string> feature_names(const std::vector<std::string>& variables) {
  std::vector<std::string> out;
  out.reserve(variables.size() * kNumStats);
  for (const auto& v : variables)
    for (int s = 0; s < kNumStats; ++s) out.push_back(v + "__" + kStatNames[s]);
  return out;
}

struct WindowSpec {
  double end = 0.0;    // endpoint t, hours
  double width = 0.0;  // W, hours
  double start() const { return end - width; }
  bool operator==(const WindowSpec&) const = default;
  auto operator<=>(const WindowSpec&) const = default;
};

// Non-overlapping grid endpoints k*W <= horizon. With `include_horizon_endpoint`
// the horizon itself is appended when it is not already a grid point.
inline std::vector<WindowSpec> window_grid(double horizon, double width, bool include_horizon_endpoint = false) {
  std::vector<WindowSpec> out;
  if (!(width > 0) || width > horizon) return out;
  for (long k = 1;; ++k) {
    double t = static_cast<double>(k) * width;
    if (t > horizon + 1e-9) break;
    out.push_back({t, width});
  }
  if (include_horizon_endpoint && !out.empty() && std::abs(out.back().end - horizon) > 1e-9)
    out.push_back({horizon, width});
  return out;
}

struct SummaryRow {
  std::string patient_id;
  WindowSpec window;
  int label = 0;
  Split split = Split::kTrain;
  std::vector<double> stats;  // 9 * |variables|

  double at(std::size_t variable, Stat s) const { return stats[feature_index(variable, s)]; }
};

// Stats for one variable given its in-window observations in time order.
inline void summarize_variable(const std::vector<std::pair<double, double>>& obs, const WindowSpec& w,
                               double* out) {
  auto set = [&](Stat s, double v) { out[static_cast<int>(s)] = v; };
  if (obs.empty()) {
    for (Stat s : {Stat::kLast, Stat::kMean, Stat::kStd, Stat::kMin, Stat::kMax}) set(s, kMissingFill);
    set(Stat::kCount, 0.0);
    set(Stat::kDelta, 0.0);
    set(Stat::kTsLastGap, w.width);
    set(Stat::kMissing, 1.0);
    return;
  }
  const double n = static_cast<double>(obs.size());
  double sum = 0, mn = obs.front().second, mx = obs.front().second;
  for (const auto& [t, v] : obs) {
    sum += v;
    mn = std::min(mn, v);
    mx = std::max(mx, v);
  }
  const double mean = sum / n;
  double ss = 0;
  for (const auto& [t, v] : obs) ss += (v - mean) * (v - mean);
  const auto& last = obs.back();
  set(Stat::kLast, last.second);
  // Clamp guards against the rounding of sum / n escaping [min, max].
  set(Stat::kMean, std::clamp(mean, mn, mx));
  set(Stat::kStd, obs.size() == 1 ? 0.0 : std::sqrt(ss / n));
  set(Stat::kMin, mn);
  set(Stat::kMax, mx);
  set(Stat::kCount, n);
  set(Stat::kDelta, last.second - obs.front().second);
  set(Stat::kTsLastGap, w.end - last.first);
  set(Stat::kMissing, 0.0);
}

inline SummaryRow summarize(const PatientRecord& record, const WindowSpec& window,
                            const std::vector<std::string>& variables) {
  SummaryRow row;
  row.patient_id = record.id;
  row.window = window;
  row.label = record.label;
  row.stats.assign(variables.size() * kNumStats, 0.0);

  std::unordered_map<std::string, std::size_t> vindex;
  for (std::size_t i = 0; i < variables.size(); ++i) vindex.emplace(variables[i], i);
  std::vector<std::vector<std::pair<double, double>>> obs(variables.size());
  const double lo = window.start();
  for (const auto& e : record.events) {
    if (e.time <= lo || e.time > window.end) continue;
    auto it = vindex.find(e.variable);
    if (it == vindex.end()) continue;
    obs[it->second].emplace_back(e.time, e.value);
  }
  for (std::size_t v = 0; v < variables.size(); ++v)
    summarize_variable(obs[v], window, row.stats.data() + v * kNumStats);
  return row;
}

struct SummaryBank {
  std::vector<std::string> variables;
  std::vector<double> window_sizes;
  double horizon = 48.0;
  std::vector<SummaryRow> rows;

  std::size_t num_features() const { return variables.size() * kNumStats; }

  std::optional<std::size_t> find(const std::string& patient_id, double t, double w) const {
    auto it = index_.find(key(patient_id, t, w));
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }

  const SummaryRow& at(const std::string& patient_id, double t, double w) const {
    auto i = find(patient_id, t, w);
    if (!i) throw Error("no summary row for (" + patient_id + ", " + detail::format_shortest(t) + ", " +
                        detail::format_shortest(w) + ")");
    return rows[*i];
  }

  std::vector<const SummaryRow*> rows_for(double w, std::optional<Split> split = std::nullopt) const {
    std::vector<const SummaryRow*> out;
    for (const auto& r : rows)
      if (r.window.width == w && (!split || r.split == *split)) out.push_back(&r);
    return out;
  }

  std::vector<std::size_t> rows_of_patient(const std::string& patient_id) const {
    std::vector<std::size_t> out;
    auto [b, e] = by_patient_.equal_range(patient_id);
    for (auto it = b; it != e; ++it) out.push_back(it->second);
    std::sort(out.begin(), out.end());
    return out;
  }

  void reindex() {
    index_.clear();
    by_patient_.clear();
    for (std::size_t i = 0; i < rows.size(); ++i) {
      index_.emplace(key(rows[i].patient_id, rows[i].window.end, rows[i].window.width), i);
      by_patient_.emplace(rows[i].patient_id, i);
    }
  }

 private:
  static std::string key(const std::string& id, double t, double w) {
    return id + '\x1f' + detail::format_shortest(t) + '\x1f' + detail::format_shortest(w);
  }
  std::unordered_map<std::string, std::size_t> index_;
  std::unordered_multimap<std::string, std::size_t> by_patient_;
};

// Rows ordered by patient (cohort order), then window size as given, then endpoint.
inline SummaryBank build_summary_bank(const Cohort& cohort, const std::vector<double>& window_sizes,
                                      bool include_horizon_endpoint = false) {
  for (std::size_t i = 0; i < window_sizes.size(); ++i) {
    if (!(window_sizes[i] > 0)) throw Error("window sizes must be positive");
    for (std::size_t j = 0; j < i; ++j)
      if (window_sizes[i] == window_sizes[j]) throw Error("window sizes must be distinct");
  }
  SummaryBank bank;
  bank.variables = cohort.variables;
  bank.window_sizes = window_sizes;
  bank.horizon = cohort.horizon;
  for (const auto& rec : cohort.records) {
    Split sp = cohort.split_of(rec.id);
    for (double w : window_sizes) {
      for (const auto& spec : window_grid(cohort.horizon, w, include_horizon_endpoint)) {
        auto row = summarize(rec, spec, cohort.variables);
        row.split = sp;
        bank.rows.push_back(std::move(row));
      }
    }
  }
  bank.reindex();
  return bank;
}

inline std::string bank_to_csv(const SummaryBank& bank) {
  std::ostringstream out;
  out << "patient_id,t,W,label,split";
  for (const auto& f : feature_names(bank.variables)) out << ',' << f;
  out << '\n';
  for (const auto& r : bank.rows) {
    out << r.patient_id << ',' << detail::format_shortest(r.window.end) << ','
        << detail::format_shortest(r.window.width) << ',' << r.label << ',' << split_name(r.split);
    for (double v : r.stats) out << ',' << detail::format_shortest(v);
    out << '\n';
  }
  return out.str();
}

// Inverse of bank_to_csv. Window sizes are taken in first-appearance order.
inline SummaryBank bank_from_csv(std::istream& in, double horizon, const std::string& source = "<bank>") {
  SummaryBank bank;
  bank.horizon = horizon;
  std::string line;
  std::size_t lineno = 0;
  std::size_t nfeat = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    auto cells = detail::split_csv_line(line);
    if (lineno == 1) {
      if (cells.size() < 5 || cells[0] != "patient_id") throw ParseError(source, lineno, "bad bank header");
      nfeat = cells.size() - 5;
      if (nfeat % kNumStats != 0) throw ParseError(source, lineno, "feature count is not a multiple of 9");
      for (std::size_t f = 0; f < nfeat; f += kNumStats) {
        const auto& name = cells[5 + f];
        auto pos = name.rfind("__");
        bank.variables.push_back(name.substr(0, pos));
      }
      continue;
    }
    if (cells.size() != nfeat + 5) throw ParseError(source, lineno, "column count mismatch");
    SummaryRow r;
    r.patient_id = cells[0];
    if (!detail::parse_double(cells[1], r.window.end) || !detail::parse_double(cells[2], r.window.width))
      throw ParseError(source, lineno, "bad window");
    r.label = cells[3] == "1" ? 1 : 0;
    auto sp = parse_split(cells[4]);
    if (!sp) throw ParseError(source, lineno, "bad split");
    r.split = *sp;
    r.stats.resize(nfeat);
    for (std::size_t f = 0; f < nfeat; ++f)
      if (!detail::parse_double(cells[5 + f], r.stats[f])) throw ParseError(source, lineno, "bad feature value");
    if (std::find(bank.window_sizes.begin(), bank.window_sizes.end(), r.window.width) == bank.window_sizes.end())
      bank.window_sizes.push_back(r.window.width);
    bank.rows.push_back(std::move(r));
  }
  bank.reindex();
  return bank;
}

}  // namespace treetext
