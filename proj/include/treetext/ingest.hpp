#pragma once

// Patient data model, cohort loading (JSONL / long CSV) and cohort filters.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <istream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "json.hpp"
#include "treetext/common.hpp"

namespace treetext {

enum class Split { kTrain, kVal, kTest };

inline const char* split_name(Split s) {
  switch (s) {
    case Split::kTrain: return "train";
    case Split::kVal: return "val";
    case Split::kTest: return "test";
  }
  return "train";
}

inline std::optional<Split> parse_split(std::string_view s) {
  if (s == "train") return Split::kTrain;
  if (s == "val" || s == "valid" || s == "validation") return Split::kVal;
  if (s == "test") return Split::kTest;
  return std::nullopt;
}

struct Event {
  std::string variable;
  double time = 0.0;  // hours since admission
  double value = 0.0;
  bool operator==(const Event&) const = default;
};

using StaticValue = std::variant<double, std::string>;

inline std::string static_to_string(const StaticValue& v) {
  if (const auto* d = std::get_if<double>(&v)) return detail::format_shortest(*d);
  return std::get<std::string>(v);
}

struct PatientRecord {
  std::string id;
  std::vector<Event> events;  // sorted by time, stable
  std::vector<std::pair<std::string, StaticValue>> statics;  // declared order
  int label = 0;
  bool operator==(const PatientRecord&) const = default;
};

struct Cohort {
  std::vector<PatientRecord> records;  // sorted by id
  std::map<std::string, Split> split;
  double horizon = 48.0;
  std::vector<std::string> variables;

  // Positive fraction of the train split; 0 when the split is empty.
  double base_rate() const {
    std::size_t n = 0, pos = 0;
    for (const auto& r : records) {
      if (split_of(r.id) != Split::kTrain) continue;
      ++n;
      pos += r.label == 1;
    }
    return n == 0 ? 0.0 : static_cast<double>(pos) / static_cast<double>(n);
  }

  Split split_of(const std::string& id) const {
    auto it = split.find(id);
    if (it == split.end()) throw Error("no split assigned for patient " + id);
    return it->second;
  }

  const PatientRecord* find(const std::string& id) const {
    auto it = std::lower_bound(records.begin(), records.end(), id,
                               [](const PatientRecord& r, const std::string& k) { return r.id < k; });
    return it != records.end() && it->id == id ? &*it : nullptr;
  }

  std::vector<const PatientRecord*> in_split(Split s) const {
    std::vector<const PatientRecord*> out;
    for (const auto& r : records)
      if (split_of(r.id) == s) out.push_back(&r);
    return out;
  }

  bool operator==(const Cohort&) const = default;
};

enum class CohortFormat { kJsonl, kCsv };

struct LoadOptions {
  std::uint64_t split_seed = 0;
  // When set, events naming any other variable are rejected.
  std::optional<std::vector<std::string>> vocabulary;
  // Statics/labels sidecar for the long CSV format: id,label[,split][,static...]
  std::string sidecar_path;
};

// Deterministic 64/16/20 partition from a seeded hash of the id.
inline Split assign_split(const std::string& id, std::uint64_t seed) {
  double u = detail::unit_interval(detail::splitmix64(detail::fnv1a(id) ^ detail::splitmix64(seed)));
  if (u < 0.64) return Split::kTrain;
  if (u < 0.80) return Split::kVal;
  return Split::kTest;
}

namespace detail {

inline void finalize_cohort(Cohort& cohort, std::map<std::string, std::optional<Split>>& declared,
                            double horizon, const LoadOptions& opts) {
  if (cohort.records.empty()) throw Error("empty cohort");
  cohort.horizon = horizon;
  std::sort(cohort.records.begin(), cohort.records.end(),
            [](const PatientRecord& a, const PatientRecord& b) { return a.id < b.id; });
  for (std::size_t i = 1; i < cohort.records.size(); ++i)
    if (cohort.records[i].id == cohort.records[i - 1].id)
      throw Error("duplicate patient id " + cohort.records[i].id);

  std::set<std::string> seen;
  for (auto& r : cohort.records) {
    std::stable_sort(r.events.begin(), r.events.end(),
                     [](const Event& a, const Event& b) { return a.time < b.time; });
    std::erase_if(r.events, [horizon](const Event& e) { return e.time > horizon; });
    for (const auto& e : r.events) seen.insert(e.variable);
    auto d = declared[r.id];
    cohort.split[r.id] = d ? *d : assign_split(r.id, opts.split_seed);
  }
  if (opts.vocabulary) {
    cohort.variables = *opts.vocabulary;
  } else {
    cohort.variables.assign(seen.begin(), seen.end());
  }
}

inline void check_variable(const LoadOptions& opts, const std::string& var, const std::string& source,
                           std::size_t line) {
  if (!opts.vocabulary) return;
  const auto& vocab = *opts.vocabulary;
  if (std::find(vocab.begin(), vocab.end(), var) == vocab.end())
    throw ParseError(source, line, "unknown variable '" + var + "' (not in declared vocabulary)");
}

inline Event make_event(std::string var, double time, double value, const std::string& source,
                        std::size_t line) {
  if (!std::isfinite(time) || time < 0) throw ParseError(source, line, "event time must be finite and >= 0");
  if (!std::isfinite(value)) throw ParseError(source, line, "event value must be finite");
  return Event{std::move(var), time, value};
}

}  // namespace detail

inline Cohort parse_cohort_jsonl(std::istream& in, double horizon, const LoadOptions& opts = {},
                                 const std::string& source = "<jsonl>") {
  if (!(horizon > 0)) throw Error("horizon must be > 0");
  Cohort cohort;
  std::map<std::string, std::optional<Split>> declared;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::ordered_json j;
    try {
      j = nlohmann::ordered_json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(source, lineno, std::string("malformed JSON: ") + e.what());
    }
    if (!j.is_object()) throw ParseError(source, lineno, "record must be a JSON object");
    for (const char* field : {"id", "events", "label"})
      if (!j.contains(field)) throw ParseError(source, lineno, std::string("missing field '") + field + "'");

    PatientRecord r;
    if (j["id"].is_string()) {
      r.id = j["id"].get<std::string>();
    } else if (j["id"].is_number_integer()) {
      r.id = std::to_string(j["id"].get<long long>());
    } else {
      throw ParseError(source, lineno, "field 'id' must be a string");
    }
    const auto& lab = j["label"];
    if (lab.is_boolean()) {
      r.label = lab.get<bool>() ? 1 : 0;
    } else if (lab.is_number() && (lab.get<double>() == 0.0 || lab.get<double>() == 1.0)) {
      r.label = lab.get<double>() == 1.0 ? 1 : 0;
    } else {
      throw ParseError(source, lineno, "field 'label' must be 0 or 1");
    }
    if (!j["events"].is_array()) throw ParseError(source, lineno, "field 'events' must be an array");
    for (const auto& ev : j["events"]) {
      if (!ev.is_array() || ev.size() != 3 || !ev[0].is_string() || !ev[1].is_number() || !ev[2].is_number())
        throw ParseError(source, lineno, "events must be [variable, time, value] triples");
      auto var = ev[0].get<std::string>();
      detail::check_variable(opts, var, source, lineno);
      r.events.push_back(detail::make_event(std::move(var), ev[1].get<double>(), ev[2].get<double>(), source, lineno));
    }
    if (j.contains("statics")) {
      if (!j["statics"].is_object()) throw ParseError(source, lineno, "field 'statics' must be an object");
      for (const auto& [k, v] : j["statics"].items()) {
        if (v.is_number()) {
          r.statics.emplace_back(k, v.get<double>());
        } else if (v.is_string()) {
          r.statics.emplace_back(k, v.get<std::string>());
        } else {
          throw ParseError(source, lineno, "static '" + k + "' must be a string or number");
        }
      }
    }
    std::optional<Split> sp;
    if (j.contains("split")) {
      if (!j["split"].is_string() || !(sp = parse_split(j["split"].get<std::string>())))
        throw ParseError(source, lineno, "field 'split' must be train/val/test");
    }
    declared[r.id] = sp;
    cohort.records.push_back(std::move(r));
  }
  detail::finalize_cohort(cohort, declared, horizon, opts);
  return cohort;
}

// Long CSV: events file `id,variable,time,value`; sidecar `id,label[,split][,static...]`.
inline Cohort parse_cohort_csv(std::istream& events_in, std::istream& sidecar_in, double horizon,
                               const LoadOptions& opts = {}, const std::string& source = "<csv>",
                               const std::string& sidecar_source = "<sidecar>") {
  if (!(horizon > 0)) throw Error("horizon must be > 0");
  Cohort cohort;
  std::map<std::string, std::optional<Split>> declared;
  std::map<std::string, std::size_t> index;

  std::string line;
  std::size_t lineno = 0;
  std::vector<std::string> header;
  while (std::getline(sidecar_in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    auto cells = detail::split_csv_line(line);
    if (header.empty()) {
      header = cells;
      if (header.size() < 2 || header[0] != "id" || header[1] != "label")
        throw ParseError(sidecar_source, lineno, "sidecar header must start with id,label");
      continue;
    }
    if (cells.size() != header.size()) throw ParseError(sidecar_source, lineno, "column count mismatch");
    PatientRecord r;
    r.id = cells[0];
    if (cells[1] == "1") {
      r.label = 1;
    } else if (cells[1] == "0") {
      r.label = 0;
    } else {
      throw ParseError(sidecar_source, lineno, "field 'label' must be 0 or 1");
    }
    std::optional<Split> sp;
    for (std::size_t c = 2; c < header.size(); ++c) {
      if (header[c] == "split") {
        if (!cells[c].empty() && !(sp = parse_split(cells[c])))
          throw ParseError(sidecar_source, lineno, "field 'split' must be train/val/test");
        continue;
      }
      double d;
      if (detail::parse_double(cells[c], d)) {
        r.statics.emplace_back(header[c], d);
      } else {
        r.statics.emplace_back(header[c], cells[c]);
      }
    }
    if (index.count(r.id)) throw ParseError(sidecar_source, lineno, "duplicate id " + r.id);
    index[r.id] = cohort.records.size();
    declared[r.id] = sp;
    cohort.records.push_back(std::move(r));
  }

  lineno = 0;
  bool saw_header = false;
  while (std::getline(events_in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    auto cells = detail::split_csv_line(line);
    if (!saw_header) {
      if (cells.size() != 4 || cells[0] != "id" || cells[1] != "variable" || cells[2] != "time" || cells[3] != "value")
        throw ParseError(source, lineno, "events header must be id,variable,time,value");
      saw_header = true;
      continue;
    }
    if (cells.size() != 4) throw ParseError(source, lineno, "expected 4 columns");
    auto it = index.find(cells[0]);
    if (it == index.end()) throw ParseError(source, lineno, "patient '" + cells[0] + "' missing from sidecar");
    double t, v;
    if (!detail::parse_double(cells[2], t)) throw ParseError(source, lineno, "field 'time' is not a number");
    if (!detail::parse_double(cells[3], v)) throw ParseError(source, lineno, "field 'value' is not a number");
    detail::check_variable(opts, cells[1], source, lineno);
    cohort.records[it->second].events.push_back(detail::make_event(cells[1], t, v, source, lineno));
  }
  detail::finalize_cohort(cohort, declared, horizon, opts);
  return cohort;
}

inline Cohort load_cohort(const std::string& path, CohortFormat format, double horizon,
                          const LoadOptions& opts = {}) {
  std::ifstream in(path);
  if (!in) throw MissingArtifact("cohort file not found: " + path);
  if (format == CohortFormat::kJsonl) return parse_cohort_jsonl(in, horizon, opts, path);
  if (opts.sidecar_path.empty()) throw Error("CSV cohorts need a statics/labels sidecar file");
  std::ifstream side(opts.sidecar_path);
  if (!side) throw MissingArtifact("sidecar file not found: " + opts.sidecar_path);
  return parse_cohort_csv(in, side, horizon, opts, path, opts.sidecar_path);
}

inline nlohmann::ordered_json record_to_json(const PatientRecord& r, std::optional<Split> split) {
  nlohmann::ordered_json j;
  j["id"] = r.id;
  nlohmann::ordered_json statics = nlohmann::ordered_json::object();
  for (const auto& [k, v] : r.statics) {
    if (const auto* d = std::get_if<double>(&v)) {
      statics[k] = *d;
    } else {
      statics[k] = std::get<std::string>(v);
    }
  }
  j["statics"] = std::move(statics);
  nlohmann::ordered_json events = nlohmann::ordered_json::array();
  for (const auto& e : r.events) events.push_back({e.variable, e.time, e.value});
  j["events"] = std::move(events);
  j["label"] = r.label;
  if (split) j["split"] = split_name(*split);
  return j;
}

inline std::string cohort_to_jsonl(const Cohort& cohort) {
  std::string out;
  for (const auto& r : cohort.records) {
    out += record_to_json(r, cohort.split_of(r.id)).dump();
    out += '\n';
  }
  return out;
}

struct FilterCriterion {
  std::string name;
  std::size_t threshold = 0;
  std::size_t removed = 0;
  std::size_t removed_positives = 0;
};

struct FilterReport {
  std::vector<FilterCriterion> criteria;

  std::size_t removed() const {
    std::size_t n = 0;
    for (const auto& c : criteria) n += c.removed;
    return n;
  }

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json j;
    j["removed"] = removed();
    auto arr = nlohmann::ordered_json::array();
    for (const auto& c : criteria)
      arr.push_back({{"criterion", c.name},
                     {"threshold", c.threshold},
                     {"removed", c.removed},
                     {"removed_positives", c.removed_positives}});
    j["criteria"] = std::move(arr);
    return j;
  }
};

// Drops patients with fewer than `min_events` observations inside the horizon.
inline std::pair<Cohort, FilterReport> apply_filters(const Cohort& cohort, std::size_t min_events) {
  Cohort out = cohort;
  FilterReport report;
  if (min_events == 0) return {std::move(out), std::move(report)};

  FilterCriterion crit{"min_events", min_events, 0, 0};
  std::vector<PatientRecord> kept;
  for (auto& r : out.records) {
    std::size_t n = static_cast<std::size_t>(std::count_if(
        r.events.begin(), r.events.end(), [&](const Event& e) { return e.time <= cohort.horizon; }));
    if (n < min_events) {
      ++crit.removed;
      crit.removed_positives += r.label == 1;
      out.split.erase(r.id);
    } else {
      kept.push_back(std::move(r));
    }
  }
  out.records = std::move(kept);
  report.criteria.push_back(crit);
  return {std::move(out), std::move(report)};
}

}  // namespace treetext
