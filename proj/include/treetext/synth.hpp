#pragma once

// Seeded synthetic cohorts with window-localized risk patterns.
//
// Each variable is observed at homogeneous Poisson times with Gaussian values
// around a per-patient baseline. Positives realize one or more patterns: a
// shift of a variable's values inside a fixed time region. The annotations
// record which patient carries which pattern so evidence selections can be
// checked against ground truth.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "json.hpp"
#include "treetext/common.hpp"
#include "treetext/ingest.hpp"
#include "treetext/nn.hpp"

namespace treetext {

struct SynthVariable {
  std::string name;
  double mean = 0.0;
  double sd = 1.0;
  double rate = 1.0;  // events per hour
};

struct SynthPattern {
  std::string variable;
  double region_start = 40.0;  // pattern region (start, end] in hours
  double region_end = 48.0;
  double shift_sd = -2.0;      // value shift in units of the variable's sd
  double probability = 1.0;    // chance a positive realizes this pattern
};

struct SynthConfig {
  std::size_t n_patients = 2000;
  double horizon = 48.0;
  double prevalence = 0.15;
  double baseline_sd = 0.5;  // between-patient spread of the baseline, in sd units
  std::vector<SynthVariable> variables = default_variables();
  std::vector<SynthPattern> patterns = default_patterns();
  std::uint64_t seed = 7;

  static std::vector<SynthVariable> default_variables() {
    return {{"HR", 85, 12, 1.0},        {"MAP", 78, 9, 1.0},      {"SBP", 120, 15, 1.0},
            {"RR", 18, 4, 0.5},         {"Temp", 37.0, 0.6, 0.25}, {"SpO2", 96, 2, 1.0},
            {"Lactate", 1.6, 0.6, 0.1}, {"WBC", 10, 3, 0.08},     {"Creatinine", 1.1, 0.4, 0.08},
            {"GCS", 13, 2, 0.25}};
  }

  static std::vector<SynthPattern> default_patterns() {
    return {{"MAP", 40.0, 48.0, -2.0, 0.7}, {"HR", 32.0, 48.0, 1.6, 0.7}};
  }

  void validate() const {
    if (!(prevalence > 0 && prevalence < 1)) throw Error("prevalence must lie in (0, 1)");
    if (!(horizon > 0)) throw Error("horizon must be positive");
    for (const auto& v : variables)
      if (!(v.rate > 0) || !(v.sd > 0)) throw Error("variable " + v.name + " needs positive rate and sd");
    for (const auto& p : patterns) {
      if (std::none_of(variables.begin(), variables.end(), [&](const SynthVariable& v) { return v.name == p.variable; }))
        throw Error("pattern names unknown variable " + p.variable);
      if (!(p.region_start < p.region_end)) throw Error("pattern region must be non-empty");
    }
  }
};

struct SynthAnnotations {
  std::vector<SynthPattern> patterns;
  std::map<std::string, std::vector<std::size_t>> carried;  // patient -> pattern indices

  // A window carries signal when its overlap with a carried pattern region
  // covers at least half of the shorter of the two intervals.
  bool window_has_signal(const std::string& patient, double t, double w) const {
    auto it = carried.find(patient);
    if (it == carried.end()) return false;
    for (std::size_t k : it->second) {
      const auto& p = patterns[k];
      double overlap = std::min(t, p.region_end) - std::max(t - w, p.region_start);
      if (overlap > 0 && overlap >= 0.5 * std::min(w, p.region_end - p.region_start)) return true;
    }
    return false;
  }

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json j;
    auto pats = nlohmann::ordered_json::array();
    for (const auto& p : patterns)
      pats.push_back({{"variable", p.variable},
                      {"region", {p.region_start, p.region_end}},
                      {"shift_sd", p.shift_sd},
                      {"probability", p.probability}});
    j["patterns"] = std::move(pats);
    auto c = nlohmann::ordered_json::object();
    for (const auto& [id, ks] : carried) c[id] = ks;
    j["carried"] = std::move(c);
    return j;
  }

  static SynthAnnotations from_json(const nlohmann::json& j) {
    SynthAnnotations a;
    for (const auto& p : j.at("patterns")) {
      SynthPattern s;
      s.variable = p.at("variable").get<std::string>();
      s.region_start = p.at("region").at(0).get<double>();
      s.region_end = p.at("region").at(1).get<double>();
      s.shift_sd = p.at("shift_sd").get<double>();
      s.probability = p.at("probability").get<double>();
      a.patterns.push_back(s);
    }
    for (const auto& [id, ks] : j.at("carried").items()) a.carried[id] = ks.get<std::vector<std::size_t>>();
    return a;
  }
};

struct SynthOutput {
  Cohort cohort;
  SynthAnnotations annotations;
};

inline std::string synth_patient_id(std::size_t i) {
  std::string n = std::to_string(i);
  return "p" + std::string(n.size() < 5 ? 5 - n.size() : 0, '0') + n;
}

inline SynthOutput generate(const SynthConfig& cfg) {
  cfg.validate();
  SynthOutput out;
  out.annotations.patterns = cfg.patterns;
  auto& cohort = out.cohort;
  cohort.horizon = cfg.horizon;
  for (const auto& v : cfg.variables) cohort.variables.push_back(v.name);

  for (std::size_t i = 0; i < cfg.n_patients; ++i) {
    const std::uint64_t pseed = detail::splitmix64(cfg.seed * 0x9E3779B97F4A7C15ULL + i);
    std::mt19937_64 rng(pseed);
    nn::Gaussian gauss(detail::splitmix64(pseed ^ 0xa5a5a5a5ULL));
    auto uniform = [&rng] { return detail::unit_interval(rng()); };

    PatientRecord r;
    r.id = synth_patient_id(i);
    r.label = uniform() < cfg.prevalence ? 1 : 0;
    r.statics.emplace_back("Age", std::floor(18 + 72 * uniform()));
    r.statics.emplace_back("Gender", std::string(uniform() < 0.5 ? "Male" : "Female"));

    std::vector<std::size_t> carried;
    if (r.label == 1 && !cfg.patterns.empty()) {
      for (std::size_t k = 0; k < cfg.patterns.size(); ++k)
        if (uniform() < cfg.patterns[k].probability) carried.push_back(k);
      if (carried.empty()) carried.push_back(static_cast<std::size_t>(uniform() * cfg.patterns.size()));
      out.annotations.carried[r.id] = carried;
    }

    for (const auto& v : cfg.variables) {
      const double baseline = v.mean + cfg.baseline_sd * v.sd * gauss();
      double t = 0.0;
      while (true) {
        double u = uniform();
        t += -std::log(1.0 - u) / v.rate;
        if (t > cfg.horizon) break;
        double x = baseline + v.sd * gauss();
        for (std::size_t k : carried) {
          const auto& p = cfg.patterns[k];
          if (p.variable == v.name && t > p.region_start && t <= p.region_end) x += p.shift_sd * v.sd;
        }
        r.events.push_back({v.name, t, x});
      }
    }
    std::stable_sort(r.events.begin(), r.events.end(), [](const Event& a, const Event& b) { return a.time < b.time; });
    cohort.split[r.id] = assign_split(r.id, cfg.seed);
    cohort.records.push_back(std::move(r));
  }
  std::sort(cohort.records.begin(), cohort.records.end(),
            [](const PatientRecord& a, const PatientRecord& b) { return a.id < b.id; });
  return out;
}

}  // namespace treetext
