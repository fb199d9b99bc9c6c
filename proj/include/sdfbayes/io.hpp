#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "sdfbayes/engine.hpp"
#include "sdfbayes/simulation.hpp"

namespace sdfb {

using json = nlohmann::json;

inline json to_json(Dc dc) { return json::array({dc.j, dc.k}); }

inline Dc dc_from_json(const json& j) {
  if (j.is_array() && j.size() == 2 && j[0].is_number_integer() && j[1].is_number_integer())
    return Dc{j[0].get<int>(), j[1].get<int>()};
  if (j.is_object() && j.contains("j") && j.contains("k")) return Dc{j.at("j").get<int>(), j.at("k").get<int>()};
  throw config_error("a DC is [j, k] or {\"j\": j, \"k\": k}");
}

template <typename T>
json to_json(const CellMatrix<T>& m) {
  json rows = json::array();
  for (int j = 1; j <= m.rows(); ++j) {
    json row = json::array();
    for (int k = 1; k <= m.cols(); ++k) row.push_back(m(j, k));
    rows.push_back(std::move(row));
  }
  return rows;
}

template <typename T>
json opt(const std::optional<T>& v) {
  return v ? json(*v) : json(nullptr);
}

inline json opt(const std::optional<Dc>& v) { return v ? to_json(*v) : json(nullptr); }

// --------------------------------------------------------------- design spec

inline json to_json(const DesignSpec& d) {
  return {
      {"algorithm", to_string(d.algorithm)},
      {"recruitment", to_string(d.recruitment)},
      {"grid", {{"doseA", d.grid.dose_a()}, {"doseB", d.grid.dose_b()}}},
      {"T", d.T},
      {"groups", d.groups},
      {"groupXi", d.group_xi},
      {"u", d.sdf.u},
      {"v", d.sdf.v},
      {"xi", d.sdf.xi},
      {"eps", d.sdf.eps},
      {"delta", d.sdf.delta},
      {"psi", d.sdf.psi},
      {"warmStartR", opt(d.sdf.warm_start_r)},
      {"warmStartRounds", opt(d.sdf.warm_start_rounds)},
      {"cautionEnabled", d.sdf.caution_enabled},
      {"targetSafety", opt(d.sdf.target_safety)},
      {"prop1Schedule", d.sdf.prop1_schedule},
      {"sota", {{"ce", d.sota.ce}, {"cd", d.sota.cd}, {"start", to_json(d.sota.start)}}},
      {"structmab", {{"alpha", d.structmab.alpha}, {"filterQ", d.structmab.filter_q}, {"safetyQ", d.structmab.safety_q}}},
      {"sampler",
       {{"L", d.sampler.L},
        {"burnIn", d.sampler.burn_in},
        {"warmStart", d.sampler.warm_start},
        {"initialPoints", d.sampler.initial_points}}},
      {"prior", d.prior.name},
      {"pEs", d.p_es},
  };
}

struct FieldError {
  std::string field;
  std::string message;
};

inline json to_json(const std::vector<FieldError>& errs) {
  json a = json::array();
  for (const auto& e : errs) a.push_back({{"field", e.field}, {"message", e.message}});
  return a;
}

/// Semantic checks of a design, one entry per offending field.
inline std::vector<FieldError> design_errors(const DesignSpec& d) {
  std::vector<FieldError> out;
  auto check = [&](bool ok, const char* field, const char* msg) {
    if (!ok) out.push_back({field, msg});
  };
  const SdfConfig& s = d.sdf;
  check(s.xi > 0.0 && s.xi < 1.0, "xi", "must lie in (0,1)");
  check(s.eps > 0.0, "eps", "must be positive");
  check(s.delta > 0.0 && s.delta < 1.0, "delta", "must lie in (0,1)");
  check(s.u > 0.0 && s.u < std::min(s.xi, 1.0 - s.xi), "u", "must lie in (0, min(xi, 1-xi))");
  check(s.v > 0.0 && s.v < 1.0, "v", "must lie in (0,1)");
  check(s.psi >= 0.0 && s.psi < s.v, "psi", "must satisfy 0 <= psi < v");
  check(d.T >= 1, "T", "must be >= 1");
  check(!s.warm_start_r || !std::isnan(*s.warm_start_r), "warmStartR", "must be a number");
  check(!s.target_safety || (*s.target_safety > 0.0 && *s.target_safety < 1.0), "targetSafety", "must lie in (0,1)");
  check(d.groups >= 1, "groups", "need at least one group");
  check(d.recruitment != Recruitment::single || d.groups == 1, "groups", "single recruitment needs exactly one group");
  check(d.recruitment != Recruitment::ar || uses_sampler(d.algorithm), "recruitment",
        "adaptive recruitment needs a posterior-sampling algorithm");
  check(d.group_xi.empty() || static_cast<int>(d.group_xi.size()) == d.groups, "groupXi", "one target per group");
  for (double x : d.group_xi) check(x > d.sdf.u && x < 1.0 - d.sdf.u, "groupXi", "targets must lie in (u, 1-u)");
  check(d.p_es > 0.0 && d.p_es <= 1.0, "pEs", "must lie in (0,1]");
  check(d.sota.ce > 0.0 && d.sota.ce < 1.0 && d.sota.cd > 0.0 && d.sota.cd < 1.0, "sota", "ce and cd must lie in (0,1)");
  check(d.sota.ce + d.sota.cd > 1.0, "sota", "needs ce + cd > 1");
  check(d.grid.contains(d.sota.start), "sota.start", "outside the grid");
  check(d.structmab.alpha > 0.0, "structmab.alpha", "must be positive");
  check(d.sampler.L >= 1, "sampler.L", "must be >= 1");
  check(d.sampler.burn_in >= 0, "sampler.burnIn", "must be >= 0");
  if (out.empty()) {
    try {
      d.validate();
    } catch (const std::exception& e) {
      out.push_back({"design", e.what()});
    }
  }
  return out;
}

/// Parses a design; unknown or mistyped fields are reported, not ignored.
inline DesignSpec design_from_json(const json& j, std::vector<FieldError>& errors) {
  DesignSpec d;
  if (!j.is_object()) {
    errors.push_back({"design", "must be a JSON object"});
    return d;
  }
  static const std::set<std::string> known = {
      "algorithm", "recruitment", "grid",          "T",           "groups",     "groupXi",    "u",
      "v",         "xi",          "eps",           "delta",       "psi",        "warmStartR", "warmStartRounds",
      "cautionEnabled", "targetSafety", "prop1Schedule", "sota", "structmab", "sampler",   "prior",
      "pEs",       "seed",        "priorSeeds"};
  for (const auto& [key, value] : j.items())
    if (!known.contains(key)) errors.push_back({key, "unknown field"});

  auto field = [&](const char* name, auto setter) {
    if (!j.contains(name) || j.at(name).is_null()) return;
    try {
      setter(j.at(name));
    } catch (const std::exception& e) {
      errors.push_back({name, e.what()});
    }
  };
  auto number = [](const json& v) {
    if (!v.is_number()) throw config_error("must be a number");
    return v.get<double>();
  };
  auto integer = [](const json& v) {
    if (!v.is_number_integer()) throw config_error("must be an integer");
    return v.get<int>();
  };
  auto boolean = [](const json& v) {
    if (!v.is_boolean()) throw config_error("must be a boolean");
    return v.get<bool>();
  };

  field("algorithm", [&](const json& v) { d.algorithm = parse_algorithm(v.get<std::string>()); });
  field("recruitment", [&](const json& v) { d.recruitment = parse_recruitment(v.get<std::string>()); });
  field("grid", [&](const json& v) {
    d.grid = DoseGrid(v.at("doseA").get<std::vector<double>>(), v.at("doseB").get<std::vector<double>>());
  });
  field("T", [&](const json& v) { d.T = integer(v); });
  field("groups", [&](const json& v) { d.groups = integer(v); });
  field("groupXi", [&](const json& v) { d.group_xi = v.get<std::vector<double>>(); });
  field("u", [&](const json& v) { d.sdf.u = number(v); });
  field("v", [&](const json& v) { d.sdf.v = number(v); });
  field("xi", [&](const json& v) { d.sdf.xi = number(v); });
  field("eps", [&](const json& v) { d.sdf.eps = number(v); });
  field("delta", [&](const json& v) { d.sdf.delta = number(v); });
  field("psi", [&](const json& v) { d.sdf.psi = number(v); });
  field("warmStartR", [&](const json& v) { d.sdf.warm_start_r = number(v); });
  field("warmStartRounds", [&](const json& v) { d.sdf.warm_start_rounds = integer(v); });
  field("cautionEnabled", [&](const json& v) { d.sdf.caution_enabled = boolean(v); });
  field("targetSafety", [&](const json& v) { d.sdf.target_safety = number(v); });
  field("prop1Schedule", [&](const json& v) { d.sdf.prop1_schedule = boolean(v); });
  field("sota", [&](const json& v) {
    d.sota.ce = v.value("ce", d.sota.ce);
    d.sota.cd = v.value("cd", d.sota.cd);
    if (v.contains("start")) d.sota.start = dc_from_json(v.at("start"));
  });
  field("structmab", [&](const json& v) {
    d.structmab.alpha = v.value("alpha", d.structmab.alpha);
    d.structmab.filter_q = v.value("filterQ", d.structmab.filter_q);
    d.structmab.safety_q = v.value("safetyQ", d.structmab.safety_q);
  });
  field("sampler", [&](const json& v) {
    d.sampler.L = v.value("L", d.sampler.L);
    d.sampler.burn_in = v.value("burnIn", d.sampler.burn_in);
    d.sampler.warm_start = v.value("warmStart", d.sampler.warm_start);
    d.sampler.initial_points = v.value("initialPoints", d.sampler.initial_points);
  });
  field("prior", [&](const json& v) { d.prior = PriorSpec::by_name(v.get<std::string>()); });
  field("pEs", [&](const json& v) { d.p_es = number(v); });
  if (errors.empty())
    for (auto& e : design_errors(d)) errors.push_back(std::move(e));
  return d;
}

// ------------------------------------------------------------------ records

inline json to_json(const Observation& o) {
  json j = {{"round", o.round}, {"dc", to_json(o.dc)}, {"y", o.y}};
  if (o.group) j["group"] = *o.group;
  return j;
}

inline json to_json(const TrialHistory& h) {
  json seq = json::array();
  for (const auto& o : h.sequence()) seq.push_back(to_json(o));
  return seq;
}

inline TrialHistory history_from_json(const json& seq, const DoseGrid& grid) {
  if (!seq.is_array()) throw config_error("history must be an array of observations");
  TrialHistory h(grid);
  for (const auto& o : seq) {
    const Dc dc = dc_from_json(o.at("dc"));
    if (!grid.contains(dc)) throw config_error("history DC outside the grid: " + to_string(dc));
    h.record(dc, o.at("y").get<int>(), o.value("round", h.size() + 1));
  }
  return h;
}

inline json to_json(const RoundDecision& d) {
  return {{"t", d.t},
          {"chosen", opt(d.chosen)},
          {"branch", to_string(d.branch)},
          {"candidate", to_json(d.candidate)},
          {"residual", d.residual},
          {"percentile", d.percentile},
          {"w", opt(d.w)}};
}

inline json to_json(const RoundRecord& r, Algorithm a) {
  json j = {{"t", r.t},
            {"algorithm", to_string(a)},
            {"group", r.group},
            {"mode", to_string(r.mode)},
            {"recommended", to_json(r.recommended)},
            {"administered", to_json(r.administered)},
            {"y", r.y},
            {"samplerSeed", std::to_string(r.sampler_seed)},
            {"deviation", r.overridden}};
  if (r.branch) j["branch"] = to_string(*r.branch);
  if (r.residual) j["residual"] = *r.residual;
  if (r.w) j["w"] = *r.w;
  if (r.flagged) j["flagged"] = true;
  return j;
}

inline json to_json(const Proposal& p) {
  json groups = json::array();
  for (const auto& g : p.groups)
    groups.push_back({{"group", g.group},
                      {"dc", opt(g.dc)},
                      {"ei", opt(g.ei)},
                      {"stoppedRecruiting", g.stopped},
                      {"terminated", g.terminated}});
  return {{"t", p.t},
          {"group", p.group},
          {"dc", to_json(p.dc)},
          {"mode", to_string(p.mode)},
          {"groups", std::move(groups)},
          {"samplerSeed", std::to_string(p.sampler_seed)},
          {"flagged", p.flagged}};
}

inline json to_json(const TrialVerdict& v) {
  json groups = json::array();
  for (const auto& g : v.groups)
    groups.push_back({{"group", g.group},
                      {"recommendation", opt(g.recommendation)},
                      {"degenerate", g.degenerate},
                      {"patients", g.patients},
                      {"dlts", g.dlts},
                      {"stoppedAtRound", opt(g.stopped_at)},
                      {"terminatedAtRound", opt(g.terminated_at)}});
  return {{"status", to_string(v.status)}, {"patients", v.patients}, {"dlts", v.dlts}, {"groups", std::move(groups)}};
}

inline json to_json(const RunResult& r, Algorithm a) {
  json groups = json::array();
  for (const auto& g : r.groups)
    groups.push_back({{"truth", g.truth},
                      {"recommendation", opt(g.recommendation)},
                      {"errorFlag", g.error},
                      {"safetyViolation", g.violation},
                      {"dltRate", g.dlt_rate},
                      {"patients", g.patients},
                      {"allocationCounts", to_json(g.allocation)},
                      {"stoppedAtRound", opt(g.stopped_at)}});
  json log = json::array();
  for (const auto& rec : r.log) log.push_back(to_json(rec, a));
  return {{"scenario", r.scenario},
          {"algorithm", r.algorithm},
          {"seed", r.seed},
          {"groups", std::move(groups)},
          {"safetyViolation", r.violation},
          {"dltRate", r.dlt_rate},
          {"errorRate", r.error},
          {"terminatedEarly", r.terminated_early},
          {"recruitFractions", r.recruit_fractions},
          {"decisions", std::move(log)}};
}

// ------------------------------------------------------------------- reports

inline json to_json(const Estimate& e) { return {{"mean", e.mean}, {"hw", e.hw}}; }

inline json to_json(const Summary& s) {
  json groups = json::array();
  for (const auto& g : s.groups) {
    json gj = {{"truth", g.truth},
               {"safetyViolationRate", to_json(g.violation)},
               {"errorRate", to_json(g.error)},
               {"dltRate", to_json(g.dlt_rate)},
               {"recruitFraction", to_json(g.recruit_fraction)},
               {"heatmap", to_json(g.heatmap)}};
    if (s.alt_safety) gj["altSafetyViolationRate"] = to_json(g.alt_violation);
    groups.push_back(std::move(gj));
  }
  json j = {{"scenario", s.scenario},
            {"algorithm", s.algorithm},
            {"runs", s.runs},
            {"safetyViolationRate", to_json(s.violation)},
            {"errorRate", to_json(s.error)},
            {"dltRate", to_json(s.dlt_rate)},
            {"terminatedFraction", s.terminated},
            {"groups", std::move(groups)}};
  if (s.alt_safety) {
    j["altSafety"] = *s.alt_safety;
    j["altSafetyViolationRate"] = to_json(s.alt_violation);
  }
  return j;
}

inline std::string fixed3(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3f", x);
  return buf;
}

inline const char* kCsvHeader = "scenario,algorithm,safety_viol,safety_ci,err_rate,err_ci,dlt_rate,dlt_ci";

inline std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string q = "\"";
  for (char c : s) q += c == '"' ? std::string("\"\"") : std::string(1, c);
  return q + "\"";
}

/// Entire-trial row per summary, then one row per group of multi-group runs
/// with the scenario column "<row>/<group truth>".
inline void write_csv(std::ostream& os, const std::vector<Summary>& rows) {
  os << kCsvHeader << '\n';
  auto line = [&](const std::string& scen, const std::string& alg, const Estimate& v, const Estimate& e,
                  const Estimate& d) {
    os << csv_field(scen) << ',' << csv_field(alg) << ',' << fixed3(v.mean) << ',' << fixed3(v.hw) << ','
       << fixed3(e.mean) << ',' << fixed3(e.hw) << ',' << fixed3(d.mean) << ',' << fixed3(d.hw) << '\n';
  };
  for (const auto& s : rows) {
    line(s.scenario, s.algorithm, s.violation, s.error, s.dlt_rate);
    if (s.groups.size() > 1)
      for (const auto& g : s.groups) line(s.scenario + "/" + g.truth, s.algorithm, g.violation, g.error, g.dlt_rate);
  }
}

inline void write_json(std::ostream& os, const std::vector<Summary>& rows) {
  json a = json::array();
  for (const auto& s : rows) a.push_back(to_json(s));
  os << a.dump(2) << '\n';
}

/// Scenario x algorithm grids of "rate±hw" cells, one grid per metric.
inline void write_markdown(std::ostream& os, const std::vector<Summary>& rows) {
  std::vector<std::string> scenarios;
  std::vector<std::string> algorithms;
  auto add = [](std::vector<std::string>& v, const std::string& x) {
    if (std::find(v.begin(), v.end(), x) == v.end()) v.push_back(x);
  };
  for (const auto& s : rows) {
    add(scenarios, s.scenario);
    add(algorithms, s.algorithm);
  }
  auto cell = [](const Estimate& e) { return fixed3(e.mean) + "±" + fixed3(e.hw); };
  auto grid = [&](const char* title, auto metric) {
    os << "### " << title << "\n\n| scenario |";
    for (const auto& a : algorithms) os << ' ' << a << " |";
    os << "\n|---|";
    for (std::size_t i = 0; i < algorithms.size(); ++i) os << "---|";
    os << '\n';
    for (const auto& sc : scenarios) {
      os << "| " << sc << " |";
      for (const auto& a : algorithms) {
        auto it = std::find_if(rows.begin(), rows.end(),
                               [&](const Summary& s) { return s.scenario == sc && s.algorithm == a; });
        os << ' ' << (it == rows.end() ? std::string("-") : cell(metric(*it))) << " |";
      }
      os << '\n';
    }
    os << '\n';
  };
  grid("Safety violation rate", [](const Summary& s) { return s.violation; });
  grid("Recommendation error rate", [](const Summary& s) { return s.error; });
  grid("DLT rate", [](const Summary& s) { return s.dlt_rate; });
}

inline void write_heatmap_csv(std::ostream& os, const CellMatrix<double>& h) {
  for (int j = 1; j <= h.rows(); ++j) {
    for (int k = 1; k <= h.cols(); ++k) os << (k > 1 ? "," : "") << fixed3(h(j, k));
    os << '\n';
  }
}

inline std::string file_slug(const std::string& s) {
  std::string out;
  for (char c : s) out += std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '.' ? c : '_';
  return out;
}

}  // namespace sdfb
