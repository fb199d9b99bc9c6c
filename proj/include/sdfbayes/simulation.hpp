#pragma once

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <exception>
#include <cmath>
#include <cstdint>
#include <functional>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "sdfbayes/engine.hpp"
#include "sdfbayes/scenario.hpp"

namespace sdfb {

/// How patients reach the algorithm: one homogeneous group, several groups
/// with adaptive or uniform recruitment, or several groups pooled into one
/// group-blind trial.
enum class Population { single, ar, ur, ep };

inline std::string to_string(Population p) {
  switch (p) {
    case Population::single:
      return "single";
    case Population::ar:
      return "ar";
    case Population::ur:
      return "ur";
    case Population::ep:
      return "ep";
  }
  return "?";
}

/// One cell of an experiment grid: truths, design and metric settings.
struct Experiment {
  std::string scenario;   // row label, e.g. "A" or "A+B"
  std::string algorithm;  // column label, e.g. "sdf-ar" or "sdf v=0.85"
  Population population = Population::single;
  std::vector<Scenario> truths;
  DesignSpec design;
  /// Seeded prior trial size for one group (heterogeneous runs).
  int prior_tp = 0;
  int prior_group = 2;
  /// Extra S(T) threshold reported alongside xi + eps.
  std::optional<double> alt_safety;

  void validate() const {
    if (truths.empty()) throw config_error("experiment has no scenario");
    const auto m = static_cast<int>(truths.size());
    if (population == Population::single && m != 1) throw config_error("single-group run needs one scenario");
    if (population != Population::single && m < 2) throw config_error(to_string(population) + " needs two or more scenarios");
    if (population == Population::ep && design.groups != 1) throw config_error("pooled runs use a single-group design");
    if ((population == Population::ar || population == Population::ur) && design.groups != m)
      throw config_error("design group count differs from scenario count");
    for (const auto& s : truths)
      if (!(s.grid() == design.grid)) throw config_error("scenario grid differs from design grid");
    if (prior_tp < 0) throw config_error("prior size must be >= 0");
    if (prior_tp > 0 && (population == Population::single || population == Population::ep))
      throw config_error("prior seeding needs a heterogeneous design");
    if (prior_tp > 0 && (prior_group < 1 || prior_group > m)) throw config_error("prior group out of range");
    design.validate();
  }
};

struct GroupRun {
  std::string truth;
  std::optional<Dc> recommendation;
  bool error = true;
  bool violation = false;
  bool alt_violation = false;
  int patients = 0;
  int dlts = 0;
  double dlt_rate = 0.0;
  CellMatrix<int> allocation;
  std::optional<int> stopped_at;
};

struct RunResult {
  std::string scenario;
  std::string algorithm;
  std::uint64_t seed = 0;
  std::vector<GroupRun> groups;
  int patients = 0;
  int dlts = 0;
  double dlt_rate = 0.0;
  bool violation = false;
  bool alt_violation = false;
  bool terminated_early = false;
  /// Mean of the group error flags.
  double error = 1.0;
  std::vector<double> recruit_fractions;
  std::vector<RoundRecord> log;
};

inline double realized_rate(int dlts, int patients) { return patients > 0 ? static_cast<double>(dlts) / patients : 0.0; }

/// Complete single-group SDF-Bayes trial of Tp patients against `truth`, used
/// as prior information for one group.
inline TrialHistory simulate_prior_trial(const Experiment& e, const Scenario& truth, int tp, std::uint64_t seed) {
  TrialHistory h(truth.grid());
  if (tp == 0) return h;
  DesignSpec d = e.design;
  d.algorithm = Algorithm::sdf;
  d.recruitment = Recruitment::single;
  d.groups = 1;
  d.group_xi.clear();
  d.T = tp;
  TrialEngine engine(d, derive_seed(seed, {kEngineStream}));
  Rng outcomes(derive_seed(seed, {kOutcomeStream}));
  while (const Proposal* p = engine.propose()) {
    const int y = uniform01(outcomes) < truth.true_tox(p->dc) ? 1 : 0;
    engine.observe(y);
    h.record(p->dc, y, p->t);
    if (engine.status() != TrialStatus::active) break;
  }
  return h;
}

/// One complete simulated trial. Outcome uniforms come from a per-group
/// stream indexed by that group's patient count, so designs compared under
/// the same seed see the same patients.
inline RunResult run_trial(const Experiment& e, std::uint64_t seed, bool keep_log = false) {
  e.validate();
  const int m_truths = static_cast<int>(e.truths.size());
  TrialEngine engine(e.design, derive_seed(seed, {kEngineStream}));
  if (e.prior_tp > 0) {
    const Scenario& truth = e.truths[static_cast<std::size_t>(e.prior_group - 1)];
    engine.seed_prior(e.prior_group,
                      simulate_prior_trial(e, truth, e.prior_tp,
                                           derive_seed(seed, {kPriorSeedStream, static_cast<std::uint64_t>(e.prior_group)})));
  }

  std::vector<Rng> outcome_rng;
  for (int m = 1; m <= m_truths; ++m) outcome_rng.emplace_back(derive_seed(seed, {kOutcomeStream, static_cast<std::uint64_t>(m)}));

  RunResult r;
  r.scenario = e.scenario;
  r.algorithm = e.algorithm;
  r.seed = seed;
  for (const auto& s : e.truths) {
    GroupRun g;
    g.truth = s.name();
    g.allocation = s.grid().matrix<int>();
    r.groups.push_back(std::move(g));
  }

  while (const Proposal* p = engine.propose()) {
    // Pooled runs alternate the patient's true group; otherwise the engine's
    // group is the patient's group.
    const int patient_group = e.population == Population::ep ? (p->t - 1) % m_truths + 1 : p->group;
    const auto gi = static_cast<std::size_t>(patient_group - 1);
    const int y = uniform01(outcome_rng[gi]) < e.truths[gi].true_tox(p->dc) ? 1 : 0;
    engine.observe(y);
    GroupRun& g = r.groups[gi];
    ++g.patients;
    g.dlts += y;
    ++g.allocation(p->dc);
    if (engine.status() != TrialStatus::active) break;
  }

  const TrialVerdict& v = engine.finish();
  r.terminated_early = v.status == TrialStatus::terminated;
  if (keep_log) r.log = engine.records();
  double err = 0.0;
  for (int m = 0; m < m_truths; ++m) {
    GroupRun& g = r.groups[static_cast<std::size_t>(m)];
    const Scenario& truth = e.truths[static_cast<std::size_t>(m)];
    const GroupVerdict& gv = v.groups[static_cast<std::size_t>(e.population == Population::ep ? 0 : m)];
    g.recommendation = gv.recommendation;
    g.error = !g.recommendation || !truth.is_mtd(*g.recommendation);
    g.dlt_rate = realized_rate(g.dlts, g.patients);
    g.violation = g.dlt_rate > truth.xi() + truth.eps();
    if (e.alt_safety) g.alt_violation = g.dlt_rate > *e.alt_safety;
    if (e.population != Population::ep) g.stopped_at = gv.stopped_at;
    r.patients += g.patients;
    r.dlts += g.dlts;
    err += g.error ? 1.0 : 0.0;
  }
  r.error = err / m_truths;
  r.dlt_rate = realized_rate(r.dlts, r.patients);
  const Scenario& first = e.truths.front();
  r.violation = r.dlt_rate > first.xi() + first.eps();
  if (e.alt_safety) r.alt_violation = r.dlt_rate > *e.alt_safety;
  for (const auto& g : r.groups)
    r.recruit_fractions.push_back(r.patients > 0 ? static_cast<double>(g.patients) / r.patients : 0.0);
  return r;
}

// ------------------------------------------------------------------- batches

/// Mean and 95% half-width. Proportions use the binomial normal
/// approximation; continuous quantities use the sample standard deviation.
struct Estimate {
  double mean = 0.0;
  double hw = 0.0;
};

inline Estimate proportion(const std::vector<double>& flags) {
  Estimate e;
  if (flags.empty()) return e;
  double s = 0.0;
  for (double f : flags) s += f;
  e.mean = s / static_cast<double>(flags.size());
  e.hw = 1.96 * std::sqrt(std::max(0.0, e.mean * (1.0 - e.mean)) / static_cast<double>(flags.size()));
  return e;
}

inline Estimate sample_mean(const std::vector<double>& xs) {
  Estimate e;
  if (xs.empty()) return e;
  const auto n = static_cast<double>(xs.size());
  double s = 0.0;
  for (double x : xs) s += x;
  e.mean = s / n;
  if (xs.size() > 1) {
    double ss = 0.0;
    for (double x : xs) ss += (x - e.mean) * (x - e.mean);
    e.hw = 1.96 * std::sqrt(ss / (n - 1.0) / n);
  }
  return e;
}

struct GroupSummary {
  std::string truth;
  Estimate violation;
  Estimate alt_violation;
  Estimate error;
  Estimate dlt_rate;
  Estimate recruit_fraction;
  CellMatrix<double> heatmap;  // mean allocation count / T
};

struct Summary {
  std::string scenario;
  std::string algorithm;
  int runs = 0;
  Estimate violation;
  Estimate alt_violation;
  std::optional<double> alt_safety;
  Estimate error;
  Estimate dlt_rate;
  double terminated = 0.0;
  std::vector<GroupSummary> groups;
};

inline Summary summarize(const Experiment& e, const std::vector<RunResult>& runs) {
  Summary s;
  s.scenario = e.scenario;
  s.algorithm = e.algorithm;
  s.runs = static_cast<int>(runs.size());
  s.alt_safety = e.alt_safety;
  std::vector<double> viol;
  std::vector<double> alt;
  std::vector<double> err;
  std::vector<double> dlt;
  double term = 0.0;
  for (const auto& r : runs) {
    viol.push_back(r.violation);
    alt.push_back(r.alt_violation);
    err.push_back(r.error);
    dlt.push_back(r.dlt_rate);
    term += r.terminated_early;
  }
  s.violation = proportion(viol);
  s.alt_violation = proportion(alt);
  s.error = e.truths.size() == 1 ? proportion(err) : sample_mean(err);
  s.dlt_rate = sample_mean(dlt);
  s.terminated = runs.empty() ? 0.0 : term / static_cast<double>(runs.size());
  for (std::size_t m = 0; m < e.truths.size(); ++m) {
    GroupSummary g;
    g.truth = e.truths[m].name();
    g.heatmap = e.design.grid.matrix<double>();
    std::vector<double> gv;
    std::vector<double> ga;
    std::vector<double> ge;
    std::vector<double> gd;
    std::vector<double> gf;
    for (const auto& r : runs) {
      const GroupRun& x = r.groups[m];
      gv.push_back(x.violation);
      ga.push_back(x.alt_violation);
      ge.push_back(x.error);
      gd.push_back(x.dlt_rate);
      gf.push_back(r.recruit_fractions[m]);
      for (int c = 0; c < g.heatmap.cells(); ++c) g.heatmap.at(c) += x.allocation.at(c);
    }
    for (double& h : g.heatmap.data()) h /= static_cast<double>(std::max<std::size_t>(runs.size(), 1)) * e.design.T;
    g.violation = proportion(gv);
    g.alt_violation = proportion(ga);
    g.error = proportion(ge);
    g.dlt_rate = sample_mean(gd);
    g.recruit_fraction = sample_mean(gf);
    s.groups.push_back(std::move(g));
  }
  return s;
}

struct BatchResult {
  Experiment experiment;
  std::vector<RunResult> runs;
  Summary summary;
};

using ProgressFn = std::function<void(int done, int total)>;

/// R replicates with seeds seed_base + i spread over `workers` threads. Each
/// replicate writes only its own slot, so the result does not depend on the
/// worker count.
inline BatchResult run_batch(const Experiment& e, int R, std::uint64_t seed_base, int workers = 1,
                             bool keep_logs = false, const ProgressFn& progress = {}) {
  if (R < 1) throw config_error("need at least one run");
  e.validate();
  BatchResult b;
  b.experiment = e;
  b.runs.resize(static_cast<std::size_t>(R));
  std::atomic<int> next{0};
  std::atomic<int> done{0};
  std::exception_ptr failure;
  std::mutex failure_mu;
  auto work = [&] {
    for (int i = next++; i < R; i = next++) {
      try {
        b.runs[static_cast<std::size_t>(i)] = run_trial(e, seed_base + static_cast<std::uint64_t>(i), keep_logs);
      } catch (...) {
        std::lock_guard lock(failure_mu);
        if (!failure) failure = std::current_exception();
        next = R;
      }
      const int d = ++done;
      if (progress) {
        std::lock_guard lock(failure_mu);
        progress(d, R);
      }
    }
  };
  workers = std::clamp(workers, 1, R);
  if (workers == 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w) pool.emplace_back(work);
    for (auto& t : pool) t.join();
  }
  if (failure) std::rethrow_exception(failure);
  b.summary = summarize(e, b.runs);
  return b;
}

// -------------------------------------------------------------------- suites

struct AlgorithmVariant {
  Algorithm algorithm;
  Population population;
};

/// Parses labels such as "sdf", "df-ur", "sota-ar" or "sdf-ep".
inline AlgorithmVariant parse_variant(const std::string& label) {
  const auto dash = label.find('-');
  AlgorithmVariant v{parse_algorithm(label.substr(0, dash)), Population::single};
  if (dash == std::string::npos) return v;
  const std::string suffix = label.substr(dash + 1);
  if (suffix == "ar")
    v.population = Population::ar;
  else if (suffix == "ur")
    v.population = Population::ur;
  else if (suffix == "ep")
    v.population = Population::ep;
  else
    throw not_found_error("unknown population suffix in '" + label + "'");
  return v;
}

/// Experiment for a variant on one scenario (single) or several (groups).
inline Experiment make_experiment(const std::string& variant, const std::vector<Scenario>& truths, int T) {
  const AlgorithmVariant v = parse_variant(variant);
  Experiment e;
  e.algorithm = variant;
  e.population = v.population;
  e.truths = truths;
  for (std::size_t i = 0; i < truths.size(); ++i) e.scenario += (i ? "+" : "") + truths[i].name();
  DesignSpec& d = e.design;
  d.algorithm = v.algorithm;
  d.grid = truths.front().grid();
  d.T = T;
  d.sdf.xi = truths.front().xi();
  d.sdf.eps = truths.front().eps();
  d.sdf.delta = truths.front().delta();
  d.sdf.v = default_caution_percentile(truths.front().name());
  switch (v.population) {
    case Population::single:
    case Population::ep:
      d.recruitment = Recruitment::single;
      d.groups = 1;
      break;
    case Population::ar:
    case Population::ur:
      d.recruitment = v.population == Population::ar ? Recruitment::ar : Recruitment::ur;
      d.groups = static_cast<int>(truths.size());
      for (const auto& s : truths) d.group_xi.push_back(s.xi());
      break;
  }
  if (v.population == Population::ep && truths.size() >= 2) {
    e.scenario = "EP(" + e.scenario + ")";
  }
  return e;
}

inline const std::vector<std::string>& suite_names() {
  static const std::vector<std::string> names = {"table3", "table4", "table5-prior", "vsweep",
                                                 "datasets-ei", "prior-sensitivity", "target-safety"};
  return names;
}

inline std::vector<Experiment> experiment_suite(const std::string& name) {
  std::vector<Experiment> out;
  const std::vector<std::string> homogeneous = {"sdf", "df", "sota", "structmab", "indepts"};
  auto scen = [](std::initializer_list<const char*> names) {
    std::vector<Scenario> v;
    for (const char* n : names) v.push_back(builtin_scenario(n));
    return v;
  };
  if (name == "table3" || name == "datasets-ei") {
    const auto scenarios = name == "table3" ? scen({"A", "B", "C", "D", "RW"}) : scen({"E", "F", "G", "H", "I"});
    for (const auto& s : scenarios)
      for (const auto& a : homogeneous) out.push_back(make_experiment(a, {s}, 60));
  } else if (name == "table4") {
    const auto ab = scen({"A", "B"});
    for (const char* a : {"sdf-ar", "sdf-ur", "df-ur", "sota-ar", "sota-ur", "sdf-ep", "df-ep", "sota-ep"})
      out.push_back(make_experiment(a, ab, 80));
  } else if (name == "table5-prior") {
    const auto ab = scen({"A", "B"});
    for (const char* a : {"sdf-ar", "sdf-ur"})
      for (int tp : {20, 40, 60}) {
        Experiment e = make_experiment(a, ab, 80);
        e.prior_tp = tp;
        e.prior_group = 2;
        e.algorithm += " Tp=" + std::to_string(tp);
        out.push_back(std::move(e));
      }
  } else if (name == "vsweep") {
    for (double v : {0.80, 0.85, 0.90, 0.95}) {
      Experiment e = make_experiment("sdf", scen({"A"}), 60);
      e.design.sdf.v = v;
      char label[32];
      std::snprintf(label, sizeof label, "sdf v=%.2f", v);
      e.algorithm = label;
      out.push_back(std::move(e));
    }
  } else if (name == "prior-sensitivity") {
    for (const auto& s : scen({"A", "B", "C", "D", "RW"}))
      for (const char* prior : {"default", "hivar", "noninfo"}) {
        Experiment e = make_experiment("sdf", {s}, 60);
        e.design.prior = PriorSpec::by_name(prior);
        e.algorithm = std::string("sdf prior=") + prior;
        out.push_back(std::move(e));
      }
  } else if (name == "target-safety") {
    for (double ps : {0.20, 0.25, 0.30, 0.35, 0.40}) {
      Experiment e = make_experiment("sdf", scen({"A"}), 60);
      e.design.sdf.target_safety = ps;
      e.alt_safety = ps;
      char label[32];
      std::snprintf(label, sizeof label, "sdf psi_s=%.2f", ps);
      e.algorithm = label;
      out.push_back(std::move(e));
    }
  } else {
    throw not_found_error("unknown suite '" + name + "'");
  }
  return out;
}

}  // namespace sdfb
