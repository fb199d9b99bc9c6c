// Full-scale acceptance run. Prints one PASS/FAIL line per criterion and
// exits non-zero if any fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <map>
#include <thread>

#include <CLI11.hpp>

#include "property_checks.hpp"
#include "sdfbayes/service.hpp"

using namespace sdfb;
using checks::Check;
using checks::fmt;

namespace {

constexpr std::uint64_t kSeedBase = 20000;

struct Options {
  int runs = 500;
  int workers = 1;
};

Options opts;
std::FILE* mirror = nullptr;  // copy of every line, readable while the run is in progress
std::map<std::string, Summary> results;  // keyed by "scenario|algorithm"

void emit(std::FILE* out, const std::string& line) {
  std::fputs(line.c_str(), out);
  std::fflush(out);
  if (mirror) {
    std::fputs(line.c_str(), mirror);
    std::fflush(mirror);
  }
}

void run_suite(const std::string& suite) {
  const auto start = std::chrono::steady_clock::now();
  for (const Experiment& e : experiment_suite(suite)) {
    const BatchResult b = run_batch(e, opts.runs, kSeedBase, opts.workers);
    results[e.scenario + "|" + e.algorithm] = b.summary;
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    char line[256];
    std::snprintf(line, sizeof line, "  [%s] %-8s %-16s err %.3f±%.3f viol %.3f±%.3f dlt %.3f (%.0fs)\n", suite.c_str(),
                  e.scenario.c_str(), e.algorithm.c_str(), b.summary.error.mean, b.summary.error.hw,
                  b.summary.violation.mean, b.summary.violation.hw, b.summary.dlt_rate.mean, secs);
    emit(stderr, line);
  }
}

const Summary& get(const std::string& scenario, const std::string& algorithm) {
  return results.at(scenario + "|" + algorithm);
}

int failures = 0;

void report(const std::string& name, const Check& c) {
  emit(stdout, std::string(c.ok ? "PASS " : "FAIL ") + name + ": " + c.detail + "\n");
  failures += !c.ok;
}

// Appends a sub-result to a running check.
void part(Check& c, bool ok, const std::string& detail) {
  c.ok = c.ok && ok;
  if (!c.detail.empty()) c.detail += "; ";
  c.detail += (ok ? "" : "[x] ") + detail;
}

Check scenario_a_reproduction() {
  const Summary& s = get("A", "sdf");
  Check c{true, ""};
  part(c, std::abs(s.error.mean - 0.205) <= 0.06, fmt("err %.3f (0.205 +/- 0.06)", s.error.mean));
  part(c, std::abs(s.violation.mean - 0.019) <= 0.03, fmt("viol %.3f (0.019 +/- 0.03)", s.violation.mean));
  return c;
}

Check table3_orderings() {
  Check c{true, ""};
  for (const char* sc : {"A", "C", "D", "RW"}) {
    const double sdf = get(sc, "sdf").error.mean;
    const double sota = get(sc, "sota").error.mean;
    part(c, sdf < sota, std::string(sc) + fmt(" err sdf %.3f < sota %.3f", sdf, sota));
  }
  for (const char* sc : {"A", "C", "D", "RW"}) {
    const double df = get(sc, "df").violation.mean;
    part(c, df > 0.10, std::string(sc) + fmt(" viol df %.3f > 0.10", df));
  }
  for (const char* sc : {"A", "B", "C", "D", "RW"}) {
    const Estimate v = get(sc, "sdf").violation;
    part(c, v.mean < 0.05 + v.hw, std::string(sc) + fmt(" viol sdf %.3f < 0.05 + %.3f", v.mean, v.hw));
  }
  for (const char* sc : {"A", "B", "C", "D", "RW"})
    for (const char* al : {"structmab", "indepts"}) {
      const double e = get(sc, al).error.mean;
      part(c, e > 0.40, std::string(sc) + " err " + al + fmt(" %.3f > 0.40", e));
    }
  return c;
}

Check scenario_a_dlt() {
  const double d = get("A", "sdf").dlt_rate.mean;
  return {std::abs(d - 0.296) <= 0.02, fmt("DLT rate %.4f (0.296 +/- 0.02)", d)};
}

Check heterogeneous_table() {
  Check c{true, ""};
  const double ar = get("A+B", "sdf-ar").error.mean;
  part(c, std::abs(ar - 0.283) <= 0.06, fmt("sdf-ar err %.3f (0.283 +/- 0.06)", ar));
  for (const char* al : {"sdf-ep", "df-ep", "sota-ep"}) {
    const Summary& s = get("EP(A+B)", al);
    part(c, s.groups.at(0).violation.mean > 0.40, std::string(al) + fmt(" group-A viol %.3f > 0.40", s.groups.at(0).violation.mean));
    part(c, s.error.mean > 0.70, std::string(al) + fmt(" err %.3f > 0.70", s.error.mean));
  }
  return c;
}

Check prior_sweep() {
  Check c{true, ""};
  double prev = -1.0;
  for (int tp : {20, 40, 60}) {
    const double f = get("A+B", "sdf-ar Tp=" + std::to_string(tp)).groups.at(0).recruit_fraction.mean;
    part(c, f > prev, fmt("AR frac(A) at Tp=%.0f = %.3f", tp, f));
    prev = f;
  }
  part(c, prev >= 0.65, fmt("AR frac(A) at Tp=60 %.3f >= 0.65", prev));
  for (int tp : {20, 40, 60}) {
    const double f = get("A+B", "sdf-ur Tp=" + std::to_string(tp)).groups.at(0).recruit_fraction.mean;
    part(c, f == 0.5, fmt("UR frac(A) at Tp=%.0f = %.4f", tp, f));
  }
  const Estimate ar = get("A+B", "sdf-ar Tp=60").error;
  const Estimate ur = get("A+B", "sdf-ur Tp=60").error;
  const double slack = std::hypot(ar.hw, ur.hw);
  part(c, ar.mean < ur.mean + slack, fmt("Tp=60 err AR %.3f < UR %.3f + %.3f", ar.mean, ur.mean, slack));
  return c;
}

// Nonincreasing (or nondecreasing) across the sweep, tolerating a single
// reversal no larger than the combined CI half-width.
bool monotone_with_one_inversion(const std::vector<Estimate>& xs, bool increasing, std::string& detail) {
  int inversions = 0;
  bool ok = true;
  for (std::size_t i = 1; i < xs.size(); ++i) {
    const double step = increasing ? xs[i].mean - xs[i - 1].mean : xs[i - 1].mean - xs[i].mean;
    if (step >= 0.0) continue;
    ++inversions;
    if (-step > std::hypot(xs[i].hw, xs[i - 1].hw)) ok = false;
  }
  for (const auto& x : xs) detail += fmt(" %.3f", x.mean);
  return ok && inversions <= 1;
}

Check v_sweep() {
  std::vector<Estimate> viol;
  std::vector<Estimate> err;
  for (const char* v : {"0.80", "0.85", "0.90", "0.95"}) {
    const Summary& s = get("A", std::string("sdf v=") + v);
    viol.push_back(s.violation);
    err.push_back(s.error);
  }
  Check c{true, ""};
  std::string dv = "viol";
  std::string de = "err";
  const bool okv = monotone_with_one_inversion(viol, false, dv);
  const bool oke = monotone_with_one_inversion(err, true, de);
  part(c, okv, dv);
  part(c, oke, de);
  return c;
}

Check property_suite() {
  Check c{true, ""};
  auto add = [&](const char* name, const Check& sub) {
    emit(stderr, std::string("  [property] ") + name + ": " + sub.detail + "\n");
    part(c, sub.ok, std::string(name) + (sub.ok ? "" : " (" + sub.detail + ")"));
  };
  add("prop1", checks::prop1_mc({"A"}, 100, 2000, kSeedBase));
  add("df-equivalence", checks::df_equals_unbounded_sdf({"A", "B", "C", "D", "RW"}, 4, 2000, kSeedBase));
  add("single-group", checks::single_group_recruitment_coincides({"A", "C"}, 3, 2000, kSeedBase));
  add("posterior-consistency", checks::posterior_consistency(kSeedBase));
  add("arms-moments", checks::arms_moments(kSeedBase));
  add("monotonicity", checks::monotone_draws(10000, kSeedBase));
  add("batch-determinism", checks::batch_determinism(8, 2000, kSeedBase));
  add("tables", checks::builtin_tables_match());
  return c;
}

// Simulated runs re-driven outcome by outcome through the REST API.
Check service_replay() {
  TrialService service;
  httplib::Server server;
  mount_routes(server, service, "*");
  const int port = server.bind_to_any_port("127.0.0.1");
  if (port <= 0) return {false, "could not bind a port"};
  std::thread th([&] { server.listen_after_bind(); });
  server.wait_until_ready();
  httplib::Client client("127.0.0.1", port);

  Check c{true, ""};
  int replayed = 0;
  auto replay = [&](Experiment e, std::uint64_t seed) -> std::string {
    const RunResult sim = run_trial(e, seed, true);
    json body = to_json(e.design);
    body["seed"] = std::to_string(derive_seed(seed, {kEngineStream}));
    auto created = client.Post("/sessions", body.dump(), "application/json");
    if (!created || created->status != 201) return "session creation failed";
    json state = json::parse(created->body);
    const std::string id = state.at("id");
    for (const auto& rec : sim.log) {
      if (dc_from_json(state.at("recommendation").at("dc")) != rec.recommended ||
          state.at("recommendation").at("samplerSeed") != std::to_string(rec.sampler_seed))
        return "decision differs at t=" + std::to_string(rec.t);
      auto r = client.Post("/sessions/" + id + "/outcomes", json{{"outcome", rec.y}}.dump(), "application/json");
      if (!r || r->status != 200) return "outcome rejected at t=" + std::to_string(rec.t);
      state = json::parse(r->body);
    }
    const json& groups = state.at("verdict").at("groups");
    for (std::size_t m = 0; m < sim.groups.size() && m < groups.size(); ++m) {
      const json& fr = groups[m].at("recommendation");
      const std::optional<Dc> got = fr.is_null() ? std::nullopt : std::optional<Dc>(dc_from_json(fr));
      if (got != sim.groups[m].recommendation)
        return "final recommendation differs for group " + std::to_string(m + 1);
    }
    ++replayed;
    return "";
  };
  const std::vector<std::pair<std::string, std::vector<std::string>>> cases = {
      {"sdf", {"A"}}, {"df", {"C"}}, {"sota", {"D"}}, {"structmab", {"RW"}}, {"indepts", {"B"}},
      {"sdf-ar", {"A", "B"}}, {"sota-ur", {"A", "B"}}};
  for (const auto& [variant, names] : cases) {
    std::vector<Scenario> truths;
    for (const auto& n : names) truths.push_back(builtin_scenario(n));
    const Experiment e = make_experiment(variant, truths, truths.size() > 1 ? 40 : 30);
    for (std::uint64_t s = 0; s < 2; ++s) {
      const std::string err = replay(e, kSeedBase + s);
      if (!err.empty()) part(c, false, variant + ": " + err);
    }
  }
  server.stop();
  th.join();
  if (c.ok) c.detail = std::to_string(replayed) + " runs replayed over HTTP with identical decisions";
  return c;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance run"};
  app.add_option("--runs", opts.runs, "Replicates per experiment")->check(CLI::PositiveNumber);
  opts.workers = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  app.add_option("--workers", opts.workers, "Worker threads")->check(CLI::PositiveNumber);
  std::string report_path = "acceptance_report.txt";
  app.add_option("--report", report_path, "Also write every line here (empty: off)");
  CLI11_PARSE(app, argc, argv);
  if (!report_path.empty()) mirror = std::fopen(report_path.c_str(), "w");
  emit(stdout, "acceptance: R=" + std::to_string(opts.runs) + ", seed base " + std::to_string(kSeedBase) + "\n");

  report("property suite", property_suite());
  report("service replay oracle", service_replay());
  run_suite("table3");
  report("scenario A reproduction", scenario_a_reproduction());
  report("homogeneous orderings", table3_orderings());
  report("scenario A DLT rate", scenario_a_dlt());
  run_suite("table4");
  report("heterogeneous populations", heterogeneous_table());
  run_suite("table5-prior");
  report("prior-seeded recruitment", prior_sweep());
  run_suite("vsweep");
  report("caution percentile sweep", v_sweep());

  emit(stdout, std::string(failures ? "FAIL" : "PASS") + ": " + std::to_string(failures) + " failed\n");
  if (mirror) std::fclose(mirror);
  return failures ? 1 : 0;
}
