#include <sstream>

#include <gtest/gtest.h>

#include "sdfbayes/io.hpp"
#include "sdfbayes/simulation.hpp"

using namespace sdfb;

namespace {

Experiment quick(const std::string& variant, const std::vector<std::string>& names, int T) {
  std::vector<Scenario> truths;
  for (const auto& n : names) truths.push_back(builtin_scenario(n));
  Experiment e = make_experiment(variant, truths, T);
  e.design.sampler.L = 200;
  e.design.sampler.burn_in = 50;
  return e;
}

Scenario flat(double p) {
  DoseGrid g;
  return Scenario("flat", g, g.matrix<double>(p));
}

}  // namespace

TEST(RunTrial, NonToxicTruth) {
  Experiment e = make_experiment("sdf", {flat(0.0)}, 20);
  e.design.sampler.L = 200;
  e.design.sampler.burn_in = 50;
  for (std::uint64_t s = 0; s < 3; ++s) {
    const RunResult r = run_trial(e, s);
    EXPECT_EQ(r.dlts, 0);
    EXPECT_EQ(r.dlt_rate, 0.0);
    EXPECT_FALSE(r.violation);
    EXPECT_EQ(r.patients, 20);
  }
}

TEST(RunTrial, FullyToxicTruthTerminates) {
  Experiment e = make_experiment("sdf", {flat(1.0)}, 60);
  e.design.sampler.L = 200;
  e.design.sampler.burn_in = 50;
  const RunResult r = run_trial(e, 1);
  EXPECT_TRUE(r.terminated_early);
  EXPECT_LT(r.patients, 60);
  EXPECT_TRUE(r.groups[0].error);
  EXPECT_FALSE(r.groups[0].recommendation.has_value());
  EXPECT_EQ(r.dlt_rate, 1.0);
}

TEST(RunTrial, Accounting) {
  for (const char* v : {"sdf", "sota", "structmab", "indepts"}) {
    const Experiment e = quick(v, {"A"}, 20);
    const RunResult r = run_trial(e, 5, true);
    int alloc = 0;
    for (int n : r.groups[0].allocation.data()) alloc += n;
    EXPECT_EQ(alloc, r.patients) << v;
    EXPECT_LE(r.patients, 20);
    EXPECT_EQ(static_cast<int>(r.log.size()), r.patients);
    EXPECT_EQ(r.violation, r.dlt_rate > 0.35);
    EXPECT_EQ(r.groups[0].error, !r.groups[0].recommendation || !e.truths[0].is_mtd(*r.groups[0].recommendation));
  }
}

TEST(RunTrial, HeterogeneousFractionsSumToOne) {
  const RunResult r = run_trial(quick("sdf-ur", {"A", "B"}, 16), 2);
  ASSERT_EQ(r.recruit_fractions.size(), 2u);
  EXPECT_DOUBLE_EQ(r.recruit_fractions[0] + r.recruit_fractions[1], 1.0);
  EXPECT_EQ(r.groups[0].patients, 8);
  EXPECT_DOUBLE_EQ(r.error, (r.groups[0].error + r.groups[1].error) / 2.0);
}

TEST(RunTrial, PooledPopulationAlternatesGroups) {
  const Experiment e = quick("sdf-ep", {"A", "B"}, 20);
  EXPECT_EQ(e.scenario, "EP(A+B)");
  EXPECT_EQ(e.design.groups, 1);
  const RunResult r = run_trial(e, 4);
  EXPECT_EQ(r.groups[0].patients, 10);
  EXPECT_EQ(r.groups[1].patients, 10);
  EXPECT_EQ(r.groups[0].recommendation, r.groups[1].recommendation);
}

TEST(RunTrial, PriorSeedOutsideBudget) {
  Experiment e = quick("sdf-ur", {"A", "B"}, 12);
  e.prior_tp = 10;
  const RunResult r = run_trial(e, 3);
  EXPECT_EQ(r.patients, 12);
  EXPECT_EQ(r.groups[1].patients, 6);
}

TEST(PriorTrial, BudgetAndEmpty) {
  const Experiment e = quick("sdf", {"B"}, 20);
  EXPECT_EQ(simulate_prior_trial(e, builtin_scenario("B"), 20, 9).size(), 20);
  EXPECT_TRUE(simulate_prior_trial(e, builtin_scenario("B"), 0, 9).empty());
}

TEST(RunTrial, MatchedOutcomesAcrossDesigns) {
  // With the same seed, the k-th patient at a DC sees the same uniform regardless of design.
  const RunResult a = run_trial(quick("indepts", {"A"}, 15), 77, true);
  const RunResult b = run_trial(quick("indepts", {"A"}, 15), 77, true);
  ASSERT_EQ(a.log.size(), b.log.size());
  for (std::size_t i = 0; i < a.log.size(); ++i) EXPECT_EQ(a.log[i].y, b.log[i].y);
}

TEST(Estimates, ProportionHalfWidth) {
  const Estimate e = proportion({1, 0, 0, 1, 1});
  EXPECT_DOUBLE_EQ(e.mean, 0.6);
  EXPECT_NEAR(e.hw, 1.96 * std::sqrt(0.6 * 0.4 / 5), 1e-15);
  EXPECT_EQ(proportion({1}).hw, 0.0);
  EXPECT_EQ(proportion({0}).hw, 0.0);
}

TEST(Estimates, SampleMean) {
  const Estimate e = sample_mean({0.1, 0.3, 0.2});
  EXPECT_NEAR(e.mean, 0.2, 1e-15);
  EXPECT_NEAR(e.hw, 1.96 * 0.1 / std::sqrt(3.0), 1e-12);
  EXPECT_EQ(sample_mean({0.4}).hw, 0.0);
}

TEST(Batch, SingleRunReport) {
  const BatchResult b = run_batch(quick("sdf", {"A"}, 12), 1, 100);
  const RunResult& r = b.runs[0];
  EXPECT_EQ(b.summary.runs, 1);
  EXPECT_EQ(b.summary.error.mean, r.error);
  EXPECT_EQ(b.summary.violation.mean, r.violation ? 1.0 : 0.0);
  EXPECT_EQ(b.summary.error.hw, 0.0);
  EXPECT_EQ(b.summary.violation.hw, 0.0);
  EXPECT_EQ(b.summary.dlt_rate.mean, r.dlt_rate);
}

TEST(Batch, WorkerCountDoesNotMatter) {
  const Experiment e = quick("sdf", {"C"}, 15);
  const BatchResult one = run_batch(e, 6, 500, 1);
  const BatchResult three = run_batch(e, 6, 500, 3);
  std::ostringstream a, b;
  write_csv(a, {one.summary});
  write_csv(b, {three.summary});
  EXPECT_EQ(a.str(), b.str());
  for (std::size_t i = 0; i < 6; ++i) EXPECT_EQ(one.runs[i].groups[0].allocation, three.runs[i].groups[0].allocation);
}

TEST(Batch, HeatmapIsAllocationShare) {
  const BatchResult b = run_batch(quick("indepts", {"A"}, 20), 5, 1);
  double total = 0.0;
  for (double h : b.summary.groups[0].heatmap.data()) total += h;
  EXPECT_NEAR(total, 1.0, 1e-12);
  EXPECT_THROW(run_batch(quick("indepts", {"A"}, 20), 0, 1), config_error);
}

TEST(Reports, CsvHeaderAndEmpty) {
  std::ostringstream os;
  write_csv(os, {});
  EXPECT_EQ(os.str(), "scenario,algorithm,safety_viol,safety_ci,err_rate,err_ci,dlt_rate,dlt_ci\n");
}

TEST(Reports, CsvRowsAndGroupRows) {
  Summary s;
  s.scenario = "A+B";
  s.algorithm = "sdf-ar";
  s.violation = {0.02, 0.004};
  s.error = {0.283, 0.011};
  s.dlt_rate = {0.296, 0.002};
  GroupSummary ga, gb;
  ga.truth = "A";
  gb.truth = "B";
  s.groups = {ga, gb};
  std::ostringstream os;
  write_csv(os, {s});
  std::istringstream in(os.str());
  std::string header, row, r1, r2;
  std::getline(in, header);
  std::getline(in, row);
  std::getline(in, r1);
  std::getline(in, r2);
  EXPECT_EQ(row, "A+B,sdf-ar,0.020,0.004,0.283,0.011,0.296,0.002");
  EXPECT_EQ(r1.substr(0, 5), "A+B/A");
  EXPECT_EQ(r2.substr(0, 5), "A+B/B");
}

TEST(Reports, MarkdownGrid) {
  std::vector<Summary> rows;
  for (const char* sc : {"A", "B"})
    for (const char* al : {"sdf", "df"}) {
      Summary s;
      s.scenario = sc;
      s.algorithm = al;
      s.error = {0.2, 0.01};
      rows.push_back(s);
    }
  std::ostringstream os;
  write_markdown(os, rows);
  const std::string md = os.str();
  EXPECT_NE(md.find("| scenario | sdf | df |"), std::string::npos);
  EXPECT_NE(md.find("| A | 0.200±0.010 | 0.200±0.010 |"), std::string::npos);
}

TEST(Reports, JsonParses) {
  const BatchResult b = run_batch(quick("indepts", {"A"}, 10), 2, 1);
  std::ostringstream os;
  write_json(os, {b.summary});
  const json j = json::parse(os.str());
  ASSERT_TRUE(j.is_array());
  EXPECT_EQ(j[0]["scenario"], "A");
}

TEST(Suites, Shapes) {
  EXPECT_EQ(experiment_suite("table3").size(), 25u);
  EXPECT_EQ(experiment_suite("datasets-ei").size(), 25u);
  const auto t5 = experiment_suite("table5-prior");
  EXPECT_EQ(t5.size(), 6u);
  for (const auto& e : t5) {
    EXPECT_EQ(e.design.T, 80);
    EXPECT_EQ(e.truths.size(), 2u);
  }
  const auto vs = experiment_suite("vsweep");
  ASSERT_EQ(vs.size(), 4u);
  EXPECT_DOUBLE_EQ(vs[0].design.sdf.v, 0.80);
  EXPECT_DOUBLE_EQ(vs[3].design.sdf.v, 0.95);
  for (const auto& n : suite_names()) EXPECT_NO_THROW(experiment_suite(n));
  EXPECT_THROW(experiment_suite("table9"), not_found_error);
}

TEST(Variants, Parse) {
  EXPECT_EQ(parse_variant("sota-ar").population, Population::ar);
  EXPECT_EQ(parse_variant("df").algorithm, Algorithm::df);
  EXPECT_THROW(parse_variant("sdf-xx"), not_found_error);
  EXPECT_THROW(parse_variant("crm"), not_found_error);
  EXPECT_DOUBLE_EQ(make_experiment("sdf", {builtin_scenario("RW")}, 60).design.sdf.v, 0.85);
}

TEST(Experiment, ConfigurationMismatch) {
  Experiment e = quick("sdf-ar", {"A", "B"}, 20);
  e.truths.pop_back();
  EXPECT_THROW(run_trial(e, 1), config_error);
}
