#include <csignal>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "sdfbayes/io.hpp"
#include "sdfbayes/service.hpp"
#include "sdfbayes/simulation.hpp"

namespace fs = std::filesystem;
using namespace sdfb;

namespace {

httplib::Server* g_server = nullptr;

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  for (std::string item; std::getline(ss, item, sep);)
    if (!item.empty()) out.push_back(item);
  return out;
}

void print_scenario(const Scenario& s) {
  std::cout << s.name() << "  (xi=" << s.xi() << ", eps=" << s.eps() << ")\n";
  for (int j = s.grid().J(); j >= 1; --j) {
    std::cout << "  j=" << j << " ";
    for (int k = 1; k <= s.grid().K(); ++k) {
      const bool mtd = s.is_mtd(Dc{j, k});
      std::cout << (mtd ? " [" : "  ") << fixed3(s.true_tox()(j, k)) << (mtd ? "]" : " ");
    }
    std::cout << '\n';
  }
}

struct SimulateArgs {
  std::string suite;
  std::string scenario;
  std::string algorithm = "sdf";
  int runs = 500;
  std::uint64_t seed = 42;
  int workers = 1;
  std::string out;
  std::string format = "csv";
  bool log_decisions = false;
  int T = 0;
  std::optional<double> v;
  std::optional<int> warm_rounds;
  int prior_tp = 0;
  std::string prior = "default";
  bool quiet = false;
};

int simulate(const SimulateArgs& a) {
  std::vector<Experiment> exps;
  if (!a.suite.empty()) {
    exps = experiment_suite(a.suite);
  } else {
    if (a.scenario.empty()) throw config_error("give --suite or --scenario");
    std::vector<Scenario> truths;
    for (const auto& n : split(a.scenario, ',')) truths.push_back(builtin_scenario(n));
    const bool multi = truths.size() > 1;
    for (const auto& alg : split(a.algorithm, ',')) {
      Experiment e = make_experiment(alg, truths, a.T > 0 ? a.T : (multi ? 80 : 60));
      e.prior_tp = a.prior_tp;
      e.design.prior = PriorSpec::by_name(a.prior);
      exps.push_back(std::move(e));
    }
  }
  for (auto& e : exps) {
    if (a.v) e.design.sdf.v = *a.v;
    if (a.warm_rounds) e.design.sdf.warm_start_rounds = *a.warm_rounds;
  }

  std::string out_dir = a.out;
  if (out_dir.empty())
    if (const char* env = std::getenv("SDFBAYES_OUT")) out_dir = env;
  if (out_dir.empty()) out_dir = "results";
  fs::create_directories(out_dir);

  std::vector<Summary> rows;
  for (const auto& e : exps) {
    if (!a.quiet) std::cerr << e.scenario << " / " << e.algorithm << " ..." << std::flush;
    const auto t0 = std::chrono::steady_clock::now();
    BatchResult b = run_batch(e, a.runs, a.seed, a.workers, a.log_decisions);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (!a.quiet)
      std::cerr << " err " << fixed3(b.summary.error.mean) << " viol " << fixed3(b.summary.violation.mean) << " dlt "
                << fixed3(b.summary.dlt_rate.mean) << " (" << fixed3(secs) << " s)\n";
    const std::string slug = file_slug(e.scenario + "_" + e.algorithm);
    fs::create_directories(fs::path(out_dir) / "heatmaps");
    for (const auto& g : b.summary.groups) {
      std::ofstream hm(fs::path(out_dir) / "heatmaps" / (slug + "_" + file_slug(g.truth) + ".csv"));
      write_heatmap_csv(hm, g.heatmap);
    }
    if (a.log_decisions) {
      fs::create_directories(fs::path(out_dir) / "decisions");
      std::ofstream log(fs::path(out_dir) / "decisions" / (slug + ".jsonl"));
      for (const auto& r : b.runs) log << to_json(r, e.design.algorithm).dump() << '\n';
    }
    rows.push_back(std::move(b.summary));
  }

  const std::string stem = a.suite.empty() ? file_slug(a.scenario + "_" + a.algorithm) : a.suite;
  for (const auto& fmt : split(a.format, ',')) {
    if (fmt == "csv") {
      std::ofstream os(fs::path(out_dir) / (stem + ".csv"));
      write_csv(os, rows);
    } else if (fmt == "json") {
      std::ofstream os(fs::path(out_dir) / (stem + ".json"));
      write_json(os, rows);
    } else if (fmt == "md" || fmt == "markdown") {
      std::ofstream os(fs::path(out_dir) / (stem + ".md"));
      write_markdown(os, rows);
    } else {
      throw config_error("unknown format '" + fmt + "'");
    }
  }
  if (!a.quiet) write_markdown(std::cout, rows);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Safe dose-combination finding: simulation and live-trial service"};
  app.require_subcommand(1);

  auto* scen = app.add_subcommand("scenarios", "Built-in toxicity scenarios");
  scen->require_subcommand(1);
  scen->add_subcommand("list", "List scenario names")->callback([] {
    for (const auto& n : builtin_scenario_names()) std::cout << n << '\n';
  });
  auto* show = scen->add_subcommand("show", "Print a scenario's toxicity table");
  std::string show_name;
  bool show_json = false;
  show->add_option("name", show_name)->required();
  show->add_flag("--json", show_json);
  show->callback([&] {
    const Scenario s = builtin_scenario(show_name);
    if (show_json)
      std::cout << to_json(s).dump(2) << '\n';
    else
      print_scenario(s);
  });

  SimulateArgs sim;
  auto* simc = app.add_subcommand("simulate", "Monte Carlo trial simulation");
  simc->add_option("--suite", sim.suite, "Experiment suite")->check(CLI::IsMember(suite_names()));
  simc->add_option("--scenario", sim.scenario, "Scenario name, or comma-separated groups (A,B)");
  simc->add_option("--algorithm", sim.algorithm, "sdf, df, sota, structmab, indepts; -ar/-ur/-ep suffixes; comma list");
  simc->add_option("--runs", sim.runs)->check(CLI::PositiveNumber);
  simc->add_option("--seed", sim.seed);
  simc->add_option("--workers", sim.workers)->check(CLI::PositiveNumber);
  simc->add_option("--out", sim.out, "Output directory (default $SDFBAYES_OUT or ./results)");
  simc->add_option("--format", sim.format, "csv, json, md (comma list)");
  simc->add_flag("--log-decisions", sim.log_decisions, "Write per-run decision logs as JSON lines");
  simc->add_option("--T", sim.T, "Patient budget");
  simc->add_option("--v", sim.v, "Caution percentile");
  simc->add_option("--warm-rounds", sim.warm_rounds, "Rounds under the residual floor");
  simc->add_option("--prior-tp", sim.prior_tp, "Seeded prior trial size for the second group");
  simc->add_option("--prior", sim.prior, "default, hivar, noninfo");
  simc->add_flag("--quiet", sim.quiet);
  simc->callback([&] { simulate(sim); });

  ServerOptions so;
  std::string data_dir = "sessions";
  auto* serve = app.add_subcommand("serve", "Run the trial service");
  serve->add_option("--port", so.port);
  serve->add_option("--host", so.host);
  serve->add_option("--data-dir", data_dir);
  serve->add_option("--cors-origin", so.cors_origin);
  serve->callback([&] {
    TrialService service{fs::path(data_dir)};
    for (const auto& [id, why] : service.quarantined()) std::cerr << "quarantined " << id << ": " << why << '\n';
    httplib::Server srv;
    mount_routes(srv, service, so.cors_origin);
    g_server = &srv;
    std::signal(SIGINT, [](int) {
      if (g_server) g_server->stop();
    });
    std::signal(SIGTERM, [](int) {
      if (g_server) g_server->stop();
    });
    std::cerr << "listening on " << so.host << ':' << so.port << " (" << service.session_count() << " sessions)\n";
    if (!srv.listen(so.host, so.port)) throw std::runtime_error("cannot bind " + so.host + ":" + std::to_string(so.port));
  });

  try {
    CLI11_PARSE(app, argc, argv);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
