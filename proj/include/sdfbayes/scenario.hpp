#pragma once

#include <array>
#include <cmath>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "sdfbayes/toxicity_model.hpp"

namespace sdfb {

/// Ground truth for a simulated trial: true toxicity per dose combination and
/// the trial targets (target toxicity xi, safety margin eps, failure
/// probability delta).
class Scenario {
 public:
  Scenario(std::string name, DoseGrid grid, CellMatrix<double> true_tox, double xi = 0.30,
           double eps = 0.05, double delta = 0.05)
      : name_(std::move(name)), grid_(std::move(grid)), true_tox_(std::move(true_tox)), xi_(xi),
        eps_(eps), delta_(delta) {
    if (true_tox_.rows() != grid_.J() || true_tox_.cols() != grid_.K())
      throw shape_error("toxicity table of scenario '" + name_ + "' does not match its grid");
    for (double p : true_tox_.data())
      if (!(p >= 0.0 && p <= 1.0)) throw invalid_parameter_error("true toxicity outside [0,1]");
    if (!(xi_ > 0.0 && xi_ < 1.0)) throw invalid_parameter_error("xi must lie in (0,1)");
    if (!(eps_ > 0.0)) throw invalid_parameter_error("eps must be positive");
    if (!(delta_ > 0.0 && delta_ < 1.0)) throw invalid_parameter_error("delta must lie in (0,1)");
    compute_mtd_set();
  }

  const std::string& name() const { return name_; }
  const DoseGrid& grid() const { return grid_; }
  const CellMatrix<double>& true_tox() const { return true_tox_; }
  double true_tox(Dc dc) const { return true_tox_(dc); }
  double xi() const { return xi_; }
  double eps() const { return eps_; }
  double delta() const { return delta_; }

  /// Dose combinations whose true toxicity is closest to xi (ties within 1e-9).
  const std::vector<Dc>& mtd_set() const { return mtd_set_; }
  bool is_mtd(Dc dc) const {
    for (const Dc& m : mtd_set_)
      if (m == dc) return true;
    return false;
  }

 private:
  void compute_mtd_set() {
    double best = 2.0;
    for (double p : true_tox_.data()) best = std::min(best, std::abs(p - xi_));
    mtd_set_.clear();
    for (int i = 0; i < true_tox_.cells(); ++i)
      if (std::abs(true_tox_.at(i) - xi_) <= best + 1e-9) mtd_set_.push_back(true_tox_.dc(i));
  }

  std::string name_;
  DoseGrid grid_;
  CellMatrix<double> true_tox_;
  double xi_;
  double eps_;
  double delta_;
  std::vector<Dc> mtd_set_;
};

namespace detail {

// Rows are listed j = 1 (lowest drug-A dose) first.
using Table3x4 = std::array<std::array<double, 4>, 3>;

inline Scenario make_builtin(const std::string& name, const Table3x4& rows) {
  DoseGrid grid;
  CellMatrix<double> tox = grid.matrix<double>();
  for (int j = 1; j <= 3; ++j)
    for (int k = 1; k <= 4; ++k) tox(j, k) = rows[static_cast<std::size_t>(j - 1)][static_cast<std::size_t>(k - 1)];
  return Scenario(name, grid, tox);
}

struct BuiltinEntry {
  const char* name;
  Table3x4 rows;
};

inline const std::vector<BuiltinEntry>& builtin_table() {
  static const std::vector<BuiltinEntry> table = {
      {"A", {{{0.05, 0.10, 0.15, 0.30}, {0.10, 0.15, 0.30, 0.45}, {0.15, 0.30, 0.45, 0.50}}}},
      {"B", {{{0.02, 0.08, 0.10, 0.11}, {0.05, 0.10, 0.13, 0.15}, {0.09, 0.12, 0.15, 0.30}}}},
      {"C", {{{0.02, 0.10, 0.15, 0.50}, {0.05, 0.12, 0.30, 0.55}, {0.08, 0.15, 0.45, 0.60}}}},
      {"D", {{{0.05, 0.12, 0.20, 0.30}, {0.10, 0.20, 0.30, 0.40}, {0.30, 0.42, 0.52, 0.62}}}},
      // Fitted toxicities of the nilotinib + imatinib trial.
      {"RW", {{{0.04, 0.07, 0.11, 0.17}, {0.08, 0.13, 0.20, 0.30}, {0.13, 0.21, 0.30, 0.43}}}},
      {"E", {{{0.05, 0.08, 0.10, 0.13}, {0.09, 0.12, 0.15, 0.30}, {0.15, 0.30, 0.45, 0.50}}}},
      {"F", {{{0.03, 0.06, 0.08, 0.10}, {0.07, 0.12, 0.16, 0.35}, {0.10, 0.15, 0.35, 0.50}}}},
      {"G", {{{0.05, 0.10, 0.17, 0.35}, {0.10, 0.17, 0.35, 0.45}, {0.17, 0.35, 0.45, 0.50}}}},
      {"H", {{{0.03, 0.06, 0.08, 0.10}, {0.07, 0.12, 0.16, 0.25}, {0.10, 0.15, 0.25, 0.40}}}},
      {"I", {{{0.03, 0.08, 0.18, 0.25}, {0.07, 0.12, 0.25, 0.40}, {0.10, 0.25, 0.40, 0.60}}}},
      // Entire population: cellwise mean of A and B.
      {"EP", {{{0.035, 0.09, 0.125, 0.205}, {0.075, 0.125, 0.215, 0.30}, {0.12, 0.21, 0.30, 0.40}}}},
  };
  return table;
}

}  // namespace detail

inline std::vector<std::string> builtin_scenario_names() {
  std::vector<std::string> names;
  for (const auto& e : detail::builtin_table()) names.emplace_back(e.name);
  return names;
}

inline Scenario builtin_scenario(const std::string& name) {
  for (const auto& e : detail::builtin_table())
    if (name == e.name) return detail::make_builtin(e.name, e.rows);
  throw not_found_error("unknown scenario '" + name + "'");
}

/// Caution percentile used for a scenario unless overridden: the real-world
/// table was designed around a lower target interval, so it runs at 0.85.
inline double default_caution_percentile(const std::string& scenario_name) {
  return scenario_name == "RW" ? 0.85 : 0.90;
}

inline Scenario average_scenario(const Scenario& a, const Scenario& b, std::string name = {}) {
  if (!(a.grid() == b.grid())) throw shape_error("cannot average scenarios on different grids");
  if (a.xi() != b.xi() || a.eps() != b.eps() || a.delta() != b.delta())
    throw shape_error("cannot average scenarios with different targets");
  CellMatrix<double> tox = a.true_tox();
  for (int i = 0; i < tox.cells(); ++i) tox.at(i) = 0.5 * (a.true_tox().at(i) + b.true_tox().at(i));
  if (name.empty()) name = "avg(" + a.name() + "," + b.name() + ")";
  return Scenario(std::move(name), a.grid(), std::move(tox), a.xi(), a.eps(), a.delta());
}

// --- JSON ------------------------------------------------------------------

inline nlohmann::json to_json(const Scenario& s) {
  nlohmann::json rows = nlohmann::json::array();
  for (int j = 1; j <= s.grid().J(); ++j) {
    nlohmann::json row = nlohmann::json::array();
    for (int k = 1; k <= s.grid().K(); ++k) row.push_back(s.true_tox()(j, k));
    rows.push_back(std::move(row));
  }
  return {{"name", s.name()},          {"J", s.grid().J()},  {"K", s.grid().K()},
          {"u", s.grid().dose_a()},    {"v", s.grid().dose_b()}, {"trueTox", std::move(rows)},
          {"xi", s.xi()},              {"eps", s.eps()},     {"delta", s.delta()}};
}

inline Scenario scenario_from_json(const nlohmann::json& j) {
  try {
    const int J = j.at("J").get<int>();
    const int K = j.at("K").get<int>();
    DoseGrid grid(j.at("u").get<std::vector<double>>(), j.at("v").get<std::vector<double>>());
    if (grid.J() != J || grid.K() != K) throw shape_error("J/K disagree with dose vectors");
    const auto& rows = j.at("trueTox");
    if (!rows.is_array() || static_cast<int>(rows.size()) != J) throw shape_error("trueTox must have J rows");
    CellMatrix<double> tox(J, K);
    for (int r = 0; r < J; ++r) {
      const auto& row = rows.at(static_cast<std::size_t>(r));
      if (!row.is_array() || static_cast<int>(row.size()) != K) throw shape_error("trueTox rows must have K entries");
      for (int c = 0; c < K; ++c) tox(r + 1, c + 1) = row.at(static_cast<std::size_t>(c)).get<double>();
    }
    return Scenario(j.at("name").get<std::string>(), std::move(grid), std::move(tox),
                    j.value("xi", 0.30), j.value("eps", 0.05), j.value("delta", 0.05));
  } catch (const nlohmann::json::exception& e) {
    throw config_error(std::string("malformed scenario JSON: ") + e.what());
  }
}

}  // namespace sdfb
