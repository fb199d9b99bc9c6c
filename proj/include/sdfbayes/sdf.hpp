#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "sdfbayes/history.hpp"
#include "sdfbayes/posterior.hpp"
#include "sdfbayes/scenario.hpp"

namespace sdfb {

inline double prop1_bound(int t, double delta) {
  if (t < 1) throw invalid_parameter_error("round must be >= 1");
  if (!(delta > 0.0 && delta < 1.0)) throw invalid_parameter_error("delta must lie in (0,1)");
  return std::pow(1.0 - delta, 1.0 / t);
}

struct SdfConfig {
  double u = 0.1;
  double v = 0.9;
  double xi = 0.3;
  double eps = 0.05;
  double delta = 0.05;
  double psi = 0.05;
  int T = 60;
  /// Residual floor R; unset means xi * T.
  std::optional<double> warm_start_r;
  /// Last round to which the floor applies; unset means every round.
  std::optional<int> warm_start_rounds;
  bool caution_enabled = true;
  /// Target safety psi_s: replaces xi + eps in the residual and xi in the
  /// conservative-set test.
  std::optional<double> target_safety;
  /// Use v_t = (1 - delta)^(1/t) instead of the fixed v.
  bool prop1_schedule = false;

  double floor_value() const { return warm_start_r.value_or(xi * T); }
  bool floor_active(int t) const { return !warm_start_rounds || t <= *warm_start_rounds; }
  double safety_level() const { return target_safety.value_or(xi + eps); }
  double conservative_level() const { return target_safety.value_or(xi); }
  double percentile(int t) const { return prop1_schedule ? prop1_bound(t, delta) : v; }

  void validate() const {
    if (!(xi > 0.0 && xi < 1.0)) throw invalid_parameter_error("xi must lie in (0,1)");
    if (!(eps > 0.0)) throw invalid_parameter_error("eps must be positive");
    if (!(delta > 0.0 && delta < 1.0)) throw invalid_parameter_error("delta must lie in (0,1)");
    if (!(u > 0.0 && u < std::min(xi, 1.0 - xi))) throw invalid_parameter_error("u must lie in (0, min(xi, 1-xi))");
    if (!(v > 0.0 && v < 1.0)) throw invalid_parameter_error("v must lie in (0,1)");
    if (!(psi >= 0.0 && psi < v)) throw invalid_parameter_error("psi must satisfy 0 <= psi < v");
    if (T < 1) throw invalid_parameter_error("T must be >= 1");
    if (warm_start_r && std::isnan(*warm_start_r)) throw invalid_parameter_error("warm-start floor is NaN");
    if (target_safety && !(*target_safety > 0.0 && *target_safety < 1.0))
      throw invalid_parameter_error("target safety must lie in (0,1)");
  }
};

enum class Branch { optimistic, conservative, relaxed, terminated };

inline std::string to_string(Branch b) {
  switch (b) {
    case Branch::optimistic:
      return "optimistic";
    case Branch::conservative:
      return "conservative";
    case Branch::relaxed:
      return "relaxed";
    case Branch::terminated:
      return "terminated";
  }
  return "?";
}

struct RoundDecision {
  int t = 1;
  std::optional<Dc> chosen;  // empty when terminated
  Branch branch = Branch::optimistic;
  Dc candidate;  // argmax of G before the caution gate
  CellMatrix<double> g;
  CellMatrix<double> f;
  double residual = 0.0;
  double percentile = 0.9;
  std::optional<double> w;

  bool terminated() const { return branch == Branch::terminated; }
};

/// Fraction of draws with toxicity in [xi - u, xi + u], per cell.
inline CellMatrix<double> g_measure(const ToxicityDraws& draws, double xi, double u) {
  CellMatrix<double> g(draws.J(), draws.K(), 0.0);
  const double lo = xi - u;
  const double hi = xi + u;
  for (int c = 0; c < draws.cells(); ++c) {
    int hits = 0;
    for (double p : draws.cell(c)) hits += (p >= lo && p <= hi) ? 1 : 0;
    g.at(c) = static_cast<double>(hits) / draws.L();
  }
  return g;
}

/// The ceil(v * L)-th smallest value (1-based).
inline double f_quantile(std::span<const double> tox, double v) {
  if (tox.empty()) throw shape_error("quantile of an empty sample");
  if (!(v > 0.0 && v <= 1.0)) throw invalid_parameter_error("percentile must lie in (0,1]");
  const auto L = static_cast<long>(tox.size());
  long rank = static_cast<long>(std::ceil(v * static_cast<double>(L) - 1e-9));
  rank = std::clamp(rank, 1L, L);
  std::vector<double> buf(tox.begin(), tox.end());
  std::nth_element(buf.begin(), buf.begin() + (rank - 1), buf.end());
  return buf[static_cast<std::size_t>(rank - 1)];
}

inline CellMatrix<double> f_quantiles(const ToxicityDraws& draws, double v) {
  CellMatrix<double> f(draws.J(), draws.K(), 0.0);
  for (int c = 0; c < draws.cells(); ++c) f.at(c) = f_quantile(draws.cell(c), v);
  return f;
}

inline int count_at_most(std::span<const double> tox, double level) {
  int n = 0;
  for (double p : tox) n += p <= level ? 1 : 0;
  return n;
}

/// Whether cell a beats cell b as an argmax-G candidate: higher G, then larger
/// j + k, then larger j.
inline bool g_preferred(const CellMatrix<double>& g, Dc a, Dc b) {
  if (g(a) != g(b)) return g(a) > g(b);
  if (a.j + a.k != b.j + b.k) return a.j + a.k > b.j + b.k;
  return a.j > b.j;
}

/// Argmax of G over the cells admitted by `allowed` (all cells when empty).
inline std::optional<Dc> argmax_g(const CellMatrix<double>& g, const std::vector<char>& allowed = {}) {
  std::optional<Dc> best;
  for (int c = 0; c < g.cells(); ++c) {
    if (!allowed.empty() && !allowed[static_cast<std::size_t>(c)]) continue;
    const Dc dc = g.dc(c);
    if (!best || g_preferred(g, dc, *best)) best = dc;
  }
  return best;
}

/// Residual r(t, v) = max((xi + eps) t - sum over past allocations of F_a(v), R),
/// with the floor R only inside the warm-start window. `past` holds the n_a of
/// rounds 1..t-1.
inline double residual(const CellMatrix<int>& past, const CellMatrix<double>& f, int t, const SdfConfig& cfg) {
  if (!past.same_shape(f)) throw shape_error("allocation counts and quantiles differ in shape");
  double spent = 0.0;
  for (int c = 0; c < f.cells(); ++c) spent += past.at(c) * f.at(c);
  const double r = cfg.safety_level() * t - spent;
  return cfg.floor_active(t) ? std::max(r, cfg.floor_value()) : r;
}

/// One round of SDF-Bayes (DF-Bayes when caution is disabled). `past` are the
/// allocation counts of the rounds played so far; t = their total + 1.
inline RoundDecision sdf_step(const CellMatrix<int>& past, const ToxicityDraws& draws, const SdfConfig& cfg) {
  RoundDecision d;
  d.t = 1;
  for (int n : past.data()) d.t += n;
  d.percentile = cfg.percentile(d.t);
  d.g = g_measure(draws, cfg.xi, cfg.u);
  d.f = f_quantiles(draws, d.percentile);
  d.residual = residual(past, d.f, d.t, cfg);
  d.candidate = *argmax_g(d.g);

  if (!cfg.caution_enabled || d.f(d.candidate) <= d.residual) {
    d.chosen = d.candidate;
    d.branch = Branch::optimistic;
    return d;
  }
  const double level = cfg.conservative_level();
  std::vector<char> conservative(static_cast<std::size_t>(d.f.cells()), 0);
  bool any = false;
  for (int c = 0; c < d.f.cells(); ++c) {
    conservative[static_cast<std::size_t>(c)] = d.f.at(c) <= level;
    any = any || conservative[static_cast<std::size_t>(c)];
  }
  if (any) {
    d.chosen = argmax_g(d.g, conservative);
    d.branch = Branch::conservative;
    return d;
  }
  // Largest percentile w at which some cell's quantile is still <= level; the
  // cells reaching it form the relaxed conservative set.
  std::vector<int> below(static_cast<std::size_t>(d.f.cells()));
  int best = 0;
  for (int c = 0; c < d.f.cells(); ++c) {
    below[static_cast<std::size_t>(c)] = count_at_most(draws.cell(c), level);
    best = std::max(best, below[static_cast<std::size_t>(c)]);
  }
  d.w = static_cast<double>(best) / draws.L();
  if (*d.w > cfg.psi) {
    std::vector<char> relaxed(below.size(), 0);
    for (std::size_t c = 0; c < below.size(); ++c) relaxed[c] = below[c] == best;
    d.chosen = argmax_g(d.g, relaxed);
    d.branch = Branch::relaxed;
    return d;
  }
  d.branch = Branch::terminated;
  return d;
}

inline RoundDecision sdf_step(const TrialHistory& history, const ToxicityDraws& draws, const SdfConfig& cfg) {
  return sdf_step(history.n(), draws, cfg);
}

struct Recommendation {
  Dc dc;
  CellMatrix<double> g;
  /// Every cell has G = 0; the tie rule alone picked the cell.
  bool degenerate = false;
};

inline Recommendation recommend(const ToxicityDraws& draws, double xi, double u) {
  Recommendation r;
  r.g = g_measure(draws, xi, u);
  r.dc = *argmax_g(r.g);
  r.degenerate = r.g(r.dc) == 0.0;
  return r;
}

inline Recommendation recommend(const ToxicityDraws& draws, const SdfConfig& cfg) {
  return recommend(draws, cfg.xi, cfg.u);
}

}  // namespace sdfb
