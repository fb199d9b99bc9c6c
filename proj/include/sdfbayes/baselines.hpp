#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <optional>
#include <vector>

#include "sdfbayes/history.hpp"
#include "sdfbayes/posterior.hpp"
#include "sdfbayes/rng.hpp"
#include "sdfbayes/sdf.hpp"

namespace sdfb {

// ---------------------------------------------------------------- SOTA Bayes

struct SotaConfig {
  double ce = 0.85;  // escalate when P(p_current < xi) exceeds this
  double cd = 0.45;  // de-escalate when P(p_current > xi) exceeds this
  Dc start{1, 1};

  void validate() const {
    if (!(ce > 0.0 && ce < 1.0 && cd > 0.0 && cd < 1.0)) throw invalid_parameter_error("ce and cd must lie in (0,1)");
    if (!(ce + cd > 1.0)) throw invalid_parameter_error("SOTA needs ce + cd > 1");
  }
};

struct SotaMove {
  Dc dc;
  int direction = 0;  // +1 escalate, -1 de-escalate, 0 stay
};

inline SotaMove sota_step(const ToxicityDraws& draws, Dc current, double xi, const SotaConfig& cfg) {
  const auto cur = draws.cell(current);
  int lo = 0;
  int hi = 0;
  for (double p : cur) {
    lo += p < xi ? 1 : 0;
    hi += p > xi ? 1 : 0;
  }
  const double q_lo = static_cast<double>(lo) / draws.L();
  const double q_hi = static_cast<double>(hi) / draws.L();
  const double mean_cur = draws.mean(current);

  auto pick = [&](const std::array<Dc, 4>& nbrs, bool upward) -> std::optional<Dc> {
    std::optional<Dc> best;
    double best_gap = std::numeric_limits<double>::infinity();
    for (Dc n : nbrs) {
      if (n.j < 1 || n.j > draws.J() || n.k < 1 || n.k > draws.K()) continue;
      const double m = draws.mean(n);
      if (upward ? !(m > mean_cur) : !(m < mean_cur)) continue;
      const double gap = std::abs(m - xi);
      if (gap < best_gap) {
        best_gap = gap;
        best = n;
      }
    }
    return best;
  };

  const int j = current.j;
  const int k = current.k;
  if (q_lo > cfg.ce) {
    if (auto n = pick({Dc{j + 1, k}, Dc{j, k + 1}, Dc{j + 1, k - 1}, Dc{j - 1, k + 1}}, true)) return {*n, +1};
    return {current, 0};
  }
  if (q_hi > cfg.cd) {
    if (auto n = pick({Dc{j - 1, k}, Dc{j, k - 1}, Dc{j + 1, k - 1}, Dc{j - 1, k + 1}}, false)) return {*n, -1};
    return {current, 0};
  }
  return {current, 0};
}

// ----------------------------------------------------------------- Beta / TS

/// Independent Beta(s_a + 1, n_a - s_a + 1) posteriors.
struct BetaPosterior {
  CellMatrix<double> alpha;
  CellMatrix<double> beta;

  explicit BetaPosterior(const Counts& c) : alpha(c.n.rows(), c.n.cols(), 1.0), beta(c.n.rows(), c.n.cols(), 1.0) {
    for (int i = 0; i < c.n.cells(); ++i) {
      alpha.at(i) = c.s.at(i) + 1.0;
      beta.at(i) = c.n.at(i) - c.s.at(i) + 1.0;
    }
  }

  void update(Dc dc, int y) {
    alpha(dc) += y;
    beta(dc) += 1 - y;
  }

  double draw(Dc dc, Rng& rng) const { return beta_draw(rng, alpha(dc), beta(dc)); }
};

/// Thompson draw per admitted cell, then argmin |p - xi| (ties to the lowest index).
inline std::optional<Dc> thompson_closest(const BetaPosterior& post, const std::vector<char>& allowed, double xi,
                                          Rng& rng) {
  std::optional<Dc> best;
  double best_gap = std::numeric_limits<double>::infinity();
  for (int c = 0; c < post.alpha.cells(); ++c) {
    if (!allowed.empty() && !allowed[static_cast<std::size_t>(c)]) continue;
    const Dc dc = post.alpha.dc(c);
    const double gap = std::abs(post.draw(dc, rng) - xi);
    if (gap < best_gap) {
      best_gap = gap;
      best = dc;
    }
  }
  return best;
}

inline Dc indep_ts_step(const Counts& counts, double xi, Rng& rng) {
  return *thompson_closest(BetaPosterior(counts), {}, xi, rng);
}

/// Argmin over allocated cells of |s_a / n_a - xi|, ties to the lowest index.
inline Dc empirical_closest(const Counts& counts, double xi) {
  std::optional<Dc> best;
  double best_gap = std::numeric_limits<double>::infinity();
  for (int c = 0; c < counts.n.cells(); ++c) {
    if (counts.n.at(c) == 0) continue;
    const double gap = std::abs(static_cast<double>(counts.s.at(c)) / counts.n.at(c) - xi);
    if (gap < best_gap) {
      best_gap = gap;
      best = counts.n.dc(c);
    }
  }
  if (!best) throw invalid_state_error("no dose combination was ever allocated");
  return *best;
}

inline Dc indep_ts_recommend(const Counts& counts, double xi) { return empirical_closest(counts, xi); }

// ----------------------------------------------------------------- StructMAB

struct StructMabConfig {
  double alpha = 1.0;      // exploration constant in the confidence radius
  double filter_q = 0.2;   // drop candidates below this percentile of ground counts
  double safety_q = 0.8;   // percentile used as the conservative toxicity

  void validate() const {
    if (!(alpha > 0.0)) throw invalid_parameter_error("alpha must be positive");
    if (!(filter_q > 0.0 && filter_q <= 1.0) || !(safety_q > 0.0 && safety_q <= 1.0))
      throw invalid_parameter_error("StructMAB percentiles must lie in (0,1]");
  }
};

inline double confidence_radius(int t, int n, double alpha) {
  if (n <= 0) return std::numeric_limits<double>::infinity();
  return std::sqrt(alpha * std::log(static_cast<double>(t)) / (2.0 * n));
}

/// Nearest-rank percentile: the ceil(q n)-th smallest value.
inline int nearest_rank(std::vector<int> values, double q) {
  if (values.empty()) throw shape_error("percentile of an empty set");
  std::sort(values.begin(), values.end());
  auto rank = static_cast<long>(std::ceil(q * static_cast<double>(values.size()) - 1e-9));
  rank = std::clamp(rank, 1L, static_cast<long>(values.size()));
  return values[static_cast<std::size_t>(rank - 1)];
}

struct StructMabSets {
  std::vector<char> candidates;
  std::vector<char> conservative;
  CellMatrix<int> ground;
  int admitted = 0;
  bool all_admitted_fallback = false;
};

inline StructMabSets struct_mab_candidates(const ToxicityDraws& draws, const Counts& counts, int t, double xi,
                                           const StructMabConfig& cfg) {
  const int cells = draws.cells();
  const int L = draws.L();
  std::vector<char> admit(static_cast<std::size_t>(L), 1);
  for (int c = 0; c < cells; ++c) {
    const int n = counts.n.at(c);
    if (n == 0) continue;
    const double pbar = static_cast<double>(counts.s.at(c)) / n;
    const double rad = confidence_radius(t, n, cfg.alpha);
    const auto tox = draws.cell(c);
    for (int l = 0; l < L; ++l)
      if (!(std::abs(pbar - tox[static_cast<std::size_t>(l)]) < rad)) admit[static_cast<std::size_t>(l)] = 0;
  }
  StructMabSets out;
  out.admitted = static_cast<int>(std::count(admit.begin(), admit.end(), 1));
  if (out.admitted == 0) {
    std::fill(admit.begin(), admit.end(), 1);
    out.admitted = L;
    out.all_admitted_fallback = true;
  }

  out.ground = CellMatrix<int>(draws.J(), draws.K(), 0);
  out.conservative.assign(static_cast<std::size_t>(cells), 1);
  for (int l = 0; l < L; ++l) {
    if (!admit[static_cast<std::size_t>(l)]) continue;
    int arg = 0;
    double gap = std::numeric_limits<double>::infinity();
    for (int c = 0; c < cells; ++c) {
      const double p = draws.cell(c)[static_cast<std::size_t>(l)];
      if (std::abs(p - xi) < gap) {
        gap = std::abs(p - xi);
        arg = c;
      }
      if (p > xi) out.conservative[static_cast<std::size_t>(c)] = 0;
    }
    ++out.ground.at(arg);
  }

  std::vector<int> positive;
  for (int g : out.ground.data())
    if (g > 0) positive.push_back(g);
  const int cut = nearest_rank(positive, cfg.filter_q);
  out.candidates.assign(static_cast<std::size_t>(cells), 0);
  for (int c = 0; c < cells; ++c) out.candidates[static_cast<std::size_t>(c)] = out.ground.at(c) > 0 && out.ground.at(c) >= cut;
  return out;
}

struct StructMabDecision {
  Dc chosen;
  Dc thompson;  // candidate before the safety gate
  double residual = 0.0;
  bool gate_passed = true;
  bool repeated_last = false;  // empty conservative set
  StructMabSets sets;
};

/// `past` holds the allocation counts of rounds 1..t-1; `last` the previous
/// allocation, if any.
inline StructMabDecision struct_mab_step(const ToxicityDraws& draws, const Counts& counts, const CellMatrix<int>& past,
                                         std::optional<Dc> last, double xi, double eps, const StructMabConfig& cfg,
                                         Rng& rng) {
  int t = 1;
  for (int n : past.data()) t += n;
  StructMabDecision d;
  d.sets = struct_mab_candidates(draws, counts, t, xi, cfg);
  const BetaPosterior post(counts);
  d.thompson = *thompson_closest(post, d.sets.candidates, xi, rng);

  const CellMatrix<double> q = f_quantiles(draws, cfg.safety_q);
  double spent = 0.0;
  for (int c = 0; c < q.cells(); ++c) spent += past.at(c) * q.at(c);
  d.residual = (xi + eps) * t - spent;
  if (d.residual - q(d.thompson) >= 0.0) {
    d.chosen = d.thompson;
    return d;
  }
  d.gate_passed = false;
  if (auto safe = thompson_closest(post, d.sets.conservative, xi, rng)) {
    d.chosen = *safe;
    return d;
  }
  d.repeated_last = true;
  d.chosen = last.value_or(Dc{1, 1});
  return d;
}

}  // namespace sdfb
