#pragma once

// Adaptive rejection Metropolis sampling for univariate targets given by an
// unnormalized log density on a bounded interval.
//
// The proposal hull is the derivative-free construction of Gilks, Best and
// Tan: on [x_i, x_{i+1}] it is max(L_{i,i+1}, min(L_{i-1,i}, L_{i+1,i+2}))
// where L_{a,b} is the chord through abscissae a and b (a missing neighbour
// chord drops out of the min), and the outer tails extend the outermost
// chords. For log-concave targets this is an envelope
// and the procedure reduces to adaptive rejection sampling; otherwise a
// Metropolis-Hastings step against the current point corrects for regions
// where the hull undershoots the target.
//
// Initial abscissae must not depend on the current point, otherwise the
// Metropolis correction no longer leaves the target invariant.

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <sstream>
#include <vector>

#include "sdfbayes/core.hpp"
#include "sdfbayes/fastmath.hpp"
#include "sdfbayes/rng.hpp"

namespace sdfb {

struct Interval {
  double lo = 0.0;
  double hi = 0.0;

  bool contains(double x) const { return x >= lo && x <= hi; }
  double width() const { return hi - lo; }
};

struct ArmsOptions {
  /// Starting abscissae, strictly inside the domain. Empty: five equally
  /// spaced interior points.
  std::span<const double> initial_abscissae{};
  int max_points = 50;
  /// Disable only when the caller knows the target is log-concave; the
  /// result is then an exact adaptive-rejection draw.
  bool metropolis = true;
  long max_proposals = 100000;
};

struct ArmsStats {
  long calls = 0;
  long evaluations = 0;
  long proposals = 0;
  long hull_refinements = 0;
  long metropolis_steps = 0;
  long metropolis_accepts = 0;

  double metropolis_acceptance() const {
    return metropolis_steps == 0 ? 1.0 : static_cast<double>(metropolis_accepts) / static_cast<double>(metropolis_steps);
  }
};

/// Reusable buffers; one per sampler to avoid per-draw allocation.
class ArmsWorkspace {
 public:
  struct Segment {
    double x0, x1;  // segment bounds
    double y0, y1;  // hull log-values at the bounds
    double cum;     // cumulative normalized mass up to and including this segment
  };

  std::vector<double> xs;
  std::vector<double> hs;
  std::vector<Segment> segments;
  double hull_max = 0.0;

  void build(const Interval& domain) {
    // The hull is piecewise linear but jumps at the outermost interior
    // abscissae, so segments carry their own end values.
    segments.clear();
    const auto n = static_cast<std::ptrdiff_t>(xs.size());
    auto slope = [&](std::ptrdiff_t i) { return (hs[i + 1] - hs[i]) / (xs[i + 1] - xs[i]); };
    auto line = [&](std::ptrdiff_t i, double x) { return hs[i] + slope(i) * (x - xs[i]); };
    auto add = [&](double x0, double x1, double y0, double y1) {
      if (x1 > x0) segments.push_back(Segment{x0, x1, y0, y1, 0.0});
    };

    add(domain.lo, xs[0], line(0, domain.lo), hs[0]);
    for (std::ptrdiff_t i = 0; i + 1 < n; ++i) {
      const bool has_left = i >= 1;
      const bool has_right = i + 2 < n;
      auto hull = [&](double x) {
        const double chord = line(i, x);
        if (!has_left && !has_right) return chord;
        double outer = std::numeric_limits<double>::infinity();
        if (has_left) outer = std::min(outer, line(i - 1, x));
        if (has_right) outer = std::min(outer, line(i + 1, x));
        return std::max(chord, outer);
      };
      // Linear between consecutive pairwise intersections of the lines involved.
      double cuts[5] = {xs[i], xs[i + 1], xs[i], xs[i], xs[i]};
      int m = 2;
      std::ptrdiff_t lines[3] = {i, i, i};
      int nl = 1;
      if (has_left) lines[nl++] = i - 1;
      if (has_right) lines[nl++] = i + 1;
      for (int a = 0; a < nl; ++a)
        for (int b = a + 1; b < nl; ++b) {
          const double sa = slope(lines[a]);
          const double sb = slope(lines[b]);
          if (sa == sb) continue;
          const double x = (hs[lines[b]] - sb * xs[lines[b]] - hs[lines[a]] + sa * xs[lines[a]]) / (sa - sb);
          if (x > xs[i] && x < xs[i + 1]) cuts[m++] = x;
        }
      std::sort(cuts, cuts + m);
      for (int c = 0; c + 1 < m; ++c) add(cuts[c], cuts[c + 1], hull(cuts[c]), hull(cuts[c + 1]));
    }
    add(xs[n - 1], domain.hi, hs[n - 1], line(n - 2, domain.hi));

    hull_max = -std::numeric_limits<double>::infinity();
    for (const auto& s : segments) hull_max = std::max({hull_max, s.y0, s.y1});
    double total = 0.0;
    for (auto& s : segments) {
      const double w = s.x1 - s.x0;
      const double d = s.y1 - s.y0;
      const double e0 = detail::exp_nonpositive(s.y0 - hull_max);
      double mass;
      if (std::abs(d) < 1e-6)
        mass = w * e0 * (1.0 + 0.5 * d);
      else
        mass = w * (detail::exp_nonpositive(s.y1 - hull_max) - e0) / d;
      total += mass;
      s.cum = total;
    }
    if (!(total > 0.0) || !std::isfinite(total)) throw numeric_error("ARMS hull has no finite mass");
    for (auto& s : segments) s.cum /= total;
  }

  /// Draws from the normalized exponentiated hull; returns the point and its
  /// hull log-value.
  std::pair<double, double> sample(Rng& rng) const {
    const double u = uniform01(rng);
    auto it = std::lower_bound(segments.begin(), segments.end(), u,
                               [](const Segment& s, double v) { return s.cum < v; });
    if (it == segments.end()) it = std::prev(segments.end());
    const Segment& s = *it;
    const double w = s.x1 - s.x0;
    const double slope = (s.y1 - s.y0) / w;
    const double v = uniform01(rng);
    double x;
    if (std::abs(slope * w) < 1e-12) {
      x = s.x0 + v * w;
    } else if (slope > 0.0) {
      x = s.x1 + std::log(v + (1.0 - v) * std::exp(-slope * w)) / slope;
    } else {
      x = s.x0 + std::log1p(v * std::expm1(slope * w)) / slope;
    }
    x = std::clamp(x, s.x0, s.x1);
    return {x, s.y0 + slope * (x - s.x0)};
  }

  /// Hull log-value at an arbitrary point of the domain.
  double hull_at(double x) const {
    for (const auto& s : segments) {
      if (x <= s.x1) {
        const double w = s.x1 - s.x0;
        if (w <= 0.0) return s.y0;
        return s.y0 + (s.y1 - s.y0) * (x - s.x0) / w;
      }
    }
    return segments.back().y1;
  }
};

namespace detail {

template <typename F>
double checked_eval(F& f, double x, ArmsStats* stats) {
  const double h = f(x);
  if (stats) ++stats->evaluations;
  if (!std::isfinite(h)) {
    std::ostringstream os;
    os << "ARMS: log density is not finite at x=" << x << " (value " << h << ")";
    throw numeric_error(os.str());
  }
  return h;
}

}  // namespace detail

/// One ARMS transition from `current` targeting exp(log_density) on `domain`.
template <typename F>
double arms_sample(F&& log_density, Interval domain, double current, Rng& rng, ArmsWorkspace& ws,
                   const ArmsOptions& options = {}, ArmsStats* stats = nullptr) {
  if (!(domain.hi > domain.lo)) throw infeasible_state_error("ARMS: empty sampling interval");
  if (stats) ++stats->calls;

  ws.xs.clear();
  ws.hs.clear();
  if (options.initial_abscissae.empty()) {
    for (int i = 1; i <= 5; ++i) ws.xs.push_back(domain.lo + domain.width() * i / 6.0);
  } else {
    for (double x : options.initial_abscissae)
      if (x > domain.lo && x < domain.hi) ws.xs.push_back(x);
    std::sort(ws.xs.begin(), ws.xs.end());
    ws.xs.erase(std::unique(ws.xs.begin(), ws.xs.end()), ws.xs.end());
    if (ws.xs.size() < 3) {
      ws.xs.clear();
      for (int i = 1; i <= 5; ++i) ws.xs.push_back(domain.lo + domain.width() * i / 6.0);
    }
  }
  for (double x : ws.xs) ws.hs.push_back(detail::checked_eval(log_density, x, stats));
  ws.build(domain);

  double proposal = 0.0;
  double h_prop = 0.0;
  for (long iter = 0;; ++iter) {
    if (iter >= options.max_proposals) throw numeric_error("ARMS: proposal budget exhausted");
    auto [x, gx] = ws.sample(rng);
    const double hx = detail::checked_eval(log_density, x, stats);
    if (stats) ++stats->proposals;
    const double u = uniform01(rng);
    if (hx >= gx || std::log(u) <= hx - gx) {
      proposal = x;
      h_prop = hx;
      break;
    }
    if (static_cast<int>(ws.xs.size()) < options.max_points) {
      auto pos = std::lower_bound(ws.xs.begin(), ws.xs.end(), x);
      if (pos != ws.xs.end() && *pos == x) continue;
      const auto idx = pos - ws.xs.begin();
      ws.xs.insert(pos, x);
      ws.hs.insert(ws.hs.begin() + idx, hx);
      ws.build(domain);
      if (stats) ++stats->hull_refinements;
    }
  }

  if (!options.metropolis || !domain.contains(current)) return proposal;

  if (stats) ++stats->metropolis_steps;
  const double h_cur = detail::checked_eval(log_density, current, stats);
  const double g_cur = ws.hull_at(current);
  const double g_prop = ws.hull_at(proposal);
  const double log_ratio = h_prop + std::min(h_cur, g_cur) - h_cur - std::min(h_prop, g_prop);
  if (log_ratio >= 0.0 || std::log(uniform01(rng)) < log_ratio) {
    if (stats) ++stats->metropolis_accepts;
    return proposal;
  }
  return current;
}

template <typename F>
double arms_sample(F&& log_density, Interval domain, double current, Rng& rng, const ArmsOptions& options = {},
                   ArmsStats* stats = nullptr) {
  ArmsWorkspace ws;
  return arms_sample(std::forward<F>(log_density), domain, current, rng, ws, options, stats);
}

}  // namespace sdfb
