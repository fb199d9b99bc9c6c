#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <vector>

#include "sdfbayes/arms.hpp"
#include "sdfbayes/fastmath.hpp"
#include "sdfbayes/history.hpp"
#include "sdfbayes/prior.hpp"
#include "sdfbayes/rng.hpp"
#include "sdfbayes/toxicity_model.hpp"

namespace sdfb {

namespace detail {

// log(1 + e^z) without overflow.
inline double softplus(double z) { return z > 0.0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z)); }

}  // namespace detail

/// Binomial log-likelihood sum_a s_a log p_a + (n_a - s_a) log(1 - p_a).
inline double log_likelihood(const Counts& counts, const ModelParams& params, const DoseGrid& grid) {
  double acc = 0.0;
  for (int i = 0; i < counts.n.cells(); ++i) {
    const int n = counts.n.at(i);
    if (n == 0) continue;
    const int s = counts.s.at(i);
    const Dc dc = counts.n.dc(i);
    const double z = toxicity_logit(params, grid.u(dc.j), grid.v(dc.k));
    // log p = -softplus(-z), log(1-p) = -softplus(z)
    acc -= s * detail::softplus(-z) + (n - s) * detail::softplus(z);
  }
  return acc;
}

inline double log_likelihood(const TrialHistory& history, const ModelParams& params, const DoseGrid& grid) {
  return log_likelihood(history.counts(), params, grid);
}

/// Feasible interval of coordinate `dim` given the other three coordinates,
/// intersected with the truncation box [-bound, bound]. The constraints are
/// strict, so the returned bounds themselves are excluded wherever they come
/// from a monotonicity constraint.
inline Interval conditional_domain(const ModelParams& p, const DoseGrid& grid, int dim, double bound) {
  Interval iv{-bound, bound};
  switch (dim) {
    case 0:
      break;
    case 1:
      iv.lo = 0.0;
      for (double vk : grid.dose_b()) iv.lo = std::max(iv.lo, -p[3] * vk);
      break;
    case 2:
      iv.lo = 0.0;
      for (double uj : grid.dose_a()) iv.lo = std::max(iv.lo, -p[3] * uj);
      break;
    case 3:
      // theta1 + theta3 v_k > 0 and theta2 + theta3 u_j > 0.
      for (double vk : grid.dose_b()) {
        if (vk < 0.0) iv.hi = std::min(iv.hi, p[1] / -vk);
        if (vk > 0.0) iv.lo = std::max(iv.lo, -p[1] / vk);
      }
      for (double uj : grid.dose_a()) {
        if (uj < 0.0) iv.hi = std::min(iv.hi, p[2] / -uj);
        if (uj > 0.0) iv.lo = std::max(iv.lo, -p[2] / uj);
      }
      break;
    default:
      throw std::out_of_range("model coordinate must be 0..3");
  }
  if (!(iv.hi > iv.lo))
    throw infeasible_state_error("empty conditional domain for theta" + std::to_string(dim));
  return iv;
}

/// Cell terms of the log-likelihood, split per model coordinate, for fixed
/// counts. Cells never allocated, and cells on which a coordinate has zero
/// slope, drop out of that coordinate's conditional.
class LikelihoodTerms {
 public:
  struct Dim {
    std::array<std::vector<double>, 4> basis;  // 1, u_j, v_k, u_j v_k per retained cell
    std::vector<double> weight;                // n_a
    double linear = 0.0;                       // sum_a s_a * slope_a
  };

  LikelihoodTerms() = default;
  LikelihoodTerms(const Counts& counts, const DoseGrid& grid) { assign(counts, grid); }

  void assign(const Counts& counts, const DoseGrid& grid) {
    for (int d = 0; d < 4; ++d) {
      Dim& t = dims_[static_cast<std::size_t>(d)];
      for (auto& b : t.basis) b.clear();
      t.weight.clear();
      t.linear = 0.0;
      for (int i = 0; i < counts.n.cells(); ++i) {
        const int n = counts.n.at(i);
        if (n == 0) continue;
        const Dc dc = counts.n.dc(i);
        const std::array<double, 4> basis{1.0, grid.u(dc.j), grid.v(dc.k), grid.u(dc.j) * grid.v(dc.k)};
        const double slope = basis[static_cast<std::size_t>(d)];
        if (slope == 0.0) continue;
        for (std::size_t o = 0; o < 4; ++o) t.basis[o].push_back(basis[o]);
        t.weight.push_back(static_cast<double>(n));
        t.linear += counts.s.at(i) * slope;
      }
    }
  }

  const Dim& dim(int d) const { return dims_.at(static_cast<std::size_t>(d)); }

 private:
  std::array<Dim, 4> dims_;
};

/// Unnormalized log full conditional of one coordinate: log-likelihood plus
/// log prior as a function of theta_dim, with the other coordinates frozen.
/// Terms constant in theta_dim are dropped. Evaluation uses internal scratch
/// space, so one instance must not be evaluated from two threads at once.
class ConditionalDensity {
 public:
  ConditionalDensity() = default;
  ConditionalDensity(const Counts& counts, const ModelParams& params, const DoseGrid& grid, const PriorSpec& prior,
                     int dim)
      : owned_(std::make_shared<LikelihoodTerms>(counts, grid)) {
    assign(*owned_, params, grid, prior, dim);
  }

  /// `terms` must outlive every evaluation.
  void assign(const LikelihoodTerms& terms, const ModelParams& params, const DoseGrid& grid, const PriorSpec& prior,
              int dim) {
    const LikelihoodTerms::Dim& t = terms.dim(dim);
    dim_ = dim;
    prior_ = prior.dims.at(static_cast<std::size_t>(dim));
    domain_ = conditional_domain(params, grid, dim, prior.bound);
    linear_ = t.linear;
    m_ = t.weight.size();
    slope_ = t.basis[static_cast<std::size_t>(dim)].data();
    weight_ = t.weight.data();
    if (offset_.size() < m_) {
      offset_.resize(m_);
      scratch_.resize(m_);
    }
    double* off = offset_.data();
    for (std::size_t i = 0; i < m_; ++i) off[i] = 0.0;
    for (int o = 0; o < 4; ++o) {
      if (o == dim) continue;
      const double th = params[o];
      const double* b = t.basis[static_cast<std::size_t>(o)].data();
      for (std::size_t i = 0; i < m_; ++i) off[i] += th * b[i];
    }
  }

  double operator()(double x) const {
    const double* off = offset_.data();
    const double* sl = slope_;
    const double* w = weight_;
    double* tmp = scratch_.data();
    for (std::size_t i = 0; i < m_; ++i) tmp[i] = w[i] * detail::softplus_fast(off[i] + sl[i] * x);
    double acc = linear_ * x + prior_.log_density(x);
    for (std::size_t i = 0; i < m_; ++i) acc -= tmp[i];
    return acc;
  }

  const Interval& domain() const { return domain_; }
  int dim() const { return dim_; }
  bool log_concave() const { return prior_.log_concave(); }

 private:
  int dim_ = 0;
  ParamPrior prior_;
  Interval domain_;
  double linear_ = 0.0;
  std::size_t m_ = 0;
  std::shared_ptr<const LikelihoodTerms> owned_;
  const double* slope_ = nullptr;
  const double* weight_ = nullptr;
  std::vector<double> offset_;
  mutable std::vector<double> scratch_;
};

inline ConditionalDensity log_posterior_conditional(const Counts& counts, const ModelParams& params,
                                                    const DoseGrid& grid, const PriorSpec& prior, int dim) {
  return ConditionalDensity(counts, params, grid, prior, dim);
}

struct PosteriorSamples {
  std::vector<ModelParams> draws;
  int burn_in = 0;
  std::uint64_t seed = 0;

  int size() const { return static_cast<int>(draws.size()); }
};

/// p_a(theta^(l)) for every cell and draw, stored cell-major.
class ToxicityDraws {
 public:
  ToxicityDraws() = default;
  ToxicityDraws(int J, int K, int L)
      : J_(J), K_(K), L_(L), values_(static_cast<std::size_t>(J * K) * static_cast<std::size_t>(L)) {
    if (J < 1 || K < 1 || L < 1) throw shape_error("ToxicityDraws needs a non-empty grid and at least one draw");
  }

  static ToxicityDraws from_samples(const PosteriorSamples& samples, const DoseGrid& grid) {
    ToxicityDraws out(grid.J(), grid.K(), samples.size());
    for (int l = 0; l < samples.size(); ++l) {
      const ModelParams& p = samples.draws[static_cast<std::size_t>(l)];
      for (int j = 1; j <= grid.J(); ++j)
        for (int k = 1; k <= grid.K(); ++k)
          out.mutable_cell(grid.index(Dc{j, k}))[static_cast<std::size_t>(l)] =
              logistic(toxicity_logit(p, grid.u(j), grid.v(k)));
    }
    return out;
  }

  /// Builds draws directly from per-cell toxicity values (row-major cells).
  static ToxicityDraws from_values(int J, int K, const std::vector<std::vector<double>>& per_cell) {
    if (static_cast<int>(per_cell.size()) != J * K) throw shape_error("need one value list per cell");
    const int L = static_cast<int>(per_cell.front().size());
    ToxicityDraws out(J, K, L);
    for (int c = 0; c < J * K; ++c) {
      if (static_cast<int>(per_cell[static_cast<std::size_t>(c)].size()) != L)
        throw shape_error("every cell needs the same number of draws");
      std::copy(per_cell[static_cast<std::size_t>(c)].begin(), per_cell[static_cast<std::size_t>(c)].end(),
                out.mutable_cell(c).begin());
    }
    return out;
  }

  int J() const { return J_; }
  int K() const { return K_; }
  int cells() const { return J_ * K_; }
  int L() const { return L_; }
  int index(Dc dc) const {
    if (dc.j < 1 || dc.j > J_ || dc.k < 1 || dc.k > K_) throw std::out_of_range("cell outside grid: " + to_string(dc));
    return (dc.j - 1) * K_ + (dc.k - 1);
  }
  Dc dc(int index) const { return Dc{index / K_ + 1, index % K_ + 1}; }

  std::span<const double> cell(int index) const {
    return {values_.data() + static_cast<std::size_t>(index) * static_cast<std::size_t>(L_),
            static_cast<std::size_t>(L_)};
  }
  std::span<const double> cell(Dc dc) const { return cell(index(dc)); }
  std::span<double> mutable_cell(int index) {
    return {values_.data() + static_cast<std::size_t>(index) * static_cast<std::size_t>(L_),
            static_cast<std::size_t>(L_)};
  }

  double mean(Dc dc) const {
    double acc = 0.0;
    for (double p : cell(dc)) acc += p;
    return acc / L_;
  }

 private:
  int J_ = 0;
  int K_ = 0;
  int L_ = 0;
  std::vector<double> values_;
};

struct SamplerOptions {
  int L = 2000;
  int burn_in = 500;
  /// Start each run from the final state of the previous run.
  bool warm_start = true;
  int initial_points = 4;
  /// Skip the Metropolis correction for coordinates whose full conditional
  /// is provably log-concave (logistic likelihood times a log-concave prior).
  bool exploit_log_concavity = true;
};

using TraceFn = std::function<void(int sweep, const ModelParams&)>;

/// Gibbs sampler over (theta0..theta3), one ARMS transition per coordinate
/// per sweep. Owns its chain state; not shareable across threads.
///
/// Initial ARMS abscissae for coordinate d are placed around a linear
/// prediction of theta_d from the other three coordinates (fitted on the
/// previous run's retained draws), spaced by the residual scale. They depend
/// on theta_{-d} only, never on the current theta_d.
class GibbsSampler {
 public:
  GibbsSampler(DoseGrid grid, PriorSpec prior, SamplerOptions options = {}, ModelParams init = {})
      : grid_(std::move(grid)), prior_(std::move(prior)), options_(options), init_(init), state_(init) {
    require_admissible(init_, grid_);
    if (options_.L < 1) throw config_error("sampler needs L >= 1");
    if (options_.burn_in < 0) throw config_error("sampler needs burn-in >= 0");
    if (options_.initial_points < 3) throw config_error("ARMS needs at least 3 initial abscissae");
    reset_frames();
  }

  PosteriorSamples sample(const Counts& counts, std::uint64_t seed) {
    return sample(counts, seed, options_.L, options_.burn_in);
  }

  PosteriorSamples sample(const Counts& counts, std::uint64_t seed, int L, int burn_in, const TraceFn& trace = {}) {
    if (L < 1) throw config_error("sampler needs L >= 1");
    if (burn_in < 0) throw config_error("sampler needs burn-in >= 0");
    if (!counts.n.same_shape(grid_.matrix<int>())) throw shape_error("counts do not match the sampler grid");
    if (!options_.warm_start) state_ = init_;
    terms_.assign(counts, grid_);
    Rng rng(seed);
    PosteriorSamples out;
    out.seed = seed;
    out.burn_in = burn_in;
    out.draws.reserve(static_cast<std::size_t>(L));
    std::array<double, 8> points{};
    for (int sweep = 0; sweep < burn_in + L; ++sweep) {
      for (int d = 0; d < 4; ++d) {
        cond_.assign(terms_, state_, grid_, prior_, d);
        const ConditionalDensity& cond = cond_;
        const Interval dom = cond.domain();
        const int m = fill_abscissae(d, dom, points);
        ArmsOptions opts;
        opts.initial_abscissae = std::span<const double>(points.data(), static_cast<std::size_t>(m));
        opts.metropolis = !(options_.exploit_log_concavity && cond.log_concave());
        double x = arms_sample(cond, dom, state_[d], rng, ws_, opts, &stats_);
        state_[d] = keep_strict(x, d, dom);
      }
      if (trace) trace(sweep, state_);
      if (sweep >= burn_in) out.draws.push_back(state_);
    }
    refit_frames(out.draws);
    return out;
  }

  const ModelParams& state() const { return state_; }
  void set_state(const ModelParams& p) {
    require_admissible(p, grid_);
    state_ = p;
  }
  void reset() {
    state_ = init_;
    reset_frames();
  }

  const DoseGrid& grid() const { return grid_; }
  const PriorSpec& prior() const { return prior_; }
  const SamplerOptions& options() const { return options_; }
  const ArmsStats& stats() const { return stats_; }

 private:
  struct Frame {
    std::array<double, 4> coef{};  // intercept + slopes on the other coordinates
    double scale = 1.0;
  };

  void reset_frames() {
    // Prior-scale frames for the first run.
    const std::array<double, 4> centers{0.0, 1.0, 1.0, 0.0};
    const std::array<double, 4> scales{3.0, 1.0, 1.0, 1.0};
    for (int d = 0; d < 4; ++d) {
      frames_[static_cast<std::size_t>(d)] = Frame{};
      frames_[static_cast<std::size_t>(d)].coef[0] = centers[static_cast<std::size_t>(d)];
      frames_[static_cast<std::size_t>(d)].scale = scales[static_cast<std::size_t>(d)];
    }
  }

  int fill_abscissae(int d, const Interval& dom, std::array<double, 8>& pts) const {
    const Frame& f = frames_[static_cast<std::size_t>(d)];
    double center = f.coef[0];
    int slot = 1;
    for (int o = 0; o < 4; ++o) {
      if (o == d) continue;
      center += f.coef[static_cast<std::size_t>(slot++)] * state_[o];
    }
    const int m = options_.initial_points;
    int count = 0;
    const double lo = dom.lo + 1e-9 * dom.width();
    const double hi = dom.hi - 1e-9 * dom.width();
    for (int i = 0; i < m && i < 8; ++i) {
      const double z = m == 1 ? 0.0 : -2.0 + 4.0 * i / (m - 1);
      pts[static_cast<std::size_t>(count++)] = std::clamp(center + z * f.scale, lo, hi);
    }
    return count;
  }

  void refit_frames(const std::vector<ModelParams>& draws) {
    if (draws.size() < 50) return;
    for (int d = 0; d < 4; ++d) {
      // Least squares theta_d ~ 1 + theta_{-d}.
      std::array<std::array<double, 5>, 4> a{};
      for (const auto& p : draws) {
        std::array<double, 4> x{1.0, 0.0, 0.0, 0.0};
        int slot = 1;
        for (int o = 0; o < 4; ++o)
          if (o != d) x[static_cast<std::size_t>(slot++)] = p[o];
        for (std::size_t r = 0; r < 4; ++r) {
          for (std::size_t c = 0; c < 4; ++c) a[r][c] += x[r] * x[c];
          a[r][4] += x[r] * p[d];
        }
      }
      std::array<double, 4> coef{};
      if (!solve4(a, coef)) continue;
      double sse = 0.0;
      for (const auto& p : draws) {
        double pred = coef[0];
        int slot = 1;
        for (int o = 0; o < 4; ++o)
          if (o != d) pred += coef[static_cast<std::size_t>(slot++)] * p[o];
        sse += (p[d] - pred) * (p[d] - pred);
      }
      const double sd = std::sqrt(sse / static_cast<double>(draws.size()));
      if (!std::isfinite(sd)) continue;
      frames_[static_cast<std::size_t>(d)].coef = coef;
      frames_[static_cast<std::size_t>(d)].scale = std::max(sd, 1e-3);
    }
  }

  static bool solve4(std::array<std::array<double, 5>, 4>& a, std::array<double, 4>& out) {
    for (std::size_t c = 0; c < 4; ++c) {
      std::size_t piv = c;
      for (std::size_t r = c + 1; r < 4; ++r)
        if (std::abs(a[r][c]) > std::abs(a[piv][c])) piv = r;
      if (std::abs(a[piv][c]) < 1e-12) return false;
      std::swap(a[c], a[piv]);
      for (std::size_t r = 0; r < 4; ++r) {
        if (r == c) continue;
        const double f = a[r][c] / a[c][c];
        for (std::size_t k = c; k < 5; ++k) a[r][k] -= f * a[c][k];
      }
    }
    for (std::size_t r = 0; r < 4; ++r) out[r] = a[r][4] / a[r][r];
    return true;
  }

  // Keeps a draw strictly inside bounds that come from strict inequalities.
  static double keep_strict(double x, int d, const Interval& dom) {
    if (d != 0 && x <= dom.lo) x = std::nextafter(dom.lo, dom.hi);
    if (d == 3 && x >= dom.hi) x = std::nextafter(dom.hi, dom.lo);
    return x;
  }

  DoseGrid grid_;
  PriorSpec prior_;
  SamplerOptions options_;
  ModelParams init_;
  ModelParams state_;
  std::array<Frame, 4> frames_{};
  LikelihoodTerms terms_;
  ConditionalDensity cond_;
  ArmsWorkspace ws_;
  ArmsStats stats_;
};

/// One-shot Gibbs run from `init`: burn_in + L sweeps, the last L retained.
inline PosteriorSamples gibbs_sample(const Counts& counts, const DoseGrid& grid, const PriorSpec& prior, int L,
                                     int burn_in, const ModelParams& init, std::uint64_t seed) {
  SamplerOptions opts;
  opts.L = L;
  opts.burn_in = burn_in;
  opts.warm_start = false;
  GibbsSampler sampler(grid, prior, opts, init);
  return sampler.sample(counts, seed);
}

inline PosteriorSamples gibbs_sample(const TrialHistory& history, const DoseGrid& grid, const PriorSpec& prior, int L,
                                     int burn_in, const ModelParams& init, std::uint64_t seed) {
  return gibbs_sample(history.counts(), grid, prior, L, burn_in, init, seed);
}

}  // namespace sdfb
