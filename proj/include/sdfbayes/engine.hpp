#pragma once

#include <cstdint>
#include <algorithm>
#include <array>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "sdfbayes/baselines.hpp"
#include "sdfbayes/history.hpp"
#include "sdfbayes/posterior.hpp"
#include "sdfbayes/rng.hpp"
#include "sdfbayes/sdf.hpp"

namespace sdfb {

enum class Algorithm { sdf, df, sota, structmab, indepts };
enum class Recruitment { single, ar, ur };
enum class RecruitMode { single, warmup, ar, ur, fallback };

inline std::string to_string(Algorithm a) {
  switch (a) {
    case Algorithm::sdf:
      return "sdf";
    case Algorithm::df:
      return "df";
    case Algorithm::sota:
      return "sota";
    case Algorithm::structmab:
      return "structmab";
    case Algorithm::indepts:
      return "indepts";
  }
  return "?";
}

inline Algorithm parse_algorithm(const std::string& s) {
  for (Algorithm a : {Algorithm::sdf, Algorithm::df, Algorithm::sota, Algorithm::structmab, Algorithm::indepts})
    if (to_string(a) == s) return a;
  throw not_found_error("unknown algorithm '" + s + "'");
}

inline std::string to_string(Recruitment r) {
  switch (r) {
    case Recruitment::single:
      return "single";
    case Recruitment::ar:
      return "ar";
    case Recruitment::ur:
      return "ur";
  }
  return "?";
}

inline Recruitment parse_recruitment(const std::string& s) {
  for (Recruitment r : {Recruitment::single, Recruitment::ar, Recruitment::ur})
    if (to_string(r) == s) return r;
  throw not_found_error("unknown recruitment mode '" + s + "'");
}

inline std::string to_string(RecruitMode m) {
  switch (m) {
    case RecruitMode::single:
      return "single";
    case RecruitMode::warmup:
      return "warmup";
    case RecruitMode::ar:
      return "ar";
    case RecruitMode::ur:
      return "ur";
    case RecruitMode::fallback:
      return "fallback";
  }
  return "?";
}

inline bool uses_sampler(Algorithm a) { return a != Algorithm::indepts; }

/// Everything that defines a trial design, independent of outcomes.
struct DesignSpec {
  Algorithm algorithm = Algorithm::sdf;
  Recruitment recruitment = Recruitment::single;
  DoseGrid grid;
  int T = 60;
  int groups = 1;
  /// Per-group targets; empty means sdf.xi for every group.
  std::vector<double> group_xi;
  SdfConfig sdf;
  SotaConfig sota;
  StructMabConfig structmab;
  SamplerOptions sampler;
  PriorSpec prior;
  double p_es = 0.6;

  double xi_of(int group) const {
    return group_xi.empty() ? sdf.xi : group_xi.at(static_cast<std::size_t>(group - 1));
  }

  /// SDF settings for one group: its own target, the pro-rata residual floor
  /// xi_m T / M, held for the first T / (2M) of its rounds unless
  /// sdf.warm_start_rounds says otherwise.
  SdfConfig group_config(int group) const {
    SdfConfig c = sdf;
    c.T = T;
    c.xi = xi_of(group);
    c.caution_enabled = sdf.caution_enabled && algorithm != Algorithm::df;
    if (!c.warm_start_r) c.warm_start_r = c.xi * T / groups;
    c.warm_start_rounds = sdf.warm_start_rounds.value_or(T / 2) / groups;
    return c;
  }

  int warmup_rounds() const { return T / 4; }

  void validate() const {
    if (T < 1) throw config_error("T must be >= 1");
    if (groups < 1) throw config_error("need at least one group");
    if (recruitment == Recruitment::single && groups != 1) throw config_error("single recruitment needs exactly one group");
    if (recruitment == Recruitment::ar && !uses_sampler(algorithm))
      throw config_error("adaptive recruitment needs a posterior-sampling algorithm");
    if (!group_xi.empty() && static_cast<int>(group_xi.size()) != groups)
      throw config_error("group_xi must list one target per group");
    if (!(p_es > 0.0 && p_es <= 1.0)) throw config_error("p_es must lie in (0,1]");
    for (int m = 1; m <= groups; ++m) group_config(m).validate();
    sota.validate();
    structmab.validate();
    if (sampler.L < 1 || sampler.burn_in < 0) throw config_error("invalid sampler sizes");
  }
};

struct GroupState {
  int id = 1;
  SdfConfig cfg;
  TrialHistory history;  // this group's main-trial patients only
  Counts prior_counts;   // seeded observations: likelihood only
  std::optional<TrialHistory> prior_seed;
  std::optional<GibbsSampler> sampler;

  int version = -1;  // history size the cached posterior refers to
  std::optional<ToxicityDraws> draws;
  std::uint64_t last_seed = 0;
  std::optional<Dc> tentative;
  std::optional<RoundDecision> decision;
  std::optional<SotaMove> sota_move;
  std::optional<StructMabDecision> structmab;
  std::optional<double> ei;
  int ei_version = -1;
  bool stopped = false;
  std::optional<int> stopped_at;
  bool terminated = false;
  std::optional<int> terminated_at;

  Counts likelihood_counts() const {
    Counts c = history.counts();
    c += prior_counts;
    return c;
  }
};

struct GroupTentative {
  int group = 1;
  std::optional<Dc> dc;
  std::optional<double> ei;
  bool stopped = false;
  bool terminated = false;
};

struct Proposal {
  int t = 1;
  int group = 1;
  Dc dc;
  RecruitMode mode = RecruitMode::single;
  std::vector<GroupTentative> groups;
  std::uint64_t sampler_seed = 0;
  bool flagged = false;  // invented fallback branch taken
};

struct RoundRecord {
  int t = 1;
  int group = 1;
  Dc recommended;
  Dc administered;
  int y = 0;
  RecruitMode mode = RecruitMode::single;
  std::optional<Branch> branch;
  std::optional<double> residual;
  std::optional<double> w;
  std::uint64_t sampler_seed = 0;
  bool overridden = false;
  bool flagged = false;
};

enum class TrialStatus { active, terminated, completed };

inline std::string to_string(TrialStatus s) {
  switch (s) {
    case TrialStatus::active:
      return "active";
    case TrialStatus::terminated:
      return "terminated";
    case TrialStatus::completed:
      return "completed";
  }
  return "?";
}

struct GroupVerdict {
  int group = 1;
  std::optional<Dc> recommendation;
  bool degenerate = false;
  std::optional<CellMatrix<double>> g;
  int patients = 0;
  int dlts = 0;
  std::optional<int> stopped_at;
  std::optional<int> terminated_at;
};

struct TrialVerdict {
  TrialStatus status = TrialStatus::completed;
  std::vector<GroupVerdict> groups;
  int patients = 0;
  int dlts = 0;
};

/// Round-by-round driver of one trial: propose() the next (group, DC), then
/// observe() its outcome. Every random choice comes from sub-streams of the
/// master seed keyed by (purpose, group, history size), so two engines fed
/// the same outcomes make the same decisions.
class TrialEngine {
 public:
  TrialEngine(DesignSpec spec, std::uint64_t seed) : spec_(std::move(spec)), seed_(seed) {
    spec_.validate();
    for (int m = 1; m <= spec_.groups; ++m) {
      GroupState g;
      g.id = m;
      g.cfg = spec_.group_config(m);
      g.history = TrialHistory(spec_.grid);
      g.prior_counts = Counts(spec_.grid);
      if (uses_sampler(spec_.algorithm)) g.sampler.emplace(spec_.grid, spec_.prior, spec_.sampler);
      groups_.push_back(std::move(g));
    }
  }

  const DesignSpec& spec() const { return spec_; }
  std::uint64_t seed() const { return seed_; }
  TrialStatus status() const { return status_; }
  /// Round about to be played (1-based).
  int round() const { return static_cast<int>(records_.size()) + 1; }
  const std::vector<RoundRecord>& records() const { return records_; }
  const std::vector<GroupState>& groups() const { return groups_; }
  const GroupState& group(int m) const { return groups_.at(static_cast<std::size_t>(m - 1)); }

  /// Adds observations that inform group m's posterior without counting
  /// toward the budget or its safety record. Only before round 1.
  void seed_prior(int m, const TrialHistory& seed_history) {
    if (!records_.empty()) throw invalid_state_error("prior seeding must precede the first round");
    GroupState& g = at(m);
    if (!g.history.counts().n.same_shape(seed_history.counts().n)) throw shape_error("seed history grid mismatch");
    g.prior_counts += seed_history.counts();
    if (!g.prior_seed) g.prior_seed = TrialHistory(spec_.grid);
    for (const auto& o : seed_history.sequence()) g.prior_seed->record(o.dc, o.y, o.round, o.group);
    g.version = -1;
  }

  /// The recommendation for the current round; idempotent until observe().
  /// Null once every group has terminated.
  const Proposal* propose() {
    if (status_ == TrialStatus::terminated) return nullptr;
    if (status_ != TrialStatus::active) throw invalid_state_error("trial is " + to_string(status_));
    if (proposal_ && proposal_->t == round()) return &*proposal_;
    const int t = round();

    for (auto& g : groups_)
      if (!g.terminated) refresh(g, t);

    std::vector<int> alive;
    for (const auto& g : groups_)
      if (!g.terminated) alive.push_back(g.id);
    if (alive.empty()) {
      status_ = TrialStatus::terminated;
      proposal_.reset();
      return nullptr;
    }

    Proposal p;
    p.t = t;
    switch (spec_.recruitment) {
      case Recruitment::single:
        p.mode = RecruitMode::single;
        p.group = 1;
        break;
      case Recruitment::ur:
        p.mode = RecruitMode::ur;
        p.group = round_robin(t, alive);
        break;
      case Recruitment::ar:
        if (t <= spec_.warmup_rounds()) {
          p.mode = RecruitMode::warmup;
          p.group = round_robin(t, alive);
          break;
        }
        {
          std::vector<int> eligible;
          for (int m : alive)
            if (!group(m).stopped) eligible.push_back(m);
          if (eligible.empty()) {
            p.mode = RecruitMode::fallback;
            p.group = round_robin(t, alive);
            break;
          }
          p.mode = RecruitMode::ar;
          p.group = eligible.front();
          if (eligible.size() > 1) {
            double best = -1.0;
            for (int m : eligible) {
              const double h = expected_improvement(at(m));
              if (h > best) {
                best = h;
                p.group = m;
              }
            }
          }
        }
        break;
    }
    const GroupState& chosen = group(p.group);
    p.dc = *chosen.tentative;
    p.sampler_seed = chosen.last_seed;
    p.flagged = chosen.structmab && chosen.structmab->repeated_last;
    for (const auto& g : groups_)
      p.groups.push_back(GroupTentative{g.id, g.terminated ? std::nullopt : g.tentative,
                                        g.ei_version == g.version ? g.ei : std::nullopt, g.stopped, g.terminated});
    proposal_ = p;
    return &*proposal_;
  }

  const Proposal* propose_if_active() { return status_ == TrialStatus::active ? propose() : nullptr; }

  /// Records the outcome of the proposed round. `administered` overrides the
  /// recommended DC (a protocol deviation that is kept in the record).
  void observe(int y, std::optional<Dc> administered = std::nullopt) {
    if (y != 0 && y != 1) throw invalid_parameter_error("outcome must be 0 or 1");
    const Proposal* next = propose();
    if (!next) throw invalid_state_error("trial terminated");
    const Proposal p = *next;
    const Dc dc = administered.value_or(p.dc);
    if (!spec_.grid.contains(dc)) throw invalid_parameter_error("administered DC outside the grid: " + to_string(dc));
    GroupState& g = at(p.group);
    RoundRecord r;
    r.t = p.t;
    r.group = p.group;
    r.recommended = p.dc;
    r.administered = dc;
    r.y = y;
    r.mode = p.mode;
    r.sampler_seed = p.sampler_seed;
    r.overridden = administered && *administered != p.dc;
    r.flagged = p.flagged;
    if (g.decision) {
      r.branch = g.decision->branch;
      r.residual = g.decision->residual;
      r.w = g.decision->w;
    }
    g.history.record(dc, y, p.t, spec_.groups > 1 ? std::optional<int>(p.group) : std::nullopt);
    records_.push_back(r);
    proposal_.reset();
    if (round() > spec_.T) status_ = TrialStatus::completed;
  }

  /// Final per-group recommendations. Samples each group's final posterior
  /// once; valid after the trial has completed or terminated.
  const TrialVerdict& finish() {
    if (status_ == TrialStatus::active) throw invalid_state_error("trial still active");
    if (verdict_) return *verdict_;
    TrialVerdict v;
    v.status = status_;
    for (auto& g : groups_) {
      GroupVerdict gv;
      gv.group = g.id;
      gv.patients = g.history.size();
      gv.dlts = g.history.dlt_total();
      gv.stopped_at = g.stopped_at;
      gv.terminated_at = g.terminated_at;
      if (status_ == TrialStatus::completed && !g.terminated) {
        switch (spec_.algorithm) {
          case Algorithm::sdf:
          case Algorithm::df:
          case Algorithm::sota: {
            sample(g);
            const Recommendation rec = recommend(*g.draws, g.cfg);
            gv.recommendation = rec.dc;
            gv.degenerate = rec.degenerate;
            gv.g = rec.g;
            break;
          }
          case Algorithm::structmab:
          case Algorithm::indepts: {
            const Counts c = g.likelihood_counts();
            if (c.total() > 0) gv.recommendation = empirical_closest(c, g.cfg.xi);
            break;
          }
        }
      }
      v.patients += gv.patients;
      v.dlts += gv.dlts;
      v.groups.push_back(std::move(gv));
    }
    verdict_ = std::move(v);
    return *verdict_;
  }

  /// Expected improvement of one more group-m patient at its tentative DC for
  /// the current round.
  double expected_improvement(int m) {
    if (!uses_sampler(spec_.algorithm)) throw invalid_state_error("expected improvement needs posterior draws");
    if (status_ != TrialStatus::active) throw invalid_state_error("trial is " + to_string(status_));
    GroupState& g = at(m);
    if (g.terminated) throw invalid_state_error("group " + std::to_string(m) + " terminated");
    refresh(g, round());
    if (g.terminated) throw invalid_state_error("group " + std::to_string(m) + " terminated");
    return expected_improvement(g);
  }

  std::uint64_t sampler_seed(int m, int version) const {
    return derive_seed(seed_, {kSamplerStream, static_cast<std::uint64_t>(m), static_cast<std::uint64_t>(version)});
  }

 private:
  GroupState& at(int m) { return groups_.at(static_cast<std::size_t>(m - 1)); }

  static int round_robin(int t, const std::vector<int>& alive) {
    // Nominal group (t-1) mod M + 1, skipping terminated ones cyclically.
    return alive[static_cast<std::size_t>((t - 1) % static_cast<int>(alive.size()))];
  }

  void sample(GroupState& g) {
    const int version = g.history.size();
    if (g.version == version && (g.draws || !uses_sampler(spec_.algorithm))) return;
    g.version = version;
    g.last_seed = sampler_seed(g.id, version);
    if (uses_sampler(spec_.algorithm)) {
      const PosteriorSamples ps = g.sampler->sample(g.likelihood_counts(), g.last_seed);
      g.draws = ToxicityDraws::from_samples(ps, spec_.grid);
    }
  }

  void refresh(GroupState& g, int t) {
    const int version = g.history.size();
    if (g.version == version && g.tentative) return;
    sample(g);
    g.decision.reset();
    g.sota_move.reset();
    g.structmab.reset();
    const std::optional<Dc> last =
        g.history.empty() ? std::nullopt : std::optional<Dc>(g.history.sequence().back().dc);
    switch (spec_.algorithm) {
      case Algorithm::sdf:
      case Algorithm::df: {
        g.decision = sdf_step(g.history.n(), *g.draws, g.cfg);
        if (g.decision->terminated()) {
          g.terminated = true;
          g.terminated_at = t;
          g.tentative.reset();
          return;
        }
        g.tentative = g.decision->chosen;
        break;
      }
      case Algorithm::sota:
        if (!last) {
          g.tentative = spec_.sota.start;
        } else {
          g.sota_move = sota_step(*g.draws, *last, g.cfg.xi, spec_.sota);
          g.tentative = g.sota_move->dc;
        }
        break;
      case Algorithm::structmab: {
        Rng rng(derive_seed(seed_, {kThompsonStream, static_cast<std::uint64_t>(g.id),
                                    static_cast<std::uint64_t>(version)}));
        g.structmab = struct_mab_step(*g.draws, g.likelihood_counts(), g.history.n(), last, g.cfg.xi, g.cfg.eps,
                                      spec_.structmab, rng);
        g.tentative = g.structmab->chosen;
        break;
      }
      case Algorithm::indepts: {
        Rng rng(derive_seed(seed_, {kThompsonStream, static_cast<std::uint64_t>(g.id),
                                    static_cast<std::uint64_t>(version)}));
        g.tentative = indep_ts_step(g.likelihood_counts(), g.cfg.xi, rng);
        break;
      }
    }
    if (spec_.recruitment == Recruitment::ar && !g.stopped && g.draws) {
      const CellMatrix<double> gm = g.decision ? g.decision->g : g_measure(*g.draws, g.cfg.xi, g.cfg.u);
      double mx = 0.0;
      for (double x : gm.data()) mx = std::max(mx, x);
      if (mx > spec_.p_es) {
        g.stopped = true;
        g.stopped_at = t;
      }
    }
  }

  /// H = p I1 + (1 - p) I0 for one more patient of group g at its tentative DC,
  /// using warm-started chains of half the usual length.
  double expected_improvement(GroupState& g) {
    if (g.ei_version == g.version && g.ei) return *g.ei;
    const Dc dc = *g.tentative;
    const ToxicityDraws& cur = *g.draws;
    const double p = cur.mean(dc);
    auto max_g = [&](const ToxicityDraws& d) {
      const CellMatrix<double> gm = g_measure(d, g.cfg.xi, g.cfg.u);
      double mx = 0.0;
      for (double x : gm.data()) mx = std::max(mx, x);
      return mx;
    };
    const double base = max_g(cur);
    const Counts counts = g.likelihood_counts();
    std::array<double, 2> improvement{};
    for (int y = 0; y <= 1; ++y) {
      Counts cf = counts;
      cf.add(dc, y);
      GibbsSampler chain = *g.sampler;
      const std::uint64_t s = derive_seed(seed_, {kExpectedImprovementStream, static_cast<std::uint64_t>(g.id),
                                                  static_cast<std::uint64_t>(g.version), static_cast<std::uint64_t>(y)});
      const int L = std::max(1, spec_.sampler.L / 2);
      const PosteriorSamples ps = chain.sample(cf, s, L, spec_.sampler.burn_in / 2);
      improvement[static_cast<std::size_t>(y)] = std::abs(max_g(ToxicityDraws::from_samples(ps, spec_.grid)) - base);
    }
    g.ei = p * improvement[1] + (1.0 - p) * improvement[0];
    g.ei_version = g.version;
    return *g.ei;
  }

  DesignSpec spec_;
  std::uint64_t seed_;
  std::vector<GroupState> groups_;
  std::vector<RoundRecord> records_;
  std::optional<Proposal> proposal_;
  std::optional<TrialVerdict> verdict_;
  TrialStatus status_ = TrialStatus::active;
};

}  // namespace sdfb
