#pragma once

#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <random>
#include <shared_mutex>
#include <sstream>
#include <string>
#include <vector>

#include <httplib.h>

#include "sdfbayes/io.hpp"

namespace sdfb {

struct ServiceResponse {
  int status = 200;
  json body;
};

inline std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::now();
  const auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(now.time_since_epoch()).count() % 1000;
  const std::time_t tt = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&tt, &tm);
  char buf[64];
  std::snprintf(buf, sizeof buf, "%04d-%02d-%02dT%02d:%02d:%02d.%03dZ", tm.tm_year + 1900, tm.tm_mon + 1, tm.tm_mday,
                tm.tm_hour, tm.tm_min, tm.tm_sec, static_cast<int>(ms));
  return buf;
}

inline std::uint64_t seed_from_json(const json& j) {
  if (j.is_number_unsigned() || j.is_number_integer()) return j.get<std::uint64_t>();
  if (j.is_string()) {
    const std::string s = j.get<std::string>();
    std::size_t used = 0;
    const unsigned long long v = std::stoull(s, &used, 10);
    if (used != s.size()) throw config_error("seed must be a decimal integer");
    return v;
  }
  throw config_error("seed must be an integer or a decimal string");
}

/// A live trial: the creation event plus every posted outcome. All state is
/// rebuilt from `events` by replay.
class Session {
 public:
  Session(std::string id, const json& created) : id_(std::move(id)) { apply_created(created); }

  const std::string& id() const { return id_; }
  const TrialEngine& engine() const { return *engine_; }
  const std::vector<json>& events() const { return events_; }
  std::mutex& mutex() { return mu_; }

  /// Applies one logged outcome, checking that the engine would have made
  /// the logged recommendation with the logged seed.
  void apply_outcome(const json& ev) {
    const Proposal* p = engine_->propose();
    if (!p) throw invalid_state_error("outcome logged after termination");
    if (ev.at("t").get<int>() != p->t || ev.at("group").get<int>() != p->group ||
        dc_from_json(ev.at("recommended")) != p->dc || ev.at("samplerSeed").get<std::string>() != std::to_string(p->sampler_seed))
      throw numeric_error("replay diverged at round " + std::to_string(p->t));
    const Dc administered = dc_from_json(ev.at("dc"));
    engine_->observe(ev.at("y").get<int>(), administered);
    events_.push_back(ev);
  }

  /// Builds the event for an incoming outcome without applying it.
  json outcome_event(int y, std::optional<Dc> override_dc) {
    const Proposal* p = engine_->propose();
    if (!p) throw invalid_state_error("trial terminated");
    const Dc dc = override_dc.value_or(p->dc);
    return {{"event", "outcome"},
            {"ts", utc_timestamp()},
            {"t", p->t},
            {"group", p->group},
            {"recommended", to_json(p->dc)},
            {"dc", to_json(dc)},
            {"y", y},
            {"deviation", dc != p->dc},
            {"samplerSeed", std::to_string(p->sampler_seed)}};
  }

  TrialStatus status() {
    engine_->propose_if_active();
    return engine_->status();
  }

  json recommendation() {
    const Proposal* p = engine_->propose_if_active();
    if (!p) return nullptr;
    json j = to_json(*p);
    const GroupState& g = engine_->group(p->group);
    if (g.decision) j["decision"] = to_json(*g.decision);
    return j;
  }

  json heatmaps() {
    engine_->propose_if_active();
    json groups = json::array();
    for (const auto& g : engine_->groups()) {
      json gj = {{"group", g.id}, {"allocation", to_json(g.history.n())}, {"dlts", to_json(g.history.s())}};
      if (g.decision) {
        gj["g"] = to_json(g.decision->g);
        gj["f"] = to_json(g.decision->f);
        gj["percentile"] = g.decision->percentile;
      } else if (g.draws) {
        const double v = g.cfg.percentile(g.history.size() + 1);
        gj["g"] = to_json(g_measure(*g.draws, g.cfg.xi, g.cfg.u));
        gj["f"] = to_json(f_quantiles(*g.draws, v));
        gj["percentile"] = v;
      } else {
        gj["g"] = nullptr;
        gj["f"] = nullptr;
      }
      gj["interval"] = {g.cfg.xi - g.cfg.u, g.cfg.xi + g.cfg.u};
      groups.push_back(std::move(gj));
    }
    return {{"id", id_}, {"groups", std::move(groups)}};
  }

  json snapshot() {
    const TrialStatus st = status();
    const TrialEngine& e = *engine_;
    json groups = json::array();
    int patients = 0;
    int dlts = 0;
    for (const auto& g : e.groups()) {
      groups.push_back({{"group", g.id},
                        {"xi", g.cfg.xi},
                        {"nCount", to_json(g.history.n())},
                        {"sCount", to_json(g.history.s())},
                        {"patients", g.history.size()},
                        {"dlts", g.history.dlt_total()},
                        {"priorSeedPatients", g.prior_seed ? g.prior_seed->size() : 0},
                        {"stoppedRecruiting", g.stopped},
                        {"terminated", g.terminated}});
      patients += g.history.size();
      dlts += g.history.dlt_total();
    }
    json residuals = json::array();
    for (const auto& r : e.records()) residuals.push_back({{"t", r.t}, {"group", r.group}, {"residual", opt(r.residual)}});
    json rounds = json::array();
    for (const auto& r : e.records()) rounds.push_back(to_json(r, e.spec().algorithm));
    json j = {{"id", id_},
              {"status", to_string(st)},
              {"design", to_json(e.spec())},
              {"seed", std::to_string(e.seed())},
              {"round", e.round()},
              {"patients", patients},
              {"dlts", dlts},
              {"dltRate", patients > 0 ? static_cast<double>(dlts) / patients : 0.0},
              {"groups", std::move(groups)},
              {"residualTrajectory", std::move(residuals)},
              {"rounds", std::move(rounds)},
              {"recommendation", recommendation()},
              {"events", events_}};
    if (st != TrialStatus::active) j["verdict"] = to_json(engine_->finish());
    return j;
  }

 private:
  void apply_created(const json& ev) {
    std::vector<FieldError> errs;
    const json& design = ev.at("design");
    DesignSpec spec = design_from_json(design, errs);
    if (!errs.empty()) throw config_error("invalid design: " + to_json(errs).dump());
    engine_ = std::make_unique<TrialEngine>(spec, seed_from_json(ev.at("seed")));
    for (const auto& ps : ev.value("priorSeeds", json::array()))
      engine_->seed_prior(ps.at("group").get<int>(), history_from_json(ps.at("history"), spec.grid));
    events_.push_back(ev);
  }

  std::string id_;
  std::unique_ptr<TrialEngine> engine_;
  std::vector<json> events_;
  std::mutex mu_;
};

/// Session registry plus the REST semantics, independent of the transport.
class TrialService {
 public:
  explicit TrialService(std::optional<std::filesystem::path> data_dir = std::nullopt) : dir_(std::move(data_dir)) {
    if (dir_) {
      std::filesystem::create_directories(*dir_);
      load_all();
    }
  }

  std::size_t session_count() const {
    std::shared_lock lock(mu_);
    return sessions_.size();
  }

  const std::map<std::string, std::string>& quarantined() const { return quarantined_; }

  ServiceResponse health() const {
    std::shared_lock lock(mu_);
    return {200, {{"status", "ok"}, {"sessions", sessions_.size()}, {"quarantined", quarantined_.size()}}};
  }

  ServiceResponse create(const std::string& body) {
    json req;
    try {
      req = json::parse(body);
    } catch (const json::parse_error& e) {
      return error(400, std::string("malformed JSON: ") + e.what());
    }
    if (!req.is_object()) return error(400, "body must be a JSON object");
    std::vector<FieldError> errs;
    json design = req;
    design.erase("seed");
    design.erase("priorSeeds");
    const DesignSpec spec = design_from_json(design, errs);
    std::uint64_t seed = 0;
    try {
      seed = req.contains("seed") ? seed_from_json(req.at("seed")) : fresh_seed();
    } catch (const std::exception& e) {
      errs.push_back({"seed", e.what()});
    }
    json prior_seeds = json::array();
    if (req.contains("priorSeeds")) {
      try {
        for (const auto& ps : req.at("priorSeeds")) {
          const int g = ps.at("group").get<int>();
          if (g < 1 || g > spec.groups) throw config_error("group out of range");
          const TrialHistory h = history_from_json(ps.at("history"), spec.grid);
          prior_seeds.push_back({{"group", g}, {"history", to_json(h)}});
        }
      } catch (const std::exception& e) {
        errs.push_back({"priorSeeds", e.what()});
      }
    }
    if (!errs.empty()) return {422, {{"error", "invalid design"}, {"fields", to_json(errs)}}};

    json created = {{"event", "created"}, {"ts", utc_timestamp()}, {"design", to_json(spec)},
                    {"seed", std::to_string(seed)}, {"priorSeeds", std::move(prior_seeds)}};
    std::string id = new_id();
    auto session = std::make_shared<Session>(id, created);
    persist(id, created);
    {
      std::unique_lock lock(mu_);
      sessions_[id] = session;
    }
    std::lock_guard lock(session->mutex());
    json out = session->snapshot();
    out["heatmaps"] = session->heatmaps();
    return {201, std::move(out)};
  }

  ServiceResponse post_outcome(const std::string& id, const std::string& body) {
    auto s = find(id);
    if (!s) return missing(id);
    json req;
    try {
      req = json::parse(body);
    } catch (const json::parse_error& e) {
      return error(400, std::string("malformed JSON: ") + e.what());
    }
    if (!req.is_object() || !req.contains("outcome")) return error(400, "body needs an outcome");
    const json& y = req.at("outcome");
    if (!y.is_number_integer() || (y.get<int>() != 0 && y.get<int>() != 1)) return error(400, "outcome must be 0 or 1");
    std::optional<Dc> override_dc;
    if (req.contains("dcOverride") && !req.at("dcOverride").is_null()) {
      try {
        override_dc = dc_from_json(req.at("dcOverride"));
      } catch (const std::exception& e) {
        return error(400, std::string("dcOverride: ") + e.what());
      }
    }
    std::lock_guard lock(s->mutex());
    if (const TrialStatus st = s->status(); st != TrialStatus::active)
      return error(409, "session is " + to_string(st));
    if (override_dc && !s->engine().spec().grid.contains(*override_dc)) return error(400, "dcOverride outside the grid");
    const json ev = s->outcome_event(y.get<int>(), override_dc);
    s->apply_outcome(ev);
    persist(id, ev);
    json out = s->snapshot();
    out["heatmaps"] = s->heatmaps();
    return {200, std::move(out)};
  }

  ServiceResponse state(const std::string& id) {
    auto s = find(id);
    if (!s) return missing(id);
    std::lock_guard lock(s->mutex());
    return {200, s->snapshot()};
  }

  ServiceResponse heatmaps(const std::string& id) {
    auto s = find(id);
    if (!s) return missing(id);
    std::lock_guard lock(s->mutex());
    return {200, s->heatmaps()};
  }

  ServiceResponse list() const {
    std::shared_lock lock(mu_);
    json ids = json::array();
    for (const auto& [id, s] : sessions_) ids.push_back(id);
    json q = json::object();
    for (const auto& [id, why] : quarantined_) q[id] = why;
    return {200, {{"sessions", ids}, {"quarantined", q}}};
  }

  /// Rebuilds a session from a JSON-lines event log.
  static std::shared_ptr<Session> replay(const std::string& id, std::istream& log) {
    std::shared_ptr<Session> s;
    std::string line;
    int lineno = 0;
    while (std::getline(log, line)) {
      ++lineno;
      if (line.empty()) continue;
      json ev;
      try {
        ev = json::parse(line);
      } catch (const json::parse_error& e) {
        throw config_error("line " + std::to_string(lineno) + ": " + e.what());
      }
      try {
        const std::string kind = ev.at("event").get<std::string>();
        if (kind == "created") {
          if (s) throw config_error("second creation event");
          s = std::make_shared<Session>(id, ev);
        } else if (kind == "outcome") {
          if (!s) throw config_error("outcome before creation");
          s->apply_outcome(ev);
        } else {
          throw config_error("unknown event '" + kind + "'");
        }
      } catch (const std::exception& e) {
        throw config_error("line " + std::to_string(lineno) + ": " + e.what());
      }
    }
    if (!s) throw config_error("empty event log");
    return s;
  }

 private:
  static ServiceResponse error(int status, const std::string& msg) { return {status, {{"error", msg}}}; }

  ServiceResponse missing(const std::string& id) const {
    std::shared_lock lock(mu_);
    if (auto it = quarantined_.find(id); it != quarantined_.end())
      return {409, {{"error", "session quarantined"}, {"diagnostic", it->second}}};
    return error(404, "unknown session '" + id + "'");
  }

  std::shared_ptr<Session> find(const std::string& id) const {
    std::shared_lock lock(mu_);
    auto it = sessions_.find(id);
    return it == sessions_.end() ? nullptr : it->second;
  }

  std::uint64_t fresh_seed() {
    std::lock_guard lock(id_mu_);
    return mix64(id_rng_());
  }

  std::string new_id() {
    std::lock_guard lock(id_mu_);
    for (;;) {
      char buf[20];
      std::snprintf(buf, sizeof buf, "s%016llx", static_cast<unsigned long long>(id_rng_()));
      std::shared_lock lock2(mu_);
      if (!sessions_.contains(buf) && !quarantined_.contains(buf)) return buf;
    }
  }

  void persist(const std::string& id, const json& ev) {
    if (!dir_) return;
    std::ofstream out(*dir_ / (id + ".jsonl"), std::ios::app);
    out << ev.dump() << '\n';
    out.flush();
    if (!out) throw std::runtime_error("cannot write event log for session " + id);
  }

  void load_all() {
    for (const auto& entry : std::filesystem::directory_iterator(*dir_)) {
      if (!entry.is_regular_file() || entry.path().extension() != ".jsonl") continue;
      const std::string id = entry.path().stem().string();
      std::ifstream in(entry.path());
      try {
        sessions_[id] = replay(id, in);
      } catch (const std::exception& e) {
        quarantined_[id] = e.what();
      }
    }
  }

  std::optional<std::filesystem::path> dir_;
  mutable std::shared_mutex mu_;
  std::map<std::string, std::shared_ptr<Session>> sessions_;
  std::map<std::string, std::string> quarantined_;
  std::mutex id_mu_;
  std::mt19937_64 id_rng_{std::random_device{}()};
};

struct ServerOptions {
  std::string host = "127.0.0.1";
  int port = 8080;
  std::string cors_origin = "*";
};

/// Binds the REST routes of `service` onto an httplib server.
inline void mount_routes(httplib::Server& srv, TrialService& service, const std::string& cors_origin) {
  auto reply = [](httplib::Response& res, const ServiceResponse& r) {
    res.status = r.status;
    res.set_content(r.body.dump(), "application/json");
  };
  srv.set_default_headers({{"Access-Control-Allow-Origin", cors_origin},
                           {"Access-Control-Allow-Methods", "GET, POST, OPTIONS"},
                           {"Access-Control-Allow-Headers", "Content-Type"}});
  srv.Options(".*", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });
  srv.Get("/healthz", [&service, reply](const httplib::Request&, httplib::Response& res) { reply(res, service.health()); });
  srv.Get("/sessions", [&service, reply](const httplib::Request&, httplib::Response& res) { reply(res, service.list()); });
  srv.Post("/sessions", [&service, reply](const httplib::Request& req, httplib::Response& res) {
    reply(res, service.create(req.body));
  });
  srv.Post(R"(/sessions/([^/]+)/outcomes)", [&service, reply](const httplib::Request& req, httplib::Response& res) {
    reply(res, service.post_outcome(req.matches[1], req.body));
  });
  srv.Get(R"(/sessions/([^/]+)/heatmaps)", [&service, reply](const httplib::Request& req, httplib::Response& res) {
    reply(res, service.heatmaps(req.matches[1]));
  });
  srv.Get(R"(/sessions/([^/]+))", [&service, reply](const httplib::Request& req, httplib::Response& res) {
    reply(res, service.state(req.matches[1]));
  });
  srv.set_exception_handler([](const httplib::Request&, httplib::Response& res, std::exception_ptr ep) {
    std::string msg = "internal error";
    try {
      std::rethrow_exception(ep);
    } catch (const std::exception& e) {
      msg = e.what();
    } catch (...) {
    }
    res.status = 500;
    res.set_content(json{{"error", msg}}.dump(), "application/json");
  });
}

}  // namespace sdfb
