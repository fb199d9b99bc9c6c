#include <filesystem>
#include <fstream>
#include <thread>

#include <unistd.h>

#include <gtest/gtest.h>

#include "sdfbayes/service.hpp"
#include "sdfbayes/simulation.hpp"

using namespace sdfb;
namespace fs = std::filesystem;

namespace {

json small_design(int T = 6) {
  DesignSpec d;
  d.T = T;
  d.sampler.L = 200;
  d.sampler.burn_in = 50;
  json j = to_json(d);
  j["seed"] = 17;
  return j;
}

fs::path fresh_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("sdfbayes_test_" + name + "_" + std::to_string(::getpid()));
  fs::remove_all(p);
  return p;
}

std::string post_outcome(TrialService& s, const std::string& id, int y) {
  const auto r = s.post_outcome(id, json{{"outcome", y}}.dump());
  EXPECT_EQ(r.status, 200) << r.body.dump();
  return r.body.dump();
}

class HttpFixture : public ::testing::Test {
 protected:
  void SetUp() override {
    mount_routes(server_, service_, "*");
    port_ = server_.bind_to_any_port("127.0.0.1");
    ASSERT_GT(port_, 0);
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }
  void TearDown() override {
    server_.stop();
    thread_.join();
  }

  httplib::Client client() { return httplib::Client("127.0.0.1", port_); }

  TrialService service_;
  httplib::Server server_;
  std::thread thread_;
  int port_ = 0;
};

}  // namespace

TEST(Service, CreateReturnsRoundOneRecommendation) {
  TrialService s;
  const auto r = s.create(small_design().dump());
  ASSERT_EQ(r.status, 201) << r.body.dump();
  const json& rec = r.body.at("recommendation");
  const Dc dc = dc_from_json(rec.at("dc"));
  EXPECT_TRUE(DoseGrid{}.contains(dc));
  EXPECT_EQ(r.body.at("status"), "active");
  EXPECT_EQ(r.body.at("round"), 1);
  EXPECT_TRUE(r.body.at("heatmaps").at("groups")[0].at("g").is_array());
  EXPECT_DOUBLE_EQ(rec.at("decision").at("residual").get<double>(), std::max(0.35, 0.3 * 6));
}

TEST(Service, FieldErrorsAre422) {
  TrialService s;
  json d = small_design();
  d["psi"] = 0.95;
  auto r = s.create(d.dump());
  EXPECT_EQ(r.status, 422);
  EXPECT_EQ(r.body.at("fields")[0].at("field"), "psi");

  d = small_design();
  d["bogus"] = 1;
  EXPECT_EQ(s.create(d.dump()).status, 422);
  d = small_design();
  d["T"] = "sixty";
  EXPECT_EQ(s.create(d.dump()).status, 422);
  EXPECT_EQ(s.create("{not json").status, 400);
  EXPECT_EQ(s.create("[1,2]").status, 400);
}

TEST(Service, OutcomeErrors) {
  TrialService s;
  EXPECT_EQ(s.post_outcome("nope", R"({"outcome":1})").status, 404);
  EXPECT_EQ(s.state("nope").status, 404);
  const std::string id = s.create(small_design().dump()).body.at("id");
  EXPECT_EQ(s.post_outcome(id, "garbage").status, 400);
  EXPECT_EQ(s.post_outcome(id, R"({"outcome":2})").status, 400);
  EXPECT_EQ(s.post_outcome(id, R"({"y":1})").status, 400);
  EXPECT_EQ(s.post_outcome(id, R"({"outcome":0,"dcOverride":[4,1]})").status, 400);
  EXPECT_EQ(s.post_outcome(id, R"({"outcome":0,"dcOverride":"x"})").status, 400);
  EXPECT_EQ(s.state(id).body.at("round"), 1);
}

TEST(Service, BudgetCompletesThen409) {
  TrialService s;
  const std::string id = s.create(small_design(4).dump()).body.at("id");
  for (int i = 0; i < 4; ++i) post_outcome(s, id, i % 2);
  const json st = s.state(id).body;
  EXPECT_EQ(st.at("status"), "completed");
  EXPECT_TRUE(st.at("verdict").at("groups")[0].at("recommendation").is_array());
  EXPECT_EQ(st.at("patients"), 4);
  EXPECT_DOUBLE_EQ(st.at("dltRate").get<double>(), 0.5);
  EXPECT_EQ(s.post_outcome(id, R"({"outcome":0})").status, 409);
}

TEST(Service, TerminatedSessionRejectsOutcomes) {
  TrialService s;
  json d = small_design(60);
  d["warmStartR"] = 0.0;
  const std::string id = s.create(d.dump()).body.at("id");
  int posted = 0;
  while (s.state(id).body.at("status") == "active" && posted < 60) {
    post_outcome(s, id, 1);
    ++posted;
  }
  EXPECT_EQ(s.state(id).body.at("status"), "terminated");
  EXPECT_LT(posted, 60);
  EXPECT_TRUE(s.state(id).body.at("verdict").at("groups")[0].at("recommendation").is_null());
  EXPECT_EQ(s.post_outcome(id, R"({"outcome":1})").status, 409);
}

TEST(Service, SnapshotAccounting) {
  TrialService s;
  const std::string id = s.create(small_design(10).dump()).body.at("id");
  const int ys[5] = {0, 1, 0, 0, 1};
  for (int y : ys) post_outcome(s, id, y);
  const json st = s.state(id).body;
  int n = 0;
  for (const auto& row : st.at("groups")[0].at("nCount"))
    for (int x : row) n += x;
  EXPECT_EQ(n, 5);
  EXPECT_DOUBLE_EQ(st.at("dltRate").get<double>(), 2.0 / 5.0);
  EXPECT_EQ(st.at("events").size(), 6u);
  EXPECT_EQ(st.at("residualTrajectory").size(), 5u);
}

TEST(Service, OverrideIsLoggedAsDeviation) {
  TrialService s;
  const json created = s.create(small_design().dump()).body;
  const std::string id = created.at("id");
  const Dc rec = dc_from_json(created.at("recommendation").at("dc"));
  const Dc other = rec == Dc{3, 4} ? Dc{1, 1} : Dc{3, 4};
  const auto r = s.post_outcome(id, json{{"outcome", 0}, {"dcOverride", to_json(other)}}.dump());
  ASSERT_EQ(r.status, 200);
  const json& ev = r.body.at("events")[1];
  EXPECT_TRUE(ev.at("deviation").get<bool>());
  EXPECT_EQ(dc_from_json(ev.at("dc")), other);
  EXPECT_EQ(r.body.at("groups")[0].at("nCount")[other.j - 1][other.k - 1], 1);
}

TEST(Service, TwoGroupWarmup) {
  TrialService s;
  DesignSpec d;
  d.recruitment = Recruitment::ar;
  d.groups = 2;
  d.T = 80;
  d.sampler.L = 100;
  d.sampler.burn_in = 20;
  json j = to_json(d);
  j["seed"] = 3;
  const auto r = s.create(j.dump());
  ASSERT_EQ(r.status, 201) << r.body.dump();
  const std::string id = r.body.at("id");
  EXPECT_EQ(r.body.at("recommendation").at("mode"), "warmup");
  for (int t = 1; t < 20; ++t) {
    const json b = json::parse(post_outcome(s, id, 0));
    EXPECT_EQ(b.at("recommendation").at("mode"), "warmup");
  }
}

TEST(Service, PersistenceRoundTrip) {
  const fs::path dir = fresh_dir("persist");
  std::string id;
  json before;
  {
    TrialService s(dir);
    id = s.create(small_design(8).dump()).body.at("id");
    for (int y : {0, 0, 1}) post_outcome(s, id, y);
    s.post_outcome(id, json{{"outcome", 0}, {"dcOverride", json::array({1, 2})}}.dump());
    before = s.state(id).body;
  }
  TrialService reloaded(dir);
  EXPECT_EQ(reloaded.session_count(), 1u);
  EXPECT_TRUE(reloaded.quarantined().empty());
  EXPECT_EQ(reloaded.state(id).body, before);
  fs::remove_all(dir);
}

TEST(Service, ReplayIsIdempotent) {
  TrialService s;
  const std::string id = s.create(small_design(8).dump()).body.at("id");
  for (int y : {1, 0, 0}) post_outcome(s, id, y);
  const json st = s.state(id).body;
  std::stringstream log;
  for (const auto& ev : st.at("events")) log << ev.dump() << '\n';
  auto once = TrialService::replay(id, log);
  std::stringstream log2;
  for (const auto& ev : once->events()) log2 << ev.dump() << '\n';
  auto twice = TrialService::replay(id, log2);
  EXPECT_EQ(once->snapshot(), st);
  EXPECT_EQ(twice->snapshot(), st);
}

TEST(Service, TamperedLogIsRejected) {
  TrialService s;
  const std::string id = s.create(small_design(8).dump()).body.at("id");
  post_outcome(s, id, 0);
  json events = s.state(id).body.at("events");
  events[1]["samplerSeed"] = "1";
  std::stringstream log;
  for (const auto& ev : events) log << ev.dump() << '\n';
  EXPECT_THROW(TrialService::replay(id, log), config_error);
}

TEST(Service, TruncatedLogIsQuarantined) {
  const fs::path dir = fresh_dir("quarantine");
  std::string good, bad;
  {
    TrialService s(dir);
    good = s.create(small_design(8).dump()).body.at("id");
    bad = s.create(small_design(8).dump()).body.at("id");
    post_outcome(s, good, 0);
    post_outcome(s, bad, 1);
  }
  {
    const fs::path p = dir / (bad + ".jsonl");
    std::string content;
    {
      std::ifstream in(p);
      content.assign(std::istreambuf_iterator<char>(in), {});
    }
    std::ofstream out(p, std::ios::trunc);
    out << content.substr(0, content.size() - 20);
  }
  TrialService reloaded(dir);
  EXPECT_EQ(reloaded.session_count(), 1u);
  EXPECT_EQ(reloaded.quarantined().count(bad), 1u);
  EXPECT_EQ(reloaded.state(good).status, 200);
  const auto q = reloaded.state(bad);
  EXPECT_EQ(q.status, 409);
  EXPECT_TRUE(q.body.contains("diagnostic"));
  fs::remove_all(dir);
}

TEST(Service, EmptyDataDir) {
  const fs::path dir = fresh_dir("empty");
  TrialService s(dir);
  EXPECT_EQ(s.session_count(), 0u);
  EXPECT_EQ(s.list().body.at("sessions").size(), 0u);
  fs::remove_all(dir);
}

TEST(Service, SeedAsString) {
  TrialService s;
  json d = small_design();
  d["seed"] = "18446744073709551615";
  const auto r = s.create(d.dump());
  ASSERT_EQ(r.status, 201);
  EXPECT_EQ(r.body.at("seed"), "18446744073709551615");
  d["seed"] = "12x";
  EXPECT_EQ(s.create(d.dump()).status, 422);
}

TEST_F(HttpFixture, HealthAndCors) {
  auto c = client();
  auto r = c.Get("/healthz");
  ASSERT_TRUE(r);
  EXPECT_EQ(r->status, 200);
  EXPECT_EQ(json::parse(r->body).at("status"), "ok");
  EXPECT_EQ(r->get_header_value("Access-Control-Allow-Origin"), "*");
  auto o = c.Options("/sessions");
  ASSERT_TRUE(o);
  EXPECT_EQ(o->status, 204);
}

TEST_F(HttpFixture, StatusCodes) {
  auto c = client();
  json d = small_design();
  d["psi"] = 0.95;
  EXPECT_EQ(c.Post("/sessions", d.dump(), "application/json")->status, 422);
  EXPECT_EQ(c.Get("/sessions/zzz")->status, 404);
  EXPECT_EQ(c.Post("/sessions/zzz/outcomes", R"({"outcome":1})", "application/json")->status, 404);
  auto created = c.Post("/sessions", small_design().dump(), "application/json");
  ASSERT_EQ(created->status, 201);
  const std::string id = json::parse(created->body).at("id");
  EXPECT_EQ(c.Post("/sessions/" + id + "/outcomes", "{", "application/json")->status, 400);
  EXPECT_EQ(c.Get("/sessions/" + id + "/heatmaps")->status, 200);
  EXPECT_EQ(json::parse(c.Get("/sessions")->body).at("sessions").size(), 1u);
}

// A simulated run pushed through the HTTP API, outcome by outcome, under the
// engine seed of that run.
TEST_F(HttpFixture, ReplayOracleMatchesSimulation) {
  for (const char* variant : {"sdf", "sota", "structmab"}) {
    Experiment e = make_experiment(variant, {builtin_scenario("A")}, 15);
    e.design.sampler.L = 200;
    e.design.sampler.burn_in = 50;
    const std::uint64_t seed = 4242;
    const RunResult sim = run_trial(e, seed, true);
    json body = to_json(e.design);
    body["seed"] = std::to_string(derive_seed(seed, {kEngineStream}));
    auto c = client();
    auto created = c.Post("/sessions", body.dump(), "application/json");
    ASSERT_EQ(created->status, 201) << created->body;
    json state = json::parse(created->body);
    const std::string id = state.at("id");
    for (const auto& rec : sim.log) {
      ASSERT_EQ(dc_from_json(state.at("recommendation").at("dc")), rec.recommended) << variant << " t=" << rec.t;
      ASSERT_EQ(state.at("recommendation").at("samplerSeed"), std::to_string(rec.sampler_seed));
      auto r = c.Post("/sessions/" + id + "/outcomes", json{{"outcome", rec.y}}.dump(), "application/json");
      ASSERT_EQ(r->status, 200);
      state = json::parse(r->body);
    }
    EXPECT_EQ(state.at("status"), "completed");
    const json& final_rec = state.at("verdict").at("groups")[0].at("recommendation");
    ASSERT_TRUE(sim.groups[0].recommendation.has_value());
    EXPECT_EQ(dc_from_json(final_rec), *sim.groups[0].recommendation) << variant;
  }
}
