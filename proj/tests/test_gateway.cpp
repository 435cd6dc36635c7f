#include <gtest/gtest.h>

#include <atomic>
#include <thread>

#include "leak_check.hpp"
#include "vrcaptcha/agents.hpp"
#include "vrcaptcha/gateway.hpp"
#include "vrcaptcha/http.hpp"

using namespace vrcaptcha;

namespace {

const CalibrationArtifact& shipped() {
    static const auto a = load_calibration(VRCAPTCHA_DATA_DIR "/calibration.json");
    return a;
}

struct Fixture {
    double now = 1000.0;
    Gateway gw;

    explicit Fixture(GatewayConfig cfg = {}, std::uint64_t seed = 1)
        : gw(std::move(cfg), builtin_catalogs(), shipped(), [this] { return now; }, seed) {}

    Answer perfect(const IssuedChallenge& c) { return simulate_attempt(*gw.inspect(c.token), AgentProfile::of(AgentKind::naive_bot), 0).answer; }
};

}  // namespace

TEST(Gateway, IssueDistinctTokensAndPresentationOnly) {
    Fixture f;
    std::set<std::string> tokens;
    for (int i = 0; i < 200; ++i) {
        const auto c = f.gw.issue();
        EXPECT_EQ(c.token.size(), 32u);
        EXPECT_TRUE(tokens.insert(c.token).second);
        const auto spec = f.gw.inspect(c.token);
        EXPECT_TRUE(testsupport::secret_leaks(c.to_json(), *spec).empty());
    }
}

TEST(Gateway, MotionPresentationHasKeyframesNotTrace) {
    Fixture f;
    const auto c = f.gw.issue(ChallengeKind::MotionBased);
    const auto j = c.to_json();
    EXPECT_TRUE(j["presentation"].contains("template_id"));
    EXPECT_EQ(j["presentation"]["keyframes"].size(), 3u);
    EXPECT_FALSE(j["presentation"].contains("template_trace"));
    EXPECT_TRUE(testsupport::secret_leaks(j, *f.gw.inspect(c.token)).empty());
}

TEST(Gateway, HappyPathAndSingleUse) {
    Fixture f;
    const auto c = f.gw.issue(ChallengeKind::ImageRotated);
    const auto ans = f.perfect(c);
    EXPECT_TRUE(f.gw.submit(c.token, c.challenge_id, ans).pass);
    EXPECT_EQ(f.gw.submit(c.token, c.challenge_id, ans).reason, Reason::replay);
    EXPECT_EQ(f.gw.state_of(c.token), SessionState::consumed);
}

TEST(Gateway, FailedAttemptConsumesToken) {
    Fixture f;
    const auto c = f.gw.issue(ChallengeKind::Text);
    EXPECT_EQ(f.gw.submit(c.token, c.challenge_id, TextAnswer{"nope", {}}).reason, Reason::wrong_answer);
    EXPECT_EQ(f.gw.submit(c.token, c.challenge_id, f.perfect(c)).reason, Reason::replay);
}

TEST(Gateway, UnknownTokenAndMismatchedChallenge) {
    Fixture f;
    EXPECT_EQ(f.gw.submit("deadbeef", "", TextAnswer{"x", {}}).reason, Reason::malformed);
    const auto c = f.gw.issue(ChallengeKind::Text);
    EXPECT_EQ(f.gw.submit(c.token, "ch_other", f.perfect(c)).reason, Reason::malformed);
    EXPECT_EQ(f.gw.submit(c.token, c.challenge_id, RotationAnswer{0, {}}).reason, Reason::malformed);
}

TEST(Gateway, TtlBoundary) {
    for (double offset : {-1.0, 0.0, 1.0}) {
        Fixture f;
        const auto c = f.gw.issue(ChallengeKind::ImagePuzzled);
        f.now += f.gw.config().ttl_s + offset;
        const auto v = f.gw.submit(c.token, c.challenge_id, f.perfect(c));
        if (offset > 0) {
            EXPECT_EQ(v.reason, Reason::expired);
            EXPECT_EQ(f.gw.state_of(c.token), SessionState::expired);
        } else {
            EXPECT_TRUE(v.pass) << offset;
        }
    }
}

TEST(Gateway, ConcurrentSubmitsSingleWinner) {
    for (int round = 0; round < 20; ++round) {
        Fixture f;
        const auto c = f.gw.issue(ChallengeKind::ImageSelected);
        const auto ans = f.perfect(c);
        std::atomic<int> ready{0};
        std::vector<Verdict> verdicts(64);
        std::vector<std::thread> threads;
        for (int i = 0; i < 64; ++i)
            threads.emplace_back([&, i] {
                ready.fetch_add(1);
                while (ready.load() < 64) std::this_thread::yield();
                verdicts[i] = f.gw.submit(c.token, c.challenge_id, ans);
            });
        for (auto& t : threads) t.join();
        int non_replay = 0;
        for (const auto& v : verdicts) non_replay += v.reason != Reason::replay ? 1 : 0;
        EXPECT_EQ(non_replay, 1);
    }
}

TEST(Gateway, SweepExpired) {
    Fixture f;
    EXPECT_EQ(f.gw.sweep_expired(f.now), 0u);
    f.gw.issue(ChallengeKind::Text);
    f.now += 200;
    EXPECT_EQ(f.gw.sweep_expired(f.now), 1u);
    EXPECT_EQ(f.gw.sweep_expired(f.now), 0u);

    for (int i = 0; i < 3; ++i) f.gw.issue(ChallengeKind::Text);
    f.now += 100;
    for (int i = 0; i < 2; ++i) f.gw.issue(ChallengeKind::Text);
    f.now += 100;
    EXPECT_EQ(f.gw.sweep_expired(f.now), 3u);
    EXPECT_EQ(f.gw.live_sessions(), 2u);
}

TEST(Gateway, CapacityEvictsExpiredThenConsumedElseRejects) {
    GatewayConfig cfg;
    cfg.max_sessions = 3;
    Fixture f(cfg);
    const auto a = f.gw.issue(ChallengeKind::Text);
    const auto b = f.gw.issue(ChallengeKind::Text);
    f.now += 10;
    const auto c = f.gw.issue(ChallengeKind::Text);
    EXPECT_THROW(f.gw.issue(ChallengeKind::Text), CapacityExceeded);

    f.gw.submit(b.token, b.challenge_id, f.perfect(b));
    const auto d = f.gw.issue(ChallengeKind::Text);  // evicts consumed b
    EXPECT_FALSE(f.gw.state_of(b.token).has_value());
    EXPECT_EQ(f.gw.stored_sessions(), 3u);

    f.gw.submit(c.token, c.challenge_id, f.perfect(c));
    f.now += 175;  // a expires, c consumed, d pending
    f.gw.issue(ChallengeKind::Text);
    EXPECT_FALSE(f.gw.state_of(a.token).has_value());
    EXPECT_TRUE(f.gw.state_of(c.token).has_value());
    EXPECT_EQ(f.gw.state_of(d.token), SessionState::pending);
}

TEST(Gateway, HumannessGate) {
    Fixture f;
    const auto p = f.gw.issue(ChallengeKind::TaskDriven);
    const auto human = simulate_attempt(*f.gw.inspect(p.token), AgentProfile::of(AgentKind::human), 3);
    const auto hv = f.gw.submit(p.token, p.challenge_id, human.answer);
    EXPECT_TRUE(hv.pass);
    ASSERT_TRUE(hv.humanness.has_value());
    EXPECT_GE(hv.humanness->score, 0.5);

    const auto q = f.gw.issue(ChallengeKind::TaskDriven);
    const auto bv = f.gw.submit(q.token, q.challenge_id, f.perfect(q));
    EXPECT_EQ(bv.reason, Reason::humanness_reject);
    ASSERT_TRUE(bv.humanness.has_value());

    GatewayConfig off;
    off.humanness_gated.clear();
    Fixture g(off);
    const auto r = g.gw.issue(ChallengeKind::TaskDriven);
    const auto ov = g.gw.submit(r.token, r.challenge_id, g.perfect(r));
    EXPECT_TRUE(ov.pass);
    EXPECT_FALSE(ov.humanness.has_value());
}

TEST(Gateway, TraceReplayAcrossTokens) {
    Fixture f;
    const auto a = f.gw.issue(ChallengeKind::TaskDriven, 11);
    const auto ans = simulate_attempt(*f.gw.inspect(a.token), AgentProfile::of(AgentKind::human), 4).answer;
    ASSERT_TRUE(f.gw.submit(a.token, a.challenge_id, ans).pass);

    const auto b = f.gw.issue(ChallengeKind::TaskDriven, 11);
    EXPECT_EQ(f.gw.submit(b.token, b.challenge_id, ans).reason, Reason::replay);

    const auto c = f.gw.issue(ChallengeKind::TaskDriven, 11);
    const auto jittered = sim_bot_replay(std::get<TaskAnswer>(ans).trace, 0.001, 8);
    EXPECT_EQ(f.gw.submit(c.token, c.challenge_id, TaskAnswer{jittered}).reason, Reason::replay);
}

TEST(Gateway, ReplayWindowExpires) {
    ReplayGuard g(10.0, 0.003, 5);
    EXPECT_TRUE(g.check_and_record(ChallengeKind::TaskDriven, "x", 0.0));
    EXPECT_FALSE(g.check_and_record(ChallengeKind::TaskDriven, "x", 5.0));
    EXPECT_TRUE(g.check_and_record(ChallengeKind::MotionBased, "x", 5.0));
    EXPECT_TRUE(g.check_and_record(ChallengeKind::TaskDriven, "x", 11.0));
}

TEST(Gateway, ConstructorValidatesCalibration) {
    CalibrationArtifact empty;
    EXPECT_THROW(Gateway(GatewayConfig{}, builtin_catalogs(), empty), Malformed);
    auto no_motion_model = shipped();
    no_motion_model.models.erase(ChallengeKind::MotionBased);
    EXPECT_THROW(Gateway(GatewayConfig{}, builtin_catalogs(), no_motion_model), Malformed);
}

TEST(Gateway, SessionLogRecordsEvents) {
    const auto path = std::filesystem::temp_directory_path() / "vrcaptcha_session_log_test.jsonl";
    std::filesystem::remove(path);
    {
        GatewayConfig cfg;
        cfg.session_log_path = path.string();
        Fixture f(cfg);
        const auto c = f.gw.issue(ChallengeKind::Text);
        f.gw.submit(c.token, c.challenge_id, f.perfect(c));
    }
    std::ifstream in(path);
    std::string line;
    int n = 0;
    while (std::getline(in, line)) {
        EXPECT_EQ(line.find("expected"), std::string::npos);
        ++n;
    }
    EXPECT_EQ(n, 2);
    std::filesystem::remove(path);
}

TEST(Config, FileAndEnvironment) {
    GatewayConfig cfg;
    apply_config_json(cfg, nlohmann::json::parse(R"({"port":9000,"ttl_s":60,"humanness_gated":["MotionBased"]})"));
    EXPECT_EQ(cfg.port, 9000);
    EXPECT_EQ(cfg.ttl_s, 60.0);
    EXPECT_EQ(cfg.humanness_gated, std::set<ChallengeKind>{ChallengeKind::MotionBased});

    std::map<std::string, std::string> env{{"VRCAPTCHA_PORT", "9100"},
                                           {"VRCAPTCHA_ROTATION_TOL_DEG", "5"},
                                           {"VRCAPTCHA_HUMANNESS_GATED", "TaskDriven,Text"}};
    apply_env_overrides(cfg, [&](const char* k) { return env.count(k) ? env[k].c_str() : nullptr; });
    EXPECT_EQ(cfg.port, 9100);
    EXPECT_EQ(cfg.verifier.rotation_tol_deg, 5.0);
    EXPECT_EQ(cfg.humanness_gated, (std::set<ChallengeKind>{ChallengeKind::TaskDriven, ChallengeKind::Text}));

    env = {{"VRCAPTCHA_PORT", "abc"}};
    EXPECT_THROW(apply_env_overrides(cfg, [&](const char* k) { return env.count(k) ? env[k].c_str() : nullptr; }), Malformed);
    EXPECT_THROW(apply_config_json(cfg, nlohmann::json::parse(R"({"humanness_gated":["Foo"]})")), Malformed);
}

TEST(Wire, AnswerRoundTrip) {
    const auto tr = sim_human_task(gen_task(2, builtin_scene_catalog()), AgentProfile::of(AgentKind::human), 2);
    const std::vector<Answer> answers = {TextAnswer{"AB23", {}}, RotationAnswer{-12.5, {}}, PuzzleAnswer{0.4, tr},
                                         SelectionAnswer{{1, 5}, {}}, TaskAnswer{tr}, MotionAnswer{tr}};
    for (const auto& a : answers) {
        const auto back = answer_from_json(to_json(a));
        EXPECT_EQ(back.index(), a.index());
        EXPECT_EQ(to_json(back).dump(), to_json(a).dump());
    }
    EXPECT_THROW(answer_from_json(nlohmann::json::parse(R"({"type":"Nope"})")), Malformed);
    EXPECT_THROW(answer_from_json(nlohmann::json::parse(R"({"type":"Rotation"})")), Malformed);
    EXPECT_THROW(answer_from_json(nlohmann::json::parse(R"({"type":"Task","trace":[]})")), Malformed);
}

TEST(Http, Routes) {
    double now = 0.0;
    Gateway gw(GatewayConfig{}, builtin_catalogs(), shipped(), [&now] { return now; }, 5);
    httplib::Server server;
    mount_routes(server, gw);
    const int port = server.bind_to_any_port("127.0.0.1");
    ASSERT_GT(port, 0);
    std::thread th([&] { server.listen_after_bind(); });
    server.wait_until_ready();

    httplib::Client cli("127.0.0.1", port);
    auto health = cli.Get("/v1/health");
    ASSERT_TRUE(health);
    EXPECT_EQ(health->status, 200);
    EXPECT_EQ(nlohmann::json::parse(health->body)["status"], "ok");

    auto bad = cli.Post("/v1/challenges", R"({"kind":"Foo"})", "application/json");
    ASSERT_TRUE(bad);
    EXPECT_EQ(bad->status, 400);

    auto any = cli.Post("/v1/challenges", "", "application/json");
    ASSERT_TRUE(any);
    EXPECT_EQ(any->status, 200);

    auto issued = cli.Post("/v1/challenges", R"({"kind":"ImageRotated"})", "application/json");
    ASSERT_TRUE(issued);
    const auto j = nlohmann::json::parse(issued->body);
    EXPECT_EQ(j["kind"], "ImageRotated");
    EXPECT_FALSE(j["presentation"].contains("applied_rotation"));
    const std::string token = j["token"], id = j["challenge_id"];
    const double applied = std::get<RotationChallenge>(gw.inspect(token)->body).secret.applied_rotation;

    nlohmann::json body = {{"token", token}, {"answer", {{"type", "Rotation"}, {"user_delta", -applied}}}};
    auto verdict = cli.Post("/v1/challenges/" + id + "/answer", body.dump(), "application/json");
    ASSERT_TRUE(verdict);
    const auto v = nlohmann::json::parse(verdict->body);
    EXPECT_EQ(v["pass"], true);
    EXPECT_EQ(v["reason"], "ok");
    EXPECT_TRUE(v["humanness"].is_null());

    verdict = cli.Post("/v1/challenges/" + id + "/answer", body.dump(), "application/json");
    EXPECT_EQ(nlohmann::json::parse(verdict->body)["reason"], "replay");

    auto garbage = cli.Post("/v1/challenges/" + id + "/answer", "{{{", "application/json");
    EXPECT_EQ(garbage->status, 400);

    const auto other = nlohmann::json::parse(cli.Post("/v1/challenges", R"({"kind":"Text"})", "application/json")->body);
    nlohmann::json malformed = {{"token", other["token"]}, {"answer", {{"type", "Text"}}}};
    verdict = cli.Post("/v1/challenges/" + other["challenge_id"].get<std::string>() + "/answer", malformed.dump(),
                       "application/json");
    EXPECT_EQ(verdict->status, 200);
    EXPECT_EQ(nlohmann::json::parse(verdict->body)["reason"], "malformed");
    EXPECT_EQ(gw.state_of(other["token"]), SessionState::consumed);

    EXPECT_EQ(nlohmann::json::parse(cli.Get("/v1/health")->body)["live_sessions"], 1);

    server.stop();
    th.join();
}
