// Acceptance suite: one PASS/FAIL line per criterion. Exit status is the number of failures.

#include <atomic>
#include <chrono>
#include <cstdio>
#include <functional>
#include <string>
#include <thread>

#include "leak_check.hpp"
#include "oracles.hpp"
#include "vrcaptcha/harness.hpp"

using namespace vrcaptcha;

namespace {

// Pinned targets.
constexpr std::size_t kPerKind = 1000;
constexpr double kOracleRuntimeLimitS = 60.0;
constexpr double kPopulationRuntimeLimitS = 300.0;
constexpr double kDtwTolerance = 1e-12;
constexpr int kDtwPairs = 10000;
constexpr double kHumanPassMin = 0.95;
constexpr double kBotRejectMin = 0.90;
constexpr double kHumanAcceptMin = 0.90;
constexpr double kAucMin = 0.95;
constexpr int kReplayTrials = 1000;
constexpr double kJitterM = 0.001;
constexpr double kJitterFlagMin = 0.99;
constexpr int kRaceThreads = 64;
constexpr int kRaceRounds = 50;
constexpr int kLeakExchanges = 10000;

// Holdout seed, distinct from the one the shipped calibration was fitted on.
constexpr std::uint64_t kSeed = 20261016;

const CalibrationArtifact& shipped() {
    static const auto a = load_calibration(VRCAPTCHA_DATA_DIR "/calibration.json");
    return a;
}

int failures = 0;

void report(bool ok, const std::string& name, const std::string& detail) {
    std::printf("%s  %-34s %s\n", ok ? "PASS" : "FAIL", name.c_str(), detail.c_str());
    std::fflush(stdout);
    failures += ok ? 0 : 1;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(const char* f, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

// ---------------------------------------------------------------------------

void oracle_perfect_answers() {
    const auto t0 = std::chrono::steady_clock::now();
    const auto cats = builtin_catalogs();
    VerifierConfig cfg;
    cfg.motion_theta = shipped().motion_theta;
    std::string detail;
    bool ok = true;
    for (auto kind : kAllKinds) {
        std::size_t pass = 0;
        for (std::size_t i = 0; i < kPerKind; ++i) {
            const auto spec = generate(kind, derive_seed(kSeed, {1, i}), cats);
            Answer answer;
            switch (kind) {
                case ChallengeKind::TaskDriven: answer = TaskAnswer{sim_bot_naive(std::get<TaskChallenge>(spec.body))}; break;
                case ChallengeKind::MotionBased:
                    answer = MotionAnswer{std::get<MotionChallenge>(spec.body).secret.template_trace};
                    break;
                default: answer = simulate_attempt(spec, AgentProfile::of(AgentKind::naive_bot), 0).answer;
            }
            pass += verify(spec, answer, cfg).pass ? 1 : 0;
        }
        ok &= pass == kPerKind;
        detail += fmt("%s=%zu/%zu ", std::string(to_string(kind)).c_str(), pass, kPerKind);
    }
    const double rt = seconds_since(t0);
    ok &= rt < kOracleRuntimeLimitS;
    report(ok, "oracle-perfect answers pass", detail + fmt("(%.1fs, limit %.0fs)", rt, kOracleRuntimeLimitS));
}

void dtw_oracle_equivalence() {
    const auto t0 = std::chrono::steady_clock::now();
    Rng rng(kSeed);
    double worst = 0.0;
    int mismatches = 0;
    for (int trial = 0; trial < kDtwPairs; ++trial) {
        std::vector<HandPair> a(1 + rng.below(10)), b(1 + rng.below(10));
        for (auto* seq : {&a, &b})
            for (auto& p : *seq)
                for (auto& x : p) x = rng.normal(0.0, 1.0);
        const double diff = std::abs(dtw_distance(a, b) - oracle::dtw_exhaustive(a, b));
        worst = std::max(worst, diff);
        mismatches += diff <= kDtwTolerance ? 0 : 1;
    }
    const double rt = seconds_since(t0);
    report(mismatches == 0 && rt < kOracleRuntimeLimitS, "DTW equals exhaustive oracle",
           fmt("%d pairs, %d mismatches, max |diff| %.2e (tol %.0e) (%.1fs, limit %.0fs)", kDtwPairs, mismatches, worst,
               kDtwTolerance, rt, kOracleRuntimeLimitS));
}

void selection_exhaustive() {
    const auto t0 = std::chrono::steady_clock::now();
    const auto c = gen_selection(kSeed, builtin_image_catalog());
    int passes = 0;
    bool passed_truth = false;
    for (int mask = 0; mask < 512; ++mask) {
        std::vector<int> idx;
        for (int i = 0; i < 9; ++i)
            if (mask & (1 << i)) idx.push_back(i);
        if (verify_selection(c.secret, {idx, {}}).pass) {
            ++passes;
            passed_truth = std::set<int>(idx.begin(), idx.end()) == c.secret.truth;
        }
    }
    const double rt = seconds_since(t0);
    report(passes == 1 && passed_truth && rt < 10.0, "selection: 1 of 512 subsets passes",
           fmt("truth size %zu, passing subsets %d, passing subset is truth: %s (%.3fs)", c.secret.truth.size(), passes,
               passed_truth ? "yes" : "no", rt));
}

void human_solvability() {
    const auto t0 = std::chrono::steady_clock::now();
    ExperimentConfig cfg;
    cfg.seed = kSeed;
    cfg.n_per_cell = kPerKind;
    cfg.profiles = {AgentProfile::of(AgentKind::human)};
    const auto rows = run_attempts(cfg, builtin_catalogs(), shipped());
    std::map<ChallengeKind, std::size_t> pass;
    for (const auto& r : rows) pass[r.kind] += r.pass ? 1 : 0;
    bool ok = true;
    std::string detail;
    for (auto kind : kAllKinds) {
        const double rate = static_cast<double>(pass[kind]) / kPerKind;
        ok &= rate >= kHumanPassMin;
        detail += fmt("%s=%.3f ", std::string(to_string(kind)).c_str(), rate);
    }
    const double rt = seconds_since(t0);
    ok &= rt < kPopulationRuntimeLimitS;
    report(ok, "simulated humans pass >= 95%", detail + fmt("(gating on, %.1fs, limit %.0fs)", rt, kPopulationRuntimeLimitS));
}

void bot_discrimination() {
    const auto t0 = std::chrono::steady_clock::now();
    const auto cats = builtin_catalogs();
    bool ok = true;
    std::string detail;
    for (auto kind : {ChallengeKind::TaskDriven, ChallengeKind::MotionBased}) {
        const auto& model = shipped().models.at(kind);
        const auto humans = generate_corpus(kind, AgentProfile::of(AgentKind::human), kSeed, kPerKind, cats);
        const auto bots = generate_corpus(kind, AgentProfile::of(AgentKind::naive_bot), kSeed, kPerKind, cats);
        std::vector<Labeled> labeled;
        std::size_t human_accept = 0, bot_reject_score = 0;
        for (const auto& h : humans) {
            const double s = humanness_score(extract_features(h.trace), model).score;
            human_accept += s >= model.threshold ? 1 : 0;
            labeled.push_back({s, true});
        }
        for (const auto& b : bots) {
            const double s = humanness_score(extract_features(b.trace), model).score;
            bot_reject_score += s < model.threshold ? 1 : 0;
            labeled.push_back({s, false});
        }
        const double auc = evaluate_roc(labeled).auc;

        // End to end: every bot attempt on a fresh gateway, so only verification and
        // the humanness gate can stop it.
        std::size_t bot_reject_gateway = 0;
        for (const auto& b : bots) {
            double now = 0.0;
            Gateway gw(GatewayConfig{}, cats, shipped(), [&now] { return now; }, b.seed);
            const auto issued = gw.issue(kind, b.seed);
            const Answer answer = kind == ChallengeKind::TaskDriven
                                      ? Answer{TaskAnswer{sim_bot_naive(std::get<TaskChallenge>(gw.inspect(issued.token)->body))}}
                                      : Answer{MotionAnswer{b.trace}};
            bot_reject_gateway += gw.submit(issued.token, issued.challenge_id, answer).pass ? 0 : 1;
        }
        const double ha = static_cast<double>(human_accept) / kPerKind;
        const double br = static_cast<double>(bot_reject_score) / kPerKind;
        const double bg = static_cast<double>(bot_reject_gateway) / kPerKind;
        ok &= ha >= kHumanAcceptMin && br >= kBotRejectMin && bg >= kBotRejectMin && auc >= kAucMin;
        detail += fmt("%s: human-accept=%.3f bot-reject=%.3f (gateway %.3f) auc=%.4f; ", std::string(to_string(kind)).c_str(),
                      ha, br, bg, auc);
    }
    const double rt = seconds_since(t0);
    ok &= rt < kPopulationRuntimeLimitS;
    report(ok, "humanness separates naive bots", detail + fmt("(%.1fs, limit %.0fs)", rt, kPopulationRuntimeLimitS));
}

void replay_defense() {
    const auto cats = builtin_catalogs();
    int trials = 0, verbatim_flagged = 0, jitter_flagged = 0;
    std::uint64_t attempt = 0;
    for (auto kind : {ChallengeKind::TaskDriven, ChallengeKind::MotionBased}) {
        double now = 0.0;
        Gateway gw(GatewayConfig{}, cats, shipped(), [&now] { return now; }, kSeed);
        int kind_trials = 0;
        while (kind_trials < kReplayTrials / 2) {
            const auto seed = derive_seed(kSeed, {3, attempt++});
            const auto first = gw.issue(kind, seed);
            const auto honest = simulate_attempt(*gw.inspect(first.token), AgentProfile::of(AgentKind::human), seed);
            now += 5.0;
            if (!gw.submit(first.token, first.challenge_id, honest.answer).pass) continue;  // only accepted traces
            const auto& trace = *answer_trace(honest.answer);
            auto wrap = [kind](InteractionTrace t) -> Answer {
                return kind == ChallengeKind::TaskDriven ? Answer{TaskAnswer{std::move(t)}} : Answer{MotionAnswer{std::move(t)}};
            };
            // Same challenge content under new tokens: the strongest position for the attacker.
            const auto again = gw.issue(kind, seed);
            verbatim_flagged += gw.submit(again.token, again.challenge_id, wrap(trace)).reason == Reason::replay ? 1 : 0;
            const auto third = gw.issue(kind, seed);
            const auto jittered = sim_bot_replay(trace, kJitterM, derive_seed(seed, {4}));
            jitter_flagged += gw.submit(third.token, third.challenge_id, wrap(jittered)).reason == Reason::replay ? 1 : 0;
            ++kind_trials;
            ++trials;
        }
    }
    const double jitter_rate = static_cast<double>(jitter_flagged) / trials;
    report(verbatim_flagged == trials && jitter_rate >= kJitterFlagMin, "replays rejected",
           fmt("verbatim %d/%d, %.0f mm jitter %d/%d (%.3f, min %.2f)", verbatim_flagged, trials, kJitterM * 1000.0,
               jitter_flagged, trials, jitter_rate, kJitterFlagMin));
}

void protocol_invariants() {
    const auto cats = builtin_catalogs();

    // Single-use under races.
    int bad_rounds = 0;
    for (int round = 0; round < kRaceRounds; ++round) {
        double now = 0.0;
        Gateway gw(GatewayConfig{}, cats, shipped(), [&now] { return now; }, kSeed + round);
        const auto kind = kAllKinds[round % kAllKinds.size()];
        const auto issued = gw.issue(kind);
        const auto answer = simulate_attempt(*gw.inspect(issued.token), AgentProfile::of(AgentKind::human), round).answer;
        std::atomic<int> ready{0}, non_replay{0};
        std::vector<std::thread> threads;
        for (int i = 0; i < kRaceThreads; ++i)
            threads.emplace_back([&] {
                ready.fetch_add(1);
                while (ready.load() < kRaceThreads) std::this_thread::yield();
                if (gw.submit(issued.token, issued.challenge_id, answer).reason != Reason::replay) non_replay.fetch_add(1);
            });
        for (auto& t : threads) t.join();
        bad_rounds += non_replay.load() == 1 ? 0 : 1;
    }

    // Leak fuzz over issue/submit exchanges.
    int leaks = 0;
    {
        double now = 0.0;
        GatewayConfig cfg;
        cfg.max_sessions = 100000;
        Gateway gw(cfg, cats, shipped(), [&now] { return now; }, kSeed);
        Rng rng(kSeed);
        for (int i = 0; i < kLeakExchanges; ++i) {
            const auto issued = gw.issue();  // random kind
            const auto spec = gw.inspect(issued.token);
            leaks += testsupport::secret_leaks(issued.to_json(), *spec).empty() ? 0 : 1;
            const auto profile = AgentProfile::of(rng.uniform() < 0.5 ? AgentKind::human : AgentKind::naive_bot);
            Answer answer = simulate_attempt(*spec, profile, rng.next_u64()).answer;
            const double r = rng.uniform();
            Verdict v;
            if (r < 0.1) {
                v = gw.submit_malformed(issued.token, issued.challenge_id);
            } else if (r < 0.2) {
                v = gw.submit(issued.token, issued.challenge_id, TextAnswer{"ZZZZ", {}});
            } else {
                v = gw.submit(issued.token, issued.challenge_id, answer);
            }
            leaks += testsupport::secret_leaks(to_json(v), *spec).empty() ? 0 : 1;
            now += 0.5;
        }
    }

    // TTL boundary, every kind.
    int ttl_errors = 0;
    for (auto kind : kAllKinds) {
        for (double offset : {-1.0, +1.0}) {
            double now = 0.0;
            GatewayConfig cfg;
            cfg.humanness_gated.clear();
            Gateway gw(cfg, cats, shipped(), [&now] { return now; }, kSeed);
            const auto issued = gw.issue(kind);
            const auto spec = gw.inspect(issued.token);
            const Answer answer = kind == ChallengeKind::MotionBased
                                      ? Answer{MotionAnswer{std::get<MotionChallenge>(spec->body).secret.template_trace}}
                                      : simulate_attempt(*spec, AgentProfile::of(AgentKind::naive_bot), 0).answer;
            now += cfg.ttl_s + offset;
            const auto v = gw.submit(issued.token, issued.challenge_id, answer);
            const bool expected_expired = offset > 0;
            ttl_errors += (v.reason == Reason::expired) == expected_expired && (expected_expired || v.pass) ? 0 : 1;
        }
    }
    report(bad_rounds == 0 && leaks == 0 && ttl_errors == 0, "protocol invariants",
           fmt("%d-way races: %d/%d rounds with one winner; leaks in %d exchanges: %d; TTL +-1s errors: %d", kRaceThreads,
               kRaceRounds - bad_rounds, kRaceRounds, kLeakExchanges, leaks, ttl_errors));
}

void timing_direction() {
    ExperimentConfig cfg;  // defaults: all kinds, human + naive_bot, 100 per cell, seed 1
    const auto csv_a = attempts_csv(run_attempts(cfg, builtin_catalogs(), shipped()));
    const auto csv_b = attempts_csv(run_attempts(cfg, builtin_catalogs(), shipped()));
    const auto ranking = rank_report(csv_a);
    std::string order;
    for (const auto& [k, t] : ranking) order += fmt("%s(%.2fs) ", k.c_str(), t);
    const bool text_last = !ranking.empty() && ranking.back().first == "Text";
    const bool same = csv_a == csv_b && rank_report(csv_b) == ranking;
    report(text_last && same, "Text is the slowest kind", order + (same ? "[deterministic]" : "[NOT deterministic]"));
}

void determinism() {
    const auto base = std::filesystem::temp_directory_path() / "vrcaptcha_acceptance";
    std::filesystem::remove_all(base);
    ExperimentConfig cfg;
    cfg.profiles.push_back(AgentProfile::of(AgentKind::replay_bot));
    cfg.output_path = (base / "a").string();
    const auto a = run_experiment(cfg);  // calibrates in-process from the seed
    cfg.output_path = (base / "b").string();
    const auto b = run_experiment(cfg);
    const bool run_same = read_file(a.attempts_path) == read_file(b.attempts_path) &&
                          read_file(a.summary_path) == read_file(b.summary_path);

    CalibrationConfig cc;  // seed 1, 1000 per class: the shipped artifact's settings
    const auto c1 = dump_calibration(calibrate(cc));
    const auto c2 = dump_calibration(calibrate(cc));
    const bool cal_same = c1 == c2;
    const bool matches_shipped = c1 == read_file(VRCAPTCHA_DATA_DIR "/calibration.json");
    std::filesystem::remove_all(base);
    report(run_same && cal_same && matches_shipped, "run and calibrate are reproducible",
           fmt("run csv identical: %s; calibrate identical: %s; equals shipped artifact: %s", run_same ? "yes" : "no",
               cal_same ? "yes" : "no", matches_shipped ? "yes" : "no"));
}

}  // namespace

int main() {
    const std::vector<std::function<void()>> criteria = {oracle_perfect_answers, dtw_oracle_equivalence, selection_exhaustive,
                                                         human_solvability,      bot_discrimination,     replay_defense,
                                                         protocol_invariants,    timing_direction,       determinism};
    for (const auto& c : criteria) {
        try {
            c();
        } catch (const std::exception& e) {
            report(false, "criterion aborted", e.what());
        }
    }
    std::printf("%d criteria failed\n", failures);
    return failures == 0 ? 0 : 1;
}
