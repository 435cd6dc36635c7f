#pragma once

// Simulated-population experiments. Each (kind, profile) cell runs issue -> solve -> submit
// against its own gateway on a simulated clock; seeds derive from (seed, kind, profile, index).

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <future>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "agents.hpp"
#include "challenge.hpp"
#include "digest.hpp"
#include "gateway.hpp"
#include "humanness.hpp"
#include "verifier.hpp"

namespace vrcaptcha {

inline std::size_t kind_index(ChallengeKind k) { return static_cast<std::size_t>(k); }

// ---------------------------------------------------------------------------
// Corpora

struct CorpusItem {
    ChallengeSpec spec;
    InteractionTrace trace;
    std::uint64_t seed = 0;
};

/// n seeded (challenge, trace) pairs of one trace-bearing kind solved by `profile`.
/// Challenge i is the same for every profile given the same stream label.
inline std::vector<CorpusItem> generate_corpus(ChallengeKind kind, const AgentProfile& profile, std::uint64_t seed,
                                               std::size_t n, const Catalogs& catalogs, const GenOptions& gen = {},
                                               std::uint64_t stream = fnv1a("corpus")) {
    if (kind != ChallengeKind::TaskDriven && kind != ChallengeKind::MotionBased)
        throw Malformed("corpora are only defined for trace-bearing kinds");
    std::vector<CorpusItem> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        const auto s = derive_seed(seed, {stream, kind_index(kind), i});
        auto spec = generate(kind, s, catalogs, gen);
        const auto agent_seed = derive_seed(s, {fnv1a(to_string(profile.kind))});
        auto attempt = simulate_attempt(spec, profile, agent_seed);
        InteractionTrace trace = *answer_trace(attempt.answer);
        out.push_back({std::move(spec), std::move(trace), agent_seed});
    }
    return out;
}

/// Nearest-rank quantile.
inline double quantile(std::vector<double> v, double q) {
    if (v.empty()) throw Malformed("quantile of empty sample");
    std::sort(v.begin(), v.end());
    const auto rank = static_cast<std::size_t>(std::ceil(q * static_cast<double>(v.size())));
    return v[std::clamp<std::size_t>(rank, 1, v.size()) - 1];
}

// ---------------------------------------------------------------------------
// Calibration

struct CalibrationConfig {
    std::uint64_t seed = 1;
    std::size_t n_per_class = 1000;
    double theta_quantile = 0.99;
    HumannessWeights weights;
    AgentProfile human = AgentProfile::of(AgentKind::human);
    AgentProfile bot = AgentProfile::of(AgentKind::naive_bot);
    Catalogs catalogs = builtin_catalogs();
    GenOptions generation;
    std::string corpus_path;  // optional corpus dump
};

inline CalibrationConfig calibration_config_from_json(const nlohmann::json& j) {
    CalibrationConfig c;
    try {
        if (j.contains("seed")) c.seed = j["seed"];
        if (j.contains("n_per_class")) c.n_per_class = j["n_per_class"];
        if (j.contains("theta_quantile")) c.theta_quantile = j["theta_quantile"];
        if (j.contains("weights")) {
            const auto& w = j["weights"];
            for (std::size_t i = 0; i < kNumFeatures; ++i)
                if (w.contains(kFeatureNames[i])) c.weights.w[i] = w[kFeatureNames[i]];
            if (w.contains("bias")) c.weights.bias = w["bias"];
        }
        if (j.contains("human")) c.human = profile_from_json(j["human"]);
        if (j.contains("bot")) c.bot = profile_from_json(j["bot"]);
        if (j.contains("catalogs_path")) c.catalogs = load_catalogs(j["catalogs_path"].get<std::string>());
        if (j.contains("corpus_path")) c.corpus_path = j["corpus_path"];
        if (j.contains("gateway")) {
            GatewayConfig g;
            apply_config_json(g, j["gateway"]);
            c.generation = g.generation;
        }
    } catch (const nlohmann::json::exception& e) {
        throw Malformed(std::string("bad calibration config: ") + e.what());
    }
    validate(c.human);
    validate(c.bot);
    return c;
}

/// Fits per-kind feature standardization, the Youden threshold (folded into the bias so
/// that score >= 0.5 is the gate), and the motion DTW threshold.
inline CalibrationArtifact calibrate(const CalibrationConfig& cfg) {
    if (cfg.n_per_class < 2) throw Malformed("calibration needs at least 2 traces per class");
    if (!(cfg.theta_quantile > 0.0 && cfg.theta_quantile <= 1.0)) throw Malformed("theta quantile must be in (0, 1]");

    CalibrationArtifact art;
    art.seed = cfg.seed;
    art.n_per_class = cfg.n_per_class;
    art.motion_quantile = cfg.theta_quantile;

    std::ofstream corpus;
    if (!cfg.corpus_path.empty()) {
        corpus.open(cfg.corpus_path, std::ios::binary);
        if (!corpus) throw Malformed("cannot write corpus " + cfg.corpus_path);
    }
    Sha256 fingerprint;
    const auto stream = fnv1a("calibrate");

    for (auto kind : {ChallengeKind::TaskDriven, ChallengeKind::MotionBased}) {
        const auto humans = generate_corpus(kind, cfg.human, cfg.seed, cfg.n_per_class, cfg.catalogs, cfg.generation, stream);
        const auto bots = generate_corpus(kind, cfg.bot, cfg.seed, cfg.n_per_class, cfg.catalogs, cfg.generation, stream);

        std::vector<HumannessFeatures> hf, bf;
        for (const auto* set : {&humans, &bots}) {
            const bool is_human = set == &humans;
            for (const auto& item : *set) {
                std::ostringstream rec;
                write_corpus_record(rec, kind, is_human ? AgentKind::human : AgentKind::naive_bot, item.seed, item.trace);
                fingerprint.update(rec.str());
                if (corpus.is_open()) corpus << rec.str();
                (is_human ? hf : bf).push_back(extract_features(item.trace));
            }
        }

        HumannessModel model;
        model.stats = fit_feature_stats(hf);
        model.weights = cfg.weights;
        model.weights.bias = 0.0;
        std::vector<Labeled> labeled;
        for (const auto& f : hf) labeled.push_back({humanness_logit(f, model.stats, model.weights), true});
        for (const auto& f : bf) labeled.push_back({humanness_logit(f, model.stats, model.weights), false});
        model.weights.bias = cfg.weights.bias - calibrate_threshold(labeled);
        model.threshold = 0.5;
        art.models[kind] = model;

        if (kind == ChallengeKind::MotionBased) {
            std::vector<double> d;
            for (const auto& item : humans)
                d.push_back(motion_distance(std::get<MotionChallenge>(item.spec.body).secret.template_trace, item.trace));
            art.motion_theta = quantile(d, cfg.theta_quantile);
        }
    }
    art.corpus_fingerprint = fingerprint.hex();
    return art;
}

// ---------------------------------------------------------------------------
// Experiments

struct ExperimentConfig {
    std::size_t n_per_cell = 100;
    std::vector<ChallengeKind> kinds{kAllKinds.begin(), kAllKinds.end()};
    std::vector<AgentProfile> profiles{AgentProfile::of(AgentKind::human), AgentProfile::of(AgentKind::naive_bot)};
    std::uint64_t seed = 1;
    std::string output_path = "out";
    std::string calibration_path;  // empty: calibrate in-process from `seed`
    std::size_t calibration_n = 1000;
    GatewayConfig gateway;
};

inline void validate(const ExperimentConfig& c) {
    if (c.n_per_cell < 1) throw Malformed("n_per_cell must be >= 1");
    if (c.kinds.empty()) throw Malformed("kinds must be non-empty");
    if (c.profiles.empty()) throw Malformed("profiles must be non-empty");
    for (const auto& p : c.profiles) validate(p);
}

inline ExperimentConfig experiment_config_from_json(const nlohmann::json& j) {
    ExperimentConfig c;
    try {
        if (j.contains("n_per_cell")) c.n_per_cell = j["n_per_cell"];
        if (j.contains("kinds")) {
            c.kinds.clear();
            for (const auto& k : j["kinds"]) {
                auto kind = parse_kind(k.get<std::string>());
                if (!kind) throw Malformed("unknown kind " + k.get<std::string>());
                c.kinds.push_back(*kind);
            }
        }
        if (j.contains("profiles")) {
            c.profiles.clear();
            for (const auto& p : j["profiles"]) c.profiles.push_back(profile_from_json(p));
        }
        if (j.contains("seed")) c.seed = j["seed"];
        if (j.contains("output_path")) c.output_path = j["output_path"];
        if (j.contains("calibration_path")) c.calibration_path = j["calibration_path"];
        if (j.contains("calibration_n")) c.calibration_n = j["calibration_n"];
        if (j.contains("gateway")) apply_config_json(c.gateway, j["gateway"]);
    } catch (const nlohmann::json::exception& e) {
        throw Malformed(std::string("bad experiment config: ") + e.what());
    }
    validate(c);
    return c;
}

struct AttemptRow {
    ChallengeKind kind = ChallengeKind::Text;
    std::string profile;
    std::uint64_t seed = 0;
    bool pass = false;
    Reason reason = Reason::malformed;
    double correctness = 0.0;
    std::optional<double> humanness_score;
    double solve_time_s = 0.0;
};

inline constexpr const char* kAttemptsHeader =
    "kind,profile,seed,pass,reason,correctness,humanness_score,simulated_solve_time_s";

inline std::string fixed6(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.6f", v);
    return buf;
}

inline std::string to_csv_line(const AttemptRow& r) {
    std::string s;
    s += to_string(r.kind);
    s += ',' + r.profile + ',' + std::to_string(r.seed) + ',' + (r.pass ? "1" : "0") + ',';
    s += to_string(r.reason);
    s += ',' + fixed6(r.correctness) + ',' + (r.humanness_score ? fixed6(*r.humanness_score) : std::string()) + ',';
    s += fixed6(r.solve_time_s);
    return s;
}

inline CalibrationArtifact calibration_for(const ExperimentConfig& cfg, const Catalogs& catalogs) {
    if (!cfg.calibration_path.empty()) return load_calibration(cfg.calibration_path);
    CalibrationConfig cc;
    cc.seed = cfg.seed;
    cc.n_per_class = cfg.calibration_n;
    cc.catalogs = catalogs;
    cc.generation = cfg.gateway.generation;
    return calibrate(cc);
}

/// Runs one (kind, profile) cell on a fresh gateway and simulated clock.
inline std::vector<AttemptRow> run_cell(const ExperimentConfig& cfg, const Catalogs& catalogs,
                                        const CalibrationArtifact& calibration, ChallengeKind kind,
                                        const AgentProfile& profile) {
    const std::string pname(to_string(profile.kind));
    const auto cell_seed = derive_seed(cfg.seed, {fnv1a("cell"), kind_index(kind), fnv1a(pname)});
    double now = 1.0e9;
    Gateway gw(cfg.gateway, catalogs, calibration, [&now] { return now; }, cell_seed);

    std::vector<AttemptRow> rows;
    rows.reserve(cfg.n_per_cell);
    for (std::size_t i = 0; i < cfg.n_per_cell; ++i) {
        const auto seed = derive_seed(cfg.seed, {kind_index(kind), fnv1a(pname), i});
        SimulatedAttempt attempt;
        if (profile.kind == AgentKind::replay_bot) {
            // Capture an honest solve first, then replay it against a new challenge.
            const auto victim = gw.issue(kind, derive_seed(seed, {fnv1a("victim")}));
            auto honest = simulate_attempt(*gw.inspect(victim.token), AgentProfile::of(AgentKind::human),
                                           derive_seed(seed, {fnv1a("victim-agent")}));
            now += honest.solve_time_s;
            gw.submit(victim.token, victim.challenge_id, honest.answer);
            now += 1.0;
            attempt = {honest.answer, 0.1};
            if (const auto* tr = answer_trace(honest.answer)) {
                auto replayed = sim_bot_replay(*tr, profile.replay_jitter_m, derive_seed(seed, {fnv1a("jitter")}));
                if (kind == ChallengeKind::TaskDriven)
                    attempt.answer = TaskAnswer{std::move(replayed)};
                else
                    attempt.answer = MotionAnswer{std::move(replayed)};
            }
        }
        const auto issued = gw.issue(kind, seed);
        if (profile.kind != AgentKind::replay_bot)
            attempt = simulate_attempt(*gw.inspect(issued.token), profile, derive_seed(seed, {fnv1a("agent")}));
        now += attempt.solve_time_s;
        const Verdict v = gw.submit(issued.token, issued.challenge_id, attempt.answer);
        now += 1.0;
        rows.push_back({kind, pname, seed, v.pass, v.reason, v.correctness,
                        v.humanness ? std::optional<double>(v.humanness->score) : std::nullopt, attempt.solve_time_s});
    }
    return rows;
}

inline std::vector<AttemptRow> run_attempts(const ExperimentConfig& cfg, const Catalogs& catalogs,
                                            const CalibrationArtifact& calibration) {
    validate(cfg);
    std::vector<std::future<std::vector<AttemptRow>>> cells;
    for (auto kind : cfg.kinds)
        for (const auto& profile : cfg.profiles)
            cells.push_back(std::async(std::launch::async, [&, kind, profile] {
                return run_cell(cfg, catalogs, calibration, kind, profile);
            }));
    std::vector<AttemptRow> rows;
    for (auto& c : cells) {
        auto part = c.get();
        rows.insert(rows.end(), part.begin(), part.end());
    }
    return rows;
}

inline std::string attempts_csv(const std::vector<AttemptRow>& rows) {
    std::string out = std::string(kAttemptsHeader) + "\n";
    for (const auto& r : rows) out += to_csv_line(r) + "\n";
    return out;
}

inline constexpr const char* kSummaryHeader =
    "kind,profile,n,pass_rate,mean_solve_time_s,p95_solve_time_s,humanness_auc";

/// Per-cell pass rate and timing; humanness AUC per kind, human vs. naive_bot rows.
inline std::string summary_csv(const std::vector<AttemptRow>& rows) {
    std::map<ChallengeKind, std::vector<Labeled>> scored;
    for (const auto& r : rows)
        if (r.humanness_score && (r.profile == "human" || r.profile == "naive_bot"))
            scored[r.kind].push_back({*r.humanness_score, r.profile == "human"});
    std::map<ChallengeKind, std::string> auc;
    for (auto& [k, xs] : scored) {
        try {
            auc[k] = fixed6(evaluate_roc(xs).auc);
        } catch (const Malformed&) {
        }
    }

    std::vector<std::pair<ChallengeKind, std::string>> cells;
    std::map<std::pair<ChallengeKind, std::string>, std::vector<const AttemptRow*>> by_cell;
    for (const auto& r : rows) {
        auto key = std::make_pair(r.kind, r.profile);
        if (!by_cell.count(key)) cells.push_back(key);
        by_cell[key].push_back(&r);
    }
    std::string out = std::string(kSummaryHeader) + "\n";
    for (const auto& key : cells) {
        const auto& rs = by_cell[key];
        double pass = 0.0, total = 0.0;
        std::vector<double> times;
        for (const auto* r : rs) {
            pass += r->pass ? 1.0 : 0.0;
            total += r->solve_time_s;
            times.push_back(r->solve_time_s);
        }
        const double n = static_cast<double>(rs.size());
        out += std::string(to_string(key.first)) + ',' + key.second + ',' + std::to_string(rs.size()) + ',' +
               fixed6(pass / n) + ',' + fixed6(total / n) + ',' + fixed6(quantile(times, 0.95)) + ',' +
               (auc.count(key.first) ? auc[key.first] : std::string()) + "\n";
    }
    return out;
}

struct ExperimentReport {
    std::vector<AttemptRow> rows;
    std::string attempts_path;
    std::string summary_path;
};

inline void write_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Malformed("cannot write " + path);
    out << content;
}

/// Writes <output_path>/attempts.csv and <output_path>/summary.csv.
inline ExperimentReport run_experiment(const ExperimentConfig& cfg) {
    validate(cfg);
    const Catalogs catalogs = cfg.gateway.catalogs_path.empty() ? builtin_catalogs() : load_catalogs(cfg.gateway.catalogs_path);
    const auto calibration = calibration_for(cfg, catalogs);
    ExperimentReport rep;
    rep.rows = run_attempts(cfg, catalogs, calibration);
    std::filesystem::create_directories(cfg.output_path);
    rep.attempts_path = (std::filesystem::path(cfg.output_path) / "attempts.csv").string();
    rep.summary_path = (std::filesystem::path(cfg.output_path) / "summary.csv").string();
    write_file(rep.attempts_path, attempts_csv(rep.rows));
    write_file(rep.summary_path, summary_csv(rep.rows));
    return rep;
}

// ---------------------------------------------------------------------------
// Ranking

/// Kinds ordered by mean simulated solve time, fastest first, ties alphabetical. Uses the
/// human rows when any exist, otherwise every row.
inline std::vector<std::pair<std::string, double>> rank_report(std::string_view csv) {
    std::istringstream in{std::string(csv)};
    std::string line;
    if (!std::getline(in, line)) throw Malformed("empty CSV");
    auto split = [](const std::string& l) {
        std::vector<std::string> f;
        std::stringstream ss(l);
        std::string x;
        while (std::getline(ss, x, ',')) f.push_back(x);
        if (!l.empty() && l.back() == ',') f.emplace_back();
        return f;
    };
    const auto header = split(line);
    auto col = [&](const char* name) {
        auto it = std::find(header.begin(), header.end(), name);
        if (it == header.end()) throw Malformed(std::string("CSV lacks column ") + name);
        return static_cast<std::size_t>(it - header.begin());
    };
    const auto kc = col("kind"), pc = col("profile"), tc = col("simulated_solve_time_s");

    struct Acc {
        double sum = 0.0;
        std::size_t n = 0;
    };
    std::map<std::string, Acc> human, all;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto f = split(line);
        if (f.size() != header.size()) throw Malformed("ragged CSV row");
        double t;
        try {
            t = std::stod(f[tc]);
        } catch (const std::exception&) {
            throw Malformed("bad solve time " + f[tc]);
        }
        all[f[kc]].sum += t;
        all[f[kc]].n += 1;
        if (f[pc] == "human") {
            human[f[kc]].sum += t;
            human[f[kc]].n += 1;
        }
    }
    const auto& use = human.empty() ? all : human;
    if (use.empty()) throw Malformed("CSV has no attempt rows");
    std::vector<std::pair<std::string, double>> out;
    for (const auto& [k, a] : use) out.emplace_back(k, a.sum / static_cast<double>(a.n));
    std::stable_sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.second < b.second; });
    return out;
}

inline std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Malformed("cannot open " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace vrcaptcha
