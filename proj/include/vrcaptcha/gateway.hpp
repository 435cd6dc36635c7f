#pragma once

// Challenge-response gateway: single-use sessions with TTL, verification, humanness
// gating, and replay defense. Thread-safe; verification runs outside every lock.

#include <chrono>
#include <cstdlib>
#include <deque>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <set>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "challenge.hpp"
#include "core.hpp"
#include "digest.hpp"
#include "humanness.hpp"
#include "rng.hpp"
#include "trace_io.hpp"
#include "verifier.hpp"

namespace vrcaptcha {

/// Raised when the session table is full of live sessions.
class CapacityExceeded : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct GatewayConfig {
    std::string host = "0.0.0.0";
    int port = 8080;
    double ttl_s = 180.0;
    std::size_t max_sessions = 10000;
    VerifierConfig verifier;
    GenOptions generation;
    std::set<ChallengeKind> humanness_gated = {ChallengeKind::TaskDriven, ChallengeKind::MotionBased};
    std::string catalogs_path;     // empty: built-in catalogs
    std::string calibration_path;  // calibration artifact
    double replay_window_s = 24.0 * 3600.0;
    double near_dup_rms_m = 0.003;
    std::size_t near_dup_history = 1000;
    std::string session_log_path;  // empty: no persistence log
};

namespace detail {

inline std::set<ChallengeKind> parse_kind_list(const std::string& csv) {
    std::set<ChallengeKind> out;
    std::size_t start = 0;
    while (start <= csv.size()) {
        const auto end = csv.find(',', start);
        const auto item = csv.substr(start, end == std::string::npos ? std::string::npos : end - start);
        if (!item.empty()) {
            auto k = parse_kind(item);
            if (!k) throw Malformed("unknown challenge kind " + item);
            out.insert(*k);
        }
        if (end == std::string::npos) break;
        start = end + 1;
    }
    return out;
}

}  // namespace detail

/// Applies a JSON object of overrides on top of cfg.
inline void apply_config_json(GatewayConfig& cfg, const nlohmann::json& j) {
    try {
        if (j.contains("host")) cfg.host = j["host"];
        if (j.contains("port")) cfg.port = j["port"];
        if (j.contains("ttl_s")) cfg.ttl_s = j["ttl_s"];
        if (j.contains("max_sessions")) cfg.max_sessions = j["max_sessions"];
        if (j.contains("rotation_tol_deg")) cfg.verifier.rotation_tol_deg = j["rotation_tol_deg"];
        if (j.contains("puzzle_tol")) cfg.verifier.puzzle_tol = j["puzzle_tol"];
        if (j.contains("lift_m")) cfg.verifier.lift_m = j["lift_m"];
        if (j.contains("grab_radius_m")) cfg.generation.grab_radius = j["grab_radius_m"];
        if (j.contains("text_length")) cfg.generation.text_length = j["text_length"];
        if (j.contains("motion_repetitions")) cfg.generation.motion_repetitions = j["motion_repetitions"];
        if (j.contains("humanness_gated")) {
            cfg.humanness_gated.clear();
            for (const auto& k : j["humanness_gated"]) {
                auto kind = parse_kind(k.get<std::string>());
                if (!kind) throw Malformed("unknown challenge kind " + k.get<std::string>());
                cfg.humanness_gated.insert(*kind);
            }
        }
        if (j.contains("catalogs_path")) cfg.catalogs_path = j["catalogs_path"];
        if (j.contains("calibration_path")) cfg.calibration_path = j["calibration_path"];
        if (j.contains("replay_window_s")) cfg.replay_window_s = j["replay_window_s"];
        if (j.contains("near_dup_rms_m")) cfg.near_dup_rms_m = j["near_dup_rms_m"];
        if (j.contains("near_dup_history")) cfg.near_dup_history = j["near_dup_history"];
        if (j.contains("session_log_path")) cfg.session_log_path = j["session_log_path"];
    } catch (const nlohmann::json::exception& e) {
        throw Malformed(std::string("bad gateway config: ") + e.what());
    }
}

/// VRCAPTCHA_* environment variables override file settings.
inline void apply_env_overrides(GatewayConfig& cfg, const std::function<const char*(const char*)>& getenv_fn) {
    auto num = [&](const char* name, auto& field) {
        if (const char* v = getenv_fn(name)) {
            try {
                field = static_cast<std::decay_t<decltype(field)>>(std::stod(v));
            } catch (const std::exception&) {
                throw Malformed(std::string("bad value for ") + name);
            }
        }
    };
    auto str = [&](const char* name, std::string& field) {
        if (const char* v = getenv_fn(name)) field = v;
    };
    str("VRCAPTCHA_HOST", cfg.host);
    num("VRCAPTCHA_PORT", cfg.port);
    num("VRCAPTCHA_TTL_S", cfg.ttl_s);
    num("VRCAPTCHA_MAX_SESSIONS", cfg.max_sessions);
    num("VRCAPTCHA_ROTATION_TOL_DEG", cfg.verifier.rotation_tol_deg);
    num("VRCAPTCHA_PUZZLE_TOL", cfg.verifier.puzzle_tol);
    num("VRCAPTCHA_LIFT_M", cfg.verifier.lift_m);
    num("VRCAPTCHA_GRAB_RADIUS_M", cfg.generation.grab_radius);
    str("VRCAPTCHA_CATALOGS", cfg.catalogs_path);
    str("VRCAPTCHA_CALIBRATION", cfg.calibration_path);
    str("VRCAPTCHA_SESSION_LOG", cfg.session_log_path);
    if (const char* v = getenv_fn("VRCAPTCHA_HUMANNESS_GATED")) cfg.humanness_gated = detail::parse_kind_list(v);
}

inline GatewayConfig load_gateway_config(const std::string& path) {
    GatewayConfig cfg;
    if (!path.empty()) {
        std::ifstream in(path);
        if (!in) throw Malformed("cannot open config " + path);
        try {
            apply_config_json(cfg, nlohmann::json::parse(in));
        } catch (const nlohmann::json::parse_error& e) {
            throw Malformed(std::string("config is not valid JSON: ") + e.what());
        }
    }
    apply_env_overrides(cfg, [](const char* n) { return std::getenv(n); });
    return cfg;
}

// ---------------------------------------------------------------------------
// Wire formats

inline nlohmann::json to_json(const Verdict& v) {
    nlohmann::json j = {{"pass", v.pass}, {"reason", std::string(to_string(v.reason))}, {"correctness", v.correctness}};
    j["humanness"] = v.humanness ? nlohmann::json{{"score", v.humanness->score}} : nlohmann::json(nullptr);
    return j;
}

/// Parses the tagged answer union. Throws Malformed on any schema violation.
inline Answer answer_from_json(const nlohmann::json& j) {
    try {
        if (!j.is_object()) throw Malformed("answer must be an object");
        const std::string type = j.at("type");
        auto opt_trace = [&]() -> std::optional<InteractionTrace> {
            if (!j.contains("trace") || j["trace"].is_null()) return std::nullopt;
            return trace_from_json(j["trace"]);
        };
        auto number = [&](const char* key) {
            if (!j.at(key).is_number()) throw Malformed(std::string(key) + " must be a number");
            return j[key].get<double>();
        };
        if (type == "Text") {
            if (!j.at("text").is_string()) throw Malformed("text must be a string");
            return TextAnswer{j["text"], opt_trace()};
        }
        if (type == "Rotation") return RotationAnswer{number("user_delta"), opt_trace()};
        if (type == "Puzzle") return PuzzleAnswer{number("final_x"), opt_trace()};
        if (type == "Selection") {
            SelectionAnswer a;
            for (const auto& i : j.at("indices")) {
                if (!i.is_number_integer()) throw Malformed("selection indices must be integers");
                a.indices.push_back(i.get<int>());
            }
            a.trace = opt_trace();
            return a;
        }
        if (type == "Task") return TaskAnswer{trace_from_json(j.at("trace"))};
        if (type == "Motion") return MotionAnswer{trace_from_json(j.at("trace"))};
        throw Malformed("unknown answer type " + type);
    } catch (const nlohmann::json::exception& e) {
        throw Malformed(std::string("bad answer: ") + e.what());
    }
}

inline nlohmann::json to_json(const Answer& a) {
    auto with_trace = [](nlohmann::json j, const std::optional<InteractionTrace>& t) {
        if (t) j["trace"] = nlohmann::json::parse(serialize_trace(*t));
        return j;
    };
    return std::visit(
        [&](const auto& x) -> nlohmann::json {
            using T = std::decay_t<decltype(x)>;
            if constexpr (std::is_same_v<T, TextAnswer>)
                return with_trace({{"type", "Text"}, {"text", x.text}}, x.trace);
            else if constexpr (std::is_same_v<T, RotationAnswer>)
                return with_trace({{"type", "Rotation"}, {"user_delta", x.user_delta}}, x.trace);
            else if constexpr (std::is_same_v<T, PuzzleAnswer>)
                return with_trace({{"type", "Puzzle"}, {"final_x", x.final_x}}, x.trace);
            else if constexpr (std::is_same_v<T, SelectionAnswer>)
                return with_trace({{"type", "Selection"}, {"indices", x.indices}}, x.trace);
            else if constexpr (std::is_same_v<T, TaskAnswer>)
                return {{"type", "Task"}, {"trace", nlohmann::json::parse(serialize_trace(x.trace))}};
            else
                return {{"type", "Motion"}, {"trace", nlohmann::json::parse(serialize_trace(x.trace))}};
        },
        a);
}

// ---------------------------------------------------------------------------
// Replay defense

/// SHA-256 of the trace with positions quantized to 1 mm and times to 1 ms.
inline std::string trace_fingerprint(const InteractionTrace& trace) {
    Sha256 h;
    auto q = [](double v) { return static_cast<std::int64_t>(std::llround(v * 1000.0)); };
    for (const auto& s : trace.samples) {
        h.update_i64(q(s.t));
        for (const Vec3* p : {&s.head, &s.left_hand, &s.right_hand}) h.update_i64(q(p->x)).update_i64(q(p->y)).update_i64(q(p->z));
        h.update_i64((s.trigger_left ? 1 : 0) | (s.trigger_right ? 2 : 0));
    }
    return h.hex();
}

/// Per-coordinate RMS position difference between traces sampled at the same instants
/// (within 1 ms); nullopt when the clocks differ.
inline std::optional<double> aligned_rms_distance(const InteractionTrace& a, const InteractionTrace& b) {
    if (a.samples.size() != b.samples.size()) return std::nullopt;
    double sum = 0.0;
    for (std::size_t i = 0; i < a.samples.size(); ++i) {
        const auto& x = a.samples[i];
        const auto& y = b.samples[i];
        if (std::abs(x.t - y.t) > 1e-3) return std::nullopt;
        for (auto [p, r] : {std::pair{&x.head, &y.head}, std::pair{&x.left_hand, &y.left_hand},
                            std::pair{&x.right_hand, &y.right_hand}}) {
            const Vec3 d = *p - *r;
            sum += d.x * d.x + d.y * d.y + d.z * d.z;
        }
    }
    return std::sqrt(sum / (9.0 * static_cast<double>(a.samples.size())));
}

class ReplayGuard {
public:
    ReplayGuard(double window_s, double near_dup_rms_m, std::size_t history)
        : window_s_(window_s), near_dup_rms_m_(near_dup_rms_m), history_(history) {}

    /// Records the fingerprint; returns false when it was already seen inside the window.
    bool check_and_record(ChallengeKind kind, const std::string& digest, double now) {
        std::lock_guard lock(mu_);
        prune_locked(now);
        auto& seen = seen_[kind];
        if (seen.count(digest)) return false;
        seen.emplace(digest, now);
        order_.push_back({now, kind, digest});
        return true;
    }

    /// Near-duplicate check against recently accepted traces; stores the trace when
    /// `accepted` and it is not a near duplicate. Returns true for a near duplicate.
    bool near_duplicate(ChallengeKind kind, const InteractionTrace& trace, bool accepted) {
        std::lock_guard lock(mu_);
        auto& store = accepted_[kind];
        for (const auto& prev : store) {
            if (auto d = aligned_rms_distance(*prev, trace); d && *d < near_dup_rms_m_) return true;
        }
        if (accepted) {
            store.push_back(std::make_shared<const InteractionTrace>(trace));
            if (store.size() > history_) store.pop_front();
        }
        return false;
    }

    void prune(double now) {
        std::lock_guard lock(mu_);
        prune_locked(now);
    }

private:
    struct Entry {
        double at;
        ChallengeKind kind;
        std::string digest;
    };

    void prune_locked(double now) {
        while (!order_.empty() && now - order_.front().at > window_s_) {
            seen_[order_.front().kind].erase(order_.front().digest);
            order_.pop_front();
        }
    }

    double window_s_;
    double near_dup_rms_m_;
    std::size_t history_;
    std::mutex mu_;
    std::map<ChallengeKind, std::unordered_map<std::string, double>> seen_;
    std::deque<Entry> order_;
    std::map<ChallengeKind, std::deque<std::shared_ptr<const InteractionTrace>>> accepted_;
};

// ---------------------------------------------------------------------------
// Sessions

enum class SessionState { pending, consumed, expired };

struct SessionRecord {
    std::string token;
    std::shared_ptr<const ChallengeSpec> challenge;
    double issued_at = 0.0;
    double ttl_s = 180.0;
    SessionState state = SessionState::pending;
};

struct IssuedChallenge {
    std::string token;
    std::string challenge_id;
    ChallengeKind kind = ChallengeKind::Text;
    nlohmann::json presentation;

    nlohmann::json to_json() const {
        return {{"token", token},
                {"challenge_id", challenge_id},
                {"kind", std::string(vrcaptcha::to_string(kind))},
                {"presentation", presentation}};
    }
};

using Clock = std::function<double()>;

inline double wall_clock_seconds() {
    using namespace std::chrono;
    return duration<double>(system_clock::now().time_since_epoch()).count();
}

class Gateway {
public:
    /// `seed` fixes kind selection and challenge generation (harness use); otherwise both
    /// are drawn from the OS entropy source.
    Gateway(GatewayConfig cfg, Catalogs catalogs, CalibrationArtifact calibration, Clock clock = wall_clock_seconds,
            std::optional<std::uint64_t> seed = std::nullopt)
        : cfg_(std::move(cfg)),
          catalogs_(std::move(catalogs)),
          calibration_(std::move(calibration)),
          clock_(std::move(clock)),
          rng_(seed ? *seed : std::random_device{}() ^ (std::uint64_t{std::random_device{}()} << 32)),
          replay_(cfg_.replay_window_s, cfg_.near_dup_rms_m, cfg_.near_dup_history) {
        if (!(calibration_.motion_theta > 0.0)) throw Malformed("calibration artifact has no motion threshold");
        cfg_.verifier.motion_theta = calibration_.motion_theta;
        for (auto k : cfg_.humanness_gated)
            if (!calibration_.models.count(k))
                throw Malformed("humanness gating enabled for " + std::string(to_string(k)) +
                                " but the calibration artifact has no model for it");
        if (!cfg_.session_log_path.empty()) {
            log_.open(cfg_.session_log_path, std::ios::app);
            if (!log_) throw Malformed("cannot open session log " + cfg_.session_log_path);
        }
    }

    const GatewayConfig& config() const { return cfg_; }
    const CalibrationArtifact& calibration() const { return calibration_; }

    /// Issues a challenge. Without a kind one is drawn uniformly; without a seed the
    /// gateway's own stream supplies it.
    IssuedChallenge issue(std::optional<ChallengeKind> kind = std::nullopt,
                          std::optional<std::uint64_t> seed = std::nullopt) {
        const double now = clock_();
        std::uint64_t gen_seed;
        {
            std::lock_guard lock(rng_mu_);
            if (!kind) kind = kAllKinds[rng_.below(kAllKinds.size())];
            gen_seed = seed ? *seed : rng_.next_u64();
        }
        auto spec = std::make_shared<ChallengeSpec>(generate(*kind, gen_seed, catalogs_, cfg_.generation));

        IssuedChallenge out;
        {
            std::lock_guard lock(sessions_mu_);
            make_room_locked(now);
            do out.token = random_hex(16);
            while (sessions_.count(out.token));
            spec->challenge_id = "ch_" + random_hex(8);
            sessions_.emplace(out.token, SessionRecord{out.token, spec, now, cfg_.ttl_s, SessionState::pending});
            order_.push_back(out.token);
        }
        out.challenge_id = spec->challenge_id;
        out.kind = *kind;
        out.presentation = presentation_json(*spec);
        log_event({{"event", "issue"},
                   {"token", out.token},
                   {"challenge_id", out.challenge_id},
                   {"kind", std::string(to_string(*kind))},
                   {"at", now}});
        return out;
    }

    /// Full verification pipeline. `challenge_id`, when non-empty, must match the token.
    Verdict submit(const std::string& token, const std::string& challenge_id, const Answer& answer) {
        return submit_impl(token, challenge_id, &answer);
    }

    /// For requests whose answer payload could not be parsed: consumes the token.
    Verdict submit_malformed(const std::string& token, const std::string& challenge_id) {
        return submit_impl(token, challenge_id, nullptr);
    }

    /// Marks stale pending sessions expired; returns how many changed state.
    std::size_t sweep_expired(double now) {
        std::lock_guard lock(sessions_mu_);
        std::size_t n = 0;
        for (auto& [tok, rec] : sessions_) {
            if (rec.state == SessionState::pending && now - rec.issued_at > rec.ttl_s) {
                rec.state = SessionState::expired;
                ++n;
            }
        }
        replay_.prune(now);
        return n;
    }
    std::size_t sweep_expired() { return sweep_expired(clock_()); }

    std::size_t live_sessions() const {
        std::lock_guard lock(sessions_mu_);
        const double now = clock_();
        std::size_t n = 0;
        for (const auto& [tok, rec] : sessions_)
            n += rec.state == SessionState::pending && now - rec.issued_at <= rec.ttl_s ? 1 : 0;
        return n;
    }

    std::size_t stored_sessions() const {
        std::lock_guard lock(sessions_mu_);
        return sessions_.size();
    }

    std::optional<SessionState> state_of(const std::string& token) const {
        std::lock_guard lock(sessions_mu_);
        auto it = sessions_.find(token);
        if (it == sessions_.end()) return std::nullopt;
        return it->second.state;
    }

    /// In-process access to the full challenge (secret included) for simulators and tests.
    /// Not reachable over the wire.
    std::shared_ptr<const ChallengeSpec> inspect(const std::string& token) const {
        std::lock_guard lock(sessions_mu_);
        auto it = sessions_.find(token);
        return it == sessions_.end() ? nullptr : it->second.challenge;
    }

    /// Humanness score for a trace under the kind's calibrated model, if gating applies.
    std::optional<HumannessScore> score_humanness(ChallengeKind kind, const InteractionTrace& trace) const {
        auto it = calibration_.models.find(kind);
        if (it == calibration_.models.end()) return std::nullopt;
        try {
            return humanness_score(extract_features(trace), it->second);
        } catch (const Malformed&) {
            return std::nullopt;
        }
    }

private:
    Verdict submit_impl(const std::string& token, const std::string& challenge_id, const Answer* answer) {
        const double now = clock_();
        std::shared_ptr<const ChallengeSpec> spec;
        {
            std::lock_guard lock(sessions_mu_);
            auto it = sessions_.find(token);
            if (it == sessions_.end()) return Verdict::fail(Reason::malformed);
            auto& rec = it->second;
            if (!challenge_id.empty() && challenge_id != rec.challenge->challenge_id)
                return Verdict::fail(Reason::malformed);
            if (rec.state == SessionState::consumed) return Verdict::fail(Reason::replay);
            if (rec.state == SessionState::expired) return Verdict::fail(Reason::expired);
            if (now - rec.issued_at > rec.ttl_s) {
                rec.state = SessionState::expired;
                return Verdict::fail(Reason::expired);
            }
            rec.state = SessionState::consumed;
            spec = rec.challenge;
        }
        log_event({{"event", "consume"}, {"token", token}, {"at", now}});
        if (!answer) return Verdict::fail(Reason::malformed);

        const InteractionTrace* trace = answer_trace(*answer);
        if (trace && is_valid(*trace) && !replay_.check_and_record(spec->kind, trace_fingerprint(*trace), now))
            return Verdict::fail(Reason::replay);

        Verdict v = verify(*spec, *answer, cfg_.verifier);
        if (v.reason == Reason::malformed) return v;

        if (cfg_.humanness_gated.count(spec->kind)) {
            std::optional<HumannessScore> hs;
            if (trace) hs = score_humanness(spec->kind, *trace);
            v.humanness = hs;
            const double threshold = calibration_.models.at(spec->kind).threshold;
            if (v.pass && (!hs || hs->score < threshold)) {
                v.pass = false;
                v.reason = Reason::humanness_reject;
            }
        }

        if (trace && replay_.near_duplicate(spec->kind, *trace, v.pass)) {
            v.pass = false;
            v.reason = Reason::replay;
        }
        return v;
    }

    void make_room_locked(double now) {
        for (auto& [tok, rec] : sessions_)
            if (rec.state == SessionState::pending && now - rec.issued_at > rec.ttl_s) rec.state = SessionState::expired;
        if (sessions_.size() < cfg_.max_sessions) return;
        // oldest expired first, then oldest consumed
        for (SessionState victim : {SessionState::expired, SessionState::consumed}) {
            for (auto it = order_.begin(); it != order_.end(); ++it) {
                auto rec = sessions_.find(*it);
                if (rec != sessions_.end() && rec->second.state == victim) {
                    sessions_.erase(rec);
                    order_.erase(it);
                    return;
                }
            }
        }
        throw CapacityExceeded("session table full");
    }

    void log_event(const nlohmann::json& j) {
        if (!log_.is_open()) return;
        std::lock_guard lock(log_mu_);
        log_ << j.dump() << '\n';
        log_.flush();
    }

    GatewayConfig cfg_;
    Catalogs catalogs_;
    CalibrationArtifact calibration_;
    Clock clock_;

    std::mutex rng_mu_;
    Rng rng_;

    mutable std::mutex sessions_mu_;
    std::unordered_map<std::string, SessionRecord> sessions_;
    std::deque<std::string> order_;

    ReplayGuard replay_;

    std::mutex log_mu_;
    std::ofstream log_;
};

}  // namespace vrcaptcha
