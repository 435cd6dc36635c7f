#pragma once

// Synthetic solvers: a minimum-jerk human model with tremor and timing noise, a
// geometrically perfect bot, and a replay bot. All output is a pure function of the seed.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>
#include <ostream>
#include <string>
#include <string_view>

#include <json.hpp>

#include "challenge.hpp"
#include "core.hpp"
#include "min_jerk.hpp"
#include "rng.hpp"
#include "trace_io.hpp"
#include "verifier.hpp"

namespace vrcaptcha {

enum class AgentKind { human, naive_bot, replay_bot };

inline std::string_view to_string(AgentKind k) {
    switch (k) {
        case AgentKind::human: return "human";
        case AgentKind::naive_bot: return "naive_bot";
        case AgentKind::replay_bot: return "replay_bot";
    }
    return "?";
}

inline std::optional<AgentKind> parse_agent_kind(std::string_view s) {
    for (auto k : {AgentKind::human, AgentKind::naive_bot, AgentKind::replay_bot})
        if (to_string(k) == s) return k;
    return std::nullopt;
}

struct Range {
    double lo = 0.0;
    double hi = 0.0;
    double draw(Rng& rng) const { return rng.uniform(lo, hi); }
};

struct AgentProfile {
    AgentKind kind = AgentKind::human;

    Range reaction_delay_s{0.3, 0.7};
    double noise_sigma_m = 0.01;  // reach and release endpoint error, per axis
    Range tempo_scale{0.9, 1.2};  // motion follow duration multiplier
    double tremor_hz = 9.0;
    double tremor_amp = 0.0005;
    double sensor_noise_m = 0.0003;
    double sample_rate_hz = 90.0;
    double dt_jitter_cv = 0.05;
    Range motion_lag_s{0.10, 0.20};
    double amplitude_noise = 0.05;  // +-5% of each hand's excursion
    double time_warp = 0.10;        // +-10% non-uniform tempo within a follow

    // traditional kinds
    double typo_rate = 0.002;
    double rotation_sigma_deg = 3.0;
    double puzzle_sigma = 0.006;
    double selection_slip = 0.002;
    double keypress_s = 0.9;

    double replay_jitter_m = 0.001;

    static AgentProfile of(AgentKind k) {
        AgentProfile p;
        p.kind = k;
        return p;
    }
};

inline void validate(const AgentProfile& p) {
    auto ordered = [](const Range& r) { return r.lo >= 0.0 && r.hi >= r.lo; };
    if (!ordered(p.reaction_delay_s) || !ordered(p.tempo_scale) || !ordered(p.motion_lag_s))
        throw Malformed("profile ranges must be non-negative and ordered");
    if (p.tempo_scale.lo <= 0.0) throw Malformed("tempo scale must be positive");
    for (double v : {p.noise_sigma_m, p.tremor_hz, p.tremor_amp, p.sensor_noise_m, p.dt_jitter_cv, p.amplitude_noise,
                     p.time_warp, p.typo_rate, p.rotation_sigma_deg, p.puzzle_sigma, p.selection_slip, p.keypress_s,
                     p.replay_jitter_m})
        if (!(v >= 0.0) || !std::isfinite(v)) throw Malformed("profile magnitudes must be finite and >= 0");
    if (!(p.sample_rate_hz > 0.0)) throw Malformed("sample rate must be positive");
    if (p.time_warp >= 1.0) throw Malformed("time warp must be < 1");
}

inline nlohmann::json to_json(const AgentProfile& p) {
    return {{"kind", std::string(to_string(p.kind))},
            {"reaction_delay_s", {p.reaction_delay_s.lo, p.reaction_delay_s.hi}},
            {"noise_sigma_m", p.noise_sigma_m},
            {"tempo_scale", {p.tempo_scale.lo, p.tempo_scale.hi}},
            {"tremor_hz", p.tremor_hz},
            {"tremor_amp", p.tremor_amp},
            {"sensor_noise_m", p.sensor_noise_m},
            {"sample_rate_hz", p.sample_rate_hz},
            {"dt_jitter_cv", p.dt_jitter_cv},
            {"motion_lag_s", {p.motion_lag_s.lo, p.motion_lag_s.hi}},
            {"amplitude_noise", p.amplitude_noise},
            {"time_warp", p.time_warp},
            {"typo_rate", p.typo_rate},
            {"rotation_sigma_deg", p.rotation_sigma_deg},
            {"puzzle_sigma", p.puzzle_sigma},
            {"selection_slip", p.selection_slip},
            {"keypress_s", p.keypress_s},
            {"replay_jitter_m", p.replay_jitter_m}};
}

/// Accepts a bare kind name or an object overriding any subset of the defaults.
inline AgentProfile profile_from_json(const nlohmann::json& j) {
    auto kind_of = [](const std::string& s) {
        auto k = parse_agent_kind(s);
        if (!k) throw Malformed("unknown agent profile " + s);
        return *k;
    };
    if (j.is_string()) return AgentProfile::of(kind_of(j.get<std::string>()));
    AgentProfile p = AgentProfile::of(kind_of(j.at("kind").get<std::string>()));
    auto range = [&](const char* key, Range& r) {
        if (j.contains(key)) r = {j[key].at(0).get<double>(), j[key].at(1).get<double>()};
    };
    auto num = [&](const char* key, double& v) {
        if (j.contains(key)) v = j[key].get<double>();
    };
    range("reaction_delay_s", p.reaction_delay_s);
    range("tempo_scale", p.tempo_scale);
    range("motion_lag_s", p.motion_lag_s);
    num("noise_sigma_m", p.noise_sigma_m);
    num("tremor_hz", p.tremor_hz);
    num("tremor_amp", p.tremor_amp);
    num("sensor_noise_m", p.sensor_noise_m);
    num("sample_rate_hz", p.sample_rate_hz);
    num("dt_jitter_cv", p.dt_jitter_cv);
    num("amplitude_noise", p.amplitude_noise);
    num("time_warp", p.time_warp);
    num("typo_rate", p.typo_rate);
    num("rotation_sigma_deg", p.rotation_sigma_deg);
    num("puzzle_sigma", p.puzzle_sigma);
    num("selection_slip", p.selection_slip);
    num("keypress_s", p.keypress_s);
    num("replay_jitter_m", p.replay_jitter_m);
    validate(p);
    return p;
}

// ---------------------------------------------------------------------------

namespace detail {

/// Irregular sample clock: nominal 1/rate with multiplicative Gaussian jitter.
inline std::vector<double> jittered_times(double duration, const AgentProfile& p, Rng& rng) {
    std::vector<double> ts{0.0};
    const double nominal = 1.0 / p.sample_rate_hz;
    while (ts.back() < duration) {
        const double f = std::clamp(1.0 + p.dt_jitter_cv * rng.normal(), 0.5, 1.5);
        ts.push_back(ts.back() + nominal * f);
    }
    return ts;
}

/// Physiological tremor (one sinusoid per axis) plus tracking noise.
class Tremor {
public:
    Tremor(const AgentProfile& p, Rng& rng) : amp_(p.tremor_amp), noise_(p.sensor_noise_m) {
        freq_ = p.tremor_hz * rng.uniform(0.9, 1.1);
        for (auto& ph : phase_) ph = rng.uniform(0.0, 2.0 * std::numbers::pi);
    }
    Vec3 at(double t, Rng& rng) const {
        const double w = 2.0 * std::numbers::pi * freq_ * t;
        return {amp_ * std::sin(w + phase_[0]) + rng.normal(0.0, noise_),
                amp_ * std::sin(w + phase_[1]) + rng.normal(0.0, noise_),
                amp_ * std::sin(w + phase_[2]) + rng.normal(0.0, noise_)};
    }

private:
    double amp_, noise_, freq_ = 9.0;
    double phase_[3] = {0, 0, 0};
};

inline Vec3 gaussian_vec(Rng& rng, double sigma) { return {rng.normal(0, sigma), rng.normal(0, sigma), rng.normal(0, sigma)}; }

/// Slow postural sway of the head.
inline Vec3 head_sway(double t, double phase) {
    const double w = 2.0 * std::numbers::pi * 0.3 * t + phase;
    return {0.004 * std::sin(w), 0.002 * std::sin(1.7 * w), 0.004 * std::cos(w)};
}

}  // namespace detail

/// Human grab-and-place: react, reach, grasp, carry along a raised arc, release, hold.
inline InteractionTrace sim_human_task(const TaskChallenge& spec, const AgentProfile& profile, std::uint64_t seed) {
    validate(profile);
    Rng rng(seed);
    const auto& pres = spec.presentation;

    const Vec3 head{rng.uniform(-0.05, 0.05), rng.uniform(1.55, 1.70), rng.uniform(-0.05, 0.05)};
    const Vec3 rest_r = head + Vec3{0.20, -0.75, 0.05};
    const Vec3 rest_l = head + Vec3{-0.20, -0.75, 0.05};
    const double sway_phase = rng.uniform(0.0, 2.0 * std::numbers::pi);

    const double reaction = profile.reaction_delay_s.draw(rng);
    const Vec3 grasp = pres.object_spawn + detail::gaussian_vec(rng, profile.noise_sigma_m);
    const double reach_T = 0.45 + 0.5 * distance(rest_r, grasp) + rng.uniform(0.0, 0.15);
    const double dwell_press = rng.uniform(0.08, 0.20);
    const Vec3 drop = pres.target_center + detail::gaussian_vec(rng, profile.noise_sigma_m);
    const double carry_T = 0.5 + 0.6 * distance(grasp, drop) + rng.uniform(0.0, 0.2);
    const double apex = std::max(pres.object_spawn.y, std::max(grasp.y, drop.y)) + rng.uniform(0.10, 0.20);
    const double bump = apex - (grasp.y + drop.y) / 2.0;
    const double dwell_release = rng.uniform(0.10, 0.25);
    const double hold = rng.uniform(0.2, 0.5);

    const double t_reach = reaction;
    const double t_press = t_reach + reach_T + dwell_press;
    const double t_carry = t_press;
    const double t_drop = t_carry + carry_T;
    const double t_release = t_drop + dwell_release;
    const double t_end = t_release + hold;

    auto right_at = [&](double t) -> Vec3 {
        if (t < t_reach) return rest_r;
        if (t < t_reach + reach_T) return min_jerk(rest_r, grasp, reach_T, t - t_reach);
        if (t < t_carry) return grasp;
        if (t < t_drop) {
            const double s = min_jerk_profile((t - t_carry) / carry_T);
            Vec3 p = grasp + (drop - grasp) * s;
            p.y += bump * std::sin(std::numbers::pi * s);
            return p;
        }
        return drop;
    };

    const detail::Tremor tremor_r(profile, rng), tremor_l(profile, rng);
    InteractionTrace trace;
    trace.declared_rate_hz = profile.sample_rate_hz;
    for (double t : detail::jittered_times(t_end, profile, rng)) {
        PoseSample s;
        s.t = t;
        s.head = head + detail::head_sway(t, sway_phase);
        s.right_hand = right_at(t) + tremor_r.at(t, rng);
        s.left_hand = rest_l + tremor_l.at(t, rng);
        s.trigger_right = t >= t_press && t < t_release;
        trace.samples.push_back(s);
    }
    return trace;
}

/// Human follow of an avatar's raise: reaction lag, body size and placement, per-hand
/// amplitude error, tempo change, smooth time warp, tremor, then a short hold.
inline InteractionTrace sim_human_motion(const MotionTemplate& tpl, int repetitions, const AgentProfile& profile,
                                         std::uint64_t seed) {
    validate(profile);
    Rng rng(seed);
    const auto kfs = repeated_keyframes(tpl, repetitions);
    const double nominal = kfs.back().t;

    const double body_scale = rng.uniform(0.9, 1.1);
    const Vec3 offset{rng.uniform(-0.3, 0.3), 0.0, rng.uniform(-0.3, 0.3)};
    const Vec3 head_base = offset + Vec3{0.0, kTemplateHead.y * body_scale, 0.0};
    const double sway_phase = rng.uniform(0.0, 2.0 * std::numbers::pi);

    Vec3 gain_l, gain_r;
    for (double* g : {&gain_l.x, &gain_l.y, &gain_l.z, &gain_r.x, &gain_r.y, &gain_r.z})
        *g = 1.0 + rng.uniform(-profile.amplitude_noise, profile.amplitude_noise);

    const double lag = profile.motion_lag_s.draw(rng);
    const double perform = nominal * profile.tempo_scale.draw(rng);
    const double warp = rng.uniform(-profile.time_warp, profile.time_warp);
    const double hold = rng.uniform(0.2, 0.4);
    const double t_end = lag + perform + hold;

    auto body = [&](const Vec3& tpl_pos, const Vec3& rest, const Vec3& gain) {
        const Vec3 d = tpl_pos - rest;
        const Vec3 scaled = rest + Vec3{d.x * gain.x, d.y * gain.y, d.z * gain.z};
        return head_base + (scaled - kTemplateHead) * body_scale;
    };

    const detail::Tremor tremor_r(profile, rng), tremor_l(profile, rng);
    InteractionTrace trace;
    trace.declared_rate_hz = profile.sample_rate_hz;
    for (double t : detail::jittered_times(t_end, profile, rng)) {
        const double tau = std::clamp((t - lag) / perform, 0.0, 1.0);
        const double phase = tau + warp * std::sin(2.0 * std::numbers::pi * tau) / (2.0 * std::numbers::pi);
        auto [l, r] = keyframe_pose(kfs, phase * nominal);
        PoseSample s;
        s.t = t;
        s.head = head_base + detail::head_sway(t, sway_phase);
        s.left_hand = body(l, kRestLeft, gain_l) + tremor_l.at(t, rng);
        s.right_hand = body(r, kRestRight, gain_r) + tremor_r.at(t, rng);
        trace.samples.push_back(s);
    }
    return trace;
}

inline constexpr double kBotRateHz = 50.0;

/// Geometrically perfect task solution: the hand starts on the object with the trigger
/// held and travels at constant speed, on an exact 50 Hz clock, to a release point inside
/// the target that is high enough to count as a lift.
inline InteractionTrace sim_bot_naive(const TaskChallenge& spec, std::uint64_t /*seed*/ = 0, double lift_m = 0.05) {
    const auto& p = spec.presentation;
    const double need_y = p.object_spawn.y + lift_m + 0.01;
    const double dy = std::max(0.0, need_y - p.target_center.y);

    std::vector<Vec3> path{p.object_spawn};
    if (dy < p.target_radius * 0.9) {
        path.push_back(p.target_center + Vec3{0.0, dy, 0.0});
    } else {
        path.push_back(p.object_spawn + Vec3{0.0, lift_m + 0.01, 0.0});
        path.push_back(p.target_center);
    }
    constexpr double kSpeed = 0.6;  // m/s
    double total = 0.0;
    for (std::size_t i = 1; i < path.size(); ++i) total += distance(path[i], path[i - 1]);
    const auto n = static_cast<std::size_t>(std::max(2.0, std::ceil(total / kSpeed * kBotRateHz)));

    auto along = [&](double s) {  // arc-length parameter
        for (std::size_t i = 1; i < path.size(); ++i) {
            const double seg = distance(path[i], path[i - 1]);
            if (s <= seg || i + 1 == path.size()) return lerp(path[i - 1], path[i], seg > 0 ? std::min(s / seg, 1.0) : 1.0);
            s -= seg;
        }
        return path.back();
    };

    InteractionTrace trace;
    trace.declared_rate_hz = kBotRateHz;
    for (std::size_t k = 0; k <= n; ++k) {
        PoseSample s;
        s.t = static_cast<double>(k) / kBotRateHz;
        s.head = kTemplateHead;
        s.left_hand = kRestLeft;
        s.right_hand = along(total * static_cast<double>(k) / static_cast<double>(n));
        s.trigger_right = k < n;
        trace.samples.push_back(s);
    }
    return trace;
}

/// Piecewise-linear, constant-speed replay of the template keyframes on an exact 50 Hz clock.
inline InteractionTrace sim_bot_naive(const MotionTemplate& tpl, int repetitions = 1, std::uint64_t /*seed*/ = 0) {
    const auto kfs = repeated_keyframes(tpl, repetitions);
    const double total = kfs.back().t;
    const auto n = static_cast<std::size_t>(std::llround(total * kBotRateHz));
    InteractionTrace trace;
    trace.declared_rate_hz = kBotRateHz;
    std::size_t seg = 0;
    for (std::size_t k = 0; k <= n; ++k) {
        const double t = k == n ? total : static_cast<double>(k) / kBotRateHz;
        while (seg + 2 < kfs.size() && kfs[seg + 1].t <= t) ++seg;
        const auto& a = kfs[seg];
        const auto& b = kfs[seg + 1];
        const double alpha = std::clamp((t - a.t) / (b.t - a.t), 0.0, 1.0);
        trace.samples.push_back({t, kTemplateHead, lerp(a.left_hand, b.left_hand, alpha),
                                 lerp(a.right_hand, b.right_hand, alpha), false, false});
    }
    return trace;
}

/// Copy of a recorded trace with i.i.d. Gaussian position noise; timing and triggers kept.
inline InteractionTrace sim_bot_replay(const InteractionTrace& recorded, double jitter_sigma, std::uint64_t seed) {
    validate(recorded);
    InteractionTrace out = recorded;
    if (jitter_sigma == 0.0) return out;
    Rng rng(seed);
    for (auto& s : out.samples) {
        s.head += detail::gaussian_vec(rng, jitter_sigma);
        s.left_hand += detail::gaussian_vec(rng, jitter_sigma);
        s.right_hand += detail::gaussian_vec(rng, jitter_sigma);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Attempts at any kind, with a simulated solve time.

struct SimulatedAttempt {
    Answer answer;
    double solve_time_s = 0.0;
};

namespace detail {

/// Fitts-style controller pointing time to a UI element.
inline double pointing_time(Rng& rng) { return 0.25 + 0.12 * std::log2(1.0 + rng.uniform(3.0, 12.0)); }

inline SimulatedAttempt human_traditional(const ChallengeSpec& spec, const AgentProfile& p, Rng& rng) {
    const double reaction = p.reaction_delay_s.draw(rng);
    switch (spec.kind) {
        case ChallengeKind::Text: {
            const auto& c = std::get<TextChallenge>(spec.body);
            std::string typed;
            double t = reaction + pointing_time(rng);  // open the input field
            for (char ch : c.secret.expected) {
                if (rng.uniform() < p.typo_rate) {
                    char wrong;
                    do wrong = kTextAlphabet[rng.below(kTextAlphabet.size())];
                    while (wrong == ch);
                    ch = wrong;
                }
                typed += ch;
                t += p.keypress_s + pointing_time(rng);
            }
            t += pointing_time(rng);  // verify button
            return {TextAnswer{typed, {}}, t};
        }
        case ChallengeKind::ImageRotated: {
            const auto& c = std::get<RotationChallenge>(spec.body);
            const double delta = -c.secret.applied_rotation + rng.normal(0.0, p.rotation_sigma_deg);
            const double t = reaction + pointing_time(rng) + 0.4 + 1.2 * std::abs(c.secret.applied_rotation) / 180.0 +
                             rng.uniform(0.3, 0.8);
            return {RotationAnswer{delta, {}}, t};
        }
        case ChallengeKind::ImagePuzzled: {
            const auto& c = std::get<PuzzleChallenge>(spec.body);
            const double x = std::clamp(c.secret.gap_x + rng.normal(0.0, p.puzzle_sigma), 0.0, 1.0);
            const double t = reaction + pointing_time(rng) + 0.4 + 1.0 * c.secret.gap_x + rng.uniform(0.3, 0.8);
            return {PuzzleAnswer{x, {}}, t};
        }
        case ChallengeKind::ImageSelected: {
            const auto& c = std::get<SelectionChallenge>(spec.body);
            std::vector<int> chosen;
            double t = reaction;
            for (int i = 0; i < 9; ++i) {
                t += rng.uniform(0.20, 0.35);  // inspect the tile
                bool pick = c.secret.truth.count(i) > 0;
                if (rng.uniform() < p.selection_slip) pick = !pick;
                if (pick) {
                    chosen.push_back(i);
                    t += pointing_time(rng);
                }
            }
            t += pointing_time(rng);
            return {SelectionAnswer{chosen, {}}, t};
        }
        default: break;
    }
    throw Malformed("not a traditional challenge kind");
}

/// Perfect perception, instant answer.
inline SimulatedAttempt bot_traditional(const ChallengeSpec& spec) {
    constexpr double kBotThink = 0.1;
    switch (spec.kind) {
        case ChallengeKind::Text:
            return {TextAnswer{std::get<TextChallenge>(spec.body).secret.expected, {}}, kBotThink};
        case ChallengeKind::ImageRotated:
            return {RotationAnswer{-std::get<RotationChallenge>(spec.body).secret.applied_rotation, {}}, kBotThink};
        case ChallengeKind::ImagePuzzled:
            return {PuzzleAnswer{std::get<PuzzleChallenge>(spec.body).secret.gap_x, {}}, kBotThink};
        case ChallengeKind::ImageSelected: {
            const auto& truth = std::get<SelectionChallenge>(spec.body).secret.truth;
            return {SelectionAnswer{{truth.begin(), truth.end()}, {}}, kBotThink};
        }
        default: break;
    }
    throw Malformed("not a traditional challenge kind");
}

}  // namespace detail

/// One solve by a human or naive bot. Replay bots need a recorded answer and are driven by
/// the caller through sim_bot_replay.
inline SimulatedAttempt simulate_attempt(const ChallengeSpec& spec, const AgentProfile& profile, std::uint64_t seed) {
    Rng rng(seed);
    const bool human = profile.kind == AgentKind::human;
    if (spec.kind == ChallengeKind::TaskDriven) {
        const auto& c = std::get<TaskChallenge>(spec.body);
        auto trace = human ? sim_human_task(c, profile, seed) : sim_bot_naive(c, seed);
        const double t = trace.duration();
        return {TaskAnswer{std::move(trace)}, t};
    }
    if (spec.kind == ChallengeKind::MotionBased) {
        const auto& c = std::get<MotionChallenge>(spec.body);
        const auto& tpl = find_template(c.presentation.template_id);
        auto trace = human ? sim_human_motion(tpl, c.presentation.repetitions, profile, seed)
                           : sim_bot_naive(tpl, c.presentation.repetitions, seed);
        const double t = trace.duration();
        return {MotionAnswer{std::move(trace)}, t};
    }
    return human ? detail::human_traditional(spec, profile, rng) : detail::bot_traditional(spec);
}

/// One corpus record: {"kind","profile","seed","trace":[...]} on a single line.
inline void write_corpus_record(std::ostream& out, ChallengeKind kind, AgentKind profile, std::uint64_t seed,
                                const InteractionTrace& trace) {
    out << "{\"kind\":\"" << to_string(kind) << "\",\"profile\":\"" << to_string(profile) << "\",\"seed\":" << seed
        << ",\"trace\":" << serialize_trace(trace) << "}\n";
}

}  // namespace vrcaptcha
