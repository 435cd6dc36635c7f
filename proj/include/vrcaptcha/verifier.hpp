#pragma once

// Pure answer verification for every challenge kind.

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <limits>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "challenge.hpp"
#include "core.hpp"

namespace vrcaptcha {

// ---------------------------------------------------------------------------
// Answers

struct TextAnswer {
    std::string text;
    std::optional<InteractionTrace> trace;
};
struct RotationAnswer {
    double user_delta = 0.0;
    std::optional<InteractionTrace> trace;
};
struct PuzzleAnswer {
    double final_x = 0.0;
    std::optional<InteractionTrace> trace;
};
struct SelectionAnswer {
    std::vector<int> indices;
    std::optional<InteractionTrace> trace;
};
struct TaskAnswer {
    InteractionTrace trace;
};
struct MotionAnswer {
    InteractionTrace trace;
};

using Answer = std::variant<TextAnswer, RotationAnswer, PuzzleAnswer, SelectionAnswer, TaskAnswer, MotionAnswer>;

inline ChallengeKind kind_of(const Answer& a) { return kAllKinds[a.index()]; }

/// The trace carried by an answer, if any.
inline const InteractionTrace* answer_trace(const Answer& a) {
    return std::visit(
        [](const auto& x) -> const InteractionTrace* {
            using T = std::decay_t<decltype(x)>;
            if constexpr (std::is_same_v<T, TaskAnswer> || std::is_same_v<T, MotionAnswer>)
                return &x.trace;
            else
                return x.trace ? &*x.trace : nullptr;
        },
        a);
}

struct VerifierConfig {
    double rotation_tol_deg = 10.0;
    double puzzle_tol = 0.02;
    double lift_m = 0.05;
    double motion_rate_hz = 50.0;
    /// Normalized DTW acceptance threshold; comes from the calibration artifact.
    double motion_theta = std::numeric_limits<double>::quiet_NaN();
    std::size_t dtw_band_min_length = 250;
    double dtw_band_fraction = 0.2;
};

// ---------------------------------------------------------------------------
// Traditional kinds

inline Verdict verify_text(const TextChallenge::Secret& secret, const TextAnswer& answer) {
    auto upper = [](std::string s) {
        for (auto& c : s) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
        return s;
    };
    return upper(answer.text) == upper(secret.expected) ? Verdict::ok(1.0) : Verdict::fail(Reason::wrong_answer);
}

inline Verdict verify_rotation(const RotationChallenge::Secret& secret, const RotationAnswer& answer,
                               double tol_deg = 10.0) {
    if (!std::isfinite(answer.user_delta)) return Verdict::fail(Reason::malformed);
    const double d = angular_distance(secret.applied_rotation + answer.user_delta, 0.0);
    const double correctness = std::max(0.0, 1.0 - d / 180.0);
    return d <= tol_deg ? Verdict::ok(correctness) : Verdict::fail(Reason::wrong_answer, correctness);
}

inline Verdict verify_puzzle(const PuzzleChallenge::Secret& secret, const PuzzleAnswer& answer, double tol = 0.02) {
    if (!std::isfinite(answer.final_x) || answer.final_x < 0.0 || answer.final_x > 1.0)
        return Verdict::fail(Reason::malformed);
    const double err = std::abs(answer.final_x - secret.gap_x);
    const double correctness = std::max(0.0, 1.0 - err);
    return err <= tol ? Verdict::ok(correctness) : Verdict::fail(Reason::wrong_answer, correctness);
}

/// Exact set match; Jaccard similarity reported as correctness.
inline Verdict verify_selection(const SelectionChallenge::Secret& secret, const SelectionAnswer& answer) {
    std::set<int> chosen;
    for (int i : answer.indices) {
        if (i < 0 || i > 8) return Verdict::fail(Reason::malformed);
        chosen.insert(i);
    }
    std::size_t inter = 0;
    for (int i : chosen) inter += secret.truth.count(i);
    const std::size_t uni = chosen.size() + secret.truth.size() - inter;
    const double jaccard = uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
    return chosen == secret.truth ? Verdict::ok(jaccard) : Verdict::fail(Reason::wrong_answer, jaccard);
}

// ---------------------------------------------------------------------------
// Task-driven

struct GrabEvent {
    double grab_t = 0.0;
    double release_t = 0.0;
    Hand hand = Hand::Right;
    Vec3 release_pos;
    double max_carry_height = 0.0;
};

/// Replays the trace against a free object. A press (false->true, with the trigger
/// considered released before the first sample) grabs the object when that hand is within
/// grab_radius of it; while held the object sits at the hand; the next release of the
/// same trigger drops it where the hand is. A grab still open at the end of the trace
/// yields no event.
inline std::vector<GrabEvent> extract_grab_events(const TaskChallenge& spec, const InteractionTrace& trace) {
    std::vector<GrabEvent> events;
    Vec3 object = spec.presentation.object_spawn;
    std::optional<Hand> holder;
    GrabEvent open;
    bool prev[2] = {false, false};

    for (const auto& s : trace.samples) {
        for (Hand h : {Hand::Right, Hand::Left}) {
            const int hi = h == Hand::Left ? 0 : 1;
            const bool now = trigger(s, h);
            const Vec3& p = hand_pos(s, h);
            if (holder == h) {
                object = p;
                open.max_carry_height = std::max(open.max_carry_height, p.y);
                if (!now) {
                    open.release_t = s.t;
                    open.release_pos = p;
                    events.push_back(open);
                    holder.reset();
                }
            } else if (!holder && now && !prev[hi] && distance(p, object) <= spec.secret.grab_radius) {
                holder = h;
                object = p;
                open = GrabEvent{s.t, s.t, h, p, p.y};
            }
            prev[hi] = now;
        }
    }
    return events;
}

inline Verdict verify_task(const TaskChallenge& spec, const InteractionTrace& trace, double lift_m = 0.05) {
    if (!is_valid(trace)) return Verdict::fail(Reason::malformed);
    const auto events = extract_grab_events(spec, trace);
    if (events.empty()) return Verdict::fail(Reason::no_grab);

    const auto& p = spec.presentation;
    const double lift_height = p.object_spawn.y + lift_m;
    double correctness = 0.0;
    bool in_target = false;
    for (const auto& e : events) {
        const double d = distance(e.release_pos, p.target_center);
        correctness = std::max(correctness, std::max(0.0, 1.0 - d / (2.0 * p.target_radius)));
        if (d <= p.target_radius) {
            in_target = true;
            if (e.max_carry_height >= lift_height) return Verdict::ok(correctness);
        }
    }
    // dropped in the target without ever lifting it
    if (in_target) return Verdict::fail(Reason::wrong_answer, correctness);
    return Verdict::fail(Reason::outside_target, correctness);
}

// ---------------------------------------------------------------------------
// Motion-based

/// Both hands concatenated: (left.xyz, right.xyz).
using HandPair = std::array<double, 6>;

inline HandPair hand_pair(const PoseSample& s) {
    return {s.left_hand.x, s.left_hand.y, s.left_hand.z, s.right_hand.x, s.right_hand.y, s.right_hand.z};
}

inline std::vector<HandPair> hand_pairs(const InteractionTrace& trace) {
    std::vector<HandPair> out;
    out.reserve(trace.samples.size());
    for (const auto& s : trace.samples) out.push_back(hand_pair(s));
    return out;
}

inline double pair_cost(const HandPair& a, const HandPair& b) {
    double sum = 0.0;
    for (std::size_t k = 0; k < 6; ++k) {
        const double d = a[k] - b[k];
        sum += d * d;
    }
    return std::sqrt(sum);
}

/// Unnormalized DTW with steps {(-1,0), (0,-1), (-1,-1)}. Exact below band_min_length;
/// above it a Sakoe-Chiba band of band_fraction * max(n, m) (widened to |n - m|) applies.
inline double dtw_distance(std::span<const HandPair> a, std::span<const HandPair> b,
                           std::size_t band_min_length = 250, double band_fraction = 0.2) {
    if (a.empty() || b.empty()) throw Malformed("dtw needs non-empty sequences");
    const std::size_t n = a.size();
    const std::size_t m = b.size();
    const std::size_t longest = std::max(n, m);
    const std::size_t gap = n > m ? n - m : m - n;
    std::size_t band = longest;
    if (longest > band_min_length)
        band = std::max(static_cast<std::size_t>(std::ceil(band_fraction * static_cast<double>(longest))), gap);

    constexpr double kInf = std::numeric_limits<double>::infinity();
    std::vector<double> prev(m, kInf), cur(m, kInf);
    for (std::size_t i = 0; i < n; ++i) {
        std::fill(cur.begin(), cur.end(), kInf);
        const std::size_t lo = i > band ? i - band : 0;
        const std::size_t hi = std::min(m - 1, i + band);
        for (std::size_t j = lo; j <= hi; ++j) {
            const double c = pair_cost(a[i], b[j]);
            if (i == 0 && j == 0) {
                cur[j] = c;
                continue;
            }
            const double up = i > 0 ? prev[j] : kInf;
            const double left = j > 0 ? cur[j - 1] : kInf;
            const double diag = (i > 0 && j > 0) ? prev[j - 1] : kInf;
            cur[j] = c + std::min({up, left, diag});
        }
        std::swap(prev, cur);
    }
    return prev[m - 1];
}

/// DTW distance divided by (len_a + len_b) after normalizing and resampling both traces.
inline double motion_distance(const InteractionTrace& template_trace, const InteractionTrace& answer,
                              const VerifierConfig& cfg = {}) {
    const auto a = hand_pairs(resample_trace(normalize_trace(template_trace), cfg.motion_rate_hz));
    const auto b = hand_pairs(resample_trace(normalize_trace(answer), cfg.motion_rate_hz));
    return dtw_distance(a, b, cfg.dtw_band_min_length, cfg.dtw_band_fraction) / static_cast<double>(a.size() + b.size());
}

inline Verdict verify_motion(const MotionChallenge::Secret& secret, const InteractionTrace& trace, double theta,
                             const VerifierConfig& cfg = {}) {
    if (!is_valid(trace) || !(theta > 0.0)) return Verdict::fail(Reason::malformed);
    const double d = motion_distance(secret.template_trace, trace, cfg);
    const double correctness = std::max(0.0, 1.0 - d / (2.0 * theta));
    return d <= theta ? Verdict::ok(correctness) : Verdict::fail(Reason::motion_mismatch, correctness);
}

// ---------------------------------------------------------------------------

/// Dispatches on the challenge kind. A mismatched answer tag or invalid trace is malformed.
inline Verdict verify(const ChallengeSpec& spec, const Answer& answer, const VerifierConfig& cfg = {}) {
    if (kind_of(answer) != spec.kind || spec.body.index() != answer.index()) return Verdict::fail(Reason::malformed);
    if (const auto* tr = answer_trace(answer); tr && !is_valid(*tr)) return Verdict::fail(Reason::malformed);
    switch (spec.kind) {
        case ChallengeKind::Text:
            return verify_text(std::get<TextChallenge>(spec.body).secret, std::get<TextAnswer>(answer));
        case ChallengeKind::ImageRotated:
            return verify_rotation(std::get<RotationChallenge>(spec.body).secret, std::get<RotationAnswer>(answer),
                                   cfg.rotation_tol_deg);
        case ChallengeKind::ImagePuzzled:
            return verify_puzzle(std::get<PuzzleChallenge>(spec.body).secret, std::get<PuzzleAnswer>(answer),
                                 cfg.puzzle_tol);
        case ChallengeKind::ImageSelected:
            return verify_selection(std::get<SelectionChallenge>(spec.body).secret, std::get<SelectionAnswer>(answer));
        case ChallengeKind::TaskDriven:
            return verify_task(std::get<TaskChallenge>(spec.body), std::get<TaskAnswer>(answer).trace, cfg.lift_m);
        case ChallengeKind::MotionBased:
            return verify_motion(std::get<MotionChallenge>(spec.body).secret, std::get<MotionAnswer>(answer).trace,
                                 cfg.motion_theta, cfg);
    }
    return Verdict::fail(Reason::malformed);
}

}  // namespace vrcaptcha
