#pragma once

// Shared domain types and trace geometry.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace vrcaptcha {

/// Thrown for inputs that violate an operation's precondition.
class Malformed : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

inline constexpr double kMaxTraceDurationS = 120.0;
inline constexpr std::size_t kMaxTraceSamples = 20000;

struct Vec3 {
    double x = 0.0;
    double y = 0.0;
    double z = 0.0;

    constexpr Vec3 operator+(const Vec3& o) const { return {x + o.x, y + o.y, z + o.z}; }
    constexpr Vec3 operator-(const Vec3& o) const { return {x - o.x, y - o.y, z - o.z}; }
    constexpr Vec3 operator*(double s) const { return {x * s, y * s, z * s}; }
    constexpr Vec3& operator+=(const Vec3& o) {
        x += o.x;
        y += o.y;
        z += o.z;
        return *this;
    }
    constexpr bool operator==(const Vec3&) const = default;

    double norm() const { return std::sqrt(x * x + y * y + z * z); }
    bool finite() const { return std::isfinite(x) && std::isfinite(y) && std::isfinite(z); }
};

inline double distance(const Vec3& a, const Vec3& b) { return (a - b).norm(); }

/// a + (b - a) * alpha; exact at alpha == 0.
inline Vec3 lerp(const Vec3& a, const Vec3& b, double alpha) { return a + (b - a) * alpha; }

struct PoseSample {
    double t = 0.0;  // seconds since presentation
    Vec3 head;
    Vec3 left_hand;
    Vec3 right_hand;
    bool trigger_left = false;
    bool trigger_right = false;

    bool operator==(const PoseSample&) const = default;
};

enum class Hand { Left, Right };

inline const Vec3& hand_pos(const PoseSample& s, Hand h) {
    return h == Hand::Left ? s.left_hand : s.right_hand;
}
inline bool trigger(const PoseSample& s, Hand h) {
    return h == Hand::Left ? s.trigger_left : s.trigger_right;
}

struct InteractionTrace {
    std::vector<PoseSample> samples;
    double declared_rate_hz = 50.0;

    double duration() const {
        return samples.size() < 2 ? 0.0 : samples.back().t - samples.front().t;
    }
    bool operator==(const InteractionTrace&) const = default;
};

/// Checks every InteractionTrace invariant; throws Malformed naming the first violation.
inline void validate(const InteractionTrace& trace) {
    const auto& s = trace.samples;
    if (s.size() < 2) throw Malformed("trace needs at least 2 samples");
    if (s.size() > kMaxTraceSamples) throw Malformed("trace exceeds sample limit");
    if (!(std::isfinite(trace.declared_rate_hz) && trace.declared_rate_hz > 0.0))
        throw Malformed("declared rate must be positive");
    for (std::size_t i = 0; i < s.size(); ++i) {
        const auto& p = s[i];
        if (!std::isfinite(p.t) || p.t < 0.0) throw Malformed("timestamp must be finite and >= 0");
        if (!p.head.finite() || !p.left_hand.finite() || !p.right_hand.finite())
            throw Malformed("non-finite position");
        if (i > 0 && !(p.t > s[i - 1].t)) throw Malformed("timestamps must be strictly increasing");
    }
    if (trace.duration() > kMaxTraceDurationS) throw Malformed("trace longer than 120 s");
}

inline bool is_valid(const InteractionTrace& trace) {
    try {
        validate(trace);
        return true;
    } catch (const Malformed&) {
        return false;
    }
}

enum class ChallengeKind { Text, ImageRotated, ImagePuzzled, ImageSelected, TaskDriven, MotionBased };

inline constexpr std::array<ChallengeKind, 6> kAllKinds = {
    ChallengeKind::Text,          ChallengeKind::ImageRotated, ChallengeKind::ImagePuzzled,
    ChallengeKind::ImageSelected, ChallengeKind::TaskDriven,   ChallengeKind::MotionBased};

inline std::string_view to_string(ChallengeKind k) {
    switch (k) {
        case ChallengeKind::Text: return "Text";
        case ChallengeKind::ImageRotated: return "ImageRotated";
        case ChallengeKind::ImagePuzzled: return "ImagePuzzled";
        case ChallengeKind::ImageSelected: return "ImageSelected";
        case ChallengeKind::TaskDriven: return "TaskDriven";
        case ChallengeKind::MotionBased: return "MotionBased";
    }
    return "?";
}

inline std::optional<ChallengeKind> parse_kind(std::string_view s) {
    for (auto k : kAllKinds)
        if (to_string(k) == s) return k;
    return std::nullopt;
}

enum class Reason {
    ok,
    wrong_answer,
    no_grab,
    wrong_object,
    outside_target,
    motion_mismatch,
    humanness_reject,
    expired,
    replay,
    malformed
};

inline std::string_view to_string(Reason r) {
    switch (r) {
        case Reason::ok: return "ok";
        case Reason::wrong_answer: return "wrong_answer";
        case Reason::no_grab: return "no_grab";
        case Reason::wrong_object: return "wrong_object";
        case Reason::outside_target: return "outside_target";
        case Reason::motion_mismatch: return "motion_mismatch";
        case Reason::humanness_reject: return "humanness_reject";
        case Reason::expired: return "expired";
        case Reason::replay: return "replay";
        case Reason::malformed: return "malformed";
    }
    return "?";
}

struct HumannessFeatures {
    double path_efficiency = 1.0;
    double norm_jerk = 0.0;
    double vel_profile_corr = 0.0;
    double pause_ratio = 0.0;
    double dt_cv = 0.0;
};

struct HumannessScore {
    HumannessFeatures features;
    double score = 0.0;
};

struct Verdict {
    bool pass = false;
    Reason reason = Reason::malformed;
    double correctness = 0.0;
    std::optional<HumannessScore> humanness;

    static Verdict ok(double correctness = 1.0) { return {true, Reason::ok, correctness, {}}; }
    static Verdict fail(Reason r, double correctness = 0.0) { return {false, r, correctness, {}}; }
};

/// Smallest angle between two headings, in [0, 180].
inline double angular_distance(double a_deg, double b_deg) {
    if (!std::isfinite(a_deg) || !std::isfinite(b_deg)) throw Malformed("non-finite angle");
    double d = std::fmod(std::fabs(a_deg - b_deg), 360.0);
    return d > 180.0 ? 360.0 - d : d;
}

namespace detail {

inline PoseSample interpolate(const PoseSample& a, const PoseSample& b, double t) {
    const double alpha = (t - a.t) / (b.t - a.t);
    PoseSample out;
    out.t = t;
    out.head = lerp(a.head, b.head, alpha);
    out.left_hand = lerp(a.left_hand, b.left_hand, alpha);
    out.right_hand = lerp(a.right_hand, b.right_hand, alpha);
    // zero-order hold
    out.trigger_left = a.trigger_left;
    out.trigger_right = a.trigger_right;
    return out;
}

}  // namespace detail

/// Resamples onto a uniform grid t0 + k / rate. The original first and last samples are
/// kept verbatim; when the duration is not a whole number of steps the final (shorter)
/// interval ends on the original last sample.
inline InteractionTrace resample_trace(const InteractionTrace& trace, double rate_hz) {
    validate(trace);
    if (!(rate_hz >= 10.0 && rate_hz <= 200.0)) throw Malformed("resample rate must be in [10, 200] Hz");

    const auto& in = trace.samples;
    const double t0 = in.front().t;
    const double t_end = in.back().t;
    constexpr double kSlack = 1e-9;
    const auto steps = static_cast<std::size_t>(std::floor((t_end - t0) * rate_hz + kSlack));

    InteractionTrace out;
    out.declared_rate_hz = rate_hz;
    out.samples.reserve(steps + 2);
    out.samples.push_back(in.front());

    std::size_t seg = 0;
    for (std::size_t k = 1; k <= steps; ++k) {
        const double t = t0 + static_cast<double>(k) / rate_hz;
        if (t >= t_end - kSlack) break;
        while (seg + 1 < in.size() && in[seg + 1].t <= t) ++seg;
        out.samples.push_back(detail::interpolate(in[seg], in[seg + 1], t));
    }
    out.samples.push_back(in.back());
    return out;
}

/// Centers on the mean head position and scales by the largest head to right-hand
/// distance (at least 0.2 m).
inline InteractionTrace normalize_trace(const InteractionTrace& trace) {
    validate(trace);
    Vec3 mean_head;
    double scale = 0.0;
    for (const auto& s : trace.samples) {
        mean_head += s.head;
        scale = std::max(scale, distance(s.head, s.right_hand));
    }
    mean_head = mean_head * (1.0 / static_cast<double>(trace.samples.size()));
    scale = std::max(scale, 0.2);

    InteractionTrace out = trace;
    const double inv = 1.0 / scale;
    for (auto& s : out.samples) {
        s.head = (s.head - mean_head) * inv;
        s.left_hand = (s.left_hand - mean_head) * inv;
        s.right_hand = (s.right_hand - mean_head) * inv;
    }
    return out;
}

}  // namespace vrcaptcha
