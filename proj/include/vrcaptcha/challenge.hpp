#pragma once

// Seeded generation of the six challenge kinds. Every generator is a pure function of
// (seed, catalog, options); the presentation half goes to the client, the secret half
// never leaves the server.

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "core.hpp"
#include "min_jerk.hpp"
#include "rng.hpp"
#include "trace_io.hpp"

namespace vrcaptcha {

// ---------------------------------------------------------------------------
// Catalogs (metadata only; no pixels)

struct ImageEntry {
    std::string id;
    std::string category;
};

struct ImageCatalog {
    std::vector<ImageEntry> images;

    const std::string* category_of(const std::string& id) const {
        for (const auto& e : images)
            if (e.id == id) return &e.category;
        return nullptr;
    }
};

struct ScenePair {
    std::string object_id;
    std::string target_id;
    Vec3 object_spawn;
    Vec3 target_center;
    double target_radius = 0.15;
    std::string prompt;
};

struct SceneCatalog {
    std::vector<ScenePair> pairs;
};

struct Catalogs {
    ImageCatalog images;
    SceneCatalog scenes;
};

/// Reach volume: 1 m cube centred at (0, 1.1, 0.45).
inline constexpr Vec3 kReachCenter{0.0, 1.1, 0.45};
inline constexpr double kReachHalfExtent = 0.5;
inline constexpr double kMinSpawnTargetDistance = 0.3;

inline bool in_reach_volume(const Vec3& p) {
    return std::abs(p.x - kReachCenter.x) <= kReachHalfExtent && std::abs(p.y - kReachCenter.y) <= kReachHalfExtent &&
           std::abs(p.z - kReachCenter.z) <= kReachHalfExtent;
}

inline void validate(const ScenePair& p) {
    if (p.object_id.empty() || p.target_id.empty()) throw Malformed("scene pair needs object_id and target_id");
    if (!(p.target_radius >= 0.1 && p.target_radius <= 0.3)) throw Malformed("target_radius must be in [0.1, 0.3]");
    if (!p.object_spawn.finite() || !p.target_center.finite()) throw Malformed("scene positions must be finite");
    if (!in_reach_volume(p.object_spawn) || !in_reach_volume(p.target_center))
        throw Malformed("scene positions must lie in the reach volume");
    if (distance(p.object_spawn, p.target_center) < kMinSpawnTargetDistance)
        throw Malformed("object spawn and target must be at least 0.3 m apart");
}

inline SceneCatalog builtin_scene_catalog() {
    return {{
        {"apple", "purple_bowl", {-0.25, 0.90, 0.50}, {0.25, 0.92, 0.55}, 0.15,
         "Lift the apple and put it in the purple bowl"},
        {"wine_bottle", "trash_can", {0.20, 0.95, 0.60}, {-0.30, 0.90, 0.35}, 0.20,
         "Lift the wine bottle and drop it in the trash can"},
        {"knife_and_fork", "dinner_plate", {0.00, 0.88, 0.40}, {0.00, 0.90, 0.85}, 0.15,
         "Lift the knife and fork and place them on the dinner plate"},
    }};
}

inline ImageCatalog builtin_image_catalog() {
    // Ids are opaque; the category is only known server-side.
    static const char* const kCategories[] = {"cat", "dog", "car", "bicycle", "traffic_light", "tree"};
    ImageCatalog cat;
    for (int i = 0; i < 48; ++i) {
        char id[16];
        std::snprintf(id, sizeof id, "img-%03d", i + 1);
        cat.images.push_back({id, kCategories[(i * 5 + i / 6) % 6]});
    }
    return cat;
}

inline Catalogs builtin_catalogs() { return {builtin_image_catalog(), builtin_scene_catalog()}; }

inline Catalogs catalogs_from_json(const nlohmann::json& j) {
    Catalogs c;
    try {
        for (const auto& r : j.at("images")) c.images.images.push_back({r.at("id"), r.at("category")});
        for (const auto& r : j.at("scenes")) {
            ScenePair p;
            p.object_id = r.at("object_id");
            p.target_id = r.at("target_id");
            p.object_spawn = detail::parse_vec(r.at("object_spawn"));
            p.target_center = detail::parse_vec(r.at("target_center"));
            p.target_radius = r.at("target_radius");
            p.prompt = r.value("prompt", "Move the " + p.object_id + " to the " + p.target_id);
            validate(p);
            c.scenes.pairs.push_back(std::move(p));
        }
    } catch (const nlohmann::json::exception& e) {
        throw Malformed(std::string("bad catalog: ") + e.what());
    }
    return c;
}

inline Catalogs load_catalogs(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Malformed("cannot open catalog file " + path);
    try {
        return catalogs_from_json(nlohmann::json::parse(in));
    } catch (const nlohmann::json::parse_error& e) {
        throw Malformed(std::string("catalog is not valid JSON: ") + e.what());
    }
}

inline nlohmann::json to_json(const Catalogs& c) {
    nlohmann::json j;
    j["images"] = nlohmann::json::array();
    for (const auto& e : c.images.images) j["images"].push_back({{"id", e.id}, {"category", e.category}});
    j["scenes"] = nlohmann::json::array();
    for (const auto& p : c.scenes.pairs)
        j["scenes"].push_back({{"object_id", p.object_id},
                               {"target_id", p.target_id},
                               {"object_spawn", {p.object_spawn.x, p.object_spawn.y, p.object_spawn.z}},
                               {"target_center", {p.target_center.x, p.target_center.y, p.target_center.z}},
                               {"target_radius", p.target_radius},
                               {"prompt", p.prompt}});
    return j;
}

// ---------------------------------------------------------------------------
// Challenge payloads

inline constexpr std::string_view kTextAlphabet = "ABCDEFGHJKLMNPQRSTUVWXYZ23456789";

struct TextChallenge {
    struct Presentation {
        std::uint32_t render_seed = 0;
        int length = 0;
    } presentation;
    struct Secret {
        std::string expected;
    } secret;
};

struct RotationChallenge {
    struct Presentation {
        std::string image_id;
        double slider_min = -180.0;
        double slider_max = 180.0;
    } presentation;
    struct Secret {
        double applied_rotation = 0.0;
    } secret;
};

struct PuzzleChallenge {
    struct Presentation {
        std::string image_id;
        double piece_y = 0.5;
    } presentation;
    struct Secret {
        double gap_x = 0.5;
    } secret;
};

struct SelectionChallenge {
    struct Presentation {
        std::string prompt_category;
        std::vector<std::string> images;  // 9, grid order
    } presentation;
    struct Secret {
        std::set<int> truth;
    } secret;
};

struct TaskChallenge {
    struct Presentation {
        std::string object_id;
        Vec3 object_spawn;
        std::string target_id;
        Vec3 target_center;
        double target_radius = 0.15;
        std::string prompt;
    } presentation;
    struct Secret {
        double grab_radius = 0.10;
    } secret;
};

struct Keyframe {
    double t = 0.0;
    Vec3 left_hand;
    Vec3 right_hand;
};

struct MotionTemplate {
    std::string template_id;
    std::vector<Keyframe> keyframes;
    double nominal_duration = 3.0;
};

struct MotionChallenge {
    struct Presentation {
        std::string template_id;
        int repetitions = 1;
        double nominal_duration = 3.0;
        std::vector<Keyframe> keyframes;  // the client animates these
    } presentation;
    struct Secret {
        InteractionTrace template_trace;
    } secret;
};

// ---------------------------------------------------------------------------
// Motion templates. Head at (0, 1.6, 0), facing +z; hands rest at thigh height.

inline constexpr Vec3 kTemplateHead{0.0, 1.6, 0.0};
inline constexpr Vec3 kRestLeft{-0.20, 0.85, 0.05};
inline constexpr Vec3 kRestRight{0.20, 0.85, 0.05};
inline constexpr double kTemplateDuration = 3.0;
inline constexpr double kTemplateRateHz = 50.0;

inline MotionTemplate make_raise(std::string id, Vec3 apex_left, Vec3 apex_right) {
    const double mid = kTemplateDuration / 2.0;
    return {std::move(id),
            {{0.0, kRestLeft, kRestRight}, {mid, apex_left, apex_right}, {kTemplateDuration, kRestLeft, kRestRight}},
            kTemplateDuration};
}

inline const std::vector<MotionTemplate>& motion_templates() {
    static const std::vector<MotionTemplate> kTemplates = {
        // arms straight ahead at shoulder height
        make_raise("front_raise", {-0.20, 1.40, 0.60}, {0.20, 1.40, 0.60}),
        // arms out to the sides at shoulder height
        make_raise("side_raise", {-0.75, 1.40, 0.05}, {0.75, 1.40, 0.05}),
        // arms overhead
        make_raise("up_raise", {-0.20, 2.05, 0.05}, {0.20, 2.05, 0.05}),
    };
    return kTemplates;
}

inline const MotionTemplate& find_template(std::string_view id) {
    for (const auto& t : motion_templates())
        if (t.template_id == id) return t;
    throw Malformed("unknown motion template " + std::string(id));
}

/// Keyframes for `repetitions` back-to-back performances of a template.
inline std::vector<Keyframe> repeated_keyframes(const MotionTemplate& tpl, int repetitions) {
    std::vector<Keyframe> out;
    for (int r = 0; r < repetitions; ++r) {
        const double offset = r * tpl.nominal_duration;
        for (std::size_t i = (r == 0 ? 0 : 1); i < tpl.keyframes.size(); ++i) {
            auto kf = tpl.keyframes[i];
            kf.t += offset;
            out.push_back(kf);
        }
    }
    return out;
}

/// Hand positions at time t along keyframes joined by minimum-jerk segments.
inline std::pair<Vec3, Vec3> keyframe_pose(const std::vector<Keyframe>& kfs, double t) {
    if (t <= kfs.front().t) return {kfs.front().left_hand, kfs.front().right_hand};
    if (t >= kfs.back().t) return {kfs.back().left_hand, kfs.back().right_hand};
    std::size_t i = 0;
    while (kfs[i + 1].t < t) ++i;
    const auto& a = kfs[i];
    const auto& b = kfs[i + 1];
    const double seg = b.t - a.t;
    return {min_jerk(a.left_hand, b.left_hand, seg, t - a.t), min_jerk(a.right_hand, b.right_hand, seg, t - a.t)};
}

inline InteractionTrace render_template_trace(const MotionTemplate& tpl, int repetitions) {
    const auto kfs = repeated_keyframes(tpl, repetitions);
    const double total = kfs.back().t;
    const auto n = static_cast<std::size_t>(std::llround(total * kTemplateRateHz));
    InteractionTrace trace;
    trace.declared_rate_hz = kTemplateRateHz;
    trace.samples.reserve(n + 1);
    for (std::size_t k = 0; k <= n; ++k) {
        const double t = k == n ? total : static_cast<double>(k) / kTemplateRateHz;
        auto [l, r] = keyframe_pose(kfs, t);
        trace.samples.push_back({t, kTemplateHead, l, r, false, false});
    }
    return trace;
}

// ---------------------------------------------------------------------------
// Generators

inline TextChallenge gen_text(std::uint64_t seed, int length) {
    if (length < 4 || length > 8) throw Malformed("text length must be in [4, 8]");
    Rng rng(seed);
    TextChallenge c;
    c.presentation.length = length;
    c.presentation.render_seed = static_cast<std::uint32_t>(rng.next_u64() >> 32);
    for (int i = 0; i < length; ++i) c.secret.expected += kTextAlphabet[rng.below(kTextAlphabet.size())];
    return c;
}

inline RotationChallenge gen_rotation(std::uint64_t seed, const ImageCatalog& catalog) {
    if (catalog.images.empty()) throw Malformed("image catalog is empty");
    Rng rng(seed);
    RotationChallenge c;
    c.presentation.image_id = catalog.images[rng.below(catalog.images.size())].id;
    // uniform over [-180, -30] U [30, 180]
    const double u = rng.uniform(0.0, 300.0);
    c.secret.applied_rotation = u < 150.0 ? -180.0 + u : 30.0 + (u - 150.0);
    return c;
}

inline PuzzleChallenge gen_puzzle(std::uint64_t seed, const ImageCatalog& catalog) {
    if (catalog.images.empty()) throw Malformed("image catalog is empty");
    Rng rng(seed);
    PuzzleChallenge c;
    c.presentation.image_id = catalog.images[rng.below(catalog.images.size())].id;
    c.presentation.piece_y = rng.uniform(0.2, 0.8);
    c.secret.gap_x = rng.uniform(0.2, 0.9);
    return c;
}

inline SelectionChallenge gen_selection(std::uint64_t seed, const ImageCatalog& catalog) {
    constexpr int kGrid = 9;
    std::map<std::string, std::vector<std::string>> by_category;
    for (const auto& e : catalog.images) by_category[e.category].push_back(e.id);

    // A category is usable when it can supply k in [2, 5] images and the rest can fill 9 - k.
    struct Option {
        std::string category;
        int k_min, k_max;
    };
    std::vector<Option> options;
    const int total = static_cast<int>(catalog.images.size());
    for (const auto& [cat, ids] : by_category) {
        const int own = static_cast<int>(ids.size());
        const int others = total - own;
        const int k_min = std::max(2, kGrid - others);
        const int k_max = std::min(5, own);
        if (k_min <= k_max) options.push_back({cat, k_min, k_max});
    }
    if (options.empty()) throw Malformed("image catalog lacks category diversity for a selection grid");

    Rng rng(seed);
    const auto& opt = options[rng.below(options.size())];
    const int k = rng.between(opt.k_min, opt.k_max);

    auto pick = [&rng](std::vector<std::string> pool, int n) {
        rng.shuffle(pool);
        pool.resize(static_cast<std::size_t>(n));
        return pool;
    };
    std::vector<std::string> others;
    for (const auto& [cat, ids] : by_category)
        if (cat != opt.category) others.insert(others.end(), ids.begin(), ids.end());

    std::vector<std::pair<std::string, bool>> grid;
    for (auto& id : pick(by_category.at(opt.category), k)) grid.emplace_back(std::move(id), true);
    for (auto& id : pick(std::move(others), kGrid - k)) grid.emplace_back(std::move(id), false);
    rng.shuffle(grid);

    SelectionChallenge c;
    c.presentation.prompt_category = opt.category;
    for (int i = 0; i < kGrid; ++i) {
        c.presentation.images.push_back(grid[static_cast<std::size_t>(i)].first);
        if (grid[static_cast<std::size_t>(i)].second) c.secret.truth.insert(i);
    }
    return c;
}

inline TaskChallenge gen_task(std::uint64_t seed, const SceneCatalog& catalog, double grab_radius = 0.10) {
    if (catalog.pairs.empty()) throw Malformed("scene catalog is empty");
    constexpr double kJitter = 0.05;  // horizontal only; heights stay as authored
    Rng rng(seed);
    const auto& pair = catalog.pairs[rng.below(catalog.pairs.size())];
    auto jitter = [&](Vec3 p) {
        Vec3 q{p.x + rng.uniform(-kJitter, kJitter), p.y, p.z + rng.uniform(-kJitter, kJitter)};
        q.x = std::clamp(q.x, kReachCenter.x - kReachHalfExtent, kReachCenter.x + kReachHalfExtent);
        q.z = std::clamp(q.z, kReachCenter.z - kReachHalfExtent, kReachCenter.z + kReachHalfExtent);
        return q;
    };
    Vec3 spawn, target;
    for (int attempt = 0;; ++attempt) {
        spawn = jitter(pair.object_spawn);
        target = jitter(pair.target_center);
        if (distance(spawn, target) >= kMinSpawnTargetDistance) break;
        if (attempt == 63) {
            spawn = pair.object_spawn;
            target = pair.target_center;
            break;
        }
    }
    TaskChallenge c;
    c.presentation = {pair.object_id, spawn, pair.target_id, target, pair.target_radius, pair.prompt};
    c.secret.grab_radius = grab_radius;
    return c;
}

inline MotionChallenge gen_motion(std::uint64_t seed, int repetitions = 1) {
    if (repetitions < 1) throw Malformed("repetitions must be >= 1");
    Rng rng(seed);
    const auto& tpl = motion_templates()[rng.below(motion_templates().size())];
    MotionChallenge c;
    c.presentation.template_id = tpl.template_id;
    c.presentation.repetitions = repetitions;
    c.presentation.nominal_duration = tpl.nominal_duration;
    c.presentation.keyframes = tpl.keyframes;
    c.secret.template_trace = render_template_trace(tpl, repetitions);
    return c;
}

// ---------------------------------------------------------------------------
// Tagged challenge

using ChallengeBody =
    std::variant<TextChallenge, RotationChallenge, PuzzleChallenge, SelectionChallenge, TaskChallenge, MotionChallenge>;

struct ChallengeSpec {
    std::string challenge_id;
    ChallengeKind kind = ChallengeKind::Text;
    ChallengeBody body;
};

struct GenOptions {
    int text_length = 6;
    double grab_radius = 0.10;
    int motion_repetitions = 1;
};

inline ChallengeSpec generate(ChallengeKind kind, std::uint64_t seed, const Catalogs& catalogs,
                              const GenOptions& opts = {}, std::string challenge_id = {}) {
    ChallengeSpec spec{std::move(challenge_id), kind, TextChallenge{}};
    switch (kind) {
        case ChallengeKind::Text: spec.body = gen_text(seed, opts.text_length); break;
        case ChallengeKind::ImageRotated: spec.body = gen_rotation(seed, catalogs.images); break;
        case ChallengeKind::ImagePuzzled: spec.body = gen_puzzle(seed, catalogs.images); break;
        case ChallengeKind::ImageSelected: spec.body = gen_selection(seed, catalogs.images); break;
        case ChallengeKind::TaskDriven: spec.body = gen_task(seed, catalogs.scenes, opts.grab_radius); break;
        case ChallengeKind::MotionBased: spec.body = gen_motion(seed, opts.motion_repetitions); break;
    }
    return spec;
}

// ---------------------------------------------------------------------------
// JSON views

inline nlohmann::json vec_json(const Vec3& v) { return nlohmann::json::array({v.x, v.y, v.z}); }

inline nlohmann::json presentation_json(const ChallengeSpec& spec) {
    using nlohmann::json;
    return std::visit(
        [](const auto& c) -> json {
            using T = std::decay_t<decltype(c)>;
            const auto& p = c.presentation;
            if constexpr (std::is_same_v<T, TextChallenge>) {
                return {{"render_seed", p.render_seed}, {"length", p.length}};
            } else if constexpr (std::is_same_v<T, RotationChallenge>) {
                return {{"image_id", p.image_id}, {"slider_min", p.slider_min}, {"slider_max", p.slider_max}};
            } else if constexpr (std::is_same_v<T, PuzzleChallenge>) {
                return {{"image_id", p.image_id}, {"piece_y", p.piece_y}};
            } else if constexpr (std::is_same_v<T, SelectionChallenge>) {
                return {{"prompt_category", p.prompt_category}, {"images", p.images}};
            } else if constexpr (std::is_same_v<T, TaskChallenge>) {
                return {{"object_id", p.object_id},         {"object_spawn", vec_json(p.object_spawn)},
                        {"target_id", p.target_id},         {"target_center", vec_json(p.target_center)},
                        {"target_radius", p.target_radius}, {"prompt", p.prompt}};
            } else {
                json kfs = json::array();
                for (const auto& k : p.keyframes)
                    kfs.push_back({{"t", k.t}, {"left_hand", vec_json(k.left_hand)}, {"right_hand", vec_json(k.right_hand)}});
                return {{"template_id", p.template_id},
                        {"repetitions", p.repetitions},
                        {"nominal_duration", p.nominal_duration},
                        {"keyframes", kfs}};
            }
        },
        spec.body);
}

/// Server-side view of the secret, for logs and leak checks. Never sent to clients.
inline nlohmann::json secret_json(const ChallengeSpec& spec) {
    using nlohmann::json;
    return std::visit(
        [](const auto& c) -> json {
            using T = std::decay_t<decltype(c)>;
            const auto& s = c.secret;
            if constexpr (std::is_same_v<T, TextChallenge>) {
                return {{"expected", s.expected}};
            } else if constexpr (std::is_same_v<T, RotationChallenge>) {
                return {{"applied_rotation", s.applied_rotation}};
            } else if constexpr (std::is_same_v<T, PuzzleChallenge>) {
                return {{"gap_x", s.gap_x}};
            } else if constexpr (std::is_same_v<T, SelectionChallenge>) {
                return {{"truth", s.truth}};
            } else if constexpr (std::is_same_v<T, TaskChallenge>) {
                return {{"grab_radius", s.grab_radius}};
            } else {
                return {{"template_trace", json::parse(serialize_trace(s.template_trace))}};
            }
        },
        spec.body);
}

}  // namespace vrcaptcha
