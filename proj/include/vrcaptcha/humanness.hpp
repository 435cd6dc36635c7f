#pragma once

// Kinematic "humanness" scoring of interaction traces.
//
// Five features are extracted from the more-traveled hand on a 50 Hz resample:
//   path_efficiency   straight-line distance / path length
//   norm_jerk         integral |jerk|^2 dt * duration^5 / path_length^2
//   vel_profile_corr  Pearson r of the speed profile vs. the min-jerk bell 30 tau^2 (1 - tau)^2
//   pause_ratio       share of samples slower than 0.02 m/s
//   dt_cv             coefficient of variation of the raw inter-sample intervals
// Each is standardized against human calibration statistics and combined by a logistic
// model. Directional features are credited or penalized linearly; the jerk feature is a
// band and is penalized by its distance from the human mean in either direction.

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "core.hpp"
#include "min_jerk.hpp"

namespace vrcaptcha {

inline constexpr double kFeatureRateHz = 50.0;
inline constexpr double kPauseSpeed = 0.02;
inline constexpr double kMinFeatureDuration = 0.5;

inline HumannessFeatures extract_features(const InteractionTrace& trace) {
    validate(trace);
    if (trace.duration() < kMinFeatureDuration) throw Malformed("trace too short for humanness features");

    HumannessFeatures f;

    // Raw sampling regularity.
    {
        const auto& s = trace.samples;
        const double n = static_cast<double>(s.size() - 1);
        double mean = 0.0;
        for (std::size_t i = 1; i < s.size(); ++i) mean += s[i].t - s[i - 1].t;
        mean /= n;
        double var = 0.0;
        for (std::size_t i = 1; i < s.size(); ++i) {
            const double d = (s[i].t - s[i - 1].t) - mean;
            var += d * d;
        }
        f.dt_cv = std::sqrt(var / n) / mean;
    }

    auto uniform = resample_trace(trace, kFeatureRateHz).samples;
    const double h = 1.0 / kFeatureRateHz;
    // Finite differences need equal spacing; drop a short closing interval.
    if (uniform.size() > 2 && std::abs((uniform.back().t - uniform[uniform.size() - 2].t) - h) > 1e-9)
        uniform.pop_back();

    auto path_length = [&](Hand hand) {
        double len = 0.0;
        for (std::size_t i = 1; i < uniform.size(); ++i)
            len += distance(hand_pos(uniform[i], hand), hand_pos(uniform[i - 1], hand));
        return len;
    };
    const double len_right = path_length(Hand::Right);
    const double len_left = path_length(Hand::Left);
    const Hand hand = len_left > len_right ? Hand::Left : Hand::Right;
    const double length = std::max(len_left, len_right);

    std::vector<Vec3> p;
    p.reserve(uniform.size());
    for (const auto& s : uniform) p.push_back(hand_pos(s, hand));
    const std::size_t n = p.size();
    const double duration = static_cast<double>(n - 1) * h;

    if (length < 1e-9) {
        f.path_efficiency = 1.0;
    } else {
        f.path_efficiency = std::clamp(distance(p.back(), p.front()) / length, 1e-6, 1.0);
    }

    double jerk_sq = 0.0;
    for (std::size_t k = 2; k + 2 < n; ++k) {
        const Vec3 j = (p[k + 2] - p[k + 1] * 2.0 + p[k - 1] * 2.0 - p[k - 2]) * (1.0 / (2.0 * h * h * h));
        jerk_sq += (j.x * j.x + j.y * j.y + j.z * j.z) * h;
    }
    f.norm_jerk = length < 1e-9 ? 0.0 : jerk_sq * std::pow(duration, 5) / (length * length);

    std::vector<double> speed, bell;
    std::size_t paused = 0;
    for (std::size_t k = 1; k + 1 < n; ++k) {
        const double v = distance(p[k + 1], p[k - 1]) / (2.0 * h);
        speed.push_back(v);
        bell.push_back(min_jerk_velocity_profile(static_cast<double>(k) * h / duration));
        if (v < kPauseSpeed) ++paused;
    }
    f.pause_ratio = speed.empty() ? 0.0 : static_cast<double>(paused) / static_cast<double>(speed.size());

    const double ms = std::accumulate(speed.begin(), speed.end(), 0.0) / static_cast<double>(speed.size());
    const double mb = std::accumulate(bell.begin(), bell.end(), 0.0) / static_cast<double>(bell.size());
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (std::size_t k = 0; k < speed.size(); ++k) {
        sxy += (speed[k] - ms) * (bell[k] - mb);
        sxx += (speed[k] - ms) * (speed[k] - ms);
        syy += (bell[k] - mb) * (bell[k] - mb);
    }
    // constant speed has no profile to correlate
    f.vel_profile_corr = (sxx < 1e-18 || syy < 1e-18) ? 0.0 : std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
    return f;
}

// ---------------------------------------------------------------------------
// Scoring

inline constexpr std::size_t kNumFeatures = 5;
inline constexpr std::array<const char*, kNumFeatures> kFeatureNames = {"path_efficiency", "norm_jerk",
                                                                        "vel_profile_corr", "pause_ratio", "dt_cv"};

/// Feature vector in scoring space; jerk spans decades so it is log-compressed.
inline std::array<double, kNumFeatures> feature_vector(const HumannessFeatures& f) {
    return {f.path_efficiency, std::log10(1.0 + f.norm_jerk), f.vel_profile_corr, f.pause_ratio, f.dt_cv};
}

/// +1: larger is more human; -1: smaller is more human; 0: band (distance from the mean
/// in either direction is penalized).
inline constexpr std::array<int, kNumFeatures> kFeatureDirection = {-1, 0, +1, +1, +1};

struct HumannessWeights {
    std::array<double, kNumFeatures> w = {1.0, 1.0, 0.5, 0.5, 1.5};
    double bias = 0.0;
};

struct FeatureStats {
    std::array<double, kNumFeatures> mean = {0, 0, 0, 0, 0};
    std::array<double, kNumFeatures> stddev = {1, 1, 1, 1, 1};
};

struct HumannessModel {
    FeatureStats stats;
    HumannessWeights weights;
    double threshold = 0.5;
};

inline constexpr double kZClip = 6.0;

inline double logistic(double x) { return 1.0 / (1.0 + std::exp(-x)); }

/// w . phi(features), without the bias.
inline double humanness_logit(const HumannessFeatures& f, const FeatureStats& stats, const HumannessWeights& wts) {
    const auto x = feature_vector(f);
    double acc = 0.0;
    for (std::size_t i = 0; i < kNumFeatures; ++i) {
        const double sd = std::max(stats.stddev[i], 1e-9);
        const double z = std::clamp((x[i] - stats.mean[i]) / sd, -kZClip, kZClip);
        acc += kFeatureDirection[i] == 0 ? -wts.w[i] * std::abs(z) : wts.w[i] * kFeatureDirection[i] * z;
    }
    return acc;
}

inline HumannessScore humanness_score(const HumannessFeatures& f, const FeatureStats& stats,
                                      const HumannessWeights& wts = {}) {
    for (double w : wts.w)
        if (!std::isfinite(w)) throw Malformed("humanness weights must be finite");
    if (!std::isfinite(wts.bias)) throw Malformed("humanness bias must be finite");
    return {f, logistic(humanness_logit(f, stats, wts) + wts.bias)};
}

inline HumannessScore humanness_score(const HumannessFeatures& f, const HumannessModel& m) {
    return humanness_score(f, m.stats, m.weights);
}

inline FeatureStats fit_feature_stats(const std::vector<HumannessFeatures>& human) {
    if (human.size() < 2) throw Malformed("need at least two human samples");
    FeatureStats st;
    const double n = static_cast<double>(human.size());
    for (std::size_t i = 0; i < kNumFeatures; ++i) {
        double mean = 0.0;
        for (const auto& f : human) mean += feature_vector(f)[i];
        mean /= n;
        double var = 0.0;
        for (const auto& f : human) {
            const double d = feature_vector(f)[i] - mean;
            var += d * d;
        }
        st.mean[i] = mean;
        st.stddev[i] = std::max(std::sqrt(var / (n - 1.0)), 1e-9);
    }
    return st;
}

// ---------------------------------------------------------------------------
// Threshold calibration and ROC

struct Labeled {
    double score = 0.0;
    bool is_human = false;
};

namespace detail {

inline std::pair<std::size_t, std::size_t> class_counts(const std::vector<Labeled>& xs) {
    std::size_t pos = 0;
    for (const auto& x : xs) pos += x.is_human ? 1 : 0;
    if (pos == 0 || pos == xs.size()) throw Malformed("labeled sample needs both classes");
    return {pos, xs.size() - pos};
}

}  // namespace detail

/// Threshold maximizing Youden's J = TPR - FPR, predicting human iff score >= threshold.
/// Candidates are the smallest score and the midpoints between consecutive distinct
/// scores; among equal J the lowest candidate wins.
inline double calibrate_threshold(std::vector<Labeled> xs) {
    const auto [P, N] = detail::class_counts(xs);
    std::sort(xs.begin(), xs.end(), [](const Labeled& a, const Labeled& b) { return a.score < b.score; });

    // Everything at or above the lowest candidate is predicted human.
    std::size_t tp = P, fp = N;
    double best_t = xs.front().score;
    double best_j = static_cast<double>(tp) / static_cast<double>(P) - static_cast<double>(fp) / static_cast<double>(N);
    std::size_t i = 0;
    while (i < xs.size()) {
        const double v = xs[i].score;
        while (i < xs.size() && xs[i].score == v) {
            if (xs[i].is_human)
                --tp;
            else
                --fp;
            ++i;
        }
        if (i == xs.size()) break;
        const double cut = (v + xs[i].score) / 2.0;
        const double j =
            static_cast<double>(tp) / static_cast<double>(P) - static_cast<double>(fp) / static_cast<double>(N);
        if (j > best_j) {
            best_j = j;
            best_t = cut;
        }
    }
    return best_t;
}

struct RocResult {
    double auc = 0.5;
    std::vector<std::pair<double, double>> curve;  // (fpr, tpr), from (0,0) to (1,1)
};

/// AUC by the Mann-Whitney rank statistic (ties count 1/2).
inline RocResult evaluate_roc(std::vector<Labeled> xs) {
    const auto [P, N] = detail::class_counts(xs);
    std::sort(xs.begin(), xs.end(), [](const Labeled& a, const Labeled& b) { return a.score < b.score; });

    double rank_sum_pos = 0.0;
    for (std::size_t i = 0; i < xs.size();) {
        std::size_t j = i;
        while (j < xs.size() && xs[j].score == xs[i].score) ++j;
        const double avg_rank = (static_cast<double>(i + 1) + static_cast<double>(j)) / 2.0;
        for (std::size_t k = i; k < j; ++k)
            if (xs[k].is_human) rank_sum_pos += avg_rank;
        i = j;
    }
    const double p = static_cast<double>(P), q = static_cast<double>(N);
    RocResult r;
    r.auc = (rank_sum_pos - p * (p + 1.0) / 2.0) / (p * q);

    // Sweep thresholds from high to low.
    r.curve.emplace_back(0.0, 0.0);
    std::size_t tp = 0, fp = 0;
    for (std::size_t i = xs.size(); i > 0;) {
        const double v = xs[i - 1].score;
        while (i > 0 && xs[i - 1].score == v) {
            (xs[i - 1].is_human ? tp : fp) += 1;
            --i;
        }
        r.curve.emplace_back(static_cast<double>(fp) / q, static_cast<double>(tp) / p);
    }
    return r;
}

// ---------------------------------------------------------------------------
// Calibration artifact

struct CalibrationArtifact {
    std::uint64_t seed = 0;
    std::size_t n_per_class = 0;
    std::string corpus_fingerprint;
    double motion_theta = 0.0;
    double motion_quantile = 0.99;
    std::map<ChallengeKind, HumannessModel> models;
};

inline nlohmann::json to_json(const HumannessModel& m) {
    nlohmann::json means, stds, weights;
    for (std::size_t i = 0; i < kNumFeatures; ++i) {
        means[kFeatureNames[i]] = m.stats.mean[i];
        stds[kFeatureNames[i]] = m.stats.stddev[i];
        weights[kFeatureNames[i]] = m.weights.w[i];
    }
    return {{"means", means}, {"stds", stds}, {"weights", weights}, {"bias", m.weights.bias}, {"threshold", m.threshold}};
}

inline HumannessModel humanness_model_from_json(const nlohmann::json& j) {
    HumannessModel m;
    for (std::size_t i = 0; i < kNumFeatures; ++i) {
        m.stats.mean[i] = j.at("means").at(kFeatureNames[i]);
        m.stats.stddev[i] = j.at("stds").at(kFeatureNames[i]);
        m.weights.w[i] = j.at("weights").at(kFeatureNames[i]);
    }
    m.weights.bias = j.at("bias");
    m.threshold = j.at("threshold");
    return m;
}

inline nlohmann::json to_json(const CalibrationArtifact& a) {
    nlohmann::json models = nlohmann::json::object();
    for (const auto& [kind, m] : a.models) models[std::string(to_string(kind))] = to_json(m);
    return {{"version", 1},
            {"corpus", {{"seed", a.seed}, {"n_per_class", a.n_per_class}, {"fingerprint", a.corpus_fingerprint}}},
            {"motion", {{"theta", a.motion_theta}, {"quantile", a.motion_quantile}}},
            {"humanness", models}};
}

inline CalibrationArtifact calibration_from_json(const nlohmann::json& j) {
    CalibrationArtifact a;
    try {
        a.seed = j.at("corpus").at("seed");
        a.n_per_class = j.at("corpus").at("n_per_class");
        a.corpus_fingerprint = j.at("corpus").at("fingerprint");
        a.motion_theta = j.at("motion").at("theta");
        a.motion_quantile = j.at("motion").at("quantile");
        for (const auto& [name, mj] : j.at("humanness").items()) {
            const auto kind = parse_kind(name);
            if (!kind) throw Malformed("calibration names unknown kind " + name);
            a.models[*kind] = humanness_model_from_json(mj);
        }
    } catch (const nlohmann::json::exception& e) {
        throw Malformed(std::string("bad calibration artifact: ") + e.what());
    }
    return a;
}

inline std::string dump_calibration(const CalibrationArtifact& a) { return to_json(a).dump(2) + "\n"; }

inline void save_calibration(const CalibrationArtifact& a, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Malformed("cannot write " + path);
    out << dump_calibration(a);
}

inline CalibrationArtifact load_calibration(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Malformed("cannot open calibration artifact " + path);
    try {
        return calibration_from_json(nlohmann::json::parse(in));
    } catch (const nlohmann::json::parse_error& e) {
        throw Malformed(std::string("calibration artifact is not valid JSON: ") + e.what());
    }
}

}  // namespace vrcaptcha
