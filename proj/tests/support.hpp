#pragma once

#include <functional>

#include <gtest/gtest.h>

#include "vrcaptcha/core.hpp"

namespace testsupport {

using vrcaptcha::InteractionTrace;
using vrcaptcha::PoseSample;
using vrcaptcha::Vec3;

/// Uniformly sampled trace whose right hand follows `path(t)`; left hand and head fixed.
inline InteractionTrace trace_along(const std::function<Vec3(double)>& path, double duration, double rate_hz,
                                    Vec3 head = {0.0, 1.6, 0.0}) {
    InteractionTrace tr;
    tr.declared_rate_hz = rate_hz;
    const auto n = static_cast<int>(std::llround(duration * rate_hz));
    for (int k = 0; k <= n; ++k) {
        const double t = k / rate_hz;
        PoseSample s;
        s.t = t;
        s.head = head;
        s.left_hand = {-0.2, 0.85, 0.05};
        s.right_hand = path(t);
        tr.samples.push_back(s);
    }
    return tr;
}

inline InteractionTrace straight_line(Vec3 a, Vec3 b, double duration, double rate_hz) {
    return trace_along([=](double t) { return vrcaptcha::lerp(a, b, t / duration); }, duration, rate_hz);
}

inline void expect_near(const Vec3& a, const Vec3& b, double tol) {
    EXPECT_NEAR(a.x, b.x, tol);
    EXPECT_NEAR(a.y, b.y, tol);
    EXPECT_NEAR(a.z, b.z, tol);
}

}  // namespace testsupport
