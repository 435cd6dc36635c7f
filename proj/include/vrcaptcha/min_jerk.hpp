#pragma once

#include "core.hpp"

namespace vrcaptcha {

/// Minimum-jerk position profile s(tau) = 10 tau^3 - 15 tau^4 + 6 tau^5.
inline constexpr double min_jerk_profile(double tau) {
    const double t3 = tau * tau * tau;
    return t3 * (10.0 + tau * (-15.0 + 6.0 * tau));
}

/// ds/dtau = 30 tau^2 (1 - tau)^2.
inline constexpr double min_jerk_velocity_profile(double tau) {
    const double u = 1.0 - tau;
    return 30.0 * tau * tau * u * u;
}

/// Point-to-point minimum-jerk position at time t of a movement lasting duration.
inline Vec3 min_jerk(const Vec3& p0, const Vec3& p1, double duration, double t) {
    if (!(duration > 0.0) || !(t >= 0.0 && t <= duration)) throw Malformed("min_jerk requires 0 <= t <= T, T > 0");
    return p0 + (p1 - p0) * min_jerk_profile(t / duration);
}

}  // namespace vrcaptcha
