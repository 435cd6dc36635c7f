#pragma once

// Canonical trace serialization:
//   [{"t":0.011,"head":[x,y,z],"lh":[x,y,z],"rh":[x,y,z],"tl":0,"tr":1}, ...]
// Numbers are plain decimals with at most six fractional digits.

#include <cstdio>
#include <string>
#include <string_view>

#include <json.hpp>

#include "core.hpp"

namespace vrcaptcha {

/// Fixed-point decimal, <= 6 fractional digits, trailing zeros trimmed, no "-0".
inline std::string format_decimal(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.6f", v);
    std::string s(buf);
    if (auto dot = s.find('.'); dot != std::string::npos) {
        while (s.back() == '0') s.pop_back();
        if (s.back() == '.') s.pop_back();
    }
    if (s == "-0") s = "0";
    return s;
}

namespace detail {

inline void append_vec(std::string& out, const Vec3& v) {
    out += '[';
    out += format_decimal(v.x);
    out += ',';
    out += format_decimal(v.y);
    out += ',';
    out += format_decimal(v.z);
    out += ']';
}

inline Vec3 parse_vec(const nlohmann::json& j) {
    if (!j.is_array() || j.size() != 3) throw Malformed("position must be [x,y,z]");
    for (const auto& c : j)
        if (!c.is_number()) throw Malformed("position component must be a number");
    return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

inline bool parse_flag(const nlohmann::json& j) {
    if (j.is_boolean()) return j.get<bool>();
    if (j.is_number_integer()) {
        const auto v = j.get<long long>();
        if (v == 0 || v == 1) return v == 1;
    }
    throw Malformed("trigger flag must be 0 or 1");
}

}  // namespace detail

inline std::string serialize_trace(const InteractionTrace& trace) {
    std::string out;
    out.reserve(trace.samples.size() * 96 + 2);
    out += '[';
    bool first = true;
    for (const auto& s : trace.samples) {
        if (!first) out += ',';
        first = false;
        out += "{\"t\":";
        out += format_decimal(s.t);
        out += ",\"head\":";
        detail::append_vec(out, s.head);
        out += ",\"lh\":";
        detail::append_vec(out, s.left_hand);
        out += ",\"rh\":";
        detail::append_vec(out, s.right_hand);
        out += ",\"tl\":";
        out += s.trigger_left ? '1' : '0';
        out += ",\"tr\":";
        out += s.trigger_right ? '1' : '0';
        out += '}';
    }
    out += ']';
    return out;
}

/// Parses and validates a trace from its JSON array form.
inline InteractionTrace trace_from_json(const nlohmann::json& j, double declared_rate_hz = 50.0) {
    if (!j.is_array()) throw Malformed("trace must be an array");
    if (j.size() > kMaxTraceSamples) throw Malformed("trace exceeds sample limit");
    InteractionTrace trace;
    trace.declared_rate_hz = declared_rate_hz;
    trace.samples.reserve(j.size());
    for (const auto& r : j) {
        if (!r.is_object()) throw Malformed("trace record must be an object");
        for (const char* key : {"t", "head", "lh", "rh", "tl", "tr"})
            if (!r.contains(key)) throw Malformed(std::string("trace record missing ") + key);
        if (!r["t"].is_number()) throw Malformed("t must be a number");
        PoseSample s;
        s.t = r["t"].get<double>();
        s.head = detail::parse_vec(r["head"]);
        s.left_hand = detail::parse_vec(r["lh"]);
        s.right_hand = detail::parse_vec(r["rh"]);
        s.trigger_left = detail::parse_flag(r["tl"]);
        s.trigger_right = detail::parse_flag(r["tr"]);
        trace.samples.push_back(s);
    }
    validate(trace);
    return trace;
}

inline InteractionTrace parse_trace(std::string_view text, double declared_rate_hz = 50.0) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw Malformed(std::string("trace is not valid JSON: ") + e.what());
    }
    return trace_from_json(j, declared_rate_hz);
}

/// The canonical form: values rounded to what serialize_trace emits.
inline InteractionTrace canonicalize(const InteractionTrace& trace) {
    return parse_trace(serialize_trace(trace), trace.declared_rate_hz);
}

}  // namespace vrcaptcha
