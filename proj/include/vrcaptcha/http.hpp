#pragma once

// HTTP binding of the gateway:
//   POST /v1/challenges                       {"kind": optional}      -> issued challenge
//   POST /v1/challenges/{challenge_id}/answer {"token", "answer"}     -> verdict
//   GET  /v1/health                                                   -> {"status","live_sessions"}

#include <memory>
#include <string>

#include <httplib.h>
#include <json.hpp>

#include "gateway.hpp"

namespace vrcaptcha {

namespace detail {

inline void send_json(httplib::Response& res, int status, const nlohmann::json& body) {
    res.status = status;
    res.set_content(body.dump(), "application/json");
}

inline void send_error(httplib::Response& res, int status, const std::string& message) {
    send_json(res, status, {{"error", message}});
}

}  // namespace detail

/// Registers the wire protocol routes on `server`. The gateway must outlive the server.
inline void mount_routes(httplib::Server& server, Gateway& gateway) {
    using nlohmann::json;

    server.Post("/v1/challenges", [&gateway](const httplib::Request& req, httplib::Response& res) {
        json body = json::object();
        if (!req.body.empty()) {
            body = json::parse(req.body, nullptr, false);
            if (body.is_discarded() || !body.is_object()) return detail::send_error(res, 400, "body must be a JSON object");
        }
        std::optional<ChallengeKind> kind;
        if (body.contains("kind") && !body["kind"].is_null()) {
            if (!body["kind"].is_string()) return detail::send_error(res, 400, "kind must be a string");
            kind = parse_kind(body["kind"].get<std::string>());
            if (!kind) return detail::send_error(res, 400, "unknown kind");
        }
        try {
            detail::send_json(res, 200, gateway.issue(kind).to_json());
        } catch (const CapacityExceeded& e) {
            detail::send_error(res, 503, e.what());
        }
    });

    server.Post(R"(/v1/challenges/([^/]+)/answer)", [&gateway](const httplib::Request& req, httplib::Response& res) {
        const std::string challenge_id = req.matches[1];
        json body = json::parse(req.body, nullptr, false);
        if (body.is_discarded() || !body.is_object()) return detail::send_error(res, 400, "body must be a JSON object");
        if (!body.contains("token") || !body["token"].is_string())
            return detail::send_json(res, 200, to_json(Verdict::fail(Reason::malformed)));
        const std::string token = body["token"];
        Verdict v;
        try {
            const Answer answer = answer_from_json(body.value("answer", json()));
            v = gateway.submit(token, challenge_id, answer);
        } catch (const Malformed&) {
            v = gateway.submit_malformed(token, challenge_id);
        }
        detail::send_json(res, 200, to_json(v));
    });

    server.Get("/v1/health", [&gateway](const httplib::Request&, httplib::Response& res) {
        detail::send_json(res, 200, {{"status", "ok"}, {"live_sessions", gateway.live_sessions()}});
    });
}

}  // namespace vrcaptcha
