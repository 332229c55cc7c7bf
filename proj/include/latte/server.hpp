#pragma once

#include <functional>
#include <string>

#include "httplib.h"
#include "json.hpp"
#include "latte/error.hpp"
#include "latte/session.hpp"

namespace latte {

inline int http_status(const Error& e) {
  const auto& c = e.code();
  if (c == "schema_error") return 400;
  if (c == "not_found") return 404;
  if (c == "conflict") return 409;
  if (c == "io_error") return 500;
  return 422;
}

/// {"error": {"code", "message", "path"?, "span"?}}
inline nlohmann::json error_body(const std::string& code, const std::string& message, const std::string& path = "",
                                 const std::string& span = "") {
  nlohmann::json e = {{"code", code}, {"message", message}};
  if (!path.empty()) e["path"] = path;
  if (!span.empty()) e["span"] = span;
  return {{"error", e}};
}

namespace detail {

inline void send_json(httplib::Response& res, int status, const nlohmann::json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

inline nlohmann::json parse_body(const httplib::Request& req) {
  if (req.body.empty()) return nlohmann::json::object();
  try {
    return nlohmann::json::parse(req.body);
  } catch (const nlohmann::json::parse_error& e) {
    throw SchemaError("malformed JSON (byte " + std::to_string(e.byte) + ")", "$");
  }
}

template <typename F>
void guarded(httplib::Response& res, F&& f) {
  try {
    send_json(res, 200, f());
  } catch (const ParseError& e) {
    send_json(res, http_status(e), error_body(e.code(), e.what(), "text", e.span()));
  } catch (const SchemaError& e) {
    send_json(res, 400, error_body(e.code(), e.what(), e.path()));
  } catch (const Error& e) {
    send_json(res, http_status(e), error_body(e.code(), e.what()));
  } catch (const nlohmann::json::exception& e) {
    send_json(res, 400, error_body("schema_error", e.what()));
  } catch (const std::exception& e) {
    send_json(res, 500, error_body("internal_error", e.what()));
  }
}

}  // namespace detail

/// Registers the REST routes of `service` on `server`.
inline void install_routes(httplib::Server& server, SessionService& service, const std::string& static_dir = "") {
  using detail::guarded;
  using detail::parse_body;
  server.Get("/healthz", [&](const httplib::Request&, httplib::Response& res) {
    guarded(res, [&] { return service.health(); });
  });
  server.Post("/sessions", [&](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] { return service.create(parse_body(req)); });
    if (res.status == 200) res.status = 201;
  });
  server.Get(R"(/sessions/([^/]+))", [&](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] { return service.get(req.matches[1]); });
  });
  server.Post(R"(/sessions/([^/]+)/reshape)", [&](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      const bool attn = req.has_param("attn") && req.get_param_value("attn") != "0";
      return service.reshape(req.matches[1], parse_body(req), attn);
    });
  });
  server.Post(R"(/sessions/([^/]+)/accept)", [&](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] { return service.accept(req.matches[1]); });
  });
  server.Post(R"(/sessions/([^/]+)/undo)", [&](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] { return service.undo(req.matches[1]); });
  });
  if (!static_dir.empty() && !server.set_mount_point("/", static_dir)) {
    throw IoError("cannot serve static files from '" + static_dir + "'");
  }
}

}  // namespace latte
