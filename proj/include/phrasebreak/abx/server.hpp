#pragma once

#include <filesystem>
#include <fstream>
#include <optional>
#include <string>

#include "httplib.h"
#include "json.hpp"
#include "phrasebreak/abx/store.hpp"
#include "phrasebreak/error.hpp"

namespace phrasebreak::abx {

inline int http_status_for(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::not_found: return 404;
    case ErrorKind::duplicate: return 409;
    case ErrorKind::out_of_order: return 422;
    case ErrorKind::out_of_range:
    case ErrorKind::invalid_argument:
    case ErrorKind::parse: return 400;
    default: return 500;
  }
}

inline std::string audio_url(const std::string& token) { return "/api/audio/" + token; }

// Client view of a session: no condition or story names, only opaque audio URLs.
inline nlohmann::ordered_json session_view(const SessionState& state) {
  nlohmann::ordered_json j;
  j["session_id"] = state.session.session_id;
  auto& trials = j["trials"] = nlohmann::ordered_json::array();
  for (const auto& t : state.session.trials) {
    trials.push_back({{"index", t.index}, {"audio_a_url", audio_url(t.audio_a_token)}, {"audio_b_url", audio_url(t.audio_b_token)}});
  }
  j["completed_trials"] = state.answered_count;
  const auto next = state.next_trial();
  j["next_trial"] = next ? nlohmann::ordered_json(*next) : nlohmann::ordered_json(nullptr);
  j["completed"] = state.completed();
  return j;
}

struct ServerOptions {
  std::optional<std::filesystem::path> static_dir;  // frontend bundle mounted at /
  std::string admin_secret;                          // empty disables /api/export
};

/// Routes:
///   POST /api/sessions                 -> 201 session view
///   GET  /api/sessions/{id}            -> 200 session view (resume)
///   POST /api/sessions/{id}/responses  -> 204 | 400 | 404 | 409 | 422
///   GET  /api/audio/{token}            -> 200 audio bytes
///   GET  /api/export                   -> 200 JSON Lines (X-Admin-Secret)
class AbxServer {
 public:
  AbxServer(AbxStore& store, ServerOptions options) : store_(store), options_(std::move(options)) { install_routes(); }

  httplib::Server& http() { return server_; }

  bool listen(const std::string& host, int port) { return server_.listen(host, port); }
  int bind_to_any_port(const std::string& host) { return server_.bind_to_any_port(host); }
  bool listen_after_bind() { return server_.listen_after_bind(); }
  void stop() { server_.stop(); }
  void wait_until_ready() { server_.wait_until_ready(); }

 private:
  static void send_error(httplib::Response& res, int status, std::string_view kind, const std::string& message) {
    nlohmann::ordered_json j{{"error", kind}, {"message", message}};
    res.status = status;
    res.set_content(j.dump(), "application/json");
  }

  template <typename Handler>
  static auto guarded(Handler h) {
    return [h](const httplib::Request& req, httplib::Response& res) {
      try {
        h(req, res);
      } catch (const Error& e) {
        send_error(res, http_status_for(e.kind()), to_string(e.kind()), e.what());
      } catch (const nlohmann::json::exception& e) {
        send_error(res, 400, "parse_error", e.what());
      } catch (const std::exception& e) {
        send_error(res, 500, "internal_error", e.what());
      }
    };
  }

  void install_routes() {
    server_.Post("/api/sessions", guarded([this](const httplib::Request&, httplib::Response& res) {
                   const auto s = store_.create_session();
                   res.status = 201;
                   res.set_content(session_view(store_.session(s.session_id)).dump(), "application/json");
                 }));

    server_.Get(R"(/api/sessions/([0-9a-f]+))", guarded([this](const httplib::Request& req, httplib::Response& res) {
                  res.set_content(session_view(store_.session(req.matches[1])).dump(), "application/json");
                }));

    server_.Post(R"(/api/sessions/([0-9a-f]+)/responses)",
                 guarded([this](const httplib::Request& req, httplib::Response& res) {
                   const auto body = nlohmann::json::parse(req.body);
                   if (!body.contains("trial") || !body["trial"].is_number_integer()) {
                     fail(ErrorKind::invalid_argument, "body needs an integer 'trial'");
                   }
                   if (!body.contains("choice") || !body["choice"].is_string()) {
                     fail(ErrorKind::invalid_argument, "body needs a string 'choice'");
                   }
                   store_.record_response(req.matches[1], body["trial"].get<long long>(),
                                          choice_from_string(body["choice"].get<std::string>()));
                   res.status = 204;
                 }));

    server_.Get(R"(/api/audio/([0-9a-f]+))", guarded([this](const httplib::Request& req, httplib::Response& res) {
                  const auto ref = store_.audio(req.matches[1]);
                  std::ifstream in(ref.path, std::ios::binary);
                  if (!in) fail(ErrorKind::io, "audio unavailable");
                  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
                  res.set_header("Cache-Control", "no-store");
                  res.set_content(std::move(bytes), ref.media_type);
                }));

    server_.Get("/api/export", guarded([this](const httplib::Request& req, httplib::Response& res) {
                  if (options_.admin_secret.empty()) {
                    send_error(res, 403, "forbidden", "export disabled: no admin secret configured");
                    return;
                  }
                  if (req.get_header_value("X-Admin-Secret") != options_.admin_secret) {
                    send_error(res, 401, "unauthorized", "missing or wrong X-Admin-Secret");
                    return;
                  }
                  res.set_content(store_.export_raw(), "application/x-ndjson");
                }));

    if (options_.static_dir) {
      if (!server_.set_mount_point("/", options_.static_dir->string())) {
        fail(ErrorKind::io, "cannot serve static files from " + options_.static_dir->string());
      }
    } else {
      server_.Get("/", [](const httplib::Request&, httplib::Response& res) {
        res.set_content("ABX service is running; no frontend bundle mounted.\n", "text/plain");
      });
    }
  }

  AbxStore& store_;
  ServerOptions options_;
  httplib::Server server_;
};

}  // namespace phrasebreak::abx
