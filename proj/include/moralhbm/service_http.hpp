#pragma once

// HTTP+JSON front end for SessionManager.

#include <string>

#include <httplib.h>
#include <json.hpp>

#include "moralhbm/service.hpp"

namespace moralhbm {

class HttpService {
 public:
  explicit HttpService(SessionManager& sessions) : sessions_(sessions) { routes(); }

  httplib::Server& server() { return server_; }

  // Binds to `port` (0 picks a free one); returns the bound port or -1.
  int bind(const std::string& host, int port) {
    return port == 0 ? server_.bind_to_any_port(host) : (server_.bind_to_port(host, port) ? port : -1);
  }
  bool listen_after_bind() { return server_.listen_after_bind(); }
  void stop() { server_.stop(); }
  void wait_until_ready() const { server_.wait_until_ready(); }

 private:
  using Handler = std::function<json(const httplib::Request&, int&)>;

  static void reply(httplib::Response& res, int status, const json& body) {
    res.status = status;
    res.set_content(body.dump(), "application/json");
  }

  static json parse_body(const httplib::Request& req) {
    if (req.body.empty()) return json::object();
    try {
      return json::parse(req.body);
    } catch (const json::exception& e) {
      throw invalid_payload(std::string("malformed JSON: ") + e.what());
    }
  }

  httplib::Server::Handler wrap(Handler h) {
    return [h = std::move(h)](const httplib::Request& req, httplib::Response& res) {
      try {
        int status = 200;
        json body = h(req, status);
        reply(res, status, body);
      } catch (const ServiceError& e) {
        reply(res, e.status(), e.to_json());
      } catch (const std::exception& e) {
        reply(res, 500, {{"code", "internal"}, {"message", e.what()}});
      }
    };
  }

  void routes() {
    server_.Post("/sessions", wrap([this](const httplib::Request& req, int& status) {
                   status = 201;
                   return json{{"session_id", sessions_.create(parse_body(req))}};
                 }));
    server_.Get(R"(/sessions/([^/]+)/next)", wrap([this](const httplib::Request& req, int&) {
                  return sessions_.next(req.matches[1]);
                }));
    server_.Post(R"(/sessions/([^/]+)/judgments)", wrap([this](const httplib::Request& req, int&) {
                   const std::string id = req.matches[1];
                   // Unknown session outranks a bad body.
                   sessions_.with_session(id, [](Session&) { return 0; });
                   return sessions_.judge(id, parse_body(req));
                 }));
    server_.Get(R"(/sessions/([^/]+)/posterior)", wrap([this](const httplib::Request& req, int&) {
                  return sessions_.posterior(req.matches[1]);
                }));
    server_.Get(R"(/sessions/([^/]+)/history)", wrap([this](const httplib::Request& req, int&) {
                  return sessions_.history(req.matches[1]);
                }));
    server_.Post(R"(/sessions/([^/]+)/refine)", wrap([this](const httplib::Request& req, int&) {
                   const std::string id = req.matches[1];
                   sessions_.with_session(id, [](Session&) { return 0; });
                   return sessions_.refine(id, parse_body(req));
                 }));
    server_.set_error_handler([](const httplib::Request&, httplib::Response& res) {
      if (res.body.empty()) reply(res, res.status, {{"code", "not_found"}, {"message", "no such endpoint"}});
    });
  }

  SessionManager& sessions_;
  httplib::Server server_;
};

}  // namespace moralhbm
