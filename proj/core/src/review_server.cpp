#include "solarmap/review_server.hpp"

#include <thread>

#include <httplib.h>
#include <json.hpp>

#include "solarmap/error.hpp"

namespace solarmap::review {

namespace {

using nlohmann::json;

void send_error(httplib::Response& res, int status, std::string_view code, const std::string& msg) {
  res.status = status;
  const json body = {{"error", {{"code", code}, {"message", msg}}}};
  res.set_content(body.dump(), "application/json");
}

void send_json(httplib::Response& res, const json& body, int status = 200) {
  res.status = status;
  res.set_content(body.dump(2), "application/json");
}

json parse_body(const httplib::Request& req) {
  if (req.body.empty()) return json::object();
  json j = json::parse(req.body, nullptr, false);
  if (j.is_discarded() || !j.is_object()) {
    throw Error(ErrorCode::kFormat, "request body must be a JSON object");
  }
  return j;
}

std::string string_field(const json& j, const char* key, bool required) {
  if (!j.contains(key)) {
    if (required) throw Error(ErrorCode::kInvalidArgument, std::string("missing field '") + key + "'");
    return {};
  }
  if (!j.at(key).is_string()) {
    throw Error(ErrorCode::kInvalidArgument, std::string("field '") + key + "' must be a string");
  }
  return j.at(key).get<std::string>();
}

std::size_t parse_index(const std::string& s) {
  std::size_t pos = 0;
  unsigned long long v = 0;
  try {
    v = std::stoull(s, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos == 0 || pos != s.size()) {
    throw Error(ErrorCode::kInvalidArgument, "candidate index '" + s + "' is not a number");
  }
  return static_cast<std::size_t>(v);
}

WorldPoint point_from(const json& j) {
  if (!j.is_array() || j.size() != 2 || !j[0].is_number() || !j[1].is_number()) {
    throw Error(ErrorCode::kInvalidArgument, "expected a [x, y] coordinate pair");
  }
  return {j[0].get<double>(), j[1].get<double>()};
}

Ring ring_from(const json& j) {
  if (!j.is_array()) throw Error(ErrorCode::kInvalidArgument, "expected an array of coordinates");
  Ring r;
  for (const auto& p : j) r.push_back(point_from(p));
  return r;
}

Polygon outline_from(const json& j) {
  if (j.is_array()) return make_polygon(ring_from(j));
  if (!j.is_object() || !j.contains("exterior")) {
    throw Error(ErrorCode::kInvalidArgument, "outline must be a ring or {exterior, holes}");
  }
  std::vector<Ring> holes;
  if (j.contains("holes")) {
    for (const auto& h : j.at("holes")) holes.push_back(ring_from(h));
  }
  return make_polygon(ring_from(j.at("exterior")), std::move(holes));
}

json with_warnings(const Outcome& o) {
  return {{"session", json::parse(to_json(o.session))}, {"warnings", o.warnings}};
}

}  // namespace

int http_status(ErrorCode code) {
  switch (code) {
    case ErrorCode::kNotFound: return 404;
    case ErrorCode::kConflict:
    case ErrorCode::kDuplicate:
    case ErrorCode::kState: return 409;
    case ErrorCode::kInvalidArgument:
    case ErrorCode::kFormat:
    case ErrorCode::kRange:
    case ErrorCode::kGeometry: return 400;
    case ErrorCode::kSizeMismatch:
    case ErrorCode::kSingular:
    case ErrorCode::kNumeric: return 422;
    case ErrorCode::kIo: return 500;
  }
  return 500;
}

struct ReviewServer::Impl {
  explicit Impl(SessionStore& s) : store(s) { routes(); }

  // Runs a handler and turns any exception into a JSON error response.
  template <typename F>
  httplib::Server::Handler guarded(F f) {
    return [f](const httplib::Request& req, httplib::Response& res) {
      try {
        f(req, res);
      } catch (const Error& e) {
        send_error(res, http_status(e.code()), to_string(e.code()), e.what());
      } catch (const json::exception& e) {
        send_error(res, 400, to_string(ErrorCode::kInvalidArgument), e.what());
      } catch (const std::exception& e) {
        send_error(res, 500, "internal", e.what());
      }
    };
  }

  void routes() {
    server.Post("/sessions", guarded([this](const httplib::Request& req, httplib::Response& res) {
      const json body = parse_body(req);
      const Outcome o = store.create_session(string_field(body, "region", true),
                                             string_field(body, "predictions", true));
      send_json(res, with_warnings(o), 201);
    }));
    server.Get("/sessions", guarded([this](const httplib::Request&, httplib::Response& res) {
      json out = json::array();
      for (const auto& s : store.list()) {
        out.push_back({{"id", s.id},
                       {"region", s.region},
                       {"status", to_string(s.status)},
                       {"candidates", s.candidates.size()},
                       {"decided", s.decisions.size()},
                       {"missed", s.missed.size()},
                       {"updated_at", s.updated_at}});
      }
      send_json(res, {{"sessions", std::move(out)}});
    }));
    server.Get(R"(/sessions/([^/]+))",
               guarded([this](const httplib::Request& req, httplib::Response& res) {
                 send_json(res, json::parse(to_json(store.get(req.matches[1]))));
               }));
    server.Get(R"(/sessions/([^/]+)/candidates/([^/]+))",
               guarded([this](const httplib::Request& req, httplib::Response& res) {
                 const std::string id = req.matches[1];
                 const std::size_t index = parse_index(req.matches[2]);
                 json j = json::parse(to_json(store.candidate(id, index)));
                 j["crop_url"] = "/crops/" + id + "/" + std::to_string(index) + ".png";
                 send_json(res, j);
               }));
    server.Get(R"(/crops/([^/]+)/([^/]+)\.png)",
               guarded([this](const httplib::Request& req, httplib::Response& res) {
                 const auto png = store.crop_png(req.matches[1], parse_index(req.matches[2]));
                 res.set_content(std::string(png.begin(), png.end()), "image/png");
               }));
    server.Post(R"(/sessions/([^/]+)/verdicts)",
                guarded([this](const httplib::Request& req, httplib::Response& res) {
                  const std::string id = req.matches[1];
                  const json body = parse_body(req);
                  std::string candidate = string_field(body, "candidate", false);
                  if (candidate.empty()) {
                    if (!body.contains("index") || !body.at("index").is_number_unsigned()) {
                      throw Error(ErrorCode::kInvalidArgument,
                                  "verdict needs 'candidate' or a non-negative 'index'");
                    }
                    const auto s = store.get(id);
                    const auto index = body.at("index").get<std::size_t>();
                    if (index >= s.candidates.size()) {
                      throw Error(ErrorCode::kRange, "candidate index out of range");
                    }
                    candidate = s.candidates[index].id;
                  }
                  const VerdictLabel label =
                      verdict_label_from_string(string_field(body, "label", true));
                  const std::string note = string_field(body, "note", false);
                  const bool amend = body.value("amend", false);
                  const ReviewSession s = amend ? store.amend(id, candidate, label, note)
                                                : store.post_verdict(id, candidate, label, note);
                  send_json(res, json::parse(to_json(s)));
                }));
    server.Post(R"(/sessions/([^/]+)/missed)",
                guarded([this](const httplib::Request& req, httplib::Response& res) {
                  const json body = parse_body(req);
                  MissedMark mark;
                  if (body.contains("point")) mark.point = point_from(body.at("point"));
                  if (body.contains("outline")) mark.outline = outline_from(body.at("outline"));
                  if (body.contains("mode")) {
                    mark.mode = missed_mode_from_string(string_field(body, "mode", true));
                  }
                  mark.note = string_field(body, "note", false);
                  send_json(res, with_warnings(store.add_missed(req.matches[1], std::move(mark))));
                }));
    server.Post(R"(/sessions/([^/]+)/close)",
                guarded([this](const httplib::Request& req, httplib::Response& res) {
                  send_json(res, json::parse(to_json(store.close(req.matches[1]))));
                }));
    server.Get(R"(/sessions/([^/]+)/metrics)",
               guarded([this](const httplib::Request& req, httplib::Response& res) {
                 send_json(res, json::parse(to_json(store.metrics(req.matches[1]))));
               }));
    server.set_error_handler([](const httplib::Request& req, httplib::Response& res) {
      if (res.body.empty()) {
        send_error(res, res.status, res.status == 404 ? "not_found" : "http",
                   "no route for " + req.method + " " + req.path);
      }
    });
  }

  SessionStore& store;
  httplib::Server server;
  std::thread thread;
};

ReviewServer::ReviewServer(SessionStore& store) : impl_(std::make_unique<Impl>(store)) {}

ReviewServer::~ReviewServer() { stop(); }

int ReviewServer::start(const std::string& host, int port) {
  if (impl_->thread.joinable()) throw Error(ErrorCode::kState, "server already running");
  int bound = port;
  if (port == 0) {
    bound = impl_->server.bind_to_any_port(host);
  } else if (!impl_->server.bind_to_port(host, port)) {
    bound = -1;
  }
  if (bound < 0) {
    throw Error(ErrorCode::kIo, "cannot bind " + host + ":" + std::to_string(port));
  }
  impl_->thread = std::thread([this] { impl_->server.listen_after_bind(); });
  impl_->server.wait_until_ready();
  return bound;
}

void ReviewServer::run(const std::string& host, int port) {
  if (!impl_->server.listen(host, port)) {
    throw Error(ErrorCode::kIo, "cannot listen on " + host + ":" + std::to_string(port));
  }
}

void ReviewServer::stop() {
  impl_->server.stop();
  if (impl_->thread.joinable()) impl_->thread.join();
}

}  // namespace solarmap::review
