#pragma once

#include <memory>
#include <string>

#include "solarmap/error.hpp"
#include "solarmap/review.hpp"

namespace solarmap::review {

/// HTTP/JSON front end over a SessionStore.
///
///   POST /sessions                      {"region", "predictions"}
///   GET  /sessions
///   GET  /sessions/{id}
///   GET  /sessions/{id}/candidates/{i}  metadata, overlay and crop_url
///   GET  /crops/{id}/{i}.png
///   POST /sessions/{id}/verdicts        {"candidate" | "index", "label", "note", "amend"}
///   POST /sessions/{id}/missed          {"point" | "outline", "mode", "note"}
///   POST /sessions/{id}/close
///   GET  /sessions/{id}/metrics
///
/// Failures answer {"error": {"code", "message"}} with a matching status.
class ReviewServer {
 public:
  explicit ReviewServer(SessionStore& store);
  ~ReviewServer();
  ReviewServer(const ReviewServer&) = delete;
  ReviewServer& operator=(const ReviewServer&) = delete;

  /// Serves on a background thread and returns the bound port; port 0 picks
  /// a free one.
  int start(const std::string& host = "127.0.0.1", int port = 0);
  /// Serves on the calling thread until stop() is called from elsewhere.
  void run(const std::string& host, int port);
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

/// HTTP status used for an error code.
int http_status(ErrorCode code);

}  // namespace solarmap::review
