#pragma once

// JSON over HTTP in front of AnnotationService.
//
//   POST /sessions                        {"manifest", "config"?, "session_id"?} -> 201 {"session_id","status"}
//   GET  /sessions                        -> {"sessions": [...]}
//   GET  /sessions/{id}/tasks?batch=b     -> {"session_id","batch","tasks":[task...]}   pending only
//   GET  /sessions/{id}/tasks?batch=b&all=1                                            every state
//   POST /sessions/{id}/tasks/{tid}/label {"label": 1|-1, "source"?} -> {"task", "status"}
//   POST /sessions/{id}/tasks/{tid}/skip  -> {"task", "status"}
//   GET  /sessions/{id}/status            -> status document
//   GET  /sessions/{id}/report            -> EvalReport JSON; ?format=csv for the CMC table
//   GET  /images/...                      files under the image root
//   GET  /...                             the UI bundle, when a UI directory is given
//
// Errors are {"error": message, "fields": [{"field","message"}]} with 400 for
// malformed requests, 404 unknown session/batch/task, 409 a task that is not
// pending, 503 a batch that cannot be selected while an update runs.

#include "tma/service.hpp"

#include <memory>
#include <optional>

namespace tma {

struct HttpOptions {
  std::string host = "127.0.0.1";
  int port = 8080;  // 0 picks a free port
  std::optional<std::filesystem::path> image_root;
  std::optional<std::filesystem::path> ui_root;
};

/// TMA_BIND_ADDRESS if set, otherwise 127.0.0.1.
std::string bind_address_from_env();

class HttpServer {
 public:
  HttpServer(AnnotationService& service, HttpOptions opts);
  ~HttpServer();

  /// Binds the socket; returns the bound port. Throws on failure.
  int bind();
  /// Serves until stop(); call after bind().
  void serve();
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace tma
