#include "tma/http_server.hpp"

#include <httplib.h>

#include <cstdlib>
#include <sstream>

namespace tma {

std::string bind_address_from_env() {
  const char* v = std::getenv("TMA_BIND_ADDRESS");
  return v && *v ? v : "127.0.0.1";
}

namespace {

void send_json(httplib::Response& res, int code, const nlohmann::json& j) {
  res.status = code;
  res.set_content(j.dump(), "application/json");
}

void send_error(httplib::Response& res, int code, const std::string& msg,
                const std::vector<FieldError>& fields = {}) {
  nlohmann::json f = nlohmann::json::array();
  for (const auto& e : fields) f.push_back({{"field", e.field}, {"message", e.message}});
  send_json(res, code, {{"error", msg}, {"fields", f}});
}

// Maps the service's error taxonomy onto status codes.
template <class F>
void guarded(httplib::Response& res, F&& f) {
  try {
    f();
  } catch (const BadRequest& e) {
    send_error(res, 400, e.what(), e.fields);
  } catch (const NotFound& e) {
    send_error(res, 404, e.what());
  } catch (const Conflict& e) {
    send_error(res, 409, e.what());
  } catch (const ServiceBusy& e) {
    res.set_header("Retry-After", "1");
    send_error(res, 503, e.what());
  } catch (const InvalidArgument& e) {
    send_error(res, 400, e.what());
  } catch (const SchemaError& e) {
    send_error(res, 400, e.what());
  } catch (const ParseError& e) {
    send_error(res, 400, e.what());
  } catch (const std::exception& e) {
    send_error(res, 500, e.what());
  }
}

nlohmann::json parse_body(const httplib::Request& req) {
  try {
    return req.body.empty() ? nlohmann::json::object() : nlohmann::json::parse(req.body);
  } catch (const nlohmann::json::parse_error& e) {
    throw BadRequest("body is not valid JSON", {{"", e.what()}});
  }
}

int batch_param(const httplib::Request& req) {
  if (!req.has_param("batch")) throw BadRequest("batch is required", {{"batch", "required"}});
  const std::string v = req.get_param_value("batch");
  try {
    std::size_t used = 0;
    const int b = std::stoi(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return b;
  } catch (const std::exception&) {
    throw BadRequest("batch must be an integer", {{"batch", "must be an integer"}});
  }
}

}  // namespace

struct HttpServer::Impl {
  AnnotationService& svc;
  HttpOptions opts;
  httplib::Server server;

  Impl(AnnotationService& s, HttpOptions o) : svc(s), opts(std::move(o)) { routes(); }

  void routes() {
    server.Post("/sessions", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(res, [&] {
        const std::string id = svc.create_session(parse_body(req));
        send_json(res, 201, {{"session_id", id}, {"status", (*svc.status(id))["phase"]}});
      });
    });
    server.Get("/sessions", [this](const httplib::Request&, httplib::Response& res) {
      guarded(res, [&] { send_json(res, 200, {{"sessions", svc.sessions()}}); });
    });
    server.Get(R"(/sessions/([A-Za-z0-9_-]+)/tasks)",
               [this](const httplib::Request& req, httplib::Response& res) {
                 guarded(res, [&] {
                   const std::string id = req.matches[1];
                   const int b = batch_param(req);
                   const bool all = req.has_param("all") && req.get_param_value("all") == "1";
                   auto tasks = all ? svc.batch_tasks(id, b) : svc.next_tasks(id, b);
                   send_json(res, 200, {{"session_id", id}, {"batch", b}, {"tasks", tasks}});
                 });
               });
    server.Post(R"(/sessions/([A-Za-z0-9_-]+)/tasks/([A-Za-z0-9_-]+)/label)",
                [this](const httplib::Request& req, httplib::Response& res) {
                  guarded(res, [&] {
                    const std::string id = req.matches[1], tid = req.matches[2];
                    const nlohmann::json body = parse_body(req);
                    if (!body.is_object() || !body.contains("label") || !body["label"].is_number_integer())
                      throw BadRequest("label must be -1 or +1", {{"label", "must be -1 or +1"}});
                    LabelSource src = LabelSource::Human;
                    if (body.contains("source")) {
                      try {
                        src = label_source_from_string(body["source"].get<std::string>());
                      } catch (const std::exception& e) {
                        throw BadRequest("bad source", {{"source", e.what()}});
                      }
                    }
                    const AnnotationTask t = svc.submit_label(id, tid, body["label"].get<int>(), src);
                    send_json(res, 200, {{"task", t}, {"status", (*svc.status(id))["phase"]}});
                  });
                });
    server.Post(R"(/sessions/([A-Za-z0-9_-]+)/tasks/([A-Za-z0-9_-]+)/skip)",
                [this](const httplib::Request& req, httplib::Response& res) {
                  guarded(res, [&] {
                    const std::string id = req.matches[1], tid = req.matches[2];
                    const AnnotationTask t = svc.skip_task(id, tid);
                    send_json(res, 200, {{"task", t}, {"status", (*svc.status(id))["phase"]}});
                  });
                });
    server.Get(R"(/sessions/([A-Za-z0-9_-]+)/status)",
               [this](const httplib::Request& req, httplib::Response& res) {
                 guarded(res, [&] { send_json(res, 200, *svc.status(req.matches[1])); });
               });
    server.Get(R"(/sessions/([A-Za-z0-9_-]+)/report)",
               [this](const httplib::Request& req, httplib::Response& res) {
                 guarded(res, [&] {
                   const EvalReport r = svc.report(req.matches[1]);
                   if (req.has_param("format") && req.get_param_value("format") == "csv") {
                     std::ostringstream out;
                     write_cmc_csv(out, r);
                     res.set_content(out.str(), "text/csv");
                   } else {
                     send_json(res, 200, r);
                   }
                 });
               });
    if (opts.image_root && !server.set_mount_point("/images", opts.image_root->string()))
      throw InvalidArgument("image root " + opts.image_root->string() + " is not a directory");
    if (opts.ui_root && !server.set_mount_point("/", opts.ui_root->string()))
      throw InvalidArgument("ui root " + opts.ui_root->string() + " is not a directory");
  }
};

HttpServer::HttpServer(AnnotationService& service, HttpOptions opts)
    : impl_(std::make_unique<Impl>(service, std::move(opts))) {}

HttpServer::~HttpServer() { stop(); }

int HttpServer::bind() {
  auto& o = impl_->opts;
  const int port = o.port == 0 ? impl_->server.bind_to_any_port(o.host)
                               : (impl_->server.bind_to_port(o.host, o.port) ? o.port : -1);
  if (port <= 0) throw std::runtime_error("cannot bind " + o.host + ":" + std::to_string(o.port));
  return port;
}

void HttpServer::serve() { impl_->server.listen_after_bind(); }

void HttpServer::stop() {
  if (impl_) impl_->server.stop();
}

}  // namespace tma
