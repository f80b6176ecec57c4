#include "advgen/annotation_server.hpp"

#include "advgen/error.hpp"

#include <httplib.h>

namespace advgen::annotate {

using nlohmann::json;

namespace {

void send_json(httplib::Response& res, int status, const json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

void send_error(httplib::Response& res, int status, const std::string& message) {
  send_json(res, status, {{"error", message}});
}

/// Maps service exceptions onto status codes.
template <class Fn>
void guarded(httplib::Response& res, Fn&& fn) {
  try {
    fn();
  } catch (const ConflictError& e) {
    send_error(res, 409, e.what());
  } catch (const StalePageError& e) {
    send_error(res, 409, e.what());
  } catch (const ValidationError& e) {
    send_error(res, 400, e.what());
  } catch (const json::exception& e) {
    send_error(res, 400, std::string("malformed JSON: ") + e.what());
  } catch (const std::exception& e) {
    send_error(res, 500, e.what());
  }
}

std::vector<std::int64_t> parse_labels(const json& labels) {
  if (!labels.is_array()) throw ValidationError("labels must be an array");
  std::vector<std::int64_t> out;
  for (const auto& v : labels) {
    if (v.is_string() && v.get<std::string>() == "NA") {
      out.push_back(eval::kNA);
    } else if (v.is_number_integer()) {
      const auto x = v.get<std::int64_t>();
      if (x < 0) throw ValidationError("negative labels are not allowed; use \"NA\"");
      out.push_back(x);
    } else {
      throw ValidationError("labels are class indices or \"NA\"");
    }
  }
  return out;
}

}  // namespace

HttpServer::HttpServer(AnnotationService& service, std::optional<std::filesystem::path> static_dir)
    : service_(service), server_(std::make_unique<httplib::Server>()) {
  auto& svr = *server_;

  svr.Get("/api/page", [this](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      const auto worker = req.get_param_value("worker");
      if (worker.empty()) throw ValidationError("missing worker parameter");
      const auto mode = req.has_param("mode") ? parse_task_mode(req.get_param_value("mode")) : TaskMode::label;
      const auto page = service_.next_page(worker, mode);
      if (!page) {
        send_json(res, 200, {{"empty", true}});
      } else {
        auto body = page->to_json();
        body["empty"] = false;
        send_json(res, 200, body);
      }
    });
  });

  svr.Post(R"(/api/page/([^/]+))", [this](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      const auto body = json::parse(req.body);
      if (!body.is_object()) throw ValidationError("body must be an object");
      const auto worker = body.at("worker").get<std::string>();
      const auto ack = service_.submit_page(worker, req.matches[1].str(), parse_labels(body.at("labels")));
      send_json(res, 200, {{"page_id", ack.page_id}, {"records", ack.records}, {"duplicate", ack.duplicate}});
    });
  });

  svr.Post("/api/batches", [this](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      const auto id = service_.enqueue_batch(BatchInput::from_json(json::parse(req.body)));
      send_json(res, 200, {{"batch_id", id}});
    });
  });

  svr.Get("/api/stats", [this](const httplib::Request&, httplib::Response& res) {
    guarded(res, [&] { send_json(res, 200, service_.stats().to_json()); });
  });

  svr.Get(R"(/images/([^/]+)\.png)", [this](const httplib::Request& req, httplib::Response& res) {
    const auto png = service_.image_png(req.matches[1].str());
    if (!png) {
      send_error(res, 404, "unknown image");
      return;
    }
    res.set_content(std::string(png->begin(), png->end()), "image/png");
  });

  if (static_dir) {
    if (!svr.set_mount_point("/", static_dir->string())) {
      throw ValidationError("static asset directory " + static_dir->string() + " does not exist");
    }
  }
}

HttpServer::~HttpServer() { stop(); }

int HttpServer::bind(const std::string& host, int port) {
  if (port == 0) {
    const auto bound = server_->bind_to_any_port(host);
    if (bound < 0) throw Error("cannot bind " + host);
    return bound;
  }
  if (!server_->bind_to_port(host, port)) throw Error("cannot bind " + host + ":" + std::to_string(port));
  return port;
}

void HttpServer::serve() { server_->listen_after_bind(); }

void HttpServer::stop() {
  if (server_) server_->stop();
}

void HttpServer::wait_until_ready() const { server_->wait_until_ready(); }

}  // namespace advgen::annotate
