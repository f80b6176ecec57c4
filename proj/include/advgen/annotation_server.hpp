#pragma once

#include "advgen/annotation.hpp"

#include <filesystem>
#include <memory>
#include <optional>
#include <string>

namespace httplib {
class Server;
}

namespace advgen::annotate {

/// HTTP JSON front end:
///   GET  /api/page?worker=ID[&mode=label|ab] -> TaskPage, or {"empty":true}
///   POST /api/page/{page_id}  {"worker":ID,"labels":[...]} -> ack
///   POST /api/batches         BatchInput JSON -> {"batch_id":...}
///   GET  /api/stats
///   GET  /images/{id}.png
/// plus static assets from `static_dir` when given. Labels use "NA" for kNA.
/// Errors: 400 validation, 404 unknown, 409 stale page or expired lease (retriable).
class HttpServer {
 public:
  HttpServer(AnnotationService& service, std::optional<std::filesystem::path> static_dir = std::nullopt);
  ~HttpServer();

  /// Binds and returns the port (0 picks a free one).
  int bind(const std::string& host, int port);
  /// Blocks until stop().
  void serve();
  void stop();
  void wait_until_ready() const;

 private:
  AnnotationService& service_;
  std::unique_ptr<httplib::Server> server_;
};

}  // namespace advgen::annotate
