#pragma once

#include <memory>
#include <mutex>
#include <optional>
#include <string>

#include "tsal/alloop.hpp"

namespace tsal {

struct HttpReply {
  int status = 200;
  std::string body;  // JSON, empty for 204
};

/// HTTP-facing owner of the single active run. Every handler takes the same
/// lock, so state changes are strictly sequential.
///
///   POST /runs               {config}                        -> {run_id}
///   GET  /runs/{id}/next                                     -> window payload, or 204 once finished
///   POST /runs/{id}/label    {window_id, animal_points:[{px,py}]} -> {accepted, cumulative_found}
///   GET  /runs/{id}/metrics                                  -> metric table
class Service {
 public:
  Service(std::shared_ptr<const Dataset> dataset, std::string dataset_ref = {});

  HttpReply create_run(const std::string& body);
  HttpReply next(const std::string& run_id);
  HttpReply label(const std::string& run_id, const std::string& body);
  HttpReply metrics(const std::string& run_id);

  // Snapshot of the active run, if any.
  std::optional<RunState> snapshot(const std::string& run_id) const;

 private:
  struct Run {
    std::string run_id;
    std::string created_at;
    std::unique_ptr<Session> session;
  };

  std::shared_ptr<const Dataset> dataset_;
  std::string dataset_ref_;
  mutable std::mutex mutex_;
  std::optional<Run> run_;
  int counter_ = 0;
};

/// Binds the service routes to a listening socket on a background thread.
class HttpServer {
 public:
  explicit HttpServer(Service& service);
  ~HttpServer();
  HttpServer(const HttpServer&) = delete;
  HttpServer& operator=(const HttpServer&) = delete;

  // Returns the bound port (an ephemeral one when `port` is 0).
  int start(const std::string& host, int port);
  // Blocks until stop() is called from another thread or a signal handler.
  void wait();
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace tsal
