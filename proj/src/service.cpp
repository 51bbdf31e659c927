#include "tsal/service.hpp"

#include <chrono>
#include <ctime>
#include <thread>

#include "httplib.h"
#include "json.hpp"

namespace tsal {

using nlohmann::json;

namespace {

HttpReply error(int status, const std::string& message) { return {status, json{{"error", message}}.dump()}; }

json rect_json(const WindowRect& r) { return {{"r_x", r.x}, {"r_y", r.y}, {"r_w", r.w}, {"r_h", r.h}}; }

std::string utc_now() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buffer[32];
  std::strftime(buffer, sizeof(buffer), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buffer;
}

}  // namespace

Service::Service(std::shared_ptr<const Dataset> dataset, std::string dataset_ref)
    : dataset_(std::move(dataset)), dataset_ref_(std::move(dataset_ref)) {
  if (!dataset_) throw std::invalid_argument("service needs a dataset");
}

HttpReply Service::create_run(const std::string& body) {
  std::lock_guard lock(mutex_);
  if (run_ && run_->session->status() != RunStatus::finished) {
    return error(409, "run " + run_->run_id + " is still active");
  }
  LoopConfig config;
  try {
    const json j = body.empty() ? json::object() : json::parse(body);
    if (!j.is_object()) return error(400, "body must be a JSON object");
    const json& c = j.contains("config") ? j.at("config") : j;
    config = loop_config_from_json(c.dump());
  } catch (const json::exception& e) {
    return error(400, e.what());
  } catch (const std::invalid_argument& e) {
    return error(422, e.what());
  }
  try {
    auto session = std::make_unique<Session>(*dataset_, config);
    Run run{"run-" + std::to_string(++counter_), utc_now(), std::move(session)};
    run_ = std::move(run);
    json reply = {{"run_id", run_->run_id}, {"created_at", run_->created_at},
                  {"status", std::string(to_string(run_->session->status()))}};
    if (!dataset_ref_.empty()) reply["dataset"] = dataset_ref_;
    return {201, reply.dump()};
  } catch (const std::exception& e) {
    return error(422, e.what());
  }
}

HttpReply Service::next(const std::string& run_id) {
  std::lock_guard lock(mutex_);
  if (!run_ || run_->run_id != run_id) return error(404, "unknown run " + run_id);
  Session& session = *run_->session;
  const QueriedWindow* w = nullptr;
  try {
    w = session.next();
  } catch (const std::exception& e) {
    return error(500, e.what());
  }
  if (!w) return {204, ""};
  json markers = json::array();
  for (const CandidateMarker& m : session.pending_markers()) {
    markers.push_back({{"px", m.px}, {"py", m.py}, {"confidence", m.confidence}});
  }
  json prior = json::array();
  for (const WindowRect& r : session.prior_rects(w->image_id)) prior.push_back(rect_json(r));
  const json reply = {{"window_id", w->window_id},   {"image_id", w->image_id},   {"rect", rect_json(w->rect)},
                      {"candidate_markers", markers}, {"prior_rects", prior},       {"iteration", w->iteration},
                      {"query_index", w->query_index}};
  return {200, reply.dump()};
}

HttpReply Service::label(const std::string& run_id, const std::string& body) {
  std::lock_guard lock(mutex_);
  if (!run_ || run_->run_id != run_id) return error(404, "unknown run " + run_id);
  std::string window_id;
  std::vector<PixelPoint> points;
  try {
    const json j = json::parse(body);
    if (!j.is_object() || !j.contains("window_id") || !j.at("window_id").is_string() || !j.contains("animal_points") ||
        !j.at("animal_points").is_array()) {
      return error(400, "expected {window_id: string, animal_points: [{px, py}]}");
    }
    window_id = j.at("window_id").get<std::string>();
    for (const json& p : j.at("animal_points")) {
      if (!p.is_object() || !p.contains("px") || !p.contains("py") || !p.at("px").is_number() ||
          !p.at("py").is_number()) {
        return error(400, "animal point must be {px: number, py: number}");
      }
      points.push_back({p.at("px").get<double>(), p.at("py").get<double>()});
    }
  } catch (const json::exception& e) {
    return error(400, e.what());
  }
  try {
    const int found = run_->session->submit(window_id, points);
    return {200, json{{"accepted", true}, {"cumulative_found", found}}.dump()};
  } catch (const ConflictError& e) {
    return error(409, e.what());
  } catch (const std::invalid_argument& e) {
    return error(422, e.what());
  }
}

HttpReply Service::metrics(const std::string& run_id) {
  std::lock_guard lock(mutex_);
  if (!run_ || run_->run_id != run_id) return error(404, "unknown run " + run_id);
  const RunState& s = run_->session->state();
  json rows = json::array();
  for (const MetricRow& r : s.metrics) {
    rows.push_back({{"iteration", r.iteration},
                    {"queries", r.queries},
                    {"cumulative_found", r.cumulative_found},
                    {"recall", r.recall},
                    {"fraction_reviewed", r.fraction_reviewed}});
  }
  const json reply = {{"run_id", run_id},
                      {"status", std::string(to_string(s.status))},
                      {"queries", s.windows.size()},
                      {"cumulative_found", s.found.size()},
                      {"total_animals", run_->session->total_animals()},
                      {"rows", rows}};
  return {200, reply.dump()};
}

std::optional<RunState> Service::snapshot(const std::string& run_id) const {
  std::lock_guard lock(mutex_);
  if (!run_ || run_->run_id != run_id) return std::nullopt;
  return run_->session->state();
}

struct HttpServer::Impl {
  Service& service;
  httplib::Server server;
  std::thread thread;

  explicit Impl(Service& s) : service(s) {}
};

namespace {

void send(httplib::Response& res, const HttpReply& reply) {
  res.status = reply.status;
  if (!reply.body.empty()) res.set_content(reply.body, "application/json");
}

}  // namespace

HttpServer::HttpServer(Service& service) : impl_(std::make_unique<Impl>(service)) {
  auto& server = impl_->server;
  Service& svc = impl_->service;
  server.Post("/runs", [&svc](const httplib::Request& req, httplib::Response& res) { send(res, svc.create_run(req.body)); });
  server.Get(R"(/runs/([^/]+)/next)", [&svc](const httplib::Request& req, httplib::Response& res) {
    send(res, svc.next(req.matches[1]));
  });
  server.Post(R"(/runs/([^/]+)/label)", [&svc](const httplib::Request& req, httplib::Response& res) {
    send(res, svc.label(req.matches[1], req.body));
  });
  server.Get(R"(/runs/([^/]+)/metrics)", [&svc](const httplib::Request& req, httplib::Response& res) {
    send(res, svc.metrics(req.matches[1]));
  });
}

HttpServer::~HttpServer() { stop(); }

int HttpServer::start(const std::string& host, int port) {
  const int bound = port == 0 ? impl_->server.bind_to_any_port(host) : (impl_->server.bind_to_port(host, port) ? port : -1);
  if (bound < 0) throw std::runtime_error("cannot bind " + host + ":" + std::to_string(port));
  impl_->thread = std::thread([this] { impl_->server.listen_after_bind(); });
  impl_->server.wait_until_ready();
  return bound;
}

void HttpServer::wait() {
  if (impl_->thread.joinable()) impl_->thread.join();
}

void HttpServer::stop() {
  impl_->server.stop();
  if (impl_->thread.joinable()) impl_->thread.join();
}

}  // namespace tsal
