#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "httplib.h"
#include "json.hpp"
#include "tsal/service.hpp"
#include "tsal/synth.hpp"

using namespace tsal;
using nlohmann::json;

namespace {

std::shared_ptr<const Dataset> small_dataset() {
  static const auto data = [] {
    GenerationScale s;
    s.n_images_src = 6;
    s.n_images_tgt = 8;
    s.n_animals_src = 60;
    s.n_animals_tgt = 24;
    s.n_fp_src = 200;
    s.image_width = 1000;
    s.image_height = 800;
    ShiftConfig c;
    c.dim = 16;
    return std::make_shared<const Dataset>(generate(c, s, 8).data);
  }();
  return data;
}

const char* kConfig = R"({"config": {"iterations": 2, "queries_per_iteration": 3, "window_w": 250,
                                     "window_h": 250, "criterion": "max_confidence", "seed": 4}})";

LoopConfig config_of(const char* body) { return loop_config_from_json(json::parse(body).at("config").dump()); }

json points_for(const Dataset& data, const json& window) {
  const json& r = window.at("rect");
  const WindowRect rect{r.at("r_x"), r.at("r_y"), r.at("r_w"), r.at("r_h")};
  json points = json::array();
  for (const auto& p : simulated_oracle(rect, window.at("image_id"), data.target.ground_truth).animal_points)
    points.push_back({{"px", p.px}, {"py", p.py}});
  return points;
}

}  // namespace

TEST_CASE("create, query, label and read metrics") {
  Service svc(small_dataset(), "mem");
  const HttpReply created = svc.create_run(kConfig);
  REQUIRE(created.status == 201);
  const json c = json::parse(created.body);
  const std::string id = c.at("run_id");
  CHECK(c.at("status") == "ready");
  CHECK(c.contains("created_at"));

  const HttpReply n = svc.next(id);
  REQUIRE(n.status == 200);
  const json w = json::parse(n.body);
  CHECK(w.at("window_id") == "i1q1");
  CHECK(w.at("iteration") == 1);
  CHECK(w.at("rect").at("r_w") == 250);
  CHECK(w.at("prior_rects").empty());
  CHECK_FALSE(w.at("candidate_markers").empty());
  // Asking again returns the same pending window.
  CHECK(json::parse(svc.next(id).body).at("window_id") == "i1q1");

  const json body = {{"window_id", "i1q1"}, {"animal_points", points_for(*small_dataset(), w)}};
  const HttpReply l = svc.label(id, body.dump());
  REQUIRE(l.status == 200);
  const json lj = json::parse(l.body);
  CHECK(lj.at("accepted") == true);
  CHECK(lj.at("cumulative_found") == body.at("animal_points").size());

  const json m = json::parse(svc.metrics(id).body);
  CHECK(m.at("queries") == 1);
  CHECK(m.at("total_animals") == small_dataset()->target.ground_truth.size());
  CHECK(m.at("rows").empty());
}

TEST_CASE("error statuses") {
  Service svc(small_dataset());
  CHECK(svc.create_run("{not json").status == 400);
  CHECK(svc.create_run(R"({"config": {"iterations": -1}})").status == 422);
  CHECK(svc.create_run(R"({"config": {"window_w": 99999}})").status == 422);
  CHECK(svc.next("run-x").status == 404);

  const std::string id = json::parse(svc.create_run(kConfig).body).at("run_id");
  CHECK(svc.create_run(kConfig).status == 409);
  CHECK(svc.metrics("nope").status == 404);

  // Labels before a window is issued conflict.
  CHECK(svc.label(id, R"({"window_id": "i1q1", "animal_points": []})").status == 409);
  const json w = json::parse(svc.next(id).body);
  CHECK(svc.label(id, "[]").status == 400);
  CHECK(svc.label(id, R"({"window_id": "i1q1"})").status == 400);
  CHECK(svc.label(id, R"({"window_id": "i1q1", "animal_points": [{"px": "a", "py": 1}]})").status == 400);
  CHECK(svc.label(id, R"({"window_id": "i1q9", "animal_points": []})").status == 409);
  const json outside = {{"window_id", "i1q1"},
                        {"animal_points", {{{"px", -1.0}, {"py", w.at("rect").at("r_y").get<double>()}}}}};
  CHECK(svc.label(id, outside.dump()).status == 422);
  // Failed labels leave the window pending.
  CHECK(svc.label(id, R"({"window_id": "i1q1", "animal_points": []})").status == 200);
  CHECK(svc.label(id, R"({"window_id": "i1q1", "animal_points": []})").status == 409);
}

TEST_CASE("scripted session through the service equals the simulated run") {
  const auto data = small_dataset();
  Service svc(data);
  const std::string id = json::parse(svc.create_run(kConfig).body).at("run_id");
  int windows = 0;
  while (true) {
    const HttpReply n = svc.next(id);
    if (n.status == 204) break;
    REQUIRE(n.status == 200);
    const json w = json::parse(n.body);
    const json body = {{"window_id", w.at("window_id")}, {"animal_points", points_for(*data, w)}};
    REQUIRE(svc.label(id, body.dump()).status == 200);
    ++windows;
  }
  CHECK(windows == 6);
  const RunState sim = run_simulation(*data, config_of(kConfig)).state;
  const auto snap = svc.snapshot(id);
  REQUIRE(snap.has_value());
  CHECK(runstate_to_json(*snap) == runstate_to_json(sim));
  const json m = json::parse(svc.metrics(id).body);
  CHECK(m.at("status") == "finished");
  CHECK(m.at("rows").size() == 2);
  // A finished run makes room for a new one.
  CHECK(svc.create_run(kConfig).status == 201);
}

TEST_CASE("http round trip on an ephemeral port") {
  Service svc(small_dataset());
  HttpServer server(svc);
  const int port = server.start("127.0.0.1", 0);
  REQUIRE(port > 0);
  httplib::Client client("127.0.0.1", port);

  auto created = client.Post("/runs", kConfig, "application/json");
  REQUIRE(created);
  CHECK(created->status == 201);
  const std::string id = json::parse(created->body).at("run_id");

  auto next = client.Get("/runs/" + id + "/next");
  REQUIRE(next);
  CHECK(next->status == 200);
  const json w = json::parse(next->body);
  const json body = {{"window_id", w.at("window_id")}, {"animal_points", points_for(*small_dataset(), w)}};
  auto label = client.Post("/runs/" + id + "/label", body.dump(), "application/json");
  REQUIRE(label);
  CHECK(label->status == 200);
  auto again = client.Post("/runs/" + id + "/label", body.dump(), "application/json");
  REQUIRE(again);
  CHECK(again->status == 409);

  auto metrics = client.Get("/runs/" + id + "/metrics");
  REQUIRE(metrics);
  CHECK(metrics->status == 200);
  CHECK(json::parse(metrics->body).at("queries") == 1);
  auto missing = client.Get("/runs/zzz/metrics");
  REQUIRE(missing);
  CHECK(missing->status == 404);
  server.stop();
}
