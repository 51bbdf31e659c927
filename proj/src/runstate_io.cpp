#include <fstream>
#include <sstream>

#include "json.hpp"
#include "tsal/alloop.hpp"

namespace tsal {

using nlohmann::json;

namespace {

json rect_json(const WindowRect& r) { return {{"r_x", r.x}, {"r_y", r.y}, {"r_w", r.w}, {"r_h", r.h}}; }

WindowRect rect_from(const json& j) {
  return {j.at("r_x").get<int>(), j.at("r_y").get<int>(), j.at("r_w").get<int>(), j.at("r_h").get<int>()};
}

json config_json(const LoopConfig& c) {
  return {
      {"iterations", c.iterations},
      {"queries_per_iteration", c.queries_per_iteration},
      {"window_w", c.window_w},
      {"window_h", c.window_h},
      {"threshold", c.threshold},
      {"criterion", std::string(to_string(c.criterion))},
      {"mode", std::string(to_string(c.mode))},
      {"seed", c.seed},
      {"nms_radius", c.nms_radius},
      {"search_stride", c.search_stride},
      {"center_weight", c.center_weight},
      {"label_radius", c.label_radius},
      {"solver", c.solver == SolverKind::exact ? "exact" : "sinkhorn"},
      {"sinkhorn_epsilon", c.sinkhorn_epsilon},
      {"svm",
       {{"c_reg", c.svm.c_reg},
        {"epochs", c.svm.epochs},
        {"batch_size", c.svm.batch_size},
        {"balance_classes", c.svm.balance_classes}}},
      {"update",
       {{"l2", c.update.l2},
        {"proximal", c.update.proximal},
        {"max_iter", c.update.max_iter},
        {"tolerance", c.update.tolerance},
        {"balance_classes", c.update.balance_classes}}},
  };
}

json window_json(const QueriedWindow& w) {
  json points = json::array();
  for (const OraclePoint& p : w.animal_points) points.push_back({{"px", p.px}, {"py", p.py}, {"animal_id", p.animal_id}});
  return {{"window_id", w.window_id}, {"iteration", w.iteration}, {"query_index", w.query_index},
          {"image_id", w.image_id},   {"rect", rect_json(w.rect)},  {"anchor_id", w.anchor_id},
          {"fallback", w.fallback},   {"animal_points", points}};
}

QueriedWindow window_from(const json& j) {
  QueriedWindow w;
  w.window_id = j.at("window_id").get<std::string>();
  w.iteration = j.at("iteration").get<int>();
  w.query_index = j.at("query_index").get<int>();
  w.image_id = j.at("image_id").get<std::string>();
  w.rect = rect_from(j.at("rect"));
  w.anchor_id = j.at("anchor_id").get<CandidateId>();
  w.fallback = j.at("fallback").get<bool>();
  for (const json& p : j.at("animal_points")) {
    w.animal_points.push_back({p.at("px").get<double>(), p.at("py").get<double>(), p.at("animal_id").get<std::string>()});
  }
  return w;
}

}  // namespace

namespace {

LoopConfig config_from(const json& j) {
  LoopConfig c;
  auto take = [&](const char* key, auto& field) {
    if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
  };
  take("iterations", c.iterations);
  take("queries_per_iteration", c.queries_per_iteration);
  take("window_w", c.window_w);
  take("window_h", c.window_h);
  take("threshold", c.threshold);
  if (j.contains("criterion")) c.criterion = parse_criterion(j.at("criterion").get<std::string>());
  if (j.contains("mode")) c.mode = parse_mode(j.at("mode").get<std::string>());
  take("seed", c.seed);
  take("nms_radius", c.nms_radius);
  take("search_stride", c.search_stride);
  take("center_weight", c.center_weight);
  take("label_radius", c.label_radius);
  if (j.contains("solver")) {
    const std::string solver = j.at("solver").get<std::string>();
    if (solver != "exact" && solver != "sinkhorn") throw std::invalid_argument("unknown solver '" + solver + "'");
    c.solver = solver == "exact" ? SolverKind::exact : SolverKind::sinkhorn;
  }
  take("sinkhorn_epsilon", c.sinkhorn_epsilon);
  if (j.contains("svm")) {
    const json& s = j.at("svm");
    if (s.contains("c_reg")) c.svm.c_reg = s.at("c_reg").get<double>();
    if (s.contains("epochs")) c.svm.epochs = s.at("epochs").get<int>();
    if (s.contains("batch_size")) c.svm.batch_size = s.at("batch_size").get<std::size_t>();
    if (s.contains("balance_classes")) c.svm.balance_classes = s.at("balance_classes").get<bool>();
  }
  if (j.contains("update")) {
    const json& u = j.at("update");
    if (u.contains("l2")) c.update.l2 = u.at("l2").get<double>();
    if (u.contains("proximal")) c.update.proximal = u.at("proximal").get<double>();
    if (u.contains("max_iter")) c.update.max_iter = u.at("max_iter").get<int>();
    if (u.contains("tolerance")) c.update.tolerance = u.at("tolerance").get<double>();
    if (u.contains("balance_classes")) c.update.balance_classes = u.at("balance_classes").get<bool>();
  }
  validate(c);
  return c;
}

}  // namespace

std::string loop_config_to_json(const LoopConfig& config) { return config_json(config).dump(); }

LoopConfig loop_config_from_json(const std::string& text) {
  try {
    return config_from(json::parse(text));
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("config: ") + e.what());
  }
}

std::string runstate_to_json(const RunState& s) {
  json windows = json::array();
  for (const QueriedWindow& w : s.windows) windows.push_back(window_json(w));
  json labeled = json::array();
  for (const LabeledCandidate& l : s.labeled) labeled.push_back({l.candidate_id, l.positive});
  json metrics = json::array();
  for (const MetricRow& r : s.metrics) {
    metrics.push_back({{"iteration", r.iteration},
                       {"queries", r.queries},
                       {"cumulative_found", r.cumulative_found},
                       {"recall", r.recall},
                       {"fraction_reviewed", r.fraction_reviewed}});
  }
  json events = json::array();
  for (const LoopEvent& e : s.events) {
    events.push_back({{"iteration", e.iteration}, {"query_index", e.query_index}, {"kind", e.kind}, {"detail", e.detail}});
  }
  json j = {
      {"format", "tsal-runstate-1"},
      {"config", config_json(s.config)},
      {"dataset", s.dataset},
      {"status", std::string(to_string(s.status))},
      {"iteration", s.iteration},
      {"query_index", s.query_index},
      {"iteration_seed", s.iteration_seed},
      {"rng_state", s.rng_state},
      {"windows", windows},
      {"pending", s.pending ? window_json(*s.pending) : json(nullptr)},
      {"labeled", labeled},
      {"found", s.found},
      {"metrics", metrics},
      {"detector",
       {{"weights", s.detector.weights}, {"bias", s.detector.bias}, {"border_mass", s.detector.border_mass}}},
      {"events", events},
  };
  return j.dump(1);
}

RunState runstate_from_json(const std::string& text) {
  try {
    const json j = json::parse(text);
    if (j.value("format", "") != "tsal-runstate-1") throw std::invalid_argument("runstate: unknown format");
    RunState s;
    s.config = config_from(j.at("config"));
    s.dataset = j.at("dataset").get<std::string>();
    s.status = parse_status(j.at("status").get<std::string>());
    s.iteration = j.at("iteration").get<int>();
    s.query_index = j.at("query_index").get<int>();
    s.iteration_seed = j.at("iteration_seed").get<std::uint64_t>();
    s.rng_state = j.at("rng_state").get<std::string>();
    for (const json& w : j.at("windows")) s.windows.push_back(window_from(w));
    if (!j.at("pending").is_null()) s.pending = window_from(j.at("pending"));
    for (const json& l : j.at("labeled")) s.labeled.push_back({l.at(0).get<CandidateId>(), l.at(1).get<bool>()});
    s.found = j.at("found").get<std::vector<std::string>>();
    for (const json& r : j.at("metrics")) {
      s.metrics.push_back({r.at("iteration").get<int>(), r.at("queries").get<int>(), r.at("cumulative_found").get<int>(),
                           r.at("recall").get<double>(), r.at("fraction_reviewed").get<double>()});
    }
    const json& d = j.at("detector");
    s.detector.weights = d.at("weights").get<std::vector<double>>();
    s.detector.bias = d.at("bias").get<double>();
    s.detector.border_mass = d.at("border_mass").get<double>();
    for (const json& e : j.at("events")) {
      s.events.push_back({e.at("iteration").get<int>(), e.at("query_index").get<int>(), e.at("kind").get<std::string>(),
                          e.at("detail").get<std::string>()});
    }
    if ((s.status == RunStatus::awaiting_label) != s.pending.has_value()) {
      throw std::invalid_argument("runstate: pending window does not match status");
    }
    if (s.iteration < 1 || s.query_index < 0) throw std::invalid_argument("runstate: bad iteration counters");
    return s;
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("runstate: ") + e.what());
  }
}

void save_runstate(const RunState& state, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << runstate_to_json(state) << '\n';
}

RunState load_runstate(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::ostringstream text;
  text << in.rdbuf();
  return runstate_from_json(text.str());
}

void write_events_jsonl(std::span<const LoopEvent> events, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  for (const LoopEvent& e : events) {
    out << json{{"iteration", e.iteration}, {"query_index", e.query_index}, {"kind", e.kind}, {"detail", e.detail}}.dump()
        << '\n';
  }
}

}  // namespace tsal
