// tsal: dataset generation, simulated AL runs, reports and the labeling service.

#include <csignal>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "tsal/alloop.hpp"
#include "tsal/service.hpp"
#include "tsal/synth.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string default_data_dir() {
  const char* env = std::getenv("TS_AL_DATA_DIR");
  return env ? env : "";
}

fs::path require_data_dir(const std::string& flag) {
  if (!flag.empty()) return flag;
  if (const std::string env = default_data_dir(); !env.empty()) return env;
  throw std::invalid_argument("no dataset directory: pass --data or set TS_AL_DATA_DIR");
}

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::ostringstream text;
  text << in.rdbuf();
  return text.str();
}

void write_outputs(const tsal::RunState& state, const fs::path& out) {
  fs::create_directories(out);
  tsal::write_metrics_csv(state.metrics, out / "metrics.csv");
  tsal::save_runstate(state, out / "runstate.json");
  tsal::write_events_jsonl(state.events, out / "events.jsonl");
}

// ---------------------------------------------------------------- generate

struct GenerateArgs {
  std::uint64_t seed = 0;
  std::string out;
  tsal::ShiftConfig shift;
  tsal::GenerationScale scale;
};

int cmd_generate(const GenerateArgs& a) {
  const tsal::SyntheticDataset ds = tsal::generate(a.shift, a.scale, a.seed);
  tsal::save_dataset(ds.data, a.out);
  const json echo = {
      {"seed", a.seed},
      {"shift",
       {{"dim", a.shift.dim},
        {"rotation_strength", a.shift.rotation_strength},
        {"translation_norm", a.shift.translation_norm},
        {"noise_sigma", a.shift.noise_sigma},
        {"ambient_sigma", a.shift.ambient_sigma},
        {"background_shift", a.shift.background_shift},
        {"novel_fp_fraction", a.shift.novel_fp_fraction},
        {"target_fp_multiplier", a.shift.target_fp_multiplier},
        {"herd_cluster_radius", a.shift.herd_cluster_radius},
        {"herd_mean_size", a.shift.herd_mean_size}}},
      {"scale",
       {{"n_images_src", a.scale.n_images_src},
        {"n_images_tgt", a.scale.n_images_tgt},
        {"n_animals_src", a.scale.n_animals_src},
        {"n_animals_tgt", a.scale.n_animals_tgt},
        {"n_fp_src", a.scale.n_fp_src},
        {"image_width", a.scale.image_width},
        {"image_height", a.scale.image_height},
        {"grid_stride", a.scale.grid_stride}}},
  };
  std::ofstream(fs::path(a.out) / tsal::kConfigEchoFile, std::ios::binary | std::ios::trunc) << echo.dump(2) << '\n';
  std::cout << "wrote " << a.out << ": " << ds.data.source.pool.size() << " source and "
            << ds.data.target.pool.size() << " target candidates, " << ds.data.target.ground_truth.size()
            << " target animals\n";
  return 0;
}

// ---------------------------------------------------------------- run

struct RunArgs {
  std::string data;
  std::optional<std::string> criterion;
  std::optional<std::string> mode;
  std::string config_file;
  std::optional<std::uint64_t> seed;
  int seeds = 1;
  std::optional<int> iterations;
  std::optional<int> queries;
  std::optional<int> window;
  std::optional<int> stride;
  std::string solver;
  std::string out = "run";
  std::string resume;
  std::optional<int> stop_after;
};

tsal::LoopConfig base_config(const RunArgs& a) {
  tsal::LoopConfig c = a.config_file.empty() ? tsal::LoopConfig{} : tsal::loop_config_from_json(slurp(a.config_file));
  if (a.iterations) c.iterations = *a.iterations;
  if (a.queries) c.queries_per_iteration = *a.queries;
  if (a.window) c.window_w = c.window_h = *a.window;
  if (a.stride) c.search_stride = *a.stride;
  if (a.solver == "exact") c.solver = tsal::SolverKind::exact;
  else if (a.solver == "sinkhorn") c.solver = tsal::SolverKind::sinkhorn;
  else if (!a.solver.empty()) throw std::invalid_argument("unknown solver '" + a.solver + "'");
  if (a.mode) c.mode = tsal::parse_mode(*a.mode);
  if (a.seed) c.seed = *a.seed;
  tsal::validate(c);
  return c;
}

int run_resume(const RunArgs& a) {
  tsal::RunState state = tsal::load_runstate(a.resume);
  const fs::path data = a.data.empty() && !state.dataset.empty() ? fs::path(state.dataset) : require_data_dir(a.data);
  const tsal::Dataset dataset = tsal::load_dataset(data);
  const tsal::RunResult result = tsal::continue_simulation(dataset, std::move(state), a.stop_after);
  write_outputs(result.state, a.out);
  std::cout << (result.state.status == tsal::RunStatus::finished ? "finished" : "paused") << ": "
            << result.state.found.size() << " animals after " << result.state.windows.size() << " queries\n";
  return 0;
}

struct Series {
  tsal::Criterion criterion;
  tsal::LoopMode mode;
};

int run_batch(const RunArgs& a, const tsal::LoopConfig& base, const tsal::Dataset& dataset, const fs::path& data,
              const std::vector<Series>& series) {
  // comparison rows: (series index, iteration) -> sums
  struct Sums {
    double queries = 0, found = 0, recall = 0, fraction = 0;
    int n = 0;
  };
  std::map<std::pair<std::size_t, int>, Sums> sums;
  for (int s = 0; s < a.seeds; ++s) {
    tsal::LoopConfig seeded = base;
    seeded.seed = base.seed + static_cast<std::uint64_t>(s);
    const auto source = tsal::prepare_source(dataset, seeded);
    for (std::size_t k = 0; k < series.size(); ++k) {
      tsal::LoopConfig c = seeded;
      c.criterion = series[k].criterion;
      c.mode = series[k].mode;
      tsal::Session session(dataset, c, source);
      while (session.next()) session.answer_with_ground_truth();
      tsal::RunState state = session.state();
      state.dataset = fs::absolute(data).string();
      const fs::path dir = fs::path(a.out) /
                           (std::string(tsal::to_string(c.criterion)) + "-" + std::string(tsal::to_string(c.mode))) /
                           ("seed-" + std::to_string(c.seed));
      write_outputs(state, dir);
      for (const tsal::MetricRow& r : state.metrics) {
        Sums& t = sums[{k, r.iteration}];
        t.queries += r.queries;
        t.found += r.cumulative_found;
        t.recall += r.recall;
        t.fraction += r.fraction_reviewed;
        ++t.n;
      }
    }
  }
  fs::create_directories(a.out);
  std::ofstream out(fs::path(a.out) / "comparison.csv", std::ios::binary | std::ios::trunc);
  out << "criterion,mode,iteration,seeds,mean_queries,mean_cumulative_found,mean_recall,mean_fraction_reviewed\n";
  out << std::setprecision(17);
  for (const auto& [key, t] : sums) {
    const Series& s = series[key.first];
    out << tsal::to_string(s.criterion) << ',' << tsal::to_string(s.mode) << ',' << key.second << ',' << t.n << ','
        << t.queries / t.n << ',' << t.found / t.n << ',' << t.recall / t.n << ',' << t.fraction / t.n << '\n';
  }
  std::cout << "wrote " << (fs::path(a.out) / "comparison.csv").string() << " (" << series.size() << " series, "
            << a.seeds << " seeds)\n";
  return 0;
}

int cmd_run(const RunArgs& a) {
  if (a.seeds <= 0) throw std::invalid_argument("--seeds must be positive");
  if (!a.resume.empty()) return run_resume(a);
  const fs::path data = require_data_dir(a.data);
  const tsal::Dataset dataset = tsal::load_dataset(data);
  const tsal::LoopConfig config = base_config(a);

  std::vector<Series> series;
  if (a.criterion == "all") {
    for (auto c : {tsal::Criterion::transfer_sampling, tsal::Criterion::max_confidence, tsal::Criterion::breaking_ties,
                   tsal::Criterion::random}) {
      for (auto m : {tsal::LoopMode::adaptive, tsal::LoopMode::static_model}) series.push_back({c, m});
    }
  } else {
    series.push_back({a.criterion ? tsal::parse_criterion(*a.criterion) : config.criterion, config.mode});
  }
  if (series.size() > 1 || a.seeds > 1) {
    if (a.stop_after) throw std::invalid_argument("--stop-after applies to single runs only");
    return run_batch(a, config, dataset, data, series);
  }

  tsal::LoopConfig single = config;
  single.criterion = series.front().criterion;
  tsal::RunState initial = tsal::Session(dataset, single).state();
  initial.dataset = fs::absolute(data).string();
  const tsal::RunResult result = tsal::continue_simulation(dataset, std::move(initial), a.stop_after);
  write_outputs(result.state, a.out);
  std::cout << (result.state.status == tsal::RunStatus::finished ? "finished" : "paused") << ": "
            << result.state.found.size() << " of " << dataset.target.ground_truth.size() << " animals after "
            << result.state.windows.size() << " queries\n";
  return 0;
}

// ---------------------------------------------------------------- report

int cmd_report(const std::string& dir) {
  const fs::path comparison = fs::path(dir) / "comparison.csv";
  if (fs::exists(comparison)) {
    std::cout << slurp(comparison);
    return 0;
  }
  const auto rows = tsal::read_metrics_csv(fs::path(dir) / "metrics.csv");
  std::cout << std::left << std::setw(10) << "iteration" << std::setw(9) << "queries" << std::setw(7) << "found"
            << std::setw(9) << "recall"
            << "reviewed\n";
  for (const tsal::MetricRow& r : rows) {
    std::cout << std::setw(10) << r.iteration << std::setw(9) << r.queries << std::setw(7) << r.cumulative_found
              << std::setw(9) << std::fixed << std::setprecision(4) << r.recall << r.fraction_reviewed << '\n';
  }
  return 0;
}

// ---------------------------------------------------------------- serve

tsal::HttpServer* g_server = nullptr;

void on_signal(int) {
  if (g_server) g_server->stop();
}

int cmd_serve(const std::string& data_flag, const std::string& host, int port) {
  const fs::path data = require_data_dir(data_flag);
  auto dataset = std::make_shared<const tsal::Dataset>(tsal::load_dataset(data));
  tsal::Service service(dataset, fs::absolute(data).string());
  tsal::HttpServer server(service);
  const int bound = server.start(host, port);
  std::cout << "listening on http://" << host << ':' << bound << std::endl;
  g_server = &server;
  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);
  server.wait();
  g_server = nullptr;
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Transfer Sampling active learning for rare-object retrieval"};
  app.require_subcommand(1);

  GenerateArgs gen;
  auto* generate = app.add_subcommand("generate", "Write a seeded synthetic dataset");
  generate->add_option("--seed", gen.seed, "Generator seed");
  generate->add_option("--out", gen.out, "Output directory")->required();
  generate->add_option("--source-images", gen.scale.n_images_src);
  generate->add_option("--target-images", gen.scale.n_images_tgt);
  generate->add_option("--source-animals", gen.scale.n_animals_src);
  generate->add_option("--target-animals", gen.scale.n_animals_tgt);
  generate->add_option("--source-fp", gen.scale.n_fp_src, "False-positive locations in the source pool");
  generate->add_option("--image-width", gen.scale.image_width);
  generate->add_option("--image-height", gen.scale.image_height);
  generate->add_option("--dim", gen.shift.dim, "Feature dimension");
  generate->add_option("--rotation", gen.shift.rotation_strength);
  generate->add_option("--translation", gen.shift.translation_norm);
  generate->add_option("--noise", gen.shift.noise_sigma);
  generate->add_option("--ambient", gen.shift.ambient_sigma, "Feature spread outside the class subspace");
  generate->add_option("--background-shift", gen.shift.background_shift);
  generate->add_option("--novel-fp", gen.shift.novel_fp_fraction);
  generate->add_option("--fp-multiplier", gen.shift.target_fp_multiplier, "Target/source false-positive ratio");

  RunArgs run;
  auto* run_cmd = app.add_subcommand("run", "Simulate the AL loop with a ground-truth oracle");
  run_cmd->add_option("--data", run.data, "Dataset directory (default: $TS_AL_DATA_DIR)");
  run_cmd->add_option("--criterion", run.criterion, "transfer_sampling (default) | max_confidence | breaking_ties | random | all");
  run_cmd->add_option("--mode", run.mode, "adaptive (default) | static");
  run_cmd->add_option("--config", run.config_file, "LoopConfig JSON; flags override it");
  run_cmd->add_option("--seed", run.seed, "Loop seed (default 0)");
  run_cmd->add_option("--seeds", run.seeds, "Consecutive seeds starting at --seed");
  run_cmd->add_option("--iterations", run.iterations);
  run_cmd->add_option("--queries", run.queries, "Queries per iteration");
  run_cmd->add_option("--window", run.window, "Square window side in pixels");
  run_cmd->add_option("--stride", run.stride, "Window search stride in pixels");
  run_cmd->add_option("--solver", run.solver, "exact | sinkhorn");
  run_cmd->add_option("--out", run.out, "Output directory");
  run_cmd->add_option("--resume", run.resume, "Continue from a runstate.json");
  run_cmd->add_option("--stop-after", run.stop_after, "Pause after this many queries in total");

  std::string report_dir = "run";
  auto* report = app.add_subcommand("report", "Print metrics.csv or comparison.csv of a run directory");
  report->add_option("dir", report_dir, "Run output directory");

  std::string serve_data, host = "127.0.0.1";
  int port = 8080;
  auto* serve = app.add_subcommand("serve", "Serve the interactive labeling protocol");
  serve->add_option("--data", serve_data, "Dataset directory (default: $TS_AL_DATA_DIR)");
  serve->add_option("--host", host);
  serve->add_option("--port", port, "0 picks a free port");

  CLI11_PARSE(app, argc, argv);
  try {
    if (*generate) return cmd_generate(gen);
    if (*run_cmd) return cmd_run(run);
    if (*report) return cmd_report(report_dir);
    if (*serve) return cmd_serve(serve_data, host, port);
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
