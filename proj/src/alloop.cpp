#include "tsal/alloop.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <unordered_map>
#include <unordered_set>

#include "csv.hpp"
#include "tsal/rng.hpp"

namespace tsal {

std::string_view to_string(LoopMode mode) { return mode == LoopMode::adaptive ? "adaptive" : "static"; }

LoopMode parse_mode(std::string_view text) {
  if (text == "adaptive") return LoopMode::adaptive;
  if (text == "static") return LoopMode::static_model;
  throw std::invalid_argument("unknown mode '" + std::string(text) + "' (expected adaptive or static)");
}

std::string_view to_string(RunStatus status) {
  switch (status) {
    case RunStatus::ready: return "ready";
    case RunStatus::awaiting_label: return "awaiting_label";
    case RunStatus::finished: return "finished";
  }
  return "unknown";
}

RunStatus parse_status(std::string_view text) {
  if (text == "ready") return RunStatus::ready;
  if (text == "awaiting_label") return RunStatus::awaiting_label;
  if (text == "finished") return RunStatus::finished;
  throw std::invalid_argument("unknown run status '" + std::string(text) + "'");
}

void validate(const LoopConfig& config) {
  if (config.iterations <= 0) throw std::invalid_argument("iterations must be positive");
  if (config.queries_per_iteration <= 0) throw std::invalid_argument("queries_per_iteration must be positive");
  if (config.window_w <= 0 || config.window_h <= 0) throw std::invalid_argument("window size must be positive");
  if (!(config.threshold >= 0.0 && config.threshold <= 1.0)) throw std::invalid_argument("threshold must be in [0,1]");
  if (config.nms_radius < 0) throw std::invalid_argument("nms_radius must be nonnegative");
  if (config.search_stride <= 0) throw std::invalid_argument("search_stride must be positive");
  if (!(config.center_weight >= 0.0)) throw std::invalid_argument("center_weight must be nonnegative");
  if (!(config.label_radius >= 0.0)) throw std::invalid_argument("label_radius must be nonnegative");
  if (!(config.sinkhorn_epsilon > 0.0)) throw std::invalid_argument("sinkhorn_epsilon must be positive");
}

OracleResponse simulated_oracle(const WindowRect& window, const std::string& image_id,
                                std::span<const GroundTruthPoint> ground_truth) {
  OracleResponse out{window, {}};
  for (const GroundTruthPoint& g : ground_truth) {
    if (g.image_id == image_id && window.contains(g.px, g.py)) out.animal_points.push_back({g.px, g.py, g.animal_id});
  }
  return out;
}

std::shared_ptr<const SourceModel> prepare_source(const Dataset& dataset, const LoopConfig& config) {
  auto model = std::make_shared<SourceModel>();
  model->detector = initial_detector(dataset, config.seed);
  model->predicted =
      nms(threshold_candidates(model->detector.score(dataset.source.pool), config.threshold), config.nms_radius);
  bool has_tp = false, has_fp = false;
  for (const Candidate& c : model->predicted.candidates) {
    (c.is_true_positive() ? has_tp : has_fp) = true;
    model->features.push_back(c.features);
  }
  if (has_tp && has_fp) {
    MarginTrainingOptions svm = config.svm;
    svm.seed = derive_seed(config.seed, 31);
    model->ranker = train_margin_ranker(model->predicted, svm);
    model->scores = margin_scores(*model->ranker, model->predicted);
  }
  return model;
}

std::optional<SurrogateDetector> update_surrogate(const SurrogateDetector& current, const SurrogateDetector& prior,
                                                  const CandidateSet& pool, std::span<const LabeledCandidate> labels,
                                                  const LogisticFitOptions& options) {
  std::unordered_map<CandidateId, std::size_t> index;
  for (std::size_t k = 0; k < pool.size(); ++k) index.emplace(pool.candidates[k].candidate_id, k);
  std::vector<LabeledExample> examples;
  bool has_pos = false, has_neg = false;
  for (const LabeledCandidate& l : labels) {
    const auto it = index.find(l.candidate_id);
    if (it == index.end()) throw std::invalid_argument("update_surrogate: label for unknown candidate");
    examples.push_back({pool.candidates[it->second].features, l.positive});
    (l.positive ? has_pos : has_neg) = true;
  }
  if (!has_pos || !has_neg) return std::nullopt;
  SurrogateDetector updated = fit_logistic(examples, pool.dim, options, &current, &prior);
  updated.border_mass = current.border_mass;
  return updated;
}

std::int64_t window_capacity(std::span<const ImageMeta> images, int window_w, int window_h) {
  if (window_w <= 0 || window_h <= 0) throw std::invalid_argument("window size must be positive");
  std::int64_t total = 0;
  for (const ImageMeta& m : images) {
    total += static_cast<std::int64_t>((m.width + window_w - 1) / window_w) * ((m.height + window_h - 1) / window_h);
  }
  return total;
}

MetricRow compute_metrics(int iteration, int queries, std::size_t found, std::size_t total_animals,
                          std::size_t windows, std::int64_t capacity) {
  MetricRow row;
  row.iteration = iteration;
  row.queries = queries;
  row.cumulative_found = static_cast<int>(found);
  row.recall = total_animals == 0 ? 0.0 : static_cast<double>(found) / static_cast<double>(total_animals);
  row.fraction_reviewed = capacity <= 0 ? 0.0 : static_cast<double>(windows) / static_cast<double>(capacity);
  return row;
}

struct Session::IterationCache {
  int iteration = 0;
  CandidateSet scored;     // whole latent pool under the current detector
  CandidateSet predicted;  // thresholded and suppressed
  std::vector<CandidateId> ranking;
  std::size_t cursor = 0;
  bool ranking_exhausted = false;
  std::map<std::string, std::vector<std::size_t>> predicted_by_image;
  std::unordered_map<CandidateId, std::size_t> scored_index;
};

Session::Session(const Dataset& dataset, const LoopConfig& config, std::shared_ptr<const SourceModel> source)
    : dataset_(dataset), source_(std::move(source)) {
  validate(config);
  state_.config = config;
  if (!source_) source_ = prepare_source(dataset_, config);
  state_.detector = source_->detector;
  Rng rng(derive_seed(config.seed, 41));
  state_.iteration_seed = rng.next_u64();
  state_.rng_state = rng.state();
  initialize();
}

Session::Session(const Dataset& dataset, RunState state, std::shared_ptr<const SourceModel> source)
    : dataset_(dataset), state_(std::move(state)), source_(std::move(source)) {
  validate(state_.config);
  if (!source_) source_ = prepare_source(dataset_, state_.config);
  if (state_.detector.weights.size() != dataset_.target.pool.dim) {
    throw std::invalid_argument("run state detector does not match the dataset feature dimension");
  }
  initialize();
}

void Session::initialize() {
  for (const ImageMeta& m : dataset_.target.images) {
    if (m.width < state_.config.window_w || m.height < state_.config.window_h) {
      throw std::invalid_argument("window larger than target image " + m.image_id);
    }
  }
  capacity_ = window_capacity(dataset_.target.images, state_.config.window_w, state_.config.window_h);
  for (std::size_t k = 0; k < dataset_.target.pool.size(); ++k) {
    pool_by_image_[dataset_.target.pool.candidates[k].image_id].push_back(k);
  }
  for (std::size_t k = 0; k < dataset_.target.ground_truth.size(); ++k) {
    gt_by_image_[dataset_.target.ground_truth[k].image_id].push_back(k);
  }
  for (const QueriedWindow& w : state_.windows) {
    if (!dataset_.target.find_image(w.image_id)) throw std::invalid_argument("run state names unknown image " + w.image_id);
    windows_by_image_[w.image_id].push_back(w.rect);
  }
}

bool Session::inside_queried(const Candidate& c) const {
  const auto it = windows_by_image_.find(c.image_id);
  if (it == windows_by_image_.end()) return false;
  return std::any_of(it->second.begin(), it->second.end(), [&](const WindowRect& r) { return r.contains(c.px, c.py); });
}

void Session::prepare_iteration() {
  if (cache_ && cache_->iteration == state_.iteration) return;
  const LoopConfig& config = state_.config;
  auto cache = std::make_shared<IterationCache>();
  cache->iteration = state_.iteration;
  if (config.mode == LoopMode::static_model && cache_) {
    cache->scored = std::move(cache_->scored);
    cache->predicted = std::move(cache_->predicted);
  } else {
    cache->scored = state_.detector.score(dataset_.target.pool);
    cache->predicted = nms(threshold_candidates(cache->scored, config.threshold), config.nms_radius);
  }
  for (std::size_t k = 0; k < cache->scored.size(); ++k) cache->scored_index.emplace(cache->scored.candidates[k].candidate_id, k);
  for (std::size_t k = 0; k < cache->predicted.size(); ++k) {
    cache->predicted_by_image[cache->predicted.candidates[k].image_id].push_back(k);
  }

  RankingInputs inputs;
  inputs.seed = state_.iteration_seed;
  std::shared_ptr<const TransportPlan> plan;
  if (config.criterion == Criterion::transfer_sampling && !cache->predicted.empty()) {
    if (!source_->ranker) {
      throw std::invalid_argument("transfer_sampling needs source predictions with both true and false positives");
    }
    if (config.mode == LoopMode::static_model && static_plan_) {
      plan = static_plan_;
    } else {
      FeatureRows target;
      target.reserve(cache->predicted.size());
      for (const Candidate& c : cache->predicted.candidates) target.push_back(c.features);
      const Standardized z = standardize(source_->features, target);
      const auto mu_s = DiscreteMarginal::uniform(z.source.size());
      const auto mu_t = DiscreteMarginal::uniform(z.target.size());
      const CostMatrix cost = cost_matrix(z.source, z.target);
      if (config.solver == SolverKind::exact) {
        plan = std::make_shared<const TransportPlan>(solve_exact(mu_s, mu_t, cost));
      } else {
        SinkhornOptions options;
        options.epsilon = config.sinkhorn_epsilon * cost.median();
        options.tolerance = 1e-7;
        plan = std::make_shared<const TransportPlan>(solve_sinkhorn(mu_s, mu_t, cost, options));
      }
      if (config.mode == LoopMode::static_model) static_plan_ = plan;
    }
    inputs.plan = plan.get();
    inputs.source_scores = &source_->scores;
  }
  if (!cache->predicted.empty()) cache->ranking = rank(config.criterion, cache->predicted, inputs);
  cache_ = std::move(cache);
}

std::optional<std::size_t> Session::select_anchor(bool& fallback) {
  IterationCache& cache = *cache_;
  while (!cache.ranking_exhausted && cache.cursor < cache.ranking.size()) {
    const std::size_t k = cache.scored_index.at(cache.ranking[cache.cursor]);
    if (!inside_queried(cache.scored.candidates[k])) {
      fallback = false;
      return k;
    }
    ++cache.cursor;
  }
  cache.ranking_exhausted = true;
  std::optional<std::size_t> best;
  for (std::size_t k = 0; k < cache.scored.size(); ++k) {
    const Candidate& c = cache.scored.candidates[k];
    if (inside_queried(c)) continue;
    if (!best) {
      best = k;
      continue;
    }
    const Candidate& b = cache.scored.candidates[*best];
    if (c.animal_confidence() > b.animal_confidence() ||
        (c.animal_confidence() == b.animal_confidence() && c.candidate_id < b.candidate_id)) {
      best = k;
    }
  }
  fallback = true;
  return best;
}

const QueriedWindow* Session::next() {
  while (true) {
    if (state_.status == RunStatus::finished) return nullptr;
    if (state_.status == RunStatus::awaiting_label) return &*state_.pending;
    if (state_.iteration > state_.config.iterations) {
      state_.status = RunStatus::finished;
      continue;
    }
    prepare_iteration();
    if (state_.query_index >= state_.config.queries_per_iteration) {
      end_iteration();
      continue;
    }
    bool fallback = false;
    const std::optional<std::size_t> anchor = select_anchor(fallback);
    if (!anchor) {
      state_.events.push_back({state_.iteration, state_.query_index, "exhausted",
                               "candidate pool exhausted after " + std::to_string(state_.query_index) + " queries"});
      end_iteration();
      continue;
    }
    const Candidate& a = cache_->scored.candidates[*anchor];
    if (fallback) {
      state_.events.push_back({state_.iteration, state_.query_index + 1, "fallback",
                               "anchor " + std::to_string(a.candidate_id) + " from the unthresholded pool"});
    }

    std::vector<PixelPoint> cands;
    if (const auto it = cache_->predicted_by_image.find(a.image_id); it != cache_->predicted_by_image.end()) {
      for (std::size_t k : it->second) {
        const Candidate& c = cache_->predicted.candidates[k];
        if (!inside_queried(c)) cands.push_back({c.px, c.py});
      }
    }
    const std::vector<WindowRect> prev = prior_rects(a.image_id);
    const ImageMeta* image = dataset_.target.find_image(a.image_id);
    if (!image) throw std::invalid_argument("candidate references unknown image " + a.image_id);

    QueriedWindow w;
    w.iteration = state_.iteration;
    w.query_index = state_.query_index + 1;
    w.window_id = "i" + std::to_string(w.iteration) + "q" + std::to_string(w.query_index);
    w.image_id = a.image_id;
    w.anchor_id = a.candidate_id;
    w.fallback = fallback;
    w.rect = propose_window({a.px, a.py}, cands, prev, {image->width, image->height}, state_.config.window_w,
                            state_.config.window_h, state_.config.search_stride, state_.config.center_weight);
    state_.pending = std::move(w);
    state_.status = RunStatus::awaiting_label;
    return &*state_.pending;
  }
}

void Session::answer_with_ground_truth() {
  if (state_.status != RunStatus::awaiting_label) throw ConflictError("no pending window");
  QueriedWindow w = *state_.pending;
  std::vector<GroundTruthPoint> gt;
  if (const auto it = gt_by_image_.find(w.image_id); it != gt_by_image_.end()) {
    for (std::size_t k : it->second) gt.push_back(dataset_.target.ground_truth[k]);
  }
  w.animal_points = simulated_oracle(w.rect, w.image_id, gt).animal_points;
  record(std::move(w));
}

int Session::submit(const std::string& window_id, std::span<const PixelPoint> points) {
  if (state_.status != RunStatus::awaiting_label || state_.pending->window_id != window_id) {
    throw ConflictError("window '" + window_id + "' is not pending");
  }
  QueriedWindow w = *state_.pending;
  for (const PixelPoint& p : points) {
    if (!std::isfinite(p.x) || !std::isfinite(p.y) || !w.rect.contains(p.x, p.y)) {
      throw std::invalid_argument("animal point outside the window");
    }
  }
  std::vector<std::size_t> gt;
  if (const auto it = gt_by_image_.find(w.image_id); it != gt_by_image_.end()) gt = it->second;
  std::vector<bool> used(gt.size(), false);
  for (std::size_t p = 0; p < points.size(); ++p) {
    std::optional<std::size_t> match;
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < gt.size(); ++k) {
      if (used[k]) continue;
      const GroundTruthPoint& g = dataset_.target.ground_truth[gt[k]];
      const double d = std::hypot(g.px - points[p].x, g.py - points[p].y);
      if (d <= state_.config.label_radius && d < best) {
        best = d;
        match = k;
      }
    }
    std::string id;
    if (match) {
      used[*match] = true;
      id = dataset_.target.ground_truth[gt[*match]].animal_id;
    } else {
      id = "anon:" + w.window_id + ":" + std::to_string(p);
    }
    w.animal_points.push_back({points[p].x, points[p].y, std::move(id)});
  }
  record(std::move(w));
  return static_cast<int>(state_.found.size());
}

void Session::record(QueriedWindow window) {
  std::unordered_set<std::string> found(state_.found.begin(), state_.found.end());
  for (const OraclePoint& p : window.animal_points) {
    if (found.insert(p.animal_id).second) state_.found.push_back(p.animal_id);
  }
  const double r2 = state_.config.label_radius * state_.config.label_radius;
  if (const auto it = pool_by_image_.find(window.image_id); it != pool_by_image_.end()) {
    for (std::size_t k : it->second) {
      const Candidate& c = dataset_.target.pool.candidates[k];
      if (!window.rect.contains(c.px, c.py)) continue;
      const bool positive = std::any_of(window.animal_points.begin(), window.animal_points.end(), [&](const OraclePoint& p) {
        return (p.px - c.px) * (p.px - c.px) + (p.py - c.py) * (p.py - c.py) <= r2;
      });
      auto pos = std::lower_bound(state_.labeled.begin(), state_.labeled.end(), c.candidate_id,
                                  [](const LabeledCandidate& l, CandidateId id) { return l.candidate_id < id; });
      if (pos == state_.labeled.end() || pos->candidate_id != c.candidate_id) {
        state_.labeled.insert(pos, {c.candidate_id, positive});
      }
    }
  }
  windows_by_image_[window.image_id].push_back(window.rect);
  state_.windows.push_back(std::move(window));
  state_.pending.reset();
  ++state_.query_index;
  state_.status = RunStatus::ready;
}

void Session::end_iteration() {
  const auto queries = static_cast<int>(state_.windows.size());
  state_.metrics.push_back(compute_metrics(state_.iteration, queries, state_.found.size(), total_animals(),
                                           state_.windows.size(), capacity_));
  if (state_.config.mode == LoopMode::adaptive) {
    std::optional<SurrogateDetector> updated;
    if (!state_.labeled.empty()) {
      updated = update_surrogate(state_.detector, source_->detector, dataset_.target.pool, state_.labeled,
                                 state_.config.update);
    }
    if (updated) {
      state_.detector = std::move(*updated);
    } else {
      state_.events.push_back({state_.iteration, state_.query_index, "update_skipped",
                               "labeled set holds a single class (" + std::to_string(state_.labeled.size()) +
                                   " labels)"});
    }
  }
  ++state_.iteration;
  state_.query_index = 0;
  if (state_.iteration > state_.config.iterations) {
    state_.status = RunStatus::finished;
    return;
  }
  Rng rng(0);
  rng.restore(state_.rng_state);
  state_.iteration_seed = rng.next_u64();
  state_.rng_state = rng.state();
}

std::vector<CandidateMarker> Session::pending_markers() const {
  std::vector<CandidateMarker> out;
  if (!state_.pending || !cache_) return out;
  const QueriedWindow& w = *state_.pending;
  if (const auto it = cache_->predicted_by_image.find(w.image_id); it != cache_->predicted_by_image.end()) {
    for (std::size_t k : it->second) {
      const Candidate& c = cache_->predicted.candidates[k];
      if (w.rect.contains(c.px, c.py)) out.push_back({c.px, c.py, c.animal_confidence()});
    }
  }
  return out;
}

std::vector<WindowRect> Session::prior_rects(const std::string& image_id) const {
  const auto it = windows_by_image_.find(image_id);
  return it == windows_by_image_.end() ? std::vector<WindowRect>{} : it->second;
}

RunResult continue_simulation(const Dataset& dataset, RunState state, std::optional<int> stop_after_queries,
                              std::shared_ptr<const SourceModel> source) {
  Session session(dataset, std::move(state), std::move(source));
  while (!stop_after_queries || static_cast<int>(session.state().windows.size()) < *stop_after_queries) {
    if (!session.next()) break;
    session.answer_with_ground_truth();
  }
  return {session.state()};
}

RunResult run_simulation(const Dataset& dataset, const LoopConfig& config, std::shared_ptr<const SourceModel> source) {
  Session session(dataset, config, std::move(source));
  while (session.next()) session.answer_with_ground_truth();
  return {session.state()};
}

void write_metrics_csv(std::span<const MetricRow> rows, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "iteration,queries,cumulative_found,recall,fraction_reviewed\n";
  for (const MetricRow& r : rows) {
    out << r.iteration << ',' << r.queries << ',' << r.cumulative_found << ',' << csv::format(r.recall) << ','
        << csv::format(r.fraction_reviewed) << '\n';
  }
}

std::vector<MetricRow> read_metrics_csv(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::string line;
  if (!std::getline(in, line) || csv::trim_cr(line) != "iteration,queries,cumulative_found,recall,fraction_reviewed") {
    throw std::runtime_error(path.string() + ": unexpected metrics header");
  }
  std::vector<MetricRow> rows;
  std::size_t row_number = 1;
  while (std::getline(in, line)) {
    ++row_number;
    const std::string_view text = csv::trim_cr(line);
    if (text.empty()) continue;
    const auto f = csv::split(text);
    MetricRow r;
    const auto it = f.size() == 5 ? csv::parse_number<int>(f[0]) : std::nullopt;
    const auto q = f.size() == 5 ? csv::parse_number<int>(f[1]) : std::nullopt;
    const auto found = f.size() == 5 ? csv::parse_number<int>(f[2]) : std::nullopt;
    const auto recall = f.size() == 5 ? csv::parse_number<double>(f[3]) : std::nullopt;
    const auto frac = f.size() == 5 ? csv::parse_number<double>(f[4]) : std::nullopt;
    if (!it || !q || !found || !recall || !frac) {
      throw std::runtime_error(path.string() + ": malformed row " + std::to_string(row_number));
    }
    rows.push_back({*it, *q, *found, *recall, *frac});
  }
  return rows;
}

}  // namespace tsal
