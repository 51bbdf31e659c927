#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "tsal/candidates.hpp"
#include "tsal/cropping.hpp"
#include "tsal/dataset.hpp"
#include "tsal/detector.hpp"
#include "tsal/ot.hpp"
#include "tsal/ranking.hpp"
#include "tsal/synth.hpp"

namespace tsal {

enum class LoopMode { adaptive, static_model };

std::string_view to_string(LoopMode mode);
LoopMode parse_mode(std::string_view text);

struct LoopConfig {
  int iterations = 10;
  int queries_per_iteration = 50;
  int window_w = 1000;
  int window_h = 1000;
  double threshold = kCandidateThreshold;
  Criterion criterion = Criterion::transfer_sampling;
  LoopMode mode = LoopMode::adaptive;
  std::uint64_t seed = 0;

  int nms_radius = 2;
  int search_stride = kDefaultSearchStride;
  double center_weight = kDefaultCenterWeight;
  // Oracle points label latent candidates within this many pixels as animals.
  double label_radius = 32.0;
  // Transport solver for transfer_sampling; the Sinkhorn epsilon is relative
  // to the median of the cost matrix.
  SolverKind solver = SolverKind::sinkhorn;
  double sinkhorn_epsilon = 0.03;
  MarginTrainingOptions svm;
  // Refit of the surrogate on target labels; `proximal` pulls toward the source model.
  LogisticFitOptions update{1e-3, 0.05, 200, 1e-7, true};
};

// Throws std::invalid_argument naming the offending field.
void validate(const LoopConfig& config);

enum class RunStatus { ready, awaiting_label, finished };

std::string_view to_string(RunStatus status);
RunStatus parse_status(std::string_view text);

struct OraclePoint {
  double px = 0.0;
  double py = 0.0;
  std::string animal_id;
};

struct OracleResponse {
  WindowRect window;
  std::vector<OraclePoint> animal_points;
};

/// Ground-truth points of `image_id` inside the window, inclusive bounds, in
/// ground-truth order.
OracleResponse simulated_oracle(const WindowRect& window, const std::string& image_id,
                                std::span<const GroundTruthPoint> ground_truth);

struct QueriedWindow {
  std::string window_id;
  int iteration = 0;
  int query_index = 0;
  std::string image_id;
  WindowRect rect;
  CandidateId anchor_id = 0;
  bool fallback = false;
  std::vector<OraclePoint> animal_points;
};

struct LabeledCandidate {
  CandidateId candidate_id = 0;
  bool positive = false;
};

struct MetricRow {
  int iteration = 0;
  int queries = 0;
  int cumulative_found = 0;
  double recall = 0.0;
  double fraction_reviewed = 0.0;
};

struct LoopEvent {
  int iteration = 0;
  int query_index = 0;
  std::string kind;
  std::string detail;
};

/// Everything needed to continue a run. Fields change only through Session.
struct RunState {
  LoopConfig config;
  std::string dataset;  // informational reference, e.g. the dataset directory
  RunStatus status = RunStatus::ready;
  int iteration = 1;    // 1-based iteration in progress
  int query_index = 0;  // queries issued in the current iteration
  std::uint64_t iteration_seed = 0;
  std::string rng_state;
  std::vector<QueriedWindow> windows;  // answered windows, in query order
  std::optional<QueriedWindow> pending;
  std::vector<LabeledCandidate> labeled;  // ascending candidate id
  std::vector<std::string> found;         // distinct animal ids in discovery order
  std::vector<MetricRow> metrics;
  SurrogateDetector detector;
  std::vector<LoopEvent> events;
};

/// Source-side quantities shared by every run on one dataset: the source
/// detector, its thresholded/NMS'd predictions and their SVM margins.
struct SourceModel {
  SurrogateDetector detector;
  CandidateSet predicted;
  FeatureRows features;
  std::optional<LinearRanker> ranker;
  ScoreVector scores;
};

// Fits the source detector (seeded holdout split) and, when the predicted set
// has both classes, the margin ranker.
std::shared_ptr<const SourceModel> prepare_source(const Dataset& dataset, const LoopConfig& config);

/// Logistic refit on target labels, warm-started from `current` with a
/// proximal pull toward `prior`. Returns nullopt when the labels hold a
/// single class (the caller records the skip).
std::optional<SurrogateDetector> update_surrogate(const SurrogateDetector& current, const SurrogateDetector& prior,
                                                  const CandidateSet& pool, std::span<const LabeledCandidate> labels,
                                                  const LogisticFitOptions& options);

// ceil(W / w) * ceil(H / h) summed over the images.
std::int64_t window_capacity(std::span<const ImageMeta> images, int window_w, int window_h);

MetricRow compute_metrics(int iteration, int queries, std::size_t found, std::size_t total_animals,
                          std::size_t windows, std::int64_t capacity);

class ConflictError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct CandidateMarker {
  double px = 0.0;
  double py = 0.0;
  double confidence = 0.0;
};

/// One AL run as a state machine: ready -> awaiting_label -> ready ... ->
/// finished. The simulated loop and the interactive service both drive it.
class Session {
 public:
  Session(const Dataset& dataset, const LoopConfig& config, std::shared_ptr<const SourceModel> source = nullptr);
  // Continues from a snapshot. The dataset must be the one the snapshot was taken on.
  Session(const Dataset& dataset, RunState state, std::shared_ptr<const SourceModel> source = nullptr);

  const RunState& state() const { return state_; }
  RunStatus status() const { return state_.status; }

  // Pending window, selecting a new one when the run is ready. Null once finished.
  const QueriedWindow* next();

  // Simulated answer for the pending window.
  void answer_with_ground_truth();

  /// Answer from a human oracle: points in image pixels, matched to the
  /// nearest unused ground-truth animal within label_radius when one exists.
  /// Throws ConflictError for a window id other than the pending one and
  /// std::invalid_argument for points outside the window; state is unchanged
  /// on error.
  int submit(const std::string& window_id, std::span<const PixelPoint> points);

  // Predicted candidates inside the pending window.
  std::vector<CandidateMarker> pending_markers() const;
  // Windows queried earlier in the pending window's image.
  std::vector<WindowRect> prior_rects(const std::string& image_id) const;

  std::size_t total_animals() const { return dataset_.target.ground_truth.size(); }

 private:
  struct IterationCache;

  void initialize();
  void prepare_iteration();
  std::optional<std::size_t> select_anchor(bool& fallback);
  void record(QueriedWindow window);
  void end_iteration();
  bool inside_queried(const Candidate& c) const;

  const Dataset& dataset_;
  RunState state_;
  std::shared_ptr<const SourceModel> source_;
  std::int64_t capacity_ = 0;
  std::map<std::string, std::vector<WindowRect>> windows_by_image_;
  std::map<std::string, std::vector<std::size_t>> pool_by_image_;
  std::map<std::string, std::vector<std::size_t>> gt_by_image_;
  std::shared_ptr<IterationCache> cache_;
  std::shared_ptr<const TransportPlan> static_plan_;
};

struct RunResult {
  RunState state;
};

/// Drives a session with the simulated oracle. `stop_after_queries` pauses the
/// run once that many queries have been answered in total.
RunResult run_simulation(const Dataset& dataset, const LoopConfig& config,
                         std::shared_ptr<const SourceModel> source = nullptr);
RunResult continue_simulation(const Dataset& dataset, RunState state, std::optional<int> stop_after_queries = {},
                              std::shared_ptr<const SourceModel> source = nullptr);

void write_metrics_csv(std::span<const MetricRow> rows, const std::filesystem::path& path);
std::vector<MetricRow> read_metrics_csv(const std::filesystem::path& path);
void write_events_jsonl(std::span<const LoopEvent> events, const std::filesystem::path& path);

// Config as JSON; absent fields keep their defaults. Throws std::invalid_argument.
std::string loop_config_to_json(const LoopConfig& config);
LoopConfig loop_config_from_json(const std::string& text);

// runstate.json round trip; doubles are written with full precision.
std::string runstate_to_json(const RunState& state);
RunState runstate_from_json(const std::string& text);
void save_runstate(const RunState& state, const std::filesystem::path& path);
RunState load_runstate(const std::filesystem::path& path);

}  // namespace tsal
