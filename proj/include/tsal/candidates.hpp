#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace tsal {

enum class Domain { source, target };
enum class GtLabel { true_positive, false_positive };

std::string_view to_string(Domain domain);
std::string_view to_string(GtLabel label);
Domain parse_domain(std::string_view text);

using CandidateId = std::int64_t;

// Indices into Candidate::confidence.
inline constexpr std::size_t kBackground = 0;
inline constexpr std::size_t kAnimal = 1;
inline constexpr std::size_t kBorder = 2;

inline constexpr int kDefaultGridStride = 16;

struct ImageMeta {
  std::string image_id;
  int width = 0;
  int height = 0;
  Domain domain = Domain::target;
  // Ground truth count, used only by splitting and metrics.
  int animal_count = 0;
};

/// One detector prediction on the prediction grid. `gt_label` is hidden from
/// the sampling criteria and only read by oracles and metrics.
struct Candidate {
  CandidateId candidate_id = 0;
  std::string image_id;
  int grid_x = 0;
  int grid_y = 0;
  double px = 0.0;
  double py = 0.0;
  std::array<double, 3> confidence{1.0, 0.0, 0.0};
  std::vector<double> features;
  GtLabel gt_label = GtLabel::false_positive;

  double animal_confidence() const { return confidence[kAnimal]; }
  bool is_true_positive() const { return gt_label == GtLabel::true_positive; }
};

struct CandidateSet {
  Domain domain = Domain::target;
  std::vector<Candidate> candidates;
  std::size_t dim = 0;
  int grid_stride = kDefaultGridStride;

  std::size_t size() const { return candidates.size(); }
  bool empty() const { return candidates.empty(); }
};

struct GroundTruthPoint {
  std::string animal_id;
  std::string image_id;
  double px = 0.0;
  double py = 0.0;
};

struct DatasetSplit {
  std::vector<std::string> train;
  std::vector<std::string> validation;
  std::vector<std::string> test;
};

struct SplitRatios {
  double train = 0.7;
  double validation = 0.1;
  double test = 0.2;
};

/// Raised by the CSV readers. `row()` is the 1-based data row (0 for the header).
class ParseError : public std::runtime_error {
 public:
  ParseError(std::size_t row, const std::string& what);
  std::size_t row() const { return row_; }

 private:
  std::size_t row_;
};

// Throws std::invalid_argument if the set breaks a structural invariant
// (feature dimension, probability simplex within 1e-6).
void validate(const CandidateSet& set);

CandidateSet load_candidate_set(const std::filesystem::path& path, Domain domain = Domain::target,
                                int grid_stride = kDefaultGridStride);
void save_candidate_set(const CandidateSet& set, const std::filesystem::path& path);

std::vector<GroundTruthPoint> load_ground_truth(const std::filesystem::path& path);
void save_ground_truth(const std::vector<GroundTruthPoint>& points, const std::filesystem::path& path);

// animal_count is not stored in the file; see assign_animal_counts.
std::vector<ImageMeta> load_image_meta(const std::filesystem::path& path);
void save_image_meta(const std::vector<ImageMeta>& images, const std::filesystem::path& path);

void assign_animal_counts(std::vector<ImageMeta>& images, const std::vector<GroundTruthPoint>& gt);

/// Image-level split. Images with animals are packed greedily (descending
/// animal count) so cumulative animal shares track the ratios; empty images are
/// shuffled with `seed` and cut by image count.
DatasetSplit split_dataset(const std::vector<ImageMeta>& images, const std::vector<GroundTruthPoint>& gt,
                           const SplitRatios& ratios, std::uint64_t seed);

/// Greedy suppression on the prediction grid: candidates are visited by
/// descending animal confidence (ties: lower id first) and kept unless a kept
/// candidate of the same image lies within L1 grid distance `radius`.
/// Output keeps the input order of survivors.
CandidateSet nms(const CandidateSet& set, int radius = 2);

/// Candidates with animal confidence >= tau, in input order.
CandidateSet threshold_candidates(const CandidateSet& pool, double tau = 0.1);

}  // namespace tsal
