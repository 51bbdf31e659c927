#pragma once

#include <cstdint>
#include <stdexcept>

#include "tsal/dataset.hpp"
#include "tsal/detector.hpp"

namespace tsal {

/// Parameters of the source-to-target shift. Target features are produced by
/// the same class-conditional generators as source, then perturbed with
/// isotropic noise, translated and rotated.
struct ShiftConfig {
  std::size_t dim = 512;
  // Angle applied in every plane of a random orthonormal pairing of the axes.
  double rotation_strength = 0.6;
  double translation_norm = 1.0;
  double noise_sigma = 0.01;
  // Per-dimension spread outside the class-structure subspace (inside it is 0.6).
  double ambient_sigma = 0.02;
  // Target-only displacement of background (false positive) features along the
  // axis that separates animals from most background types.
  double background_shift = 3.0;
  // Share of target false positives drawn from a background type absent in source.
  double novel_fp_fraction = 0.0;
  double target_fp_multiplier = 2.0;
  double herd_cluster_radius = 150.0;
  double herd_mean_size = 5.0;
};

struct GenerationScale {
  int n_images_src = 30;
  int n_images_tgt = 100;
  int n_animals_src = 300;
  int n_animals_tgt = 150;
  int n_fp_src = 1200;
  int image_width = 2000;
  int image_height = 2000;
  int grid_stride = kDefaultGridStride;
};

struct SyntheticDataset {
  Dataset data;
  ShiftConfig shift;
  GenerationScale scale;
  std::uint64_t seed = 0;
};

class GenerationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

void validate(const ShiftConfig& config);

/// Deterministic in (config, scale, seed). Latent pool confidences are filled
/// in with the initial detector so the files carry plausible predictions.
SyntheticDataset generate(const ShiftConfig& config, const GenerationScale& scale, std::uint64_t seed);

struct DetectorReport {
  double holdout_recall = 0.0;
  double holdout_precision = 0.0;
  std::size_t holdout_size = 0;
};

inline constexpr double kCandidateThreshold = 0.1;

/// Fits the surrogate on a seeded 80% split of the labeled source pool and
/// reports recall/precision at threshold 0.1 on the remaining 20%.
SurrogateDetector initial_detector(const Dataset& dataset, std::uint64_t seed, DetectorReport* report = nullptr,
                                   const LogisticFitOptions& options = {});

}  // namespace tsal
