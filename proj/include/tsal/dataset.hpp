#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "tsal/candidates.hpp"

namespace tsal {

/// Everything known about one acquisition: images, point ground truth and the
/// latent pool of locations the detector can fire on.
struct DomainData {
  std::vector<ImageMeta> images;
  std::vector<GroundTruthPoint> ground_truth;
  CandidateSet pool;

  const ImageMeta* find_image(const std::string& image_id) const;
};

struct Dataset {
  DomainData source;
  DomainData target;
};

// File names inside a dataset directory.
inline constexpr const char* kImagesFile = "images.csv";
inline constexpr const char* kGroundTruthFile = "ground_truth.csv";
inline constexpr const char* kSourceCandidatesFile = "candidates_source.csv";
inline constexpr const char* kTargetCandidatesFile = "candidates_target.csv";
inline constexpr const char* kConfigEchoFile = "config.json";

void save_dataset(const Dataset& dataset, const std::filesystem::path& dir);
Dataset load_dataset(const std::filesystem::path& dir, int grid_stride = kDefaultGridStride);

// Cross-file checks: unique ids, coordinates inside their image, matching
// feature dimensions. Throws std::invalid_argument.
void validate(const Dataset& dataset);

}  // namespace tsal
