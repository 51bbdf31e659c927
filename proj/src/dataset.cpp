#include "tsal/dataset.hpp"

#include <algorithm>
#include <stdexcept>
#include <unordered_map>
#include <unordered_set>

namespace tsal {

const ImageMeta* DomainData::find_image(const std::string& image_id) const {
  auto it = std::find_if(images.begin(), images.end(),
                         [&](const ImageMeta& m) { return m.image_id == image_id; });
  return it == images.end() ? nullptr : &*it;
}

void save_dataset(const Dataset& dataset, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::vector<ImageMeta> images = dataset.source.images;
  images.insert(images.end(), dataset.target.images.begin(), dataset.target.images.end());
  save_image_meta(images, dir / kImagesFile);
  std::vector<GroundTruthPoint> gt = dataset.source.ground_truth;
  gt.insert(gt.end(), dataset.target.ground_truth.begin(), dataset.target.ground_truth.end());
  save_ground_truth(gt, dir / kGroundTruthFile);
  save_candidate_set(dataset.source.pool, dir / kSourceCandidatesFile);
  save_candidate_set(dataset.target.pool, dir / kTargetCandidatesFile);
}

Dataset load_dataset(const std::filesystem::path& dir, int grid_stride) {
  Dataset dataset;
  std::unordered_map<std::string, Domain> domain_of;
  for (ImageMeta& meta : load_image_meta(dir / kImagesFile)) {
    domain_of[meta.image_id] = meta.domain;
    (meta.domain == Domain::source ? dataset.source : dataset.target).images.push_back(std::move(meta));
  }
  for (GroundTruthPoint& p : load_ground_truth(dir / kGroundTruthFile)) {
    auto it = domain_of.find(p.image_id);
    if (it == domain_of.end()) {
      throw std::invalid_argument("ground truth " + p.animal_id + " references unknown image " + p.image_id);
    }
    (it->second == Domain::source ? dataset.source : dataset.target).ground_truth.push_back(std::move(p));
  }
  dataset.source.pool = load_candidate_set(dir / kSourceCandidatesFile, Domain::source, grid_stride);
  dataset.target.pool = load_candidate_set(dir / kTargetCandidatesFile, Domain::target, grid_stride);
  assign_animal_counts(dataset.source.images, dataset.source.ground_truth);
  assign_animal_counts(dataset.target.images, dataset.target.ground_truth);
  validate(dataset);
  return dataset;
}

namespace {

void validate_domain(const DomainData& data, Domain domain, std::unordered_set<std::string>& image_ids,
                     std::unordered_set<std::string>& animal_ids) {
  std::unordered_map<std::string, const ImageMeta*> by_id;
  for (const ImageMeta& m : data.images) {
    if (m.width <= 0 || m.height <= 0) throw std::invalid_argument("image " + m.image_id + " has no area");
    if (m.domain != domain) throw std::invalid_argument("image " + m.image_id + " filed under the wrong domain");
    if (!image_ids.insert(m.image_id).second) throw std::invalid_argument("duplicate image id " + m.image_id);
    by_id[m.image_id] = &m;
  }
  auto inside = [&](const std::string& image_id, double x, double y, const std::string& what) {
    auto it = by_id.find(image_id);
    if (it == by_id.end()) throw std::invalid_argument(what + " references unknown image " + image_id);
    if (x < 0 || y < 0 || x > it->second->width || y > it->second->height) {
      throw std::invalid_argument(what + " lies outside image " + image_id);
    }
  };
  for (const GroundTruthPoint& p : data.ground_truth) {
    if (!animal_ids.insert(p.animal_id).second) throw std::invalid_argument("duplicate animal id " + p.animal_id);
    inside(p.image_id, p.px, p.py, "animal " + p.animal_id);
  }
  validate(data.pool);
  std::unordered_set<CandidateId> candidate_ids;
  for (const Candidate& c : data.pool.candidates) {
    if (!candidate_ids.insert(c.candidate_id).second) {
      throw std::invalid_argument("duplicate candidate id " + std::to_string(c.candidate_id));
    }
    inside(c.image_id, c.px, c.py, "candidate " + std::to_string(c.candidate_id));
  }
}

}  // namespace

void validate(const Dataset& dataset) {
  std::unordered_set<std::string> image_ids, animal_ids;
  validate_domain(dataset.source, Domain::source, image_ids, animal_ids);
  validate_domain(dataset.target, Domain::target, image_ids, animal_ids);
  if (!dataset.source.pool.empty() && !dataset.target.pool.empty() &&
      dataset.source.pool.dim != dataset.target.pool.dim) {
    throw std::invalid_argument("source and target feature dimensions differ");
  }
}

}  // namespace tsal
