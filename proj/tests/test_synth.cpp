#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <map>
#include <numeric>

#include "test_util.hpp"
#include "tsal/dataset.hpp"
#include "tsal/detector.hpp"
#include "tsal/synth.hpp"

using namespace tsal;

namespace {

GenerationScale small_scale() {
  GenerationScale s;
  s.n_images_src = 8;
  s.n_images_tgt = 12;
  s.n_animals_src = 60;
  s.n_animals_tgt = 30;
  s.n_fp_src = 200;
  s.image_width = 1200;
  s.image_height = 900;
  return s;
}

ShiftConfig small_shift() {
  ShiftConfig c;
  c.dim = 24;
  return c;
}

std::size_t count_tp(const CandidateSet& set) {
  std::size_t n = 0;
  for (const auto& c : set.candidates) n += c.is_true_positive();
  return n;
}

}  // namespace

TEST_CASE("generation is deterministic in the seed") {
  const auto a = generate(small_shift(), small_scale(), 9);
  const auto b = generate(small_shift(), small_scale(), 9);
  const auto c = generate(small_shift(), small_scale(), 10);
  REQUIRE(a.data.target.pool.size() == b.data.target.pool.size());
  for (std::size_t i = 0; i < a.data.target.pool.size(); ++i) {
    CHECK(a.data.target.pool.candidates[i].features == b.data.target.pool.candidates[i].features);
  }
  CHECK(a.data.target.ground_truth.size() == b.data.target.ground_truth.size());
  bool differs = a.data.target.pool.size() != c.data.target.pool.size();
  for (std::size_t i = 0; !differs && i < a.data.target.pool.size(); ++i) {
    differs = a.data.target.pool.candidates[i].features != c.data.target.pool.candidates[i].features;
  }
  CHECK(differs);
}

TEST_CASE("generated dataset honours counts and invariants") {
  const GenerationScale scale = small_scale();
  const auto ds = generate(small_shift(), scale, 2);
  CHECK_NOTHROW(validate(ds.data));
  CHECK(ds.data.source.images.size() == static_cast<std::size_t>(scale.n_images_src));
  CHECK(ds.data.target.images.size() == static_cast<std::size_t>(scale.n_images_tgt));
  CHECK(ds.data.source.ground_truth.size() == static_cast<std::size_t>(scale.n_animals_src));
  CHECK(ds.data.target.ground_truth.size() == static_cast<std::size_t>(scale.n_animals_tgt));
  CHECK(ds.data.target.pool.dim == 24);

  // Target: fewer animals per image and a larger share of false positives.
  const double src_per_image = double(scale.n_animals_src) / scale.n_images_src;
  const double tgt_per_image = double(scale.n_animals_tgt) / scale.n_images_tgt;
  CHECK(tgt_per_image < src_per_image);
  const double src_fp = double(ds.data.source.pool.size() - count_tp(ds.data.source.pool));
  const double tgt_fp = double(ds.data.target.pool.size() - count_tp(ds.data.target.pool));
  CHECK(tgt_fp / ds.data.target.pool.size() > src_fp / ds.data.source.pool.size());
  CHECK(tgt_fp >= 1.5 * src_fp);

  // Herd process: every image of the target keeps its animals inside the image.
  for (const auto& p : ds.data.target.ground_truth) {
    const ImageMeta* m = ds.data.target.find_image(p.image_id);
    REQUIRE(m != nullptr);
    CHECK(p.px >= 0);
    CHECK(p.px <= m->width);
    CHECK(p.py <= m->height);
  }
}

TEST_CASE("dataset directory round trip") {
  testutil::TempDir dir("synth");
  const auto ds = generate(small_shift(), small_scale(), 4);
  save_dataset(ds.data, dir.path());
  const Dataset back = load_dataset(dir.path());
  CHECK(back.source.pool.size() == ds.data.source.pool.size());
  CHECK(back.target.pool.size() == ds.data.target.pool.size());
  CHECK(back.target.ground_truth.size() == ds.data.target.ground_truth.size());
  CHECK(back.target.images.size() == ds.data.target.images.size());
  const Candidate& a = ds.data.target.pool.candidates.back();
  const Candidate& b = back.target.pool.candidates.back();
  CHECK(a.candidate_id == b.candidate_id);
  CHECK(a.features == b.features);
  CHECK(a.px == b.px);
}

TEST_CASE("shift moves target features away from source") {
  ShiftConfig none = small_shift();
  none.rotation_strength = 0;
  none.translation_norm = 0;
  none.noise_sigma = 0;
  none.background_shift = 0;
  ShiftConfig shifted = small_shift();
  shifted.translation_norm = 4.0;
  auto mean_tp = [](const CandidateSet& set) {
    std::vector<double> m(set.dim, 0.0);
    double n = 0;
    for (const auto& c : set.candidates) {
      if (!c.is_true_positive()) continue;
      for (std::size_t k = 0; k < set.dim; ++k) m[k] += c.features[k];
      ++n;
    }
    for (double& x : m) x /= n;
    return m;
  };
  auto gap = [&](const SyntheticDataset& ds) {
    const auto s = mean_tp(ds.data.source.pool);
    const auto t = mean_tp(ds.data.target.pool);
    double d = 0;
    for (std::size_t k = 0; k < s.size(); ++k) d += (s[k] - t[k]) * (s[k] - t[k]);
    return std::sqrt(d);
  };
  const double g0 = gap(generate(none, small_scale(), 5));
  const double g1 = gap(generate(shifted, small_scale(), 5));
  CHECK(g1 > g0 + 2.0);
}

TEST_CASE("invalid generator settings are rejected") {
  ShiftConfig bad = small_shift();
  bad.noise_sigma = -1;
  CHECK_THROWS_AS(validate(bad), std::invalid_argument);
  bad = small_shift();
  bad.target_fp_multiplier = 0.5;
  CHECK_THROWS_AS(validate(bad), std::invalid_argument);
  GenerationScale crowded = small_scale();
  crowded.image_width = 64;
  crowded.image_height = 64;
  crowded.n_animals_tgt = 5000;
  CHECK_THROWS(generate(small_shift(), crowded, 1));
}

TEST_CASE("initial detector separates source classes") {
  const auto ds = generate(small_shift(), small_scale(), 6);
  DetectorReport report;
  const SurrogateDetector det = initial_detector(ds.data, 1, &report);
  CHECK(report.holdout_size > 0);
  CHECK(report.holdout_recall > 0.8);
  CHECK(report.holdout_precision > 0.5);
  const SurrogateDetector again = initial_detector(ds.data, 1);
  CHECK(det.weights == again.weights);
  const CandidateSet scored = det.score(ds.data.source.pool);
  for (const auto& c : scored.candidates) {
    CHECK(std::abs(c.confidence[0] + c.confidence[1] + c.confidence[2] - 1.0) < 1e-12);
  }
}

TEST_CASE("logistic fit with proximal pull stays near the prior") {
  std::vector<std::vector<double>> rows{{1, 0}, {2, 0}, {-1, 0}, {-2, 0}};
  std::vector<LabeledExample> ex;
  for (std::size_t i = 0; i < rows.size(); ++i) ex.push_back({rows[i], i < 2});
  LogisticFitOptions free_fit;
  const SurrogateDetector f = fit_logistic(ex, 2, free_fit);
  CHECK(f.weights[0] > 0);
  CHECK(f.probability(rows[0]) > 0.5);
  CHECK(f.probability(rows[2]) < 0.5);

  SurrogateDetector prior;
  prior.weights = {0.0, 5.0};
  prior.bias = 0.0;
  LogisticFitOptions anchored;
  anchored.proximal = 1e3;
  const SurrogateDetector g = fit_logistic(ex, 2, anchored, &prior, &prior);
  CHECK(std::abs(g.weights[1] - 5.0) < 1e-2);
  CHECK(std::abs(g.weights[0]) < std::abs(f.weights[0]));
}
