#include "tsal/synth.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <string>

#include "tsal/rng.hpp"

namespace tsal {

namespace {

using Vector = std::vector<double>;

// Class-conditional generator layout in a small design space; the design axes
// are embedded into feature space through a random orthonormal frame.
constexpr std::size_t kDesignDims = 6;
struct Component {
  std::array<double, kDesignDims> mean;
  double weight;
};
constexpr std::array<double, kDesignDims> kTruePositiveMean{3.0, 0.0, 0.0, 0.0, 0.0, 0.0};
// The first false-positive component sits next to the true positives so that
// confidence alone is an unreliable guide to animals.
constexpr std::array<Component, 4> kFalsePositiveComponents{{
    {{3.0, 2.5, 0.0, 0.0, 0.0, 0.0}, 0.2},
    {{-2.0, 0.0, 3.0, 0.0, 0.0, 0.0}, 0.3},
    {{-2.0, 0.0, -1.5, 2.5, 0.0, 0.0}, 0.3},
    {{0.0, 0.0, 0.0, 0.0, 3.0, 0.0}, 0.2},
}};
// Background type that only occurs in the target acquisition. It scores like
// an animal along the first design axis but is displaced along the last one.
constexpr std::array<double, kDesignDims> kNovelFalsePositiveMean{2.0, 0.0, 0.0, 0.0, 0.0, 2.5};
constexpr double kComponentSigma = 0.6;

std::vector<Vector> orthonormal_frame(std::size_t dim, std::size_t count, Rng& rng) {
  std::vector<Vector> frame;
  while (frame.size() < count) {
    Vector v(dim);
    for (double& x : v) x = rng.normal();
    for (const Vector& e : frame) {
      double proj = 0.0;
      for (std::size_t k = 0; k < dim; ++k) proj += v[k] * e[k];
      for (std::size_t k = 0; k < dim; ++k) v[k] -= proj * e[k];
    }
    double norm = 0.0;
    for (double x : v) norm += x * x;
    norm = std::sqrt(norm);
    if (norm < 1e-8) continue;
    for (double& x : v) x /= norm;
    frame.push_back(std::move(v));
  }
  return frame;
}

struct FeatureModel {
  std::size_t dim = 0;
  std::vector<Vector> frame;  // design axes in feature space
  Vector tp_mean;
  Vector background_offset;  // added to target false positives
  Vector novel_fp_mean;
  double novel_fp_fraction = 0.0;
  double ambient_sigma = kComponentSigma;
  std::vector<Vector> fp_means;
  std::vector<double> fp_cumulative;
  // target transform
  std::vector<Vector> rotation_basis;  // full orthonormal basis, paired (0,1), (2,3), ...
  double angle = 0.0;
  Vector translation;
  double noise_sigma = 0.0;

  Vector embed(const std::array<double, kDesignDims>& design) const {
    Vector out(dim, 0.0);
    for (std::size_t a = 0; a < frame.size(); ++a) {
      for (std::size_t k = 0; k < dim; ++k) out[k] += design[a] * frame[a][k];
    }
    return out;
  }

  // Spread kComponentSigma inside the design span, ambient_sigma outside it.
  Vector sample(bool positive, bool target, Rng& rng) const {
    const Vector* mean = &tp_mean;
    if (!positive) {
      if (target && rng.uniform() < novel_fp_fraction) {
        mean = &novel_fp_mean;
      } else {
        const double u = rng.uniform();
        std::size_t c = 0;
        while (c + 1 < fp_cumulative.size() && u >= fp_cumulative[c]) ++c;
        mean = &fp_means[c];
      }
    }
    Vector noise(dim);
    for (double& x : noise) x = rng.normal();
    Vector z(dim);
    for (std::size_t k = 0; k < dim; ++k) z[k] = (*mean)[k] + ambient_sigma * noise[k];
    for (const Vector& e : frame) {
      double proj = 0.0;
      for (std::size_t k = 0; k < dim; ++k) proj += e[k] * noise[k];
      for (std::size_t k = 0; k < dim; ++k) z[k] += (kComponentSigma - ambient_sigma) * proj * e[k];
    }
    if (target && !positive) {
      for (std::size_t k = 0; k < dim; ++k) z[k] += background_offset[k];
    }
    return z;
  }

  // rotation o translation o noise
  Vector shift(Vector z, Rng& rng) const {
    for (std::size_t k = 0; k < dim; ++k) z[k] += noise_sigma * rng.normal() + translation[k];
    if (angle == 0.0) return z;
    const double c = std::cos(angle), s = std::sin(angle);
    Vector out = z;
    for (std::size_t p = 0; p + 1 < rotation_basis.size(); p += 2) {
      const Vector& u = rotation_basis[p];
      const Vector& v = rotation_basis[p + 1];
      double a = 0.0, b = 0.0;
      for (std::size_t k = 0; k < dim; ++k) {
        a += z[k] * u[k];
        b += z[k] * v[k];
      }
      const double da = (c * a - s * b) - a;
      const double db = (s * a + c * b) - b;
      for (std::size_t k = 0; k < dim; ++k) out[k] += da * u[k] + db * v[k];
    }
    return out;
  }
};

FeatureModel build_feature_model(const ShiftConfig& config, Rng& rng) {
  FeatureModel model;
  model.dim = config.dim;
  model.frame = orthonormal_frame(config.dim, std::min(config.dim, kDesignDims), rng);
  model.tp_mean = model.embed(kTruePositiveMean);
  model.novel_fp_mean = model.embed(kNovelFalsePositiveMean);
  model.background_offset = model.embed({config.background_shift, 0.0, 0.0, 0.0, 0.0, 0.0});
  model.novel_fp_fraction = config.novel_fp_fraction;
  model.ambient_sigma = config.ambient_sigma;
  double cumulative = 0.0;
  for (const Component& c : kFalsePositiveComponents) {
    model.fp_means.push_back(model.embed(c.mean));
    cumulative += c.weight;
    model.fp_cumulative.push_back(cumulative);
  }
  model.angle = config.rotation_strength;
  if (model.angle != 0.0) model.rotation_basis = orthonormal_frame(config.dim, config.dim, rng);
  model.translation.assign(config.dim, 0.0);
  if (config.translation_norm > 0.0) {
    Vector direction = orthonormal_frame(config.dim, 1, rng).front();
    for (std::size_t k = 0; k < config.dim; ++k) model.translation[k] = config.translation_norm * direction[k];
  }
  model.noise_sigma = config.noise_sigma;
  return model;
}

struct DomainScale {
  Domain domain;
  int n_images;
  int n_animals;
  int n_fp;
  std::string prefix;
  CandidateId first_id;
};

std::string padded(const std::string& prefix, std::size_t value, int width) {
  std::string digits = std::to_string(value);
  if (static_cast<int>(digits.size()) < width) digits.insert(0, static_cast<std::size_t>(width) - digits.size(), '0');
  return prefix + digits;
}

DomainData generate_domain(const DomainScale& ds, const ShiftConfig& config, const GenerationScale& scale,
                           const FeatureModel& features, std::uint64_t seed) {
  const int w = scale.image_width, h = scale.image_height, stride = scale.grid_stride;
  const int cells_x = w / stride + 1, cells_y = h / stride + 1;
  const double capacity = static_cast<double>(ds.n_images) * cells_x * cells_y / 4.0;
  if (ds.n_animals > capacity) {
    throw GenerationError("requested " + std::to_string(ds.n_animals) + " animals exceed image capacity");
  }

  DomainData data;
  data.pool.domain = ds.domain;
  data.pool.dim = config.dim;
  data.pool.grid_stride = stride;
  for (int i = 0; i < ds.n_images; ++i) {
    data.images.push_back({padded(ds.prefix, static_cast<std::size_t>(i), 4), w, h, ds.domain, 0});
  }

  // Herds: sizes ~ Poisson(mean) truncated at 1, the last one trimmed to the total.
  Rng layout(derive_seed(seed, ds.domain == Domain::source ? 11 : 12));
  std::vector<std::vector<std::array<double, 2>>> animals_per_image(static_cast<std::size_t>(ds.n_images));
  const double radius = config.herd_cluster_radius;
  int placed = 0;
  while (placed < ds.n_animals) {
    const int size = std::min<int>(ds.n_animals - placed,
                                   std::max<int>(1, static_cast<int>(layout.poisson(config.herd_mean_size))));
    const auto image = static_cast<std::size_t>(layout.index(static_cast<std::uint64_t>(ds.n_images)));
    const double cx = layout.uniform(0.0, w), cy = layout.uniform(0.0, h);
    for (int a = 0; a < size; ++a) {
      const double r = radius * std::sqrt(layout.uniform());
      const double phi = 2.0 * std::numbers::pi * layout.uniform();
      const double x = std::clamp(std::round(cx + r * std::cos(phi)), 0.0, static_cast<double>(w));
      const double y = std::clamp(std::round(cy + r * std::sin(phi)), 0.0, static_cast<double>(h));
      animals_per_image[image].push_back({x, y});
    }
    placed += size;
  }
  std::vector<int> fp_per_image(static_cast<std::size_t>(ds.n_images), 0);
  for (int k = 0; k < ds.n_fp; ++k) ++fp_per_image[layout.index(static_cast<std::uint64_t>(ds.n_images))];

  CandidateId next_id = ds.first_id;
  std::size_t animal_counter = 0;
  const bool shifted = ds.domain == Domain::target;
  for (std::size_t i = 0; i < animals_per_image.size(); ++i) {
    Rng rng(derive_seed(seed, (ds.domain == Domain::source ? 1'000'000ULL : 2'000'000ULL) + i));
    const std::string& image_id = data.images[i].image_id;
    auto make_candidate = [&](int gx, int gy, bool positive) {
      Candidate c;
      c.candidate_id = next_id++;
      c.image_id = image_id;
      c.grid_x = gx;
      c.grid_y = gy;
      c.px = static_cast<double>(gx) * stride;
      c.py = static_cast<double>(gy) * stride;
      c.gt_label = positive ? GtLabel::true_positive : GtLabel::false_positive;
      c.features = features.sample(positive, shifted, rng);
      if (shifted) c.features = features.shift(std::move(c.features), rng);
      data.pool.candidates.push_back(std::move(c));
    };

    for (const auto& [x, y] : animals_per_image[i]) {
      data.ground_truth.push_back({padded(ds.prefix + "a", animal_counter++, 5), image_id, x, y});
      const int gx = std::clamp(static_cast<int>(std::lround(x / stride)), 0, w / stride);
      const int gy = std::clamp(static_cast<int>(std::lround(y / stride)), 0, h / stride);
      make_candidate(gx, gy, true);
    }
    for (int k = 0; k < fp_per_image[i]; ++k) {
      bool ok = false;
      for (int attempt = 0; attempt < 1000 && !ok; ++attempt) {
        const int gx = static_cast<int>(rng.index(static_cast<std::uint64_t>(cells_x)));
        const int gy = static_cast<int>(rng.index(static_cast<std::uint64_t>(cells_y)));
        const double px = static_cast<double>(gx) * stride, py = static_cast<double>(gy) * stride;
        ok = std::none_of(animals_per_image[i].begin(), animals_per_image[i].end(), [&](const auto& a) {
          return std::hypot(a[0] - px, a[1] - py) <= radius;
        });
        if (ok) make_candidate(gx, gy, false);
      }
      if (!ok) throw GenerationError("no room for false positives in image " + image_id);
    }
  }
  assign_animal_counts(data.images, data.ground_truth);
  return data;
}

}  // namespace

void validate(const ShiftConfig& config) {
  if (config.dim < 2) throw std::invalid_argument("feature dimension must be at least 2");
  if (config.rotation_strength < 0 || config.translation_norm < 0 || config.noise_sigma < 0 ||
      config.herd_cluster_radius < 0 || config.herd_mean_size < 0) {
    throw std::invalid_argument("shift magnitudes must be nonnegative");
  }
  if (config.target_fp_multiplier < 1.0) throw std::invalid_argument("target_fp_multiplier must be >= 1");
}

SyntheticDataset generate(const ShiftConfig& config, const GenerationScale& scale, std::uint64_t seed) {
  validate(config);
  if (scale.n_images_src <= 0 || scale.n_images_tgt <= 0 || scale.n_animals_src < 0 || scale.n_animals_tgt < 0 ||
      scale.n_fp_src < 0 || scale.image_width <= 0 || scale.image_height <= 0 || scale.grid_stride <= 0) {
    throw std::invalid_argument("generation counts must be positive");
  }
  Rng model_rng(derive_seed(seed, 1));
  const FeatureModel features = build_feature_model(config, model_rng);

  const auto n_fp_tgt = static_cast<int>(std::lround(scale.n_fp_src * config.target_fp_multiplier));
  SyntheticDataset out;
  out.shift = config;
  out.scale = scale;
  out.seed = seed;
  out.data.source = generate_domain({Domain::source, scale.n_images_src, scale.n_animals_src, scale.n_fp_src, "s", 0},
                                    config, scale, features, seed);
  out.data.target =
      generate_domain({Domain::target, scale.n_images_tgt, scale.n_animals_tgt, n_fp_tgt, "t", 1'000'000},
                      config, scale, features, seed);

  bool has_tp = false, has_fp = false;
  for (const Candidate& c : out.data.source.pool.candidates) (c.is_true_positive() ? has_tp : has_fp) = true;
  if (has_tp && has_fp) {
    const SurrogateDetector detector = initial_detector(out.data, seed);
    out.data.source.pool = detector.score(out.data.source.pool);
    out.data.target.pool = detector.score(out.data.target.pool);
  }
  return out;
}

SurrogateDetector initial_detector(const Dataset& dataset, std::uint64_t seed, DetectorReport* report,
                                   const LogisticFitOptions& options) {
  const CandidateSet& pool = dataset.source.pool;
  std::vector<std::size_t> positives, negatives;
  for (std::size_t k = 0; k < pool.size(); ++k) {
    (pool.candidates[k].is_true_positive() ? positives : negatives).push_back(k);
  }
  if (positives.empty() || negatives.empty()) {
    throw std::invalid_argument("initial_detector: source pool needs both true and false positives");
  }

  // Stratified holdout: 20% of each class, never emptying a class.
  Rng rng(derive_seed(seed, 21));
  std::vector<LabeledExample> train;
  std::vector<std::size_t> holdout;
  for (auto* group : {&positives, &negatives}) {
    for (std::size_t k = group->size(); k > 1; --k) std::swap((*group)[k - 1], (*group)[rng.index(k)]);
    const std::size_t n_hold = group->size() >= 2 ? group->size() / 5 : 0;
    for (std::size_t k = 0; k < group->size(); ++k) {
      const Candidate& c = pool.candidates[(*group)[k]];
      if (k < n_hold) {
        holdout.push_back((*group)[k]);
      } else {
        train.push_back({c.features, c.is_true_positive()});
      }
    }
  }
  SurrogateDetector detector = fit_logistic(train, pool.dim, options);

  if (report) {
    std::size_t tp = 0, fn = 0, fp = 0;
    for (std::size_t k : holdout) {
      const Candidate& c = pool.candidates[k];
      const bool fired = detector.confidence(c.features)[kAnimal] >= kCandidateThreshold;
      if (c.is_true_positive()) {
        (fired ? tp : fn) += 1;
      } else if (fired) {
        ++fp;
      }
    }
    report->holdout_size = holdout.size();
    report->holdout_recall = tp + fn == 0 ? 1.0 : static_cast<double>(tp) / static_cast<double>(tp + fn);
    report->holdout_precision = tp + fp == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(tp + fp);
  }
  return detector;
}

}  // namespace tsal
