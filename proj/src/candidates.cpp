#include "tsal/candidates.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <unordered_map>
#include <unordered_set>

#include "csv.hpp"
#include "tsal/rng.hpp"

namespace tsal {

namespace {

constexpr double kSimplexTolerance = 1e-6;

std::ifstream open_for_read(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError(0, "cannot open " + path.string());
  return in;
}

std::ofstream open_for_write(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  return out;
}

void expect_header(std::string_view got, std::string_view want, const std::filesystem::path& path) {
  if (got != want) {
    throw ParseError(0, path.string() + ": expected header '" + std::string(want) + "'");
  }
}

GtLabel parse_label(std::string_view text, std::size_t row) {
  if (text == "true_positive") return GtLabel::true_positive;
  if (text == "false_positive") return GtLabel::false_positive;
  throw ParseError(row, "row " + std::to_string(row) + ": unknown gt_label '" + std::string(text) + "'");
}

template <typename T>
T field(std::string_view text, std::size_t row, std::string_view name) {
  auto value = csv::parse_number<T>(text);
  if (!value) {
    throw ParseError(row, "row " + std::to_string(row) + ": bad " + std::string(name) + " '" +
                              std::string(text) + "'");
  }
  return *value;
}

std::string checked_id(std::string_view text, std::size_t row, std::string_view name) {
  if (text.empty()) throw ParseError(row, "row " + std::to_string(row) + ": empty " + std::string(name));
  return std::string(text);
}

void require_plain(const std::string& id) {
  if (!csv::is_plain_field(id) || id.empty()) {
    throw std::invalid_argument("identifier '" + id + "' cannot be written to CSV");
  }
}

std::string simplex_problem(const std::array<double, 3>& conf) {
  for (double c : conf) {
    if (!(c >= 0.0 && c <= 1.0)) return "confidence entry outside [0,1]";
  }
  if (std::abs(conf[0] + conf[1] + conf[2] - 1.0) > kSimplexTolerance) {
    return "confidence vector does not sum to 1";
  }
  return {};
}

}  // namespace

std::string_view to_string(Domain domain) {
  return domain == Domain::source ? "source" : "target";
}

std::string_view to_string(GtLabel label) {
  return label == GtLabel::true_positive ? "true_positive" : "false_positive";
}

Domain parse_domain(std::string_view text) {
  if (text == "source") return Domain::source;
  if (text == "target") return Domain::target;
  throw std::invalid_argument("unknown domain tag '" + std::string(text) + "'");
}

ParseError::ParseError(std::size_t row, const std::string& what) : std::runtime_error(what), row_(row) {}

void validate(const CandidateSet& set) {
  for (std::size_t k = 0; k < set.candidates.size(); ++k) {
    const Candidate& c = set.candidates[k];
    if (c.features.size() != set.dim) {
      throw std::invalid_argument("candidate " + std::to_string(c.candidate_id) + ": feature dimension " +
                                  std::to_string(c.features.size()) + " != " + std::to_string(set.dim));
    }
    if (auto problem = simplex_problem(c.confidence); !problem.empty()) {
      throw std::invalid_argument("candidate " + std::to_string(c.candidate_id) + ": " + problem);
    }
  }
}

CandidateSet load_candidate_set(const std::filesystem::path& path, Domain domain, int grid_stride) {
  std::ifstream in = open_for_read(path);
  std::string line;
  if (!std::getline(in, line)) throw ParseError(0, path.string() + ": missing header");
  const auto header = csv::split(csv::trim_cr(line));
  static constexpr std::array<std::string_view, 8> kFixed{
      "candidate_id", "image_id", "grid_x", "grid_y", "conf_bg", "conf_animal", "conf_border", "gt_label"};
  if (header.size() < kFixed.size() || !std::equal(kFixed.begin(), kFixed.end(), header.begin())) {
    throw ParseError(0, path.string() + ": candidate header must start with candidate_id,image_id,...");
  }
  const std::size_t dim = header.size() - kFixed.size();
  for (std::size_t f = 0; f < dim; ++f) {
    if (header[kFixed.size() + f] != "f" + std::to_string(f)) {
      throw ParseError(0, path.string() + ": feature columns must be named f0..f{d-1}");
    }
  }

  CandidateSet set;
  set.domain = domain;
  set.dim = dim;
  set.grid_stride = grid_stride;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    ++row;
    const std::string_view text = csv::trim_cr(line);
    if (text.empty()) continue;
    const auto cols = csv::split(text);
    if (cols.size() != header.size()) {
      throw ParseError(row, "row " + std::to_string(row) + ": expected " + std::to_string(header.size()) +
                                " fields, got " + std::to_string(cols.size()));
    }
    Candidate c;
    c.candidate_id = field<std::int64_t>(cols[0], row, "candidate_id");
    c.image_id = checked_id(cols[1], row, "image_id");
    c.grid_x = field<int>(cols[2], row, "grid_x");
    c.grid_y = field<int>(cols[3], row, "grid_y");
    c.px = static_cast<double>(c.grid_x) * grid_stride;
    c.py = static_cast<double>(c.grid_y) * grid_stride;
    c.confidence = {field<double>(cols[4], row, "conf_bg"), field<double>(cols[5], row, "conf_animal"),
                    field<double>(cols[6], row, "conf_border")};
    if (auto problem = simplex_problem(c.confidence); !problem.empty()) {
      throw ParseError(row, "row " + std::to_string(row) + ": " + problem);
    }
    c.gt_label = parse_label(cols[7], row);
    c.features.reserve(dim);
    for (std::size_t f = 0; f < dim; ++f) {
      c.features.push_back(field<double>(cols[kFixed.size() + f], row, "feature"));
    }
    set.candidates.push_back(std::move(c));
  }
  return set;
}

void save_candidate_set(const CandidateSet& set, const std::filesystem::path& path) {
  validate(set);
  std::ofstream out = open_for_write(path);
  out << "candidate_id,image_id,grid_x,grid_y,conf_bg,conf_animal,conf_border,gt_label";
  for (std::size_t f = 0; f < set.dim; ++f) out << ",f" << f;
  out << '\n';
  for (const Candidate& c : set.candidates) {
    require_plain(c.image_id);
    out << c.candidate_id << ',' << c.image_id << ',' << c.grid_x << ',' << c.grid_y;
    for (double p : c.confidence) out << ',' << csv::format(p);
    out << ',' << to_string(c.gt_label);
    for (double v : c.features) out << ',' << csv::format(v);
    out << '\n';
  }
}

std::vector<GroundTruthPoint> load_ground_truth(const std::filesystem::path& path) {
  std::ifstream in = open_for_read(path);
  std::string line;
  if (!std::getline(in, line)) throw ParseError(0, path.string() + ": missing header");
  expect_header(csv::trim_cr(line), "animal_id,image_id,px,py", path);
  std::vector<GroundTruthPoint> points;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    ++row;
    const std::string_view text = csv::trim_cr(line);
    if (text.empty()) continue;
    const auto cols = csv::split(text);
    if (cols.size() != 4) throw ParseError(row, "row " + std::to_string(row) + ": expected 4 fields");
    points.push_back({checked_id(cols[0], row, "animal_id"), checked_id(cols[1], row, "image_id"),
                      field<double>(cols[2], row, "px"), field<double>(cols[3], row, "py")});
  }
  return points;
}

void save_ground_truth(const std::vector<GroundTruthPoint>& points, const std::filesystem::path& path) {
  std::ofstream out = open_for_write(path);
  out << "animal_id,image_id,px,py\n";
  for (const auto& p : points) {
    require_plain(p.animal_id);
    require_plain(p.image_id);
    out << p.animal_id << ',' << p.image_id << ',' << csv::format(p.px) << ',' << csv::format(p.py) << '\n';
  }
}

std::vector<ImageMeta> load_image_meta(const std::filesystem::path& path) {
  std::ifstream in = open_for_read(path);
  std::string line;
  if (!std::getline(in, line)) throw ParseError(0, path.string() + ": missing header");
  expect_header(csv::trim_cr(line), "image_id,width,height,domain_tag", path);
  std::vector<ImageMeta> images;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    ++row;
    const std::string_view text = csv::trim_cr(line);
    if (text.empty()) continue;
    const auto cols = csv::split(text);
    if (cols.size() != 4) throw ParseError(row, "row " + std::to_string(row) + ": expected 4 fields");
    ImageMeta meta;
    meta.image_id = checked_id(cols[0], row, "image_id");
    meta.width = field<int>(cols[1], row, "width");
    meta.height = field<int>(cols[2], row, "height");
    if (meta.width <= 0 || meta.height <= 0) {
      throw ParseError(row, "row " + std::to_string(row) + ": image dimensions must be positive");
    }
    try {
      meta.domain = parse_domain(cols[3]);
    } catch (const std::invalid_argument& e) {
      throw ParseError(row, "row " + std::to_string(row) + ": " + e.what());
    }
    images.push_back(std::move(meta));
  }
  return images;
}

void save_image_meta(const std::vector<ImageMeta>& images, const std::filesystem::path& path) {
  std::ofstream out = open_for_write(path);
  out << "image_id,width,height,domain_tag\n";
  for (const auto& m : images) {
    require_plain(m.image_id);
    out << m.image_id << ',' << m.width << ',' << m.height << ',' << to_string(m.domain) << '\n';
  }
}

void assign_animal_counts(std::vector<ImageMeta>& images, const std::vector<GroundTruthPoint>& gt) {
  std::unordered_map<std::string, int> counts;
  for (const auto& p : gt) ++counts[p.image_id];
  for (auto& m : images) {
    auto it = counts.find(m.image_id);
    m.animal_count = it == counts.end() ? 0 : it->second;
  }
}

DatasetSplit split_dataset(const std::vector<ImageMeta>& images, const std::vector<GroundTruthPoint>& gt,
                           const SplitRatios& ratios, std::uint64_t seed) {
  const double ratio_sum = ratios.train + ratios.validation + ratios.test;
  if (std::abs(ratio_sum - 1.0) > 1e-9 || ratios.train < 0 || ratios.validation < 0 || ratios.test < 0) {
    throw std::invalid_argument("split ratios must be nonnegative and sum to 1");
  }
  std::unordered_map<std::string, int> counts;
  for (const auto& p : gt) ++counts[p.image_id];

  std::vector<std::pair<int, std::string>> occupied;
  std::vector<std::string> empty;
  for (const auto& m : images) {
    auto it = counts.find(m.image_id);
    if (it != counts.end() && it->second > 0) {
      occupied.emplace_back(it->second, m.image_id);
    } else {
      empty.push_back(m.image_id);
    }
  }

  const std::array<double, 3> shares{ratios.train, ratios.validation, ratios.test};
  std::array<std::vector<std::string>, 3> bins;

  // Animal-bearing images: descending count, each placed where it increases the
  // total absolute deviation from the target animal counts the least.
  std::sort(occupied.begin(), occupied.end(), [](const auto& a, const auto& b) {
    return a.first != b.first ? a.first > b.first : a.second < b.second;
  });
  double total_animals = 0.0;
  for (const auto& [count, id] : occupied) total_animals += count;
  std::array<double, 3> filled{0.0, 0.0, 0.0};
  for (const auto& [count, id] : occupied) {
    std::size_t best = 0;
    double best_change = 0.0, best_deficit = 0.0;
    for (std::size_t k = 0; k < 3; ++k) {
      const double target = shares[k] * total_animals;
      const double change = std::abs(target - filled[k] - count) - std::abs(target - filled[k]);
      const double deficit = target - filled[k];
      if (k == 0 || change < best_change - 1e-12 ||
          (std::abs(change - best_change) <= 1e-12 && deficit > best_deficit + 1e-12)) {
        best = k;
        best_change = change;
        best_deficit = deficit;
      }
    }
    filled[best] += count;
    bins[best].push_back(id);
  }

  // Empty images: random order, cut by image count.
  std::sort(empty.begin(), empty.end());
  Rng rng(seed);
  for (std::size_t k = empty.size(); k > 1; --k) {
    std::swap(empty[k - 1], empty[rng.index(k)]);
  }
  const std::size_t n = empty.size();
  const auto n_train = static_cast<std::size_t>(std::llround(shares[0] * static_cast<double>(n)));
  const auto n_val =
      std::min(n - std::min(n, n_train), static_cast<std::size_t>(std::llround(shares[1] * static_cast<double>(n))));
  for (std::size_t k = 0; k < n; ++k) {
    const std::size_t bin = k < n_train ? 0 : (k < n_train + n_val ? 1 : 2);
    bins[bin].push_back(empty[k]);
  }

  for (auto& bin : bins) std::sort(bin.begin(), bin.end());
  return {std::move(bins[0]), std::move(bins[1]), std::move(bins[2])};
}

CandidateSet nms(const CandidateSet& set, int radius) {
  if (radius < 0) throw std::invalid_argument("nms radius must be nonnegative");
  std::vector<std::size_t> order(set.candidates.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    const Candidate& ca = set.candidates[a];
    const Candidate& cb = set.candidates[b];
    if (ca.animal_confidence() != cb.animal_confidence()) return ca.animal_confidence() > cb.animal_confidence();
    return ca.candidate_id < cb.candidate_id;
  });

  auto cell_key = [](int x, int y) {
    return (static_cast<std::uint64_t>(static_cast<std::uint32_t>(x)) << 32) | static_cast<std::uint32_t>(y);
  };
  std::unordered_map<std::string, std::unordered_set<std::uint64_t>> kept_cells;
  std::vector<char> keep(set.candidates.size(), 0);
  for (std::size_t idx : order) {
    const Candidate& c = set.candidates[idx];
    auto& cells = kept_cells[c.image_id];
    bool suppressed = false;
    for (int dx = -radius; dx <= radius && !suppressed; ++dx) {
      const int span = radius - std::abs(dx);
      for (int dy = -span; dy <= span; ++dy) {
        if (cells.count(cell_key(c.grid_x + dx, c.grid_y + dy))) {
          suppressed = true;
          break;
        }
      }
    }
    if (!suppressed) {
      keep[idx] = 1;
      cells.insert(cell_key(c.grid_x, c.grid_y));
    }
  }

  CandidateSet out{set.domain, {}, set.dim, set.grid_stride};
  for (std::size_t k = 0; k < set.candidates.size(); ++k) {
    if (keep[k]) out.candidates.push_back(set.candidates[k]);
  }
  return out;
}

CandidateSet threshold_candidates(const CandidateSet& pool, double tau) {
  if (!(tau >= 0.0 && tau <= 1.0)) throw std::invalid_argument("threshold must lie in [0,1]");
  CandidateSet out{pool.domain, {}, pool.dim, pool.grid_stride};
  for (const Candidate& c : pool.candidates) {
    if (c.animal_confidence() >= tau) out.candidates.push_back(c);
  }
  return out;
}

}  // namespace tsal
