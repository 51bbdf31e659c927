#include "tsal/ranking.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <stdexcept>
#include <string>
#include <unordered_map>

#include "csv.hpp"
#include "tsal/rng.hpp"

namespace tsal {

namespace {

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) s += a[k] * b[k];
  return s;
}

struct Objective {
  double value = 0.0;
  double hinge = 0.0;
};

}  // namespace

double LinearRanker::score(std::span<const double> features) const {
  if (features.size() != weights.size()) throw std::invalid_argument("ranker: feature dimension mismatch");
  return dot(weights, features) + bias;
}

LinearRanker train_margin_ranker(const CandidateSet& source, const MarginTrainingOptions& options) {
  const std::size_t n = source.size(), dim = source.dim;
  std::size_t n_pos = 0;
  for (const Candidate& c : source.candidates) n_pos += c.is_true_positive() ? 1 : 0;
  if (n_pos == 0 || n_pos == n) throw std::invalid_argument("train_margin_ranker: source needs both classes");
  if (!(options.c_reg > 0)) throw std::invalid_argument("train_margin_ranker: c_reg must be positive");

  std::vector<double> label(n), weight(n);
  for (std::size_t k = 0; k < n; ++k) {
    const bool pos = source.candidates[k].is_true_positive();
    label[k] = pos ? 1.0 : -1.0;
    weight[k] = options.balance_classes ? 0.5 / static_cast<double>(pos ? n_pos : n - n_pos)
                                        : 1.0 / static_cast<double>(n);
  }
  const double lambda = 1.0 / options.c_reg;

  auto evaluate = [&](const std::vector<double>& w, double b) {
    Objective obj;
    for (std::size_t k = 0; k < n; ++k) {
      const double m = label[k] * (dot(w, source.candidates[k].features) + b);
      obj.hinge += weight[k] * std::max(0.0, 1.0 - m);
    }
    obj.value = 0.5 * lambda * dot(w, w) + obj.hinge;
    return obj;
  };

  std::vector<double> w(dim, 0.0), grad(dim);
  double b = 0.0;
  std::vector<double> best_w = w, avg_w(dim, 0.0);
  double best_b = b, avg_b = 0.0;
  double best_value = evaluate(w, b).value;
  std::size_t averaged = 0;

  Rng rng(options.seed);
  std::vector<std::size_t> batch;
  const int steps = std::max(1, options.epochs);
  const double t0 = 1.0 / lambda;
  for (int t = 1; t <= steps; ++t) {
    batch.clear();
    if (options.batch_size == 0 || options.batch_size >= n) {
      batch.resize(n);
      std::iota(batch.begin(), batch.end(), std::size_t{0});
    } else {
      for (std::size_t k = 0; k < options.batch_size; ++k) batch.push_back(rng.index(n));
    }
    const double batch_scale = static_cast<double>(n) / static_cast<double>(batch.size());
    for (std::size_t f = 0; f < dim; ++f) grad[f] = lambda * w[f];
    double grad_b = 0.0;
    for (std::size_t k : batch) {
      const auto& z = source.candidates[k].features;
      if (label[k] * (dot(w, z) + b) < 1.0) {
        const double g = -label[k] * weight[k] * batch_scale;
        for (std::size_t f = 0; f < dim; ++f) grad[f] += g * z[f];
        grad_b += g;
      }
    }
    const double step = 1.0 / (lambda * (static_cast<double>(t) + t0));
    for (std::size_t f = 0; f < dim; ++f) w[f] -= step * grad[f];
    b -= step * grad_b;

    const double value = evaluate(w, b).value;
    if (value < best_value) {
      best_value = value;
      best_w = w;
      best_b = b;
    }
    if (2 * t > steps) {
      ++averaged;
      for (std::size_t f = 0; f < dim; ++f) avg_w[f] += (w[f] - avg_w[f]) / static_cast<double>(averaged);
      avg_b += (b - avg_b) / static_cast<double>(averaged);
    }
  }
  if (averaged > 0 && evaluate(avg_w, avg_b).value < best_value) {
    best_w = avg_w;
    best_b = avg_b;
  }
  for (double x : best_w) {
    if (!std::isfinite(x)) throw std::runtime_error("train_margin_ranker: non-finite weights");
  }

  LinearRanker ranker{best_w, best_b, {}};
  ranker.report.final_hinge_loss = evaluate(best_w, best_b).hinge;
  for (std::size_t k = 0; k < n; ++k) {
    const double m = label[k] * ranker.score(source.candidates[k].features);
    if (m < 1.0) ++ranker.report.margin_violations;
    if (m <= 0.0) ++ranker.report.misclassified;
  }
  return ranker;
}

ScoreVector margin_scores(const LinearRanker& ranker, const CandidateSet& set) {
  ScoreVector out{ScoreKind::svm_margin, {}};
  out.values.reserve(set.size());
  for (const Candidate& c : set.candidates) out.values.emplace_back(ranker.score(c.features));
  return out;
}

ScoreVector transfer_scores(const TransportPlan& plan, const ScoreVector& source_scores) {
  if (source_scores.size() != plan.n_source) {
    throw std::invalid_argument("transfer_scores: source score count does not match the plan");
  }
  std::vector<double> sum(plan.n_target, 0.0);
  std::vector<std::size_t> links(plan.n_target, 0);
  for (const TransportLink& l : plan.links) {
    if (!(l.mass > 0.0)) continue;
    if (l.source >= plan.n_source || l.target >= plan.n_target) {
      throw std::invalid_argument("transfer_scores: link outside the plan");
    }
    const auto& s = source_scores.values[l.source];
    if (!s) throw std::invalid_argument("transfer_scores: source score missing");
    sum[l.target] += *s;
    ++links[l.target];
  }
  ScoreVector out{ScoreKind::transferred, std::vector<std::optional<double>>(plan.n_target)};
  for (std::size_t j = 0; j < plan.n_target; ++j) {
    if (links[j] > 0) out.values[j] = sum[j] / static_cast<double>(links[j]);
  }
  return out;
}

std::string_view to_string(Criterion criterion) {
  switch (criterion) {
    case Criterion::transfer_sampling: return "transfer_sampling";
    case Criterion::max_confidence: return "max_confidence";
    case Criterion::breaking_ties: return "breaking_ties";
    case Criterion::random: return "random";
  }
  return "unknown";
}

Criterion parse_criterion(std::string_view text) {
  if (text == "transfer_sampling" || text == "ts") return Criterion::transfer_sampling;
  if (text == "max_confidence") return Criterion::max_confidence;
  if (text == "breaking_ties") return Criterion::breaking_ties;
  if (text == "random") return Criterion::random;
  throw std::invalid_argument("unknown criterion '" + std::string(text) + "'");
}

double breaking_ties_gap(const std::array<double, 3>& confidence) {
  std::array<double, 3> sorted = confidence;
  std::sort(sorted.begin(), sorted.end(), std::greater<>());
  return sorted[0] - sorted[1];
}

std::vector<CandidateId> rank(Criterion criterion, const CandidateSet& target, const RankingInputs& inputs) {
  const auto& cands = target.candidates;
  std::vector<std::size_t> order(cands.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  auto by_id = [&](std::size_t a, std::size_t b) { return cands[a].candidate_id < cands[b].candidate_id; };

  switch (criterion) {
    case Criterion::transfer_sampling: {
      if (!inputs.plan || !inputs.source_scores) {
        throw std::invalid_argument("transfer_sampling ranking needs a transport plan and source scores");
      }
      if (inputs.plan->n_target != cands.size()) {
        throw std::invalid_argument("transport plan does not match the target candidate set");
      }
      const ScoreVector s = transfer_scores(*inputs.plan, *inputs.source_scores);
      std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        const auto& sa = s.values[a];
        const auto& sb = s.values[b];
        if (sa.has_value() != sb.has_value()) return sa.has_value();
        if (sa && *sa != *sb) return *sa > *sb;
        if (!sa && cands[a].animal_confidence() != cands[b].animal_confidence()) {
          return cands[a].animal_confidence() > cands[b].animal_confidence();
        }
        return by_id(a, b);
      });
      break;
    }
    case Criterion::max_confidence:
      std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (cands[a].animal_confidence() != cands[b].animal_confidence()) {
          return cands[a].animal_confidence() > cands[b].animal_confidence();
        }
        return by_id(a, b);
      });
      break;
    case Criterion::breaking_ties:
      std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        const double ga = breaking_ties_gap(cands[a].confidence), gb = breaking_ties_gap(cands[b].confidence);
        if (ga != gb) return ga < gb;
        return by_id(a, b);
      });
      break;
    case Criterion::random: {
      if (!inputs.seed) throw std::invalid_argument("random ranking needs a seed");
      std::sort(order.begin(), order.end(), by_id);
      Rng rng(*inputs.seed);
      for (std::size_t k = order.size(); k > 1; --k) std::swap(order[k - 1], order[rng.index(k)]);
      break;
    }
  }
  std::vector<CandidateId> ids;
  ids.reserve(order.size());
  for (std::size_t k : order) ids.push_back(cands[k].candidate_id);
  return ids;
}

void write_ranking_csv(const std::vector<CandidateId>& order, const CandidateSet& target, Criterion criterion,
                       const ScoreVector* transferred, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  std::unordered_map<CandidateId, std::size_t> index;
  for (std::size_t k = 0; k < target.size(); ++k) index[target.candidates[k].candidate_id] = k;
  out << "rank,candidate_id,score\n";
  for (std::size_t r = 0; r < order.size(); ++r) {
    const std::size_t k = index.at(order[r]);
    const Candidate& c = target.candidates[k];
    std::string score;
    switch (criterion) {
      case Criterion::transfer_sampling:
        if (transferred && transferred->values[k]) score = csv::format(*transferred->values[k]);
        break;
      case Criterion::max_confidence: score = csv::format(c.animal_confidence()); break;
      case Criterion::breaking_ties: score = csv::format(breaking_ties_gap(c.confidence)); break;
      case Criterion::random: break;
    }
    out << r + 1 << ',' << order[r] << ',' << score << '\n';
  }
}

}  // namespace tsal
