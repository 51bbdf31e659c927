#include "tsal/detector.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

namespace tsal {

namespace {

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// log(1 + exp(-m)) without overflow.
double logistic_loss(double margin) {
  return margin > 0 ? std::log1p(std::exp(-margin)) : -margin + std::log1p(std::exp(margin));
}

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) s += a[k] * b[k];
  return s;
}

}  // namespace

FitDivergence::FitDivergence(double final_loss)
    : std::runtime_error("logistic fit diverged (final loss " + std::to_string(final_loss) + ")"),
      final_loss_(final_loss) {}

double SurrogateDetector::logit(std::span<const double> features) const {
  if (features.size() != weights.size()) throw std::invalid_argument("detector: feature dimension mismatch");
  return dot(weights, features) + bias;
}

double SurrogateDetector::probability(std::span<const double> features) const { return sigmoid(logit(features)); }

std::array<double, 3> SurrogateDetector::confidence(std::span<const double> features) const {
  const double p = probability(features);
  const double free_mass = 1.0 - border_mass;
  return {free_mass * (1.0 - p), free_mass * p, border_mass};
}

CandidateSet SurrogateDetector::score(const CandidateSet& pool) const {
  CandidateSet out = pool;
  for (Candidate& c : out.candidates) c.confidence = confidence(c.features);
  return out;
}

SurrogateDetector fit_logistic(std::span<const LabeledExample> examples, std::size_t dim,
                               const LogisticFitOptions& options, const SurrogateDetector* warm_start,
                               const SurrogateDetector* prior) {
  if (examples.empty()) throw std::invalid_argument("fit_logistic: no examples");
  const std::size_t n = examples.size();
  const std::size_t n_params = dim + 1;  // last entry is the bias

  std::vector<double> sample_weight(n, 1.0 / static_cast<double>(n));
  if (options.balance_classes) {
    const auto n_pos = static_cast<std::size_t>(
        std::count_if(examples.begin(), examples.end(), [](const LabeledExample& e) { return e.positive; }));
    const std::size_t n_neg = n - n_pos;
    for (std::size_t k = 0; k < n; ++k) {
      const std::size_t same = examples[k].positive ? n_pos : n_neg;
      const double share = (n_pos == 0 || n_neg == 0) ? 1.0 : 0.5;
      sample_weight[k] = share / static_cast<double>(same);
    }
  }

  std::vector<double> anchor(n_params, 0.0);
  if (prior) {
    if (prior->weights.size() != dim) throw std::invalid_argument("fit_logistic: prior dimension mismatch");
    std::copy(prior->weights.begin(), prior->weights.end(), anchor.begin());
    anchor[dim] = prior->bias;
  }
  std::vector<double> theta(n_params, 0.0);
  if (warm_start) {
    if (warm_start->weights.size() != dim) throw std::invalid_argument("fit_logistic: warm start dimension mismatch");
    std::copy(warm_start->weights.begin(), warm_start->weights.end(), theta.begin());
    theta[dim] = warm_start->bias;
  }

  // Lipschitz bound of the gradient: logistic curvature <= 1/4.
  double max_sq_norm = 0.0;
  for (const auto& e : examples) {
    if (e.features.size() != dim) throw std::invalid_argument("fit_logistic: feature dimension mismatch");
    max_sq_norm = std::max(max_sq_norm, dot(e.features, e.features) + 1.0);
  }
  const double lipschitz = 0.25 * max_sq_norm + options.l2 + options.proximal;
  const double step = 1.0 / lipschitz;

  auto objective_and_gradient = [&](const std::vector<double>& params, std::vector<double>& grad) {
    std::fill(grad.begin(), grad.end(), 0.0);
    double loss = 0.0;
    const std::span<const double> w(params.data(), dim);
    for (std::size_t k = 0; k < n; ++k) {
      const double y = examples[k].positive ? 1.0 : -1.0;
      const double margin = y * (dot(w, examples[k].features) + params[dim]);
      loss += sample_weight[k] * logistic_loss(margin);
      const double g = -y * sample_weight[k] * sigmoid(-margin);
      for (std::size_t f = 0; f < dim; ++f) grad[f] += g * examples[k].features[f];
      grad[dim] += g;
    }
    for (std::size_t f = 0; f < dim; ++f) {
      loss += 0.5 * options.l2 * params[f] * params[f];
      grad[f] += options.l2 * params[f];
    }
    for (std::size_t f = 0; f < n_params; ++f) {
      const double diff = params[f] - anchor[f];
      loss += 0.5 * options.proximal * diff * diff;
      grad[f] += options.proximal * diff;
    }
    return loss;
  };

  std::vector<double> previous = theta, lookahead = theta, grad(n_params);
  double loss = objective_and_gradient(theta, grad);
  for (int it = 1; it <= options.max_iter; ++it) {
    loss = objective_and_gradient(lookahead, grad);
    if (!std::isfinite(loss)) throw FitDivergence(loss);
    double grad_norm = 0.0;
    for (double g : grad) grad_norm += g * g;
    if (std::sqrt(grad_norm) < options.tolerance) {
      theta = lookahead;
      break;
    }
    previous = theta;
    for (std::size_t f = 0; f < n_params; ++f) theta[f] = lookahead[f] - step * grad[f];
    const double momentum = static_cast<double>(it - 1) / static_cast<double>(it + 2);
    for (std::size_t f = 0; f < n_params; ++f) lookahead[f] = theta[f] + momentum * (theta[f] - previous[f]);
  }
  loss = objective_and_gradient(theta, grad);
  if (!std::isfinite(loss)) throw FitDivergence(loss);

  SurrogateDetector model;
  model.weights.assign(theta.begin(), theta.begin() + static_cast<std::ptrdiff_t>(dim));
  model.bias = theta[dim];
  if (warm_start) model.border_mass = warm_start->border_mass;
  return model;
}

SurrogateDetector fit_logistic(const CandidateSet& labeled, const LogisticFitOptions& options) {
  std::vector<LabeledExample> examples;
  examples.reserve(labeled.size());
  for (const Candidate& c : labeled.candidates) examples.push_back({c.features, c.is_true_positive()});
  return fit_logistic(examples, labeled.dim, options);
}

}  // namespace tsal
