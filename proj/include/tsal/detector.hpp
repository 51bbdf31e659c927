#pragma once

#include <array>
#include <span>
#include <stdexcept>
#include <vector>

#include "tsal/candidates.hpp"

namespace tsal {

/// Linear stand-in for the detector CNN: p = sigmoid(<w, z> + b) is split into
/// the three-class convention {background, animal, border} with a fixed border mass.
struct SurrogateDetector {
  std::vector<double> weights;
  double bias = 0.0;
  double border_mass = 0.02;

  double logit(std::span<const double> features) const;
  double probability(std::span<const double> features) const;
  std::array<double, 3> confidence(std::span<const double> features) const;

  // Returns a copy of `pool` with every confidence vector recomputed.
  CandidateSet score(const CandidateSet& pool) const;
};

struct LogisticFitOptions {
  double l2 = 1e-3;
  // Penalty (prox/2)*||theta - prior||^2 pulling weights and bias toward a prior model.
  double proximal = 0.0;
  int max_iter = 400;
  double tolerance = 1e-7;
  // Reweight so each class carries half the data term.
  bool balance_classes = true;
};

struct LabeledExample {
  std::span<const double> features;
  bool positive = false;
};

class FitDivergence : public std::runtime_error {
 public:
  FitDivergence(double final_loss);
  double final_loss() const { return final_loss_; }

 private:
  double final_loss_;
};

/// Weighted, L2- and proximally-regularized logistic regression solved with
/// Nesterov-accelerated gradient descent. `warm_start` seeds the iterate and
/// `prior` anchors the proximal term (both may be null; prior defaults to zero).
SurrogateDetector fit_logistic(std::span<const LabeledExample> examples, std::size_t dim,
                               const LogisticFitOptions& options, const SurrogateDetector* warm_start = nullptr,
                               const SurrogateDetector* prior = nullptr);

// Convenience: fit on a candidate set using gt labels.
SurrogateDetector fit_logistic(const CandidateSet& labeled, const LogisticFitOptions& options);

}  // namespace tsal
