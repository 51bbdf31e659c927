#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace tsal {

using FeatureRows = std::vector<std::vector<double>>;

/// Empirical measure over n atoms with mass 1/n each.
struct DiscreteMarginal {
  std::vector<double> weights;

  static DiscreteMarginal uniform(std::size_t n);
  std::size_t size() const { return weights.size(); }
};

enum class CostMetric { euclidean, squared_euclidean };

class CostMatrix {
 public:
  CostMatrix() = default;
  CostMatrix(std::size_t rows, std::size_t cols, std::vector<double> values, CostMetric metric);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  CostMetric metric() const { return metric_; }
  double operator()(std::size_t i, std::size_t j) const { return values_[i * cols_ + j]; }
  std::span<const double> values() const { return values_; }
  double median() const;

 private:
  std::size_t rows_ = 0, cols_ = 0;
  std::vector<double> values_;
  CostMetric metric_ = CostMetric::euclidean;
};

enum class SolverKind { exact, sinkhorn };

struct TransportLink {
  std::size_t source = 0;
  std::size_t target = 0;
  double mass = 0.0;
};

struct SinkhornStats {
  int iterations = 0;
  double marginal_violation = 0.0;  // of the dense plan at exit
  double dense_cost = 0.0;
  // Largest increase of <gamma, C> between consecutive sweeps after the first.
  double max_cost_increase = 0.0;
  bool log_domain = false;
  std::size_t dense_support = 0;
};

/// Sparse coupling. Links are sorted by ascending (source, target) and all
/// carry strictly positive mass.
struct TransportPlan {
  std::vector<TransportLink> links;
  std::size_t n_source = 0;
  std::size_t n_target = 0;
  SolverKind solver = SolverKind::exact;
  double epsilon = 0.0;
  double cost = 0.0;  // <gamma, C>_F of the returned links
  std::optional<SinkhornStats> sinkhorn;

  double mass(std::size_t i, std::size_t j) const;
};

// Pairwise metric between rows. Throws std::invalid_argument on mismatched dimension.
CostMatrix cost_matrix(const FeatureRows& source, const FeatureRows& target,
                       CostMetric metric = CostMetric::euclidean);

struct Standardized {
  FeatureRows source;
  FeatureRows target;
};

/// Per-dimension z-score of both sets using the source mean and standard
/// deviation (dimensions with zero source spread are only centered).
Standardized standardize(const FeatureRows& source, const FeatureRows& target);

/// Vertex solution of the transportation LP (network simplex). Both
/// marginals must be uniform; masses are solved exactly in units of
/// 1/(n_S * n_T).
TransportPlan solve_exact(const DiscreteMarginal& mu_source, const DiscreteMarginal& mu_target, const CostMatrix& cost);

enum class SinkhornMode { automatic, kernel, log_domain };

struct SinkhornOptions {
  double epsilon = 1e-2;
  int max_iter = 1000000;
  double tolerance = 1e-9;
  SinkhornMode mode = SinkhornMode::automatic;
  // Entries below kappa / (n_S * n_T) are dropped before link extraction.
  double sparsify_kappa = 0.5;
};

class SinkhornNotConverged : public std::runtime_error {
 public:
  explicit SinkhornNotConverged(double violation);
  double violation() const { return violation_; }

 private:
  double violation_;
};

class SinkhornUnderflow : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Entropic OT by alternating marginal scaling. `automatic` switches to the
/// log-domain iteration when epsilon < 1e-2 * median(C). The dense plan is
/// sparsified and its support rescaled to restore the marginals.
TransportPlan solve_sinkhorn(const DiscreteMarginal& mu_source, const DiscreteMarginal& mu_target,
                             const CostMatrix& cost, const SinkhornOptions& options);

struct PlanReport {
  double max_row_violation = 0.0;
  double max_col_violation = 0.0;
  std::size_t negative_entries = 0;
  std::size_t out_of_range_links = 0;
  double mass_error = 0.0;
  bool passes = false;
  std::vector<std::string> violations;
};

PlanReport validate_plan(const TransportPlan& plan, const DiscreteMarginal& mu_source,
                         const DiscreteMarginal& mu_target, double tolerance = 1e-6);

// Sparse triplet dump: header `i,j,gamma`.
void write_plan_csv(const TransportPlan& plan, const std::filesystem::path& path);

}  // namespace tsal
