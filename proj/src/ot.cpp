#include "tsal/ot.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>

#include "csv.hpp"
#include "network_simplex.hpp"

namespace tsal {

namespace {

double log_sum_exp(std::span<const double> values) {
  double top = -std::numeric_limits<double>::infinity();
  for (double v : values) top = std::max(top, v);
  if (!std::isfinite(top)) return top;
  double acc = 0.0;
  for (double v : values) acc += std::exp(v - top);
  return top + std::log(acc);
}

void check_sizes(const DiscreteMarginal& mu_source, const DiscreteMarginal& mu_target, const CostMatrix& cost) {
  if (mu_source.size() != cost.rows() || mu_target.size() != cost.cols()) {
    throw std::invalid_argument("marginal sizes do not match the cost matrix");
  }
}

bool is_uniform(const DiscreteMarginal& mu) {
  if (mu.weights.empty()) return true;
  const double expected = 1.0 / static_cast<double>(mu.size());
  return std::all_of(mu.weights.begin(), mu.weights.end(),
                     [&](double w) { return std::abs(w - expected) <= 1e-12; });
}

double plan_cost(const std::vector<TransportLink>& links, const CostMatrix& cost) {
  double total = 0.0;
  for (const auto& l : links) total += l.mass * cost(l.source, l.target);
  return total;
}

// Rescales the plan restricted to `support` so its marginals match again.
void restore_marginals(std::vector<double>& plan, std::size_t n, std::size_t m, const DiscreteMarginal& mu,
                       const DiscreteMarginal& nu) {
  std::vector<double> sums;
  for (int sweep = 0; sweep < 100000; ++sweep) {
    sums.assign(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < m; ++j) sums[i] += plan[i * m + j];
    }
    for (std::size_t i = 0; i < n; ++i) {
      if (sums[i] <= 0) continue;
      const double scale = mu.weights[i] / sums[i];
      for (std::size_t j = 0; j < m; ++j) plan[i * m + j] *= scale;
    }
    sums.assign(m, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < m; ++j) sums[j] += plan[i * m + j];
    }
    for (std::size_t j = 0; j < m; ++j) {
      if (sums[j] <= 0) continue;
      const double scale = nu.weights[j] / sums[j];
      for (std::size_t i = 0; i < n; ++i) plan[i * m + j] *= scale;
    }
    double violation = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      double row = 0.0;
      for (std::size_t j = 0; j < m; ++j) row += plan[i * m + j];
      violation = std::max(violation, std::abs(row - mu.weights[i]));
    }
    if (violation < 1e-14) return;
  }
}

}  // namespace

DiscreteMarginal DiscreteMarginal::uniform(std::size_t n) {
  return {std::vector<double>(n, n == 0 ? 0.0 : 1.0 / static_cast<double>(n))};
}

CostMatrix::CostMatrix(std::size_t rows, std::size_t cols, std::vector<double> values, CostMetric metric)
    : rows_(rows), cols_(cols), values_(std::move(values)), metric_(metric) {
  if (values_.size() != rows * cols) throw std::invalid_argument("cost matrix: value count mismatch");
}

double CostMatrix::median() const {
  if (values_.empty()) return 0.0;
  std::vector<double> copy = values_;
  const auto mid = copy.begin() + static_cast<std::ptrdiff_t>(copy.size() / 2);
  std::nth_element(copy.begin(), mid, copy.end());
  if (copy.size() % 2 == 1) return *mid;
  const double upper = *mid;
  const double lower = *std::max_element(copy.begin(), mid);
  return 0.5 * (lower + upper);
}

double TransportPlan::mass(std::size_t i, std::size_t j) const {
  auto it = std::lower_bound(links.begin(), links.end(), std::pair{i, j}, [](const TransportLink& l, const auto& key) {
    return l.source != key.first ? l.source < key.first : l.target < key.second;
  });
  return (it != links.end() && it->source == i && it->target == j) ? it->mass : 0.0;
}

CostMatrix cost_matrix(const FeatureRows& source, const FeatureRows& target, CostMetric metric) {
  const std::size_t n = source.size(), m = target.size();
  std::size_t dim = n ? source.front().size() : (m ? target.front().size() : 0);
  for (const auto& row : source) {
    if (row.size() != dim) throw std::invalid_argument("cost_matrix: feature dimension mismatch");
  }
  for (const auto& row : target) {
    if (row.size() != dim) throw std::invalid_argument("cost_matrix: feature dimension mismatch");
  }
  std::vector<double> values(n * m);
  for (std::size_t i = 0; i < n; ++i) {
    const double* a = source[i].data();
    for (std::size_t j = 0; j < m; ++j) {
      const double* b = target[j].data();
      double sq = 0.0;
      for (std::size_t k = 0; k < dim; ++k) {
        const double d = a[k] - b[k];
        sq += d * d;
      }
      values[i * m + j] = metric == CostMetric::euclidean ? std::sqrt(sq) : sq;
    }
  }
  return CostMatrix(n, m, std::move(values), metric);
}

Standardized standardize(const FeatureRows& source, const FeatureRows& target) {
  Standardized out{source, target};
  if (source.empty()) return out;
  const std::size_t dim = source.front().size();
  const double n = static_cast<double>(source.size());
  for (std::size_t k = 0; k < dim; ++k) {
    double mean = 0.0;
    for (const auto& row : source) mean += row[k];
    mean /= n;
    double var = 0.0;
    for (const auto& row : source) var += (row[k] - mean) * (row[k] - mean);
    const double sd = std::sqrt(var / n);
    const double scale = sd > 0.0 ? 1.0 / sd : 1.0;
    for (auto& row : out.source) row[k] = (row[k] - mean) * scale;
    for (auto& row : out.target) {
      if (row.size() != dim) throw std::invalid_argument("standardize: feature dimension mismatch");
      row[k] = (row[k] - mean) * scale;
    }
  }
  return out;
}

TransportPlan solve_exact(const DiscreteMarginal& mu_source, const DiscreteMarginal& mu_target, const CostMatrix& cost) {
  check_sizes(mu_source, mu_target, cost);
  if (!is_uniform(mu_source) || !is_uniform(mu_target)) {
    throw std::invalid_argument("solve_exact expects uniform marginals");
  }
  const std::size_t n = cost.rows(), m = cost.cols();
  TransportPlan plan;
  plan.n_source = n;
  plan.n_target = m;
  plan.solver = SolverKind::exact;
  if (n == 0 || m == 0) return plan;

  // Integral masses: each source ships n_T units, each target receives n_S.
  const std::vector<std::int64_t> supply(n, static_cast<std::int64_t>(m));
  const std::vector<std::int64_t> demand(m, static_cast<std::int64_t>(n));
  detail::TransportSimplex simplex(supply, demand, cost.values());
  simplex.run();

  const double unit = 1.0 / (static_cast<double>(n) * static_cast<double>(m));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < m; ++j) {
      if (const std::int64_t f = simplex.flow(i, j); f > 0) {
        plan.links.push_back({i, j, static_cast<double>(f) * unit});
      }
    }
  }
  plan.cost = plan_cost(plan.links, cost);
  return plan;
}

SinkhornNotConverged::SinkhornNotConverged(double violation)
    : std::runtime_error("Sinkhorn did not converge (marginal violation " + std::to_string(violation) + ")"),
      violation_(violation) {}

TransportPlan solve_sinkhorn(const DiscreteMarginal& mu_source, const DiscreteMarginal& mu_target,
                             const CostMatrix& cost, const SinkhornOptions& options) {
  check_sizes(mu_source, mu_target, cost);
  if (!(options.epsilon > 0)) throw std::invalid_argument("Sinkhorn epsilon must be positive");
  if (!(options.tolerance > 0)) throw std::invalid_argument("Sinkhorn tolerance must be positive");
  const std::size_t n = cost.rows(), m = cost.cols();
  const double eps = options.epsilon;

  TransportPlan plan;
  plan.n_source = n;
  plan.n_target = m;
  plan.solver = SolverKind::sinkhorn;
  plan.epsilon = eps;
  SinkhornStats stats;
  if (n == 0 || m == 0) {
    plan.sinkhorn = stats;
    return plan;
  }

  const bool log_domain = options.mode == SinkhornMode::log_domain ||
                          (options.mode == SinkhornMode::automatic && eps < 1e-2 * cost.median());
  stats.log_domain = log_domain;

  std::vector<double> dense(n * m);
  std::vector<double> f(n, 0.0), g(m, 0.0);        // log-domain potentials
  std::vector<double> u(n, 1.0), v(m, 1.0), kernel;  // scaling form
  if (!log_domain) {
    kernel.resize(n * m);
    for (std::size_t k = 0; k < n * m; ++k) kernel[k] = std::exp(-cost.values()[k] / eps);
  }
  const auto underflow = [] {
    return SinkhornUnderflow("Sinkhorn scaling underflowed; use the log-domain mode for this epsilon");
  };

  // Log-domain runs start from a large epsilon and shrink it geometrically,
  // warm-starting the potentials; only the last stage uses the target tolerance.
  std::vector<double> stages{eps};
  if (log_domain) {
    const double top = *std::max_element(cost.values().begin(), cost.values().end());
    for (double e = top; e > 2.0 * eps; e *= 0.5) stages.insert(stages.end() - 1, e);
  }

  std::vector<double> scratch(std::max(n, m));
  double previous_cost = 0.0;
  bool converged = false;
  std::size_t stage = 0;
  int stage_start = 1;
  for (int it = 1; it <= options.max_iter; ++it) {
    const double e = stages[stage];
    const bool last = stage + 1 == stages.size();
    if (log_domain) {
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < m; ++j) scratch[j] = (g[j] - cost(i, j)) / e;
        f[i] = e * std::log(mu_source.weights[i]) - e * log_sum_exp({scratch.data(), m});
      }
      for (std::size_t j = 0; j < m; ++j) {
        for (std::size_t i = 0; i < n; ++i) scratch[i] = (f[i] - cost(i, j)) / e;
        g[j] = e * std::log(mu_target.weights[j]) - e * log_sum_exp({scratch.data(), n});
      }
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < m; ++j) dense[i * m + j] = std::exp((f[i] + g[j] - cost(i, j)) / e);
      }
    } else {
      for (std::size_t i = 0; i < n; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < m; ++j) s += kernel[i * m + j] * v[j];
        if (!(s > 0) || !std::isfinite(s)) throw underflow();
        u[i] = mu_source.weights[i] / s;
        if (!std::isfinite(u[i])) throw underflow();
      }
      for (std::size_t j = 0; j < m; ++j) {
        double s = 0.0;
        for (std::size_t i = 0; i < n; ++i) s += kernel[i * m + j] * u[i];
        if (!(s > 0) || !std::isfinite(s)) throw underflow();
        v[j] = mu_target.weights[j] / s;
        if (!std::isfinite(v[j])) throw underflow();
      }
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < m; ++j) dense[i * m + j] = u[i] * kernel[i * m + j] * v[j];
      }
    }

    double violation = 0.0, transport = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      double row = 0.0;
      for (std::size_t j = 0; j < m; ++j) {
        row += dense[i * m + j];
        transport += dense[i * m + j] * cost(i, j);
      }
      violation = std::max(violation, std::abs(row - mu_source.weights[i]));
    }
    if (!std::isfinite(violation)) throw underflow();
    if (last && it > stage_start) stats.max_cost_increase = std::max(stats.max_cost_increase, transport - previous_cost);
    previous_cost = transport;
    stats.iterations = it;
    stats.marginal_violation = violation;
    stats.dense_cost = transport;
    if (last && violation < options.tolerance) {
      converged = true;
      break;
    }
    if (!last && (violation < std::max(options.tolerance, 1e-6) || it - stage_start >= 2000)) {
      ++stage;
      stage_start = it + 1;
    }
  }
  if (!converged) throw SinkhornNotConverged(stats.marginal_violation);

  const double threshold = options.sparsify_kappa / (static_cast<double>(n) * static_cast<double>(m));
  for (double& x : dense) {
    if (x > 0.0) ++stats.dense_support;
    if (x < threshold) x = 0.0;
  }
  restore_marginals(dense, n, m, mu_source, mu_target);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < m; ++j) {
      if (dense[i * m + j] > 0.0) plan.links.push_back({i, j, dense[i * m + j]});
    }
  }
  plan.cost = plan_cost(plan.links, cost);
  plan.sinkhorn = stats;
  return plan;
}

PlanReport validate_plan(const TransportPlan& plan, const DiscreteMarginal& mu_source,
                         const DiscreteMarginal& mu_target, double tolerance) {
  PlanReport report;
  std::vector<double> rows(mu_source.size(), 0.0), cols(mu_target.size(), 0.0);
  double total = 0.0;
  for (const auto& l : plan.links) {
    if (l.source >= rows.size() || l.target >= cols.size()) {
      ++report.out_of_range_links;
      continue;
    }
    if (!(l.mass >= 0.0)) ++report.negative_entries;
    rows[l.source] += l.mass;
    cols[l.target] += l.mass;
    total += l.mass;
  }
  for (std::size_t i = 0; i < rows.size(); ++i) {
    report.max_row_violation = std::max(report.max_row_violation, std::abs(rows[i] - mu_source.weights[i]));
  }
  for (std::size_t j = 0; j < cols.size(); ++j) {
    report.max_col_violation = std::max(report.max_col_violation, std::abs(cols[j] - mu_target.weights[j]));
  }
  const double expected_mass = rows.empty() || cols.empty() ? 0.0 : 1.0;
  report.mass_error = std::abs(total - expected_mass);

  if (plan.n_source != mu_source.size() || plan.n_target != mu_target.size()) {
    report.violations.push_back("plan dimensions do not match the marginals");
  }
  if (report.out_of_range_links) report.violations.push_back("links outside the plan dimensions");
  if (report.negative_entries) report.violations.push_back("negative entries");
  if (report.max_row_violation > tolerance) report.violations.push_back("row marginal violation");
  if (report.max_col_violation > tolerance) report.violations.push_back("column marginal violation");
  if (report.mass_error > tolerance) report.violations.push_back("total mass error");
  report.passes = report.violations.empty();
  return report;
}

void write_plan_csv(const TransportPlan& plan, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "i,j,gamma\n";
  for (const auto& l : plan.links) out << l.source << ',' << l.target << ',' << csv::format(l.mass) << '\n';
}

}  // namespace tsal
