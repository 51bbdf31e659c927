#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "test_util.hpp"
#include "tsal/ot.hpp"
#include "tsal/rng.hpp"

using namespace tsal;

namespace {

FeatureRows random_rows(Rng& rng, std::size_t n, std::size_t d, double scale = 1.0) {
  FeatureRows rows(n, std::vector<double>(d));
  for (auto& r : rows)
    for (double& x : r) x = scale * rng.normal();
  return rows;
}

// Minimum over permutations of (1/n) sum C[i, p(i)].
double brute_force(const CostMatrix& c) {
  std::vector<std::size_t> p(c.rows());
  std::iota(p.begin(), p.end(), std::size_t{0});
  double best = INFINITY;
  do {
    double s = 0;
    for (std::size_t i = 0; i < p.size(); ++i) s += c(i, p[i]);
    best = std::min(best, s);
  } while (std::next_permutation(p.begin(), p.end()));
  return best / static_cast<double>(c.rows());
}

// Uniform n x m transport equals an nm-point assignment after splitting every
// source atom m times and every target atom n times.
double brute_force_split(const CostMatrix& c) {
  const std::size_t n = c.rows(), m = c.cols(), k = n * m;
  std::vector<double> v(k * k);
  for (std::size_t a = 0; a < k; ++a)
    for (std::size_t b = 0; b < k; ++b) v[a * k + b] = c(a / m, b / n);
  return brute_force(CostMatrix(k, k, v, c.metric()));
}

}  // namespace

TEST_CASE("cost matrix and median") {
  const FeatureRows s{{0, 0}, {3, 4}};
  const FeatureRows t{{0, 0}, {0, 1}, {6, 8}};
  const CostMatrix c = cost_matrix(s, t);
  CHECK(c(0, 2) == doctest::Approx(10.0));
  CHECK(c(1, 0) == doctest::Approx(5.0));
  const CostMatrix sq = cost_matrix(s, t, CostMetric::squared_euclidean);
  CHECK(sq(1, 0) == doctest::Approx(25.0));
  // sorted: 0 1 sqrt(18) 5 5 10
  CHECK(c.median() == doctest::Approx((std::sqrt(18.0) + 5.0) / 2.0));
  CHECK_THROWS_AS(cost_matrix(s, FeatureRows{{1, 2, 3}}), std::invalid_argument);
}

TEST_CASE("standardize uses source statistics") {
  const FeatureRows s{{1, 5}, {3, 5}};
  const FeatureRows t{{2, 7}};
  const Standardized z = standardize(s, t);
  CHECK(z.source[0][0] == doctest::Approx(-1.0));
  CHECK(z.source[1][0] == doctest::Approx(1.0));
  CHECK(z.target[0][0] == doctest::Approx(0.0));
  // zero-spread dimension is only centered
  CHECK(z.target[0][1] == doctest::Approx(2.0));
}

TEST_CASE("exact plan equals brute-force assignment on square instances") {
  Rng rng(1);
  for (int trial = 0; trial < 30; ++trial) {
    const std::size_t n = 1 + rng.index(6);
    const CostMatrix c = cost_matrix(random_rows(rng, n, 3), random_rows(rng, n, 3));
    const auto mu = DiscreteMarginal::uniform(n);
    const TransportPlan plan = solve_exact(mu, mu, c);
    CHECK(std::abs(plan.cost - brute_force(c)) < 1e-9);
    CHECK(validate_plan(plan, mu, mu, 1e-12).passes);
    CHECK(plan.links.size() <= 2 * n - 1);
  }
}

TEST_CASE("exact plan on rectangular instances") {
  Rng rng(2);
  for (const auto& [n, m] : std::vector<std::pair<std::size_t, std::size_t>>{{2, 3}, {3, 2}, {1, 4}, {2, 2}}) {
    const CostMatrix c = cost_matrix(random_rows(rng, n, 2), random_rows(rng, m, 2));
    const auto a = DiscreteMarginal::uniform(n), b = DiscreteMarginal::uniform(m);
    const TransportPlan plan = solve_exact(a, b, c);
    CHECK(std::abs(plan.cost - brute_force_split(c)) < 1e-9);
    const PlanReport report = validate_plan(plan, a, b, 1e-12);
    CHECK(report.passes);
    CHECK(plan.links.size() <= n + m - 1);
    for (std::size_t k = 1; k < plan.links.size(); ++k) {
      const auto& p = plan.links[k - 1];
      const auto& q = plan.links[k];
      CHECK((p.source < q.source || (p.source == q.source && p.target < q.target)));
    }
  }
}

TEST_CASE("exact solver handles degenerate costs") {
  const auto mu = DiscreteMarginal::uniform(4);
  const CostMatrix zero(4, 4, std::vector<double>(16, 0.0), CostMetric::euclidean);
  const TransportPlan plan = solve_exact(mu, mu, zero);
  CHECK(plan.cost == 0.0);
  CHECK(validate_plan(plan, mu, mu).passes);
  DiscreteMarginal skewed{{0.7, 0.3}};
  CHECK_THROWS_AS(solve_exact(skewed, DiscreteMarginal::uniform(2), CostMatrix(2, 2, {0, 1, 1, 0}, CostMetric::euclidean)),
                  std::invalid_argument);
}

TEST_CASE("sinkhorn approaches the exact cost") {
  Rng rng(3);
  for (int trial = 0; trial < 8; ++trial) {
    const CostMatrix c = cost_matrix(random_rows(rng, 6, 4), random_rows(rng, 6, 4));
    const auto mu = DiscreteMarginal::uniform(6);
    SinkhornOptions opt;
    opt.epsilon = 1e-3 * c.median();
    const TransportPlan plan = solve_sinkhorn(mu, mu, c, opt);
    const double exact = brute_force(c);
    CHECK(std::abs(plan.cost - exact) <= 0.02 * exact);
    CHECK(validate_plan(plan, mu, mu, 1e-6).passes);
    REQUIRE(plan.sinkhorn.has_value());
    CHECK(plan.sinkhorn->log_domain);
    CHECK(plan.solver == SolverKind::sinkhorn);
  }
}

TEST_CASE("kernel and log-domain sinkhorn agree at moderate epsilon") {
  Rng rng(4);
  const CostMatrix c = cost_matrix(random_rows(rng, 5, 3), random_rows(rng, 7, 3));
  const auto a = DiscreteMarginal::uniform(5), b = DiscreteMarginal::uniform(7);
  SinkhornOptions k;
  k.epsilon = 0.5 * c.median();
  k.mode = SinkhornMode::kernel;
  SinkhornOptions l = k;
  l.mode = SinkhornMode::log_domain;
  const TransportPlan pk = solve_sinkhorn(a, b, c, k);
  const TransportPlan pl = solve_sinkhorn(a, b, c, l);
  CHECK(pk.sinkhorn->dense_cost == doctest::Approx(pl.sinkhorn->dense_cost).epsilon(1e-6));
  CHECK(pk.sinkhorn->marginal_violation < 1e-8);
  CHECK(validate_plan(pk, a, b).passes);
  // Large epsilon spreads mass over more pairs than the exact vertex solution.
  CHECK(pk.links.size() > 5 + 7 - 1);
}

TEST_CASE("kernel sinkhorn underflows at tiny epsilon") {
  Rng rng(5);
  const CostMatrix c = cost_matrix(random_rows(rng, 4, 2, 50.0), random_rows(rng, 4, 2, 50.0));
  SinkhornOptions opt;
  opt.epsilon = 1e-4;
  opt.mode = SinkhornMode::kernel;
  const auto mu = DiscreteMarginal::uniform(4);
  CHECK_THROWS_AS(solve_sinkhorn(mu, mu, c, opt), SinkhornUnderflow);
}

TEST_CASE("validate_plan reports violations") {
  TransportPlan plan;
  plan.n_source = 2;
  plan.n_target = 2;
  plan.links = {{0, 0, 0.5}, {1, 1, 0.4}, {1, 3, 0.1}};
  const auto mu = DiscreteMarginal::uniform(2);
  const PlanReport r = validate_plan(plan, mu, mu);
  CHECK_FALSE(r.passes);
  CHECK(r.out_of_range_links == 1);
  CHECK_FALSE(r.violations.empty());
}

TEST_CASE("plan csv dump") {
  testutil::TempDir dir("plan");
  TransportPlan plan;
  plan.n_source = 1;
  plan.n_target = 2;
  plan.links = {{0, 0, 0.5}, {0, 1, 0.5}};
  write_plan_csv(plan, dir / "plan.csv");
  std::ifstream in(dir / "plan.csv");
  std::string header, first;
  std::getline(in, header);
  std::getline(in, first);
  CHECK(header == "i,j,gamma");
  CHECK(first.rfind("0,0,", 0) == 0);
}
