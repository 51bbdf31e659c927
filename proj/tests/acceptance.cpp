// Acceptance checks: one PASS/FAIL line per criterion. argv[1] is the tsal
// executable used for the determinism and resume checks.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>
#include <string>
#include <sys/wait.h>
#include <vector>

#include "test_util.hpp"
#include "tsal/alloop.hpp"
#include "tsal/candidates.hpp"
#include "tsal/cropping.hpp"
#include "tsal/ot.hpp"
#include "tsal/ranking.hpp"
#include "tsal/rng.hpp"
#include "tsal/synth.hpp"

using namespace tsal;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

int g_failures = 0;

void report(const std::string& name, bool ok, const std::string& detail) {
  std::printf("%s %s: %s\n", ok ? "PASS" : "FAIL", name.c_str(), detail.c_str());
  std::fflush(stdout);
  if (!ok) ++g_failures;
}

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, double a, double b = 0, double c = 0, double d = 0) {
  char buf[256];
  std::snprintf(buf, sizeof(buf), f, a, b, c, d);
  return buf;
}

FeatureRows random_rows(Rng& rng, std::size_t n, std::size_t d) {
  FeatureRows rows(n, std::vector<double>(d));
  for (auto& r : rows)
    for (double& x : r) x = rng.normal();
  return rows;
}

double permutation_minimum(const CostMatrix& c) {
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

// ------------------------------------------------------------------ OT

void check_ot_exactness() {
  Rng rng(101);
  std::vector<CostMatrix> instances;
  for (int k = 0; k < 50; ++k) {
    const std::size_t n = 1 + rng.index(6);
    instances.push_back(cost_matrix(random_rows(rng, n, 4), random_rows(rng, n, 4)));
  }
  double worst = 0;
  const auto t0 = Clock::now();
  std::vector<double> costs;
  for (const auto& c : instances) {
    const auto mu = DiscreteMarginal::uniform(c.rows());
    costs.push_back(solve_exact(mu, mu, c).cost);
  }
  const double elapsed = seconds_since(t0);
  for (std::size_t k = 0; k < instances.size(); ++k) {
    worst = std::max(worst, std::abs(costs[k] - permutation_minimum(instances[k])));
  }
  report("ot_exactness", worst <= 1e-9 && elapsed < 1.0,
         fmt("50 instances, max |exact - brute force| = %.2e, solve time %.3f s", worst, elapsed));
}

void check_sinkhorn_fidelity() {
  Rng rng(202);
  double worst_rel = 0, worst_marginal = 0;
  const auto t0 = Clock::now();
  for (int k = 0; k < 20; ++k) {
    const CostMatrix c = cost_matrix(random_rows(rng, 6, 4), random_rows(rng, 6, 4));
    const auto mu = DiscreteMarginal::uniform(6);
    SinkhornOptions opt;
    opt.epsilon = 1e-3 * c.median();
    const TransportPlan plan = solve_sinkhorn(mu, mu, c, opt);
    const double exact = permutation_minimum(c);
    worst_rel = std::max(worst_rel, std::abs(plan.cost - exact) / exact);
    std::vector<double> row(6, 0.0), col(6, 0.0);
    for (const auto& l : plan.links) {
      row[l.source] += l.mass;
      col[l.target] += l.mass;
    }
    for (std::size_t i = 0; i < 6; ++i) {
      worst_marginal = std::max({worst_marginal, std::abs(row[i] - 1.0 / 6), std::abs(col[i] - 1.0 / 6)});
    }
  }
  const double elapsed = seconds_since(t0);
  report("sinkhorn_fidelity", worst_rel <= 0.02 && worst_marginal <= 1e-6 && elapsed < 5.0,
         fmt("20 instances, max relative cost gap %.2e, max marginal error %.2e, %.3f s", worst_rel, worst_marginal,
             elapsed));
}

void check_transfer_oracle() {
  Rng rng(303);
  double worst = 0;
  bool structure_ok = true;
  for (int k = 0; k < 100; ++k) {
    const std::size_t n = 1 + rng.index(30), m = 1 + rng.index(30);
    TransportPlan plan;
    plan.n_source = n;
    plan.n_target = m;
    const double density = rng.uniform(0.02, 0.3);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < m; ++j)
        if (rng.uniform() < density) plan.links.push_back({i, j, rng.uniform(1e-6, 1.0)});
    ScoreVector src;
    for (std::size_t i = 0; i < n; ++i) src.values.emplace_back(rng.normal() * 5);
    const ScoreVector got = transfer_scores(plan, src);
    std::vector<double> dense(n * m, 0.0);
    for (const auto& l : plan.links) dense[l.source * m + l.target] = l.mass;
    for (std::size_t j = 0; j < m; ++j) {
      double sum = 0;
      int count = 0;
      for (std::size_t i = 0; i < n; ++i) {
        if (dense[i * m + j] > 0) {
          sum += *src.values[i];
          ++count;
        }
      }
      if (count == 0) {
        structure_ok &= !got.values[j].has_value();
      } else if (!got.values[j]) {
        structure_ok = false;
      } else {
        worst = std::max(worst, std::abs(*got.values[j] - sum / count));
      }
    }
  }
  report("transfer_oracle", structure_ok && worst <= 1e-12,
         fmt("100 sparse plans, max deviation from double loop %.2e", worst) +
             (structure_ok ? "" : ", unlinked targets mismatched"));
}

// ------------------------------------------------------------------ cropping

double objective_ref(int x, int y, int w, int h, PixelPoint a, const std::vector<PixelPoint>& cands,
                     const std::vector<WindowRect>& prev, double lambda) {
  auto in = [&](double px, double py) { return px >= x && px <= x + w && py >= y && py <= y + h; };
  double coverage = 0.0;
  if (!cands.empty()) {
    int n = 0;
    for (const auto& p : cands) n += in(p.x, p.y);
    coverage = 1.0 - double(n) / double(cands.size());
  }
  double overlap = 0.0;
  for (const auto& q : prev) {
    const double ix = std::max(0, std::min(x + w, q.x + q.w) - std::max(x, q.x));
    const double iy = std::max(0, std::min(y + h, q.y + q.h) - std::max(y, q.y));
    overlap = std::max(overlap, ix * iy / (double(w) * h));
  }
  const double cx = x + w / 2.0 - a.x, cy = y + h / 2.0 - a.y;
  return coverage + overlap + lambda * (cx * cx + cy * cy) / (double(w) * w + double(h) * h);
}

void check_cropping_oracle() {
  Rng rng(404);
  const ImageBounds img{200, 200};
  const int w = 80, h = 80;
  int matches = 0;
  double search_time = 0;
  for (int k = 0; k < 25; ++k) {
    const PixelPoint a{rng.uniform(0, 200), rng.uniform(0, 200)};
    std::vector<PixelPoint> cands{a};
    const int n = 5 + static_cast<int>(rng.index(20));
    for (int i = 0; i < n; ++i) cands.push_back({rng.uniform(0, 200), rng.uniform(0, 200)});
    std::vector<WindowRect> prev;
    const int m = static_cast<int>(rng.index(4));
    for (int i = 0; i < m; ++i)
      prev.push_back({static_cast<int>(rng.index(121)), static_cast<int>(rng.index(121)), w, h});

    const auto t0 = Clock::now();
    const WindowRect got = propose_window(a, cands, prev, img, w, h, 1, kDefaultCenterWeight);
    search_time += seconds_since(t0);

    WindowRect want{-1, -1, w, h};
    double best = INFINITY;
    for (int y = 0; y + h <= img.height; ++y) {
      for (int x = 0; x + w <= img.width; ++x) {
        if (!(a.x >= x && a.x <= x + w && a.y >= y && a.y <= y + h)) continue;
        const double v = objective_ref(x, y, w, h, a, cands, prev, kDefaultCenterWeight);
        if (v < best) {
          best = v;
          want = {x, y, w, h};
        }
      }
    }
    matches += got == want;
  }
  report("cropping_oracle", matches == 25 && search_time < 10.0,
         fmt("%.0f/25 scenes match exhaustive argmin, search time %.3f s", matches, search_time));
}

// ------------------------------------------------------------------ NMS

void check_nms_oracle() {
  Rng rng(505);
  int matches = 0;
  for (int k = 0; k < 50; ++k) {
    CandidateSet set;
    set.dim = 2;
    const int n = 10 + static_cast<int>(rng.index(150));
    const int cells = 5 + static_cast<int>(rng.index(20));
    for (int i = 0; i < n; ++i) {
      const std::string image = "im" + std::to_string(rng.index(3));
      const double conf = static_cast<double>(rng.index(11)) / 10.0;
      set.candidates.push_back(testutil::candidate(static_cast<CandidateId>(rng.index(100000)) * 1000 + i, image,
                                                   static_cast<int>(rng.index(cells)),
                                                   static_cast<int>(rng.index(cells)), conf));
    }
    const int radius = static_cast<int>(rng.index(4));

    std::vector<std::size_t> order(set.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      const auto& ca = set.candidates[a];
      const auto& cb = set.candidates[b];
      if (ca.animal_confidence() != cb.animal_confidence()) return ca.animal_confidence() > cb.animal_confidence();
      return ca.candidate_id < cb.candidate_id;
    });
    std::vector<std::size_t> kept;
    for (std::size_t i : order) {
      const auto& c = set.candidates[i];
      bool suppressed = false;
      for (std::size_t j : kept) {
        const auto& q = set.candidates[j];
        suppressed |= q.image_id == c.image_id &&
                      std::abs(q.grid_x - c.grid_x) + std::abs(q.grid_y - c.grid_y) <= radius;
      }
      if (!suppressed) kept.push_back(i);
    }
    std::sort(kept.begin(), kept.end());
    std::vector<CandidateId> want, got;
    for (std::size_t i : kept) want.push_back(set.candidates[i].candidate_id);
    for (const auto& c : nms(set, radius).candidates) got.push_back(c.candidate_id);
    matches += got == want;
  }
  report("nms_oracle", matches == 50, fmt("%.0f/50 grids match brute-force greedy suppression", matches));
}

// ------------------------------------------------------------------ benchmark

// One-sided sign test: P(X >= wins) for X ~ Binomial(n, 1/2), ties dropped.
double sign_test(const std::vector<double>& a, const std::vector<double>& b) {
  int wins = 0, n = 0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    if (a[k] == b[k]) continue;
    ++n;
    wins += a[k] > b[k];
  }
  if (n == 0) return 1.0;
  double p = 0;
  for (int x = wins; x <= n; ++x) {
    p += std::exp(std::lgamma(n + 1.0) - std::lgamma(x + 1.0) - std::lgamma(n - x + 1.0) - n * std::log(2.0));
  }
  return std::min(1.0, p);
}

void check_benchmark(double& elapsed) {
  constexpr int kSeeds = 20, kIters = 10;
  struct Arm {
    const char* name;
    Criterion criterion;
    LoopMode mode;
    std::vector<std::vector<double>> recall;  // [seed][iteration]
  };
  std::vector<Arm> arms{{"ts_adaptive", Criterion::transfer_sampling, LoopMode::adaptive, {}},
                        {"ts_static", Criterion::transfer_sampling, LoopMode::static_model, {}},
                        {"max_confidence", Criterion::max_confidence, LoopMode::adaptive, {}},
                        {"breaking_ties", Criterion::breaking_ties, LoopMode::adaptive, {}},
                        {"random", Criterion::random, LoopMode::adaptive, {}}};
  const auto t0 = Clock::now();
  for (int seed = 0; seed < kSeeds; ++seed) {
    const SyntheticDataset ds = generate(ShiftConfig{}, GenerationScale{}, static_cast<std::uint64_t>(seed));
    LoopConfig config;
    config.iterations = kIters;
    config.queries_per_iteration = 10;
    config.seed = static_cast<std::uint64_t>(seed);
    const auto source = prepare_source(ds.data, config);
    for (Arm& arm : arms) {
      config.criterion = arm.criterion;
      config.mode = arm.mode;
      const RunState s = run_simulation(ds.data, config, source).state;
      std::vector<double> r(kIters, 0.0);
      for (std::size_t k = 0; k < s.metrics.size() && k < r.size(); ++k) r[k] = s.metrics[k].recall;
      arm.recall.push_back(r);
    }
  }
  elapsed = seconds_since(t0);

  auto mean_curve = [&](const Arm& arm) {
    std::vector<double> m(kIters, 0.0);
    for (const auto& r : arm.recall)
      for (int k = 0; k < kIters; ++k) m[k] += r[k] / kSeeds;
    return m;
  };
  auto finals = [&](const Arm& arm) {
    std::vector<double> f;
    for (const auto& r : arm.recall) f.push_back(r.back());
    return f;
  };
  for (const Arm& arm : arms) {
    std::printf("  %-15s", arm.name);
    for (double v : mean_curve(arm)) std::printf(" %.3f", v);
    std::printf("\n");
  }

  const auto ada = mean_curve(arms[0]), sta = mean_curve(arms[1]), mc = mean_curve(arms[2]);
  int worst_iter = 0;
  double worst_gap = INFINITY;
  for (int k = 0; k < kIters; ++k) {
    if (ada[k] - sta[k] < worst_gap) {
      worst_gap = ada[k] - sta[k];
      worst_iter = k + 1;
    }
  }
  report("benchmark_adaptive_vs_static", worst_gap >= 0.0,
         fmt("smallest mean recall gap TS-adaptive minus TS-static %.4f at iteration %.0f", worst_gap, worst_iter));

  for (int b : {4, 3}) {
    const double p = sign_test(finals(arms[0]), finals(arms[b]));
    const double fa = ada.back(), fb = mean_curve(arms[b]).back();
    report(std::string("benchmark_ts_beats_") + arms[b].name, fa > fb && p < 0.05,
           fmt("final mean recall %.3f vs %.3f, one-sided sign test p = %.2e", fa, fb, p));
  }

  double lead_ts = 0, lead_mc = 0;
  for (int k = 0; k < kIters / 2; ++k) {
    lead_ts += ada[k] / (kIters / 2);
    lead_mc += mc[k] / (kIters / 2);
  }
  report("benchmark_ts_leads_max_confidence", lead_ts > lead_mc,
         fmt("mean recall over iterations 1-5: TS %.3f vs max_confidence %.3f", lead_ts, lead_mc));
}

// ------------------------------------------------------------------ CLI

int run_cli(const std::string& cli, const std::string& args) {
  const std::string cmd = "'" + cli + "' " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

void check_cli(const std::string& cli) {
  testutil::TempDir dir("acceptance");
  const std::string data = (dir / "data").string();
  if (run_cli(cli, "generate --seed 0 --out '" + data + "'") != 0) {
    report("determinism", false, "dataset generation failed");
    report("resume_equivalence", false, "dataset generation failed");
    return;
  }
  const std::string common = "run --data '" + data + "' --seed 11 --iterations 4 --queries 5";
  bool ok = true;
  std::string detail;
  for (const char* criterion : {"transfer_sampling", "random"}) {
    const std::string a = (dir / (std::string(criterion) + "-a")).string();
    const std::string b = (dir / (std::string(criterion) + "-b")).string();
    const bool ran = run_cli(cli, common + " --criterion " + criterion + " --out '" + a + "'") == 0 &&
                     run_cli(cli, common + " --criterion " + criterion + " --out '" + b + "'") == 0;
    const std::string ma = slurp(fs::path(a) / "metrics.csv");
    const bool same = ran && !ma.empty() && ma == slurp(fs::path(b) / "metrics.csv");
    ok &= same;
    detail += (detail.empty() ? "" : ", ") + std::string(criterion) + (same ? " identical" : " differs");
  }
  report("determinism", ok, "metrics.csv of repeated runs: " + detail);

  const std::string full = (dir / "full").string();
  const std::string part = (dir / "part").string();
  const std::string resumed = (dir / "resumed").string();
  const bool ran = run_cli(cli, common + " --out '" + full + "'") == 0 &&
                   run_cli(cli, common + " --stop-after 7 --out '" + part + "'") == 0 &&
                   run_cli(cli, "run --resume '" + part + "/runstate.json' --out '" + resumed + "'") == 0;
  const bool metrics_equal = ran && slurp(fs::path(full) / "metrics.csv") == slurp(fs::path(resumed) / "metrics.csv");
  const bool state_equal =
      ran && slurp(fs::path(full) / "runstate.json") == slurp(fs::path(resumed) / "runstate.json");
  report("resume_equivalence", metrics_equal && state_equal,
         std::string("stopped after 7 of 20 queries; metrics.csv ") + (metrics_equal ? "equal" : "differs") +
             ", runstate.json " + (state_equal ? "equal" : "differs"));
}

}  // namespace

int main(int argc, char** argv) {
  if (argc < 2) {
    std::fprintf(stderr, "usage: acceptance <path-to-tsal>\n");
    return 2;
  }
  const auto t0 = Clock::now();
  check_ot_exactness();
  check_sinkhorn_fidelity();
  check_transfer_oracle();
  check_cropping_oracle();
  check_nms_oracle();
  double bench_time = 0;
  check_benchmark(bench_time);
  check_cli(argv[1]);
  const double total = seconds_since(t0);
  report("suite_runtime", total < 600.0, fmt("total %.1f s (benchmark %.1f s)", total, bench_time));
  return g_failures == 0 ? 0 : 1;
}
