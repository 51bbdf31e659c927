#include "network_simplex.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace tsal::detail {

namespace {
constexpr std::size_t kNone = std::numeric_limits<std::size_t>::max();
constexpr std::int64_t kInfiniteFlow = std::numeric_limits<std::int64_t>::max();
}  // namespace

TransportSimplex::TransportSimplex(std::span<const std::int64_t> supply, std::span<const std::int64_t> demand,
                                   std::span<const double> cost)
    : n_src_(supply.size()),
      n_tgt_(demand.size()),
      n_nodes_(supply.size() + demand.size()),
      n_real_arcs_(supply.size() * demand.size()),
      cost_(cost) {
  if (cost.size() != n_real_arcs_) throw std::invalid_argument("transport simplex: cost size mismatch");
  const std::int64_t total_supply = std::accumulate(supply.begin(), supply.end(), std::int64_t{0});
  const std::int64_t total_demand = std::accumulate(demand.begin(), demand.end(), std::int64_t{0});
  if (total_supply != total_demand) throw std::invalid_argument("transport simplex: unbalanced marginals");
  supply_.assign(supply.begin(), supply.end());
  for (std::int64_t d : demand) supply_.push_back(-d);
}

std::size_t TransportSimplex::arc_source(std::size_t arc) const {
  return arc < n_real_arcs_ ? arc / n_tgt_ : art_source_[arc - n_real_arcs_];
}

std::size_t TransportSimplex::arc_target(std::size_t arc) const {
  return arc < n_real_arcs_ ? n_src_ + arc % n_tgt_ : art_target_[arc - n_real_arcs_];
}

double TransportSimplex::arc_cost(std::size_t arc) const {
  if (arc < n_real_arcs_) return cost_[arc];
  return art_target_[arc - n_real_arcs_] == n_nodes_ ? 0.0 : artificial_cost_;
}

double TransportSimplex::reduced_cost(std::size_t arc) const {
  return arc_cost(arc) + potential_[arc_source(arc)] - potential_[arc_target(arc)];
}

void TransportSimplex::unlink_child(std::size_t node) {
  const std::size_t p = parent_[node];
  if (prev_sibling_[node] != kNone) {
    next_sibling_[prev_sibling_[node]] = next_sibling_[node];
  } else {
    first_child_[p] = next_sibling_[node];
  }
  if (next_sibling_[node] != kNone) prev_sibling_[next_sibling_[node]] = prev_sibling_[node];
  next_sibling_[node] = prev_sibling_[node] = kNone;
}

void TransportSimplex::link_child(std::size_t node, std::size_t parent) {
  parent_[node] = parent;
  prev_sibling_[node] = kNone;
  next_sibling_[node] = first_child_[parent];
  if (first_child_[parent] != kNone) prev_sibling_[first_child_[parent]] = node;
  first_child_[parent] = node;
}

// Shifts potentials of the subtree rooted at `top` and recomputes depths.
void TransportSimplex::refresh_subtree(std::size_t top, double shift) {
  stack_.clear();
  stack_.push_back(top);
  while (!stack_.empty()) {
    const std::size_t u = stack_.back();
    stack_.pop_back();
    potential_[u] += shift;
    depth_[u] = depth_[parent_[u]] + 1;
    for (std::size_t c = first_child_[u]; c != kNone; c = next_sibling_[c]) stack_.push_back(c);
  }
}

void TransportSimplex::recompute_potentials() {
  const std::size_t root = n_nodes_;
  stack_.clear();
  for (std::size_t c = first_child_[root]; c != kNone; c = next_sibling_[c]) stack_.push_back(c);
  while (!stack_.empty()) {
    const std::size_t u = stack_.back();
    stack_.pop_back();
    const double c = arc_cost(pred_[u]);
    potential_[u] = forward_[u] ? potential_[parent_[u]] - c : potential_[parent_[u]] + c;
    for (std::size_t ch = first_child_[u]; ch != kNone; ch = next_sibling_[ch]) stack_.push_back(ch);
  }
}

bool TransportSimplex::find_entering_arc() {
  double best = 0.0;
  std::size_t best_arc = kNone;
  std::size_t arc = next_arc_;
  std::size_t count = block_size_;
  for (std::size_t scanned = 0; scanned < n_real_arcs_; ++scanned) {
    if (!in_tree_[arc]) {
      const double rc = reduced_cost(arc);
      if (rc < best) {
        best = rc;
        best_arc = arc;
      }
    }
    if (++arc == n_real_arcs_) arc = 0;
    if (--count == 0) {
      if (best_arc != kNone && best < -price_tolerance_) {
        next_arc_ = arc;
        pivot(best_arc);
        return true;
      }
      count = block_size_;
    }
  }
  if (best_arc != kNone && best < -price_tolerance_) {
    next_arc_ = arc;
    pivot(best_arc);
    return true;
  }
  return false;
}

void TransportSimplex::pivot(std::size_t entering) {
  const std::size_t s = arc_source(entering), t = arc_target(entering);

  // join node of the cycle
  std::size_t a = s, b = t;
  while (a != b) {
    if (depth_[a] >= depth_[b]) {
      a = parent_[a];
    } else {
      b = parent_[b];
    }
  }
  const std::size_t join = a;

  // Leaving arc: last blocking arc in cycle orientation starting at the join.
  std::int64_t delta = kInfiniteFlow;
  std::size_t u_out = kNone;
  int side = 0;
  for (std::size_t u = s; u != join; u = parent_[u]) {
    if (forward_[u] && flow_[pred_[u]] < delta) {
      delta = flow_[pred_[u]];
      u_out = u;
      side = 1;
    }
  }
  for (std::size_t u = t; u != join; u = parent_[u]) {
    if (!forward_[u] && flow_[pred_[u]] <= delta) {
      delta = flow_[pred_[u]];
      u_out = u;
      side = 2;
    }
  }
  if (side == 0) throw std::runtime_error("transport simplex: unbounded cycle");

  if (delta > 0) {
    flow_[entering] += delta;
    for (std::size_t u = s; u != join; u = parent_[u]) flow_[pred_[u]] += forward_[u] ? -delta : delta;
    for (std::size_t u = t; u != join; u = parent_[u]) flow_[pred_[u]] += forward_[u] ? delta : -delta;
  }

  const std::size_t u_in = side == 1 ? s : t;
  const std::size_t v_in = side == 1 ? t : s;
  const std::size_t leaving = pred_[u_out];
  if (leaving < n_real_arcs_) in_tree_[leaving] = 0;
  in_tree_[entering] = 1;

  // Re-hang the stem u_in .. u_out below v_in, reversing parent pointers.
  std::vector<std::size_t> stem;
  for (std::size_t u = u_in;; u = parent_[u]) {
    stem.push_back(u);
    if (u == u_out) break;
  }
  std::vector<std::size_t> old_pred(stem.size());
  std::vector<char> old_forward(stem.size());
  for (std::size_t k = 0; k < stem.size(); ++k) {
    old_pred[k] = pred_[stem[k]];
    old_forward[k] = forward_[stem[k]];
    unlink_child(stem[k]);
  }
  const double old_potential = potential_[u_in];
  link_child(stem[0], v_in);
  pred_[stem[0]] = entering;
  forward_[stem[0]] = (stem[0] == s);
  for (std::size_t k = 1; k < stem.size(); ++k) {
    link_child(stem[k], stem[k - 1]);
    pred_[stem[k]] = old_pred[k - 1];
    forward_[stem[k]] = !old_forward[k - 1];
  }

  const double c = arc_cost(entering);
  const double new_potential = forward_[u_in] ? potential_[v_in] - c : potential_[v_in] + c;
  refresh_subtree(u_in, new_potential - old_potential);
  ++pivots_;
}

void TransportSimplex::run() {
  const std::size_t root = n_nodes_;
  const std::size_t n_all = n_nodes_ + 1;
  flow_.assign(n_real_arcs_ + n_nodes_, 0);
  in_tree_.assign(n_real_arcs_, 0);
  art_source_.assign(n_nodes_, 0);
  art_target_.assign(n_nodes_, 0);
  potential_.assign(n_all, 0.0);
  parent_.assign(n_all, kNone);
  pred_.assign(n_all, kNone);
  depth_.assign(n_all, 0);
  forward_.assign(n_all, 0);
  first_child_.assign(n_all, kNone);
  next_sibling_.assign(n_all, kNone);
  prev_sibling_.assign(n_all, kNone);
  if (n_nodes_ == 0) return;

  double max_cost = 0.0;
  for (double c : cost_) {
    if (!std::isfinite(c) || c < 0) throw std::invalid_argument("transport simplex: costs must be finite and >= 0");
    max_cost = std::max(max_cost, c);
  }
  artificial_cost_ = (max_cost + 1.0) * static_cast<double>(n_nodes_);
  price_tolerance_ = 1e-12 * (max_cost + 1.0);

  // Initial strongly feasible tree: every node hangs off the root.
  for (std::size_t u = n_nodes_; u-- > 0;) {
    const std::size_t arc = n_real_arcs_ + u;
    link_child(u, root);
    pred_[u] = arc;
    depth_[u] = 1;
    if (supply_[u] >= 0) {
      art_source_[u] = u;
      art_target_[u] = root;
      forward_[u] = 1;
      flow_[arc] = supply_[u];
      potential_[u] = 0.0;
    } else {
      art_source_[u] = root;
      art_target_[u] = u;
      forward_[u] = 0;
      flow_[arc] = -supply_[u];
      potential_[u] = artificial_cost_;
    }
  }

  // Warm start: cheapest incoming arc of every demand node.
  for (std::size_t j = 0; j < n_tgt_; ++j) {
    std::size_t best = kNone;
    double best_cost = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < n_src_; ++i) {
      if (cost_[i * n_tgt_ + j] < best_cost) {
        best_cost = cost_[i * n_tgt_ + j];
        best = i * n_tgt_ + j;
      }
    }
    if (best != kNone && !in_tree_[best] && reduced_cost(best) < -price_tolerance_) pivot(best);
  }

  block_size_ = std::max<std::size_t>(10, static_cast<std::size_t>(std::sqrt(static_cast<double>(n_real_arcs_))));
  next_arc_ = 0;
  const std::size_t pivot_cap = 100 * (n_real_arcs_ + n_nodes_) + 1000;
  while (true) {
    while (find_entering_arc()) {
      if (pivots_ > pivot_cap) throw std::runtime_error("transport simplex: pivot limit reached");
    }
    // Confirm optimality against freshly computed potentials.
    recompute_potentials();
    next_arc_ = 0;
    if (!find_entering_arc()) break;
  }

  for (std::size_t u = 0; u < n_nodes_; ++u) {
    if (flow_[n_real_arcs_ + u] != 0) throw std::runtime_error("transport simplex: infeasible network");
  }
}

}  // namespace tsal::detail
