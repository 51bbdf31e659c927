#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace tsal::detail {

/// Primal network simplex on the complete bipartite transportation network
/// with integral supplies. Uses an artificial root with big-M arcs, block
/// search pricing over arcs in row-major (i, j) order and the strongly
/// feasible leaving-arc rule, which rules out cycling under degeneracy.
class TransportSimplex {
 public:
  TransportSimplex(std::span<const std::int64_t> supply, std::span<const std::int64_t> demand,
                   std::span<const double> cost);

  // Throws std::runtime_error on an unbounded or infeasible network (not
  // possible for balanced inputs) or if the pivot cap is hit.
  void run();

  std::int64_t flow(std::size_t i, std::size_t j) const { return flow_[i * n_tgt_ + j]; }
  std::size_t pivots() const { return pivots_; }

 private:
  std::size_t arc_source(std::size_t arc) const;
  std::size_t arc_target(std::size_t arc) const;
  double arc_cost(std::size_t arc) const;
  double reduced_cost(std::size_t arc) const;
  bool find_entering_arc();
  void pivot(std::size_t entering);
  void unlink_child(std::size_t node);
  void link_child(std::size_t node, std::size_t parent);
  void refresh_subtree(std::size_t top, double shift);
  void recompute_potentials();

  std::size_t n_src_, n_tgt_, n_nodes_, n_real_arcs_;
  std::span<const double> cost_;
  double artificial_cost_ = 0.0;
  double price_tolerance_ = 0.0;

  std::vector<std::int64_t> supply_;        // per node, demand nodes negative
  std::vector<std::int64_t> flow_;          // real arcs then artificial arcs
  std::vector<std::size_t> art_source_, art_target_;
  std::vector<char> in_tree_;               // real arcs only
  std::vector<double> potential_;
  std::vector<std::size_t> parent_, pred_, depth_;
  std::vector<char> forward_;               // pred arc oriented node -> parent
  std::vector<std::size_t> first_child_, next_sibling_, prev_sibling_;
  std::vector<std::size_t> stack_;

  std::size_t next_arc_ = 0;
  std::size_t block_size_ = 1;
  std::size_t pivots_ = 0;
};

}  // namespace tsal::detail
