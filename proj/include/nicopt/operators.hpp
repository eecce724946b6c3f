#pragma once

#include <compare>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "nicopt/instances.hpp"

namespace nicopt {

/// Pairwise modification operators. For permutation operators the action
/// indices are positions; for gpp_swap they are node ids.
enum class OperatorKind { insert, swap, adjacent_swap, reverse, two_opt, gpp_swap };

std::string_view to_string(OperatorKind op);
OperatorKind parse_operator(std::string_view name);

/// Whether `op` acts on the solution encoding used by `problem`.
bool operator_fits(Problem problem, OperatorKind op);
OperatorKind default_operator(Problem problem);

struct Action {
  int i = 0;
  int j = 0;
  friend auto operator<=>(const Action&, const Action&) = default;
};

/// Throws ArgumentError for i == j, out-of-range indices, or a non-adjacent
/// adjacent_swap.
void validate_action(OperatorKind op, int n, Action a);

Permutation apply(OperatorKind op, const Permutation& sol, Action a);
Bipartition apply(OperatorKind op, const Bipartition& sol, Action a);
Solution apply(OperatorKind op, const Solution& sol, Action a);

/// Maps a model action over nodes (u, v) to the operator's index space:
/// positions of u and v for permutations, the nodes themselves for bipartitions.
Action action_from_node_pair(const Solution& sol, int u, int v);
/// Inverse of action_from_node_pair.
Action node_pair_from_action(const Solution& sol, Action a);

/// One canonical action per distinct neighbor of `sol`. Sizes: insert
/// (n-1)^2, swap and reverse n(n-1)/2, adjacent_swap n-1, two_opt n(n-3)/2
/// (distinct cyclic tours), gpp_swap (n/2)^2 cross pairs.
std::vector<Action> distinct_actions(OperatorKind op, const Solution& sol);
std::vector<Solution> enumerate_neighbors(OperatorKind op, const Solution& sol);

/// The canonical representative of `a` (the action in distinct_actions that
/// yields the same neighbor), or nullopt when `a` leaves the solution unchanged.
std::optional<Action> canonical_action(OperatorKind op, const Solution& sol, Action a);

/// Raw objective change f(apply(sol, a)) - f(sol). Uses O(n) shortcuts where
/// available.
double move_delta(const Instance& inst, const Solution& sol, OperatorKind op, Action a);

struct NeighborMove {
  Action action;
  double delta = 0.0;
};

/// Full scan over distinct neighbors; best raw delta in the problem's sense,
/// ties broken by the lexicographically smallest action.
std::optional<NeighborMove> best_neighbor(const Instance& inst, const Solution& sol, OperatorKind op);

/// Deltas of every action in distinct_actions(op, sol), in that order.
std::vector<double> neighbor_deltas(const Instance& inst, const Solution& sol, OperatorKind op);

/// 1-based competition rank of a's delta among the distinct neighbors' deltas.
int action_rank(const Instance& inst, const Solution& sol, OperatorKind op, Action a);

/// Same as action_rank but against a precomputed neighbor_deltas() list.
int rank_of_delta(double delta, std::span<const double> deltas, Problem problem);

}  // namespace nicopt
