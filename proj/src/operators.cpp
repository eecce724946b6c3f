#include "nicopt/operators.hpp"

#include <algorithm>
#include <cstdlib>
#include <string>

#include "nicopt/errors.hpp"

namespace nicopt {

std::string_view to_string(OperatorKind op) {
  switch (op) {
    case OperatorKind::insert: return "insert";
    case OperatorKind::swap: return "swap";
    case OperatorKind::adjacent_swap: return "adjacent_swap";
    case OperatorKind::reverse: return "reverse";
    case OperatorKind::two_opt: return "two_opt";
    case OperatorKind::gpp_swap: return "gpp_swap";
  }
  return "?";
}

OperatorKind parse_operator(std::string_view name) {
  if (name == "insert") return OperatorKind::insert;
  if (name == "swap") return OperatorKind::swap;
  if (name == "adjacent_swap" || name == "adjacent-swap") return OperatorKind::adjacent_swap;
  if (name == "reverse") return OperatorKind::reverse;
  if (name == "two_opt" || name == "2opt" || name == "2-opt") return OperatorKind::two_opt;
  if (name == "gpp_swap" || name == "gpp-swap") return OperatorKind::gpp_swap;
  throw ArgumentError("unknown operator '" + std::string(name) + "'");
}

bool operator_fits(Problem problem, OperatorKind op) {
  return (problem == Problem::gpp) == (op == OperatorKind::gpp_swap);
}

OperatorKind default_operator(Problem problem) {
  return problem == Problem::gpp ? OperatorKind::gpp_swap : OperatorKind::insert;
}

void validate_action(OperatorKind op, int n, Action a) {
  if (a.i < 0 || a.j < 0 || a.i >= n || a.j >= n) {
    throw ArgumentError("action (" + std::to_string(a.i) + ", " + std::to_string(a.j) + ") out of range for n = " +
                        std::to_string(n));
  }
  if (a.i == a.j) throw ArgumentError("action indices must differ");
  if (op == OperatorKind::adjacent_swap && std::abs(a.i - a.j) != 1) {
    throw ArgumentError("adjacent_swap requires |i - j| = 1");
  }
}

Permutation apply(OperatorKind op, const Permutation& sol, Action a) {
  if (op == OperatorKind::gpp_swap) throw ArgumentError("gpp_swap acts on bipartitions, not permutations");
  validate_action(op, sol.size(), a);
  std::vector<int> order = sol.order();
  const auto i = static_cast<std::ptrdiff_t>(a.i);
  const auto j = static_cast<std::ptrdiff_t>(a.j);
  switch (op) {
    case OperatorKind::insert:
      if (i < j) {
        std::rotate(order.begin() + i, order.begin() + i + 1, order.begin() + j + 1);
      } else {
        std::rotate(order.begin() + j, order.begin() + i, order.begin() + i + 1);
      }
      break;
    case OperatorKind::swap:
    case OperatorKind::adjacent_swap:
      std::swap(order[static_cast<std::size_t>(i)], order[static_cast<std::size_t>(j)]);
      break;
    case OperatorKind::reverse:
    case OperatorKind::two_opt:
      std::reverse(order.begin() + std::min(i, j), order.begin() + std::max(i, j) + 1);
      break;
    case OperatorKind::gpp_swap:
      break;
  }
  return Permutation(std::move(order));
}

Bipartition apply(OperatorKind op, const Bipartition& sol, Action a) {
  if (op != OperatorKind::gpp_swap) throw ArgumentError("only gpp_swap acts on bipartitions");
  validate_action(op, sol.size(), a);
  std::vector<std::uint8_t> side = sol.sides();
  std::swap(side[static_cast<std::size_t>(a.i)], side[static_cast<std::size_t>(a.j)]);
  return Bipartition(std::move(side));
}

Solution apply(OperatorKind op, const Solution& sol, Action a) {
  return std::visit([&](const auto& s) -> Solution { return apply(op, s, a); }, sol);
}

Action action_from_node_pair(const Solution& sol, int u, int v) {
  if (const auto* perm = std::get_if<Permutation>(&sol)) {
    const auto pos = perm->positions();
    return {pos[static_cast<std::size_t>(u)], pos[static_cast<std::size_t>(v)]};
  }
  return {u, v};
}

Action node_pair_from_action(const Solution& sol, Action a) {
  if (const auto* perm = std::get_if<Permutation>(&sol)) return {(*perm)[a.i], (*perm)[a.j]};
  return a;
}

std::vector<Action> distinct_actions(OperatorKind op, const Solution& sol) {
  const int n = size_of(sol);
  std::vector<Action> actions;
  switch (op) {
    case OperatorKind::insert:
      // insert(i, i-1) produces the same permutation as insert(i-1, i).
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j)
          if (j != i && j != i - 1) actions.push_back({i, j});
      break;
    case OperatorKind::swap:
    case OperatorKind::reverse:
      for (int i = 0; i < n; ++i)
        for (int j = i + 1; j < n; ++j) actions.push_back({i, j});
      break;
    case OperatorKind::adjacent_swap:
      for (int i = 0; i + 1 < n; ++i) actions.push_back({i, i + 1});
      break;
    case OperatorKind::two_opt:
      // Removing tour edges (a, a+1) and (b, b+1), non-adjacent, is the
      // reversal of positions a+1..b.
      for (int a = 0; a < n; ++a)
        for (int b = a + 2; b < n; ++b)
          if (!(a == 0 && b == n - 1)) actions.push_back({a + 1, b});
      break;
    case OperatorKind::gpp_swap: {
      const auto* part = std::get_if<Bipartition>(&sol);
      if (!part) throw ArgumentError("gpp_swap needs a bipartition");
      for (int i = 0; i < n; ++i)
        for (int j = i + 1; j < n; ++j)
          if ((*part)[i] != (*part)[j]) actions.push_back({i, j});
      break;
    }
  }
  return actions;
}

std::vector<Solution> enumerate_neighbors(OperatorKind op, const Solution& sol) {
  std::vector<Solution> out;
  for (const auto& a : distinct_actions(op, sol)) out.push_back(apply(op, sol, a));
  return out;
}

std::optional<Action> canonical_action(OperatorKind op, const Solution& sol, Action a) {
  const int n = size_of(sol);
  validate_action(op, n, a);
  const Action sorted{std::min(a.i, a.j), std::max(a.i, a.j)};
  switch (op) {
    case OperatorKind::insert:
      if (a.j == a.i - 1) return Action{a.j, a.i};
      return a;
    case OperatorKind::swap:
    case OperatorKind::adjacent_swap:
    case OperatorKind::reverse:
      return sorted;
    case OperatorKind::two_opt: {
      const int p = sorted.i;
      const int q = sorted.j;
      if (q - p + 1 >= n - 1) return std::nullopt;  // reverses the whole cycle
      if (p >= 1) return Action{p, q};
      return Action{q + 1, n - 1};  // complement segment
    }
    case OperatorKind::gpp_swap: {
      const auto& part = std::get<Bipartition>(sol);
      if (part[a.i] == part[a.j]) return std::nullopt;
      return sorted;
    }
  }
  return a;
}

namespace {

double prp_insert_delta(const PrpInstance& inst, const Permutation& sol, int i, int j) {
  const int x = sol[i];
  double delta = 0.0;
  if (i < j) {
    for (int k = i + 1; k <= j; ++k) delta += inst.b(sol[k], x) - inst.b(x, sol[k]);
  } else {
    for (int k = j; k < i; ++k) delta += inst.b(x, sol[k]) - inst.b(sol[k], x);
  }
  return delta;
}

double prp_swap_delta(const PrpInstance& inst, const Permutation& sol, int i, int j) {
  if (i > j) std::swap(i, j);
  const int x = sol[i];
  const int y = sol[j];
  double delta = inst.b(y, x) - inst.b(x, y);
  for (int k = i + 1; k < j; ++k) {
    const int z = sol[k];
    delta += inst.b(y, z) + inst.b(z, x) - inst.b(x, z) - inst.b(z, y);
  }
  return delta;
}

double prp_reverse_delta(const PrpInstance& inst, const Permutation& sol, int i, int j) {
  if (i > j) std::swap(i, j);
  double delta = 0.0;
  for (int a = i; a < j; ++a)
    for (int c = a + 1; c <= j; ++c) delta += inst.b(sol[c], sol[a]) - inst.b(sol[a], sol[c]);
  return delta;
}

double tsp_reverse_delta(const TspInstance& inst, const Permutation& sol, int i, int j) {
  const int n = sol.size();
  if (i > j) std::swap(i, j);
  if (j - i + 1 >= n) return 0.0;
  const int prev = sol[(i - 1 + n) % n];
  const int next = sol[(j + 1) % n];
  const int first = sol[i];
  const int last = sol[j];
  return inst.dist(prev, last) + inst.dist(first, next) - inst.dist(prev, first) - inst.dist(last, next);
}

double gpp_swap_delta(const GppInstance& inst, const Bipartition& sol, int u, int v) {
  if (sol[u] == sol[v]) return 0.0;
  const int n = sol.size();
  double delta = 0.0;
  for (int k = 0; k < n; ++k) {
    if (k == u || k == v) continue;
    delta += (sol[k] == sol[u] ? inst.b(u, k) : -inst.b(u, k));
    delta += (sol[k] == sol[v] ? inst.b(v, k) : -inst.b(v, k));
  }
  return delta;
}

}  // namespace

double move_delta(const Instance& inst, const Solution& sol, OperatorKind op, Action a) {
  validate_action(op, size_of(sol), a);
  if (size_of(inst) != size_of(sol)) throw ArgumentError("solution size does not match instance size");
  switch (problem_of(inst)) {
    case Problem::prp: {
      const auto& prp = std::get<PrpInstance>(inst);
      const auto& perm = std::get<Permutation>(sol);
      switch (op) {
        case OperatorKind::insert: return prp_insert_delta(prp, perm, a.i, a.j);
        case OperatorKind::swap:
        case OperatorKind::adjacent_swap: return prp_swap_delta(prp, perm, a.i, a.j);
        case OperatorKind::reverse:
        case OperatorKind::two_opt: return prp_reverse_delta(prp, perm, a.i, a.j);
        case OperatorKind::gpp_swap: break;
      }
      break;
    }
    case Problem::tsp: {
      const auto& tsp = std::get<TspInstance>(inst);
      const auto& perm = std::get<Permutation>(sol);
      if (op == OperatorKind::reverse || op == OperatorKind::two_opt) return tsp_reverse_delta(tsp, perm, a.i, a.j);
      if (op == OperatorKind::gpp_swap) break;
      return tsp_tour_length(tsp, apply(op, perm, a)) - tsp_tour_length(tsp, perm);
    }
    case Problem::gpp:
      if (op == OperatorKind::gpp_swap) {
        return gpp_swap_delta(std::get<GppInstance>(inst), std::get<Bipartition>(sol), a.i, a.j);
      }
      break;
  }
  throw ArgumentError("operator " + std::string(to_string(op)) + " does not apply to " +
                      std::string(to_string(problem_of(inst))));
}

std::vector<double> neighbor_deltas(const Instance& inst, const Solution& sol, OperatorKind op) {
  const auto actions = distinct_actions(op, sol);
  std::vector<double> deltas;
  deltas.reserve(actions.size());
  for (const auto& a : actions) deltas.push_back(move_delta(inst, sol, op, a));
  return deltas;
}

std::optional<NeighborMove> best_neighbor(const Instance& inst, const Solution& sol, OperatorKind op) {
  const double sign = orientation(problem_of(inst));
  std::optional<NeighborMove> best;
  for (const auto& a : distinct_actions(op, sol)) {
    const double d = move_delta(inst, sol, op, a);
    if (!best || sign * d > sign * best->delta) best = NeighborMove{a, d};
  }
  return best;
}

int rank_of_delta(double delta, std::span<const double> deltas, Problem problem) {
  const double sign = orientation(problem);
  int better = 0;
  for (double d : deltas) better += (sign * d > sign * delta);
  return better + 1;
}

int action_rank(const Instance& inst, const Solution& sol, OperatorKind op, Action a) {
  const auto canon = canonical_action(op, sol, a);
  const double delta = canon ? move_delta(inst, sol, op, *canon) : 0.0;
  return rank_of_delta(delta, neighbor_deltas(inst, sol, op), problem_of(inst));
}

}  // namespace nicopt
