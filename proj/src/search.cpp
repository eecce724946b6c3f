#include "nicopt/search.hpp"

#include <algorithm>
#include <cstdio>
#include <ostream>
#include <sstream>

#include "nicopt/errors.hpp"

namespace nicopt {

bool Budget::bounded() const {
  return max_seconds.has_value() ||
         (max_evaluations.has_value() && *max_evaluations != std::numeric_limits<long long>::max());
}

void Budget::validate() const {
  if (!max_evaluations && !max_seconds) throw ArgumentError("budget needs an evaluation or time limit");
  if (max_evaluations && *max_evaluations < 0) throw ArgumentError("evaluation budget must be non-negative");
  if (max_seconds && !(*max_seconds >= 0)) throw ArgumentError("time budget must be non-negative");
}

EvalMeter::EvalMeter(Budget budget, ClockMode clock)
    : budget_(budget), clock_(clock), start_(std::chrono::steady_clock::now()) {
  budget_.validate();
}

bool EvalMeter::exhausted() const {
  if (budget_.max_evaluations && used_ >= *budget_.max_evaluations) return true;
  if (budget_.max_seconds) {
    const double t = std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    if (t >= *budget_.max_seconds) return true;
  }
  return false;
}

long long EvalMeter::remaining() const {
  if (!budget_.max_evaluations) return std::numeric_limits<long long>::max();
  return std::max(0LL, *budget_.max_evaluations - used_);
}

double EvalMeter::remaining_fraction() const {
  if (budget_.max_evaluations && *budget_.max_evaluations != std::numeric_limits<long long>::max()) {
    if (*budget_.max_evaluations == 0) return 0.0;
    return static_cast<double>(remaining()) / static_cast<double>(*budget_.max_evaluations);
  }
  if (budget_.max_seconds) {
    if (*budget_.max_seconds <= 0) return 0.0;
    const double t = std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    return std::clamp(1.0 - t / *budget_.max_seconds, 0.0, 1.0);
  }
  return 1.0;
}

double EvalMeter::seconds() const {
  if (clock_ == ClockMode::none) return 0.0;
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
}

void SearchTrace::write_csv(std::ostream& out) const {
  out << kHeader << '\n';
  char buf[160];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%lld,%.6f,%.12g,%.12g\n", r.evals, r.seconds, r.best, r.current);
    out << buf;
  }
}

std::string SearchTrace::to_csv() const {
  std::ostringstream out;
  write_csv(out);
  return out.str();
}

std::string_view to_string(Strategy s) {
  switch (s) {
    case Strategy::best_first: return "best_first";
    case Strategy::steepest: return "steepest";
    case Strategy::stochastic: return "stochastic";
    case Strategy::neural: return "neural";
  }
  return "?";
}

Strategy parse_strategy(std::string_view name) {
  if (name == "best_first" || name == "bfhc") return Strategy::best_first;
  if (name == "steepest" || name == "sahc") return Strategy::steepest;
  if (name == "stochastic" || name == "shc") return Strategy::stochastic;
  if (name == "neural" || name == "nhc") return Strategy::neural;
  throw ArgumentError("unknown strategy '" + std::string(name) + "'");
}

namespace {

bool improves(double o, double delta) { return o * delta > 0.0; }

/// Shared state of one search run: budget meter, incumbent and trace.
struct Run {
  const Instance& inst;
  OperatorKind op;
  const SearchOptions& opts;
  EvalMeter meter;
  Rng rng;
  double o;
  SearchResult res;
  bool has_incumbent = false;

  Run(const Instance& i, OperatorKind k, const Budget& b, const SearchOptions& so)
      : inst(i), op(k), opts(so), meter(b, so.clock), rng(so.seed), o(orientation(problem_of(i))) {
    if (!operator_fits(problem_of(inst), op)) throw ArgumentError("operator does not fit the problem");
  }

  void offer(const Solution& s, double f) {
    if (!has_incumbent || o * f > o * res.objective) {
      res.solution = s;
      res.objective = f;
      has_incumbent = true;
    }
  }
  void row(double current) { res.trace.rows.push_back({meter.used(), meter.seconds(), res.objective, current}); }

  SearchResult finish() {
    res.evaluations = meter.used();
    if (res.trace.rows.empty() || res.trace.rows.back().evals != meter.used()) {
      row(res.trace.rows.empty() ? res.objective : res.trace.rows.back().current);
    }
    return std::move(res);
  }

  const ModelParams<float>& model() const {
    if (!opts.model) throw ArgumentError("neural search needs a model");
    return *opts.model;
  }

  /// Climbs from `cur` until a local optimum or budget exhaustion.
  void climb(Strategy s, Solution cur, double f) {
    const int n = size_of(cur);
    const long long stuck_after = static_cast<long long>(n) * (n - 1);
    while (!meter.exhausted()) {
      std::optional<NeighborMove> mv;
      switch (s) {
        case Strategy::best_first:
          for (const auto& a : distinct_actions(op, cur)) {
            if (meter.exhausted()) break;
            meter.charge();
            const double d = move_delta(inst, cur, op, a);
            if (improves(o, d)) {
              mv = NeighborMove{a, d};
              break;
            }
          }
          break;
        case Strategy::steepest:
          for (const auto& a : distinct_actions(op, cur)) {
            if (meter.exhausted()) break;
            meter.charge();
            const double d = move_delta(inst, cur, op, a);
            if (improves(o, d) && (!mv || o * d > o * mv->delta)) mv = NeighborMove{a, d};
          }
          break;
        case Strategy::stochastic: {
          const auto actions = distinct_actions(op, cur);
          if (actions.empty()) break;
          std::uniform_int_distribution<std::size_t> pick(0, actions.size() - 1);
          for (long long fails = 0; fails < stuck_after && !meter.exhausted(); ++fails) {
            const Action a = actions[pick(rng)];
            meter.charge();
            const double d = move_delta(inst, cur, op, a);
            if (improves(o, d)) {
              mv = NeighborMove{a, d};
              break;
            }
          }
          break;
        }
        case Strategy::neural: {
          const auto fr = forward<float>(model(), inst, cur, Mode::eval);
          const auto choice = first_improving_action(fr.dist[0], inst, cur, op, meter.remaining());
          meter.charge(choice.inspected);
          if (choice.action) mv = NeighborMove{*choice.action, choice.delta};
          break;
        }
      }
      if (!mv) break;
      cur = apply(op, cur, mv->action);
      f = objective(inst, cur);
      ++res.moves;
      offer(cur, f);
      row(f);
    }
  }

  /// Candidate moves in the order a variant inspects them.
  std::vector<Action> candidates(Strategy s, const Solution& cur) {
    if (s != Strategy::neural) return distinct_actions(op, cur);
    const auto fr = forward<float>(model(), inst, cur, Mode::eval);
    const int n = size_of(cur);
    std::vector<char> seen(static_cast<std::size_t>(n) * n, 0);
    std::vector<Action> out;
    for (const auto& pair : ranked_node_pairs(fr.dist[0])) {
      const auto canon = canonical_action(op, cur, action_from_node_pair(cur, pair.i, pair.j));
      if (!canon) continue;
      auto& mark = seen[static_cast<std::size_t>(canon->i) * n + canon->j];
      if (mark) continue;
      mark = 1;
      out.push_back(*canon);
    }
    return out;
  }
};

void require_variant(Strategy s) {
  if (s != Strategy::best_first && s != Strategy::neural) {
    throw ArgumentError("this metaheuristic supports the best_first and neural variants");
  }
}

}  // namespace

SearchResult hill_climb(Strategy strategy, const Instance& inst, const Solution& start, OperatorKind op,
                        const Budget& budget, const SearchOptions& opts) {
  Run run(inst, op, budget, opts);
  const double f = objective(inst, start);
  run.offer(start, f);
  run.row(f);
  run.climb(strategy, start, f);
  return run.finish();
}

SearchResult multi_start(Strategy inner, const Instance& inst, OperatorKind op, const Budget& budget,
                         const SearchOptions& opts) {
  Run run(inst, op, budget, opts);
  const Problem problem = problem_of(inst);
  const int n = size_of(inst);
  if (run.meter.exhausted()) {
    const Solution s = random_solution(problem, n, run.rng);
    run.offer(s, objective(inst, s));
    return run.finish();
  }
  while (!run.meter.exhausted()) {
    const Solution s = random_solution(problem, n, run.rng);
    run.meter.charge();
    const double f = objective(inst, s);
    run.offer(s, f);
    run.row(f);
    ++run.res.restarts;
    run.climb(inner, s, f);
  }
  return run.finish();
}

TabuMemory::TabuMemory(int capacity, bool ordered) : capacity_(capacity), ordered_(ordered) {
  if (capacity < 1) throw ArgumentError("tabu memory needs capacity >= 1");
}

std::pair<int, int> TabuMemory::key(int u, int v) const {
  if (!ordered_ && v < u) std::swap(u, v);
  return {u, v};
}

void TabuMemory::push(int u, int v) {
  if (static_cast<int>(items_.size()) == capacity_) items_.pop_front();
  items_.push_back(key(u, v));
}

bool TabuMemory::contains(int u, int v) const {
  return std::find(items_.begin(), items_.end(), key(u, v)) != items_.end();
}

bool operator_is_symmetric(OperatorKind op) { return op != OperatorKind::insert; }

SearchResult tabu_search(Strategy variant, const Instance& inst, const Solution& start, OperatorKind op,
                         const Budget& budget, const SearchOptions& opts) {
  require_variant(variant);
  if (!budget.bounded()) throw ArgumentError("tabu search needs a finite budget");
  Run run(inst, op, budget, opts);
  TabuMemory memory(opts.tabu_size, !operator_is_symmetric(op));
  Solution cur = start;
  double f = objective(inst, cur);
  run.offer(cur, f);
  run.row(f);
  const double o = run.o;

  while (!run.meter.exhausted()) {
    std::optional<NeighborMove> chosen, free_best, any_best;
    bool aborted = false;
    for (const auto& a : run.candidates(variant, cur)) {
      if (run.meter.exhausted()) {
        aborted = true;
        break;
      }
      run.meter.charge();
      const double d = move_delta(inst, cur, op, a);
      const auto pair = node_pair_from_action(cur, a);
      const bool tabu = memory.contains(pair.i, pair.j);
      const bool aspiration = o * (f + d) > o * run.res.objective;
      if (improves(o, d) && (!tabu || aspiration)) {
        chosen = NeighborMove{a, d};
        break;
      }
      if (!tabu && (!free_best || o * d > o * free_best->delta)) free_best = NeighborMove{a, d};
      if (!any_best || o * d > o * any_best->delta) any_best = NeighborMove{a, d};
    }
    if (!chosen) {
      if (aborted) break;
      chosen = free_best ? free_best : any_best;
    }
    if (!chosen) break;  // empty neighborhood
    const auto pair = node_pair_from_action(cur, chosen->action);
    cur = apply(op, cur, chosen->action);
    memory.push(pair.i, pair.j);
    f = objective(inst, cur);
    ++run.res.moves;
    run.offer(cur, f);
    run.row(f);
  }
  return run.finish();
}

int perturbation_strength(int n, double remaining_fraction) {
  return static_cast<int>(std::floor((n / 2.0) * std::clamp(remaining_fraction, 0.0, 1.0)));
}

Solution perturb(const Solution& sol, int count, Rng& rng) {
  if (const auto* perm = std::get_if<Permutation>(&sol)) {
    const int n = perm->size();
    if (n < 2) return sol;
    std::vector<int> order = perm->order();
    std::uniform_int_distribution<int> pick(0, n - 1);
    for (int k = 0; k < count; ++k) {
      const int i = pick(rng);
      int j = pick(rng);
      while (j == i) j = pick(rng);
      std::swap(order[i], order[j]);
    }
    return Permutation(std::move(order));
  }
  auto side = std::get<Bipartition>(sol).sides();
  const int n = static_cast<int>(side.size());
  std::uniform_int_distribution<int> pick(0, n / 2 - 1);
  for (int k = 0; k < count; ++k) {
    std::vector<int> zero, one;
    for (int i = 0; i < n; ++i) (side[i] ? one : zero).push_back(i);
    std::swap(side[zero[pick(rng)]], side[one[pick(rng)]]);
  }
  return Bipartition(std::move(side));
}

SearchResult iterated_local_search(Strategy variant, const Instance& inst, const Solution& start, OperatorKind op,
                                   const Budget& budget, const SearchOptions& opts) {
  require_variant(variant);
  if (!budget.bounded()) throw ArgumentError("iterated local search needs a finite budget");
  Run run(inst, op, budget, opts);
  const int n = size_of(inst);
  const double f0 = objective(inst, start);
  run.offer(start, f0);
  run.row(f0);
  run.climb(variant, start, f0);
  while (!run.meter.exhausted()) {
    const int k = perturbation_strength(n, run.meter.remaining_fraction());
    const Solution s = perturb(run.res.solution, k, run.rng);
    run.meter.charge();
    const double f = objective(inst, s);
    run.offer(s, f);
    run.row(f);
    ++run.res.restarts;
    run.climb(variant, s, f);
  }
  return run.finish();
}

Permutation becker_construct(const PrpInstance& inst) {
  const int n = inst.size();
  std::vector<char> placed(static_cast<std::size_t>(n), 0);
  std::vector<int> order;
  order.reserve(static_cast<std::size_t>(n));
  for (int step = 0; step < n; ++step) {
    int best = -1;
    double best_q = 0.0;
    for (int i = 0; i < n; ++i) {
      if (placed[i]) continue;
      double row = 0.0, col = 0.0;
      for (int j = 0; j < n; ++j) {
        if (placed[j] || j == i) continue;
        row += inst.b(i, j);
        col += inst.b(j, i);
      }
      const double q = col == 0.0 ? std::numeric_limits<double>::infinity() : row / col;
      if (best < 0 || q > best_q) {
        best = i;
        best_q = q;
      }
    }
    placed[best] = 1;
    order.push_back(best);
  }
  return Permutation(std::move(order));
}

}  // namespace nicopt
