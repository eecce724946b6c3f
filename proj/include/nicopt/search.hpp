#pragma once

#include <chrono>
#include <cstdint>
#include <deque>
#include <iosfwd>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "nicopt/instances.hpp"
#include "nicopt/model.hpp"
#include "nicopt/operators.hpp"
#include "nicopt/training.hpp"

namespace nicopt {

/// Evaluation and/or time limits. Every computed candidate objective (or
/// exact move delta) costs one evaluation.
struct Budget {
  std::optional<long long> max_evaluations;
  std::optional<double> max_seconds;

  static Budget evaluations(long long e) { return {e, std::nullopt}; }
  static Budget seconds(double s) { return {std::nullopt, s}; }
  /// Effectively no limit; searches then stop only at a local optimum.
  static Budget unbounded() { return {std::numeric_limits<long long>::max(), std::nullopt}; }
  bool bounded() const;
  void validate() const;
};

class EvalMeter {
 public:
  explicit EvalMeter(Budget budget, ClockMode clock = ClockMode::none);

  bool exhausted() const;
  /// Evaluations left; the maximum long long when only time is limited.
  long long remaining() const;
  /// Remaining share of the budget in [0, 1] (evaluations if limited, else time).
  double remaining_fraction() const;
  void charge(long long k = 1) { used_ += k; }
  long long used() const { return used_; }
  /// Elapsed seconds, or 0 under ClockMode::none.
  double seconds() const;
  const Budget& budget() const { return budget_; }

 private:
  Budget budget_;
  ClockMode clock_;
  long long used_ = 0;
  std::chrono::steady_clock::time_point start_;
};

struct TraceRow {
  long long evals = 0;
  double seconds = 0.0;
  double best = 0.0;
  double current = 0.0;
};

struct SearchTrace {
  std::vector<TraceRow> rows;
  static constexpr const char* kHeader = "evals,seconds,best,current";
  void write_csv(std::ostream& out) const;
  std::string to_csv() const;
};

struct SearchResult {
  Solution solution;
  double objective = 0.0;
  SearchTrace trace;
  long long evaluations = 0;
  long long moves = 0;  // accepted moves
  long long restarts = 0;
};

enum class Strategy { best_first, steepest, stochastic, neural };
std::string_view to_string(Strategy s);
Strategy parse_strategy(std::string_view name);

struct SearchOptions {
  const ModelParams<float>* model = nullptr;  // required by neural variants
  std::uint64_t seed = 0;
  ClockMode clock = ClockMode::none;
  int tabu_size = 200;
};

/// Runs one hill climb from `start` (the start itself is not charged).
SearchResult hill_climb(Strategy strategy, const Instance& inst, const Solution& start, OperatorKind op,
                        const Budget& budget, const SearchOptions& opts = {});

/// Repeats `inner` from fresh uniform-random starts (each start charged one
/// evaluation) until the budget runs out.
SearchResult multi_start(Strategy inner, const Instance& inst, OperatorKind op, const Budget& budget,
                         const SearchOptions& opts = {});

/// Short-term memory of node pairs. Pairs are ordered for insert and
/// unordered for the symmetric operators.
class TabuMemory {
 public:
  TabuMemory(int capacity, bool ordered);
  void push(int u, int v);
  bool contains(int u, int v) const;
  int capacity() const { return capacity_; }
  std::size_t size() const { return items_.size(); }

 private:
  std::pair<int, int> key(int u, int v) const;
  int capacity_;
  bool ordered_;
  std::deque<std::pair<int, int>> items_;
};

bool operator_is_symmetric(OperatorKind op);

/// Tabu search with aspiration. `variant` is best_first or neural.
SearchResult tabu_search(Strategy variant, const Instance& inst, const Solution& start, OperatorKind op,
                         const Budget& budget, const SearchOptions& opts = {});

/// Number of random swaps used to perturb: floor((n / 2) * fraction).
int perturbation_strength(int n, double remaining_fraction);

/// `count` uniformly random swaps (cross-side swaps for bipartitions).
Solution perturb(const Solution& sol, int count, Rng& rng);

/// Hill climb, perturb the incumbent, climb again, until the budget runs out.
SearchResult iterated_local_search(Strategy variant, const Instance& inst, const Solution& start, OperatorKind op,
                                   const Budget& budget, const SearchOptions& opts = {});

/// Greedy constructive ranking: repeatedly place the unplaced item with the
/// largest row-sum / column-sum quotient over the unplaced items.
Permutation becker_construct(const PrpInstance& inst);

}  // namespace nicopt
