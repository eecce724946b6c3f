#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "nicopt/instances.hpp"
#include "nicopt/model.hpp"
#include "nicopt/operators.hpp"
#include "nicopt/search.hpp"

namespace nicopt {

/// |f - f_ref| / |f_ref| * 100; 0 when f == f_ref. Throws DataError for a
/// zero reference with f != f_ref.
double gap_percent(double f, double f_ref);

/// 100 * (1 - (rank - 1) / (size - 1)); 100 when size <= 1.
double rank_percentile(int rank, int size);

struct CompensationInputs {
  double t_train = 0.0;  // seconds
  double t_infer = 0.0;  // seconds per step
  double t_neigh = 0.0;  // seconds per full neighborhood
  long long steps = 0;   // T, steps per execution
};

/// ceil(t_train / (T * (t_neigh - t_infer))). DomainError when t_neigh <= t_infer.
long long compensation(const CompensationInputs& in);

// ---------------------------------------------------------------------------
// One-step evaluation

/// Picks a node pair (u, v) for the given state.
using PairPolicy = std::function<Action(const Instance&, const Solution&, Rng&)>;

PairPolicy model_policy(const ModelParams<float>& model, bool sample);

struct OneStepRecord {
  int instance = 0;
  int rank = 0;
  int size = 0;  // distinct neighbors
  double percentile = 0.0;
  double delta = 0.0;  // raw objective change of the chosen move
  bool improving = false;
};

struct OneStepSummary {
  std::vector<OneStepRecord> records;
  double mean_rank = 0.0;
  double mean_percentile = 0.0;
  double pct_rank1 = 0.0;
  double pct_improving = 0.0;

  /// rank,count rows for ranks 1..size (the histogram sums to the instance count).
  std::string histogram_csv() const;
  std::string records_csv() const;
  std::string summary_csv() const;
};

OneStepSummary one_step_eval(const PairPolicy& policy, Problem problem, int n, int count, OperatorKind op,
                             std::uint64_t seed);

// ---------------------------------------------------------------------------
// Multi-step evaluation

struct MultiStepRow {
  int run = 0;
  int step = 0;
  double reward = 0.0;      // oriented improvement of the chosen move
  double min_reward = 0.0;  // over every move the policy could pick
  double max_reward = 0.0;
  double objective = 0.0;   // after the move
};

std::vector<MultiStepRow> multi_step_eval(const PairPolicy& policy, Problem problem, int n, OperatorKind op,
                                          int steps, int runs, std::uint64_t seed);
std::string multi_step_csv(const std::vector<MultiStepRow>& rows);

// ---------------------------------------------------------------------------
// Algorithms, references, bi-criteria and budget tables

enum class AlgorithmKind { hill_climb, multi_start, tabu, ils, becker };

struct AlgorithmSpec {
  std::string name;
  AlgorithmKind kind = AlgorithmKind::hill_climb;
  Strategy strategy = Strategy::best_first;
  bool neural() const { return strategy == Strategy::neural && kind != AlgorithmKind::becker; }
};

/// nhc, sahc, bfhc, shc, msnhc, mssahc, msbfhc, msshc, nts, bfts, nils,
/// bfils, becker.
AlgorithmSpec parse_algorithm(std::string_view name);

/// Runs one algorithm. Hill climbers start from `start`; multi-start ignores it.
SearchResult run_algorithm(const AlgorithmSpec& algo, const Instance& inst, const Solution& start, OperatorKind op,
                           const Budget& budget, const SearchOptions& opts);

/// Reference objective per instance index.
using BestKnown = std::map<int, double>;

/// Reads `instance,value` rows (header line required).
BestKnown read_best_known(const std::string& path);

/// Exact optimum when available, else the best-known entry; DataError otherwise.
double reference_value(const Instance& inst, int index, const BestKnown* best_known);

/// Deterministic benchmark instance `index` and its random start.
Instance benchmark_instance(Problem problem, int n, std::uint64_t seed, int index);
Solution benchmark_start(Problem problem, int n, std::uint64_t seed, int index);

struct RunRow {
  std::string algorithm;
  int n = 0;
  long long budget = 0;  // 0: run to a local optimum
  int instance = 0;
  double objective = 0.0;
  double reference = 0.0;
  double gap = 0.0;
  long long evaluations = 0;
};

struct AlgorithmMean {
  std::string algorithm;
  double mean_gap = 0.0;
  double mean_evaluations = 0.0;
};

/// Model lookup per instance size for neural algorithms.
using ModelForSize = std::function<const ModelParams<float>*(int n)>;

/// Each algorithm run to its local optimum on `count` instances.
std::vector<RunRow> bicriteria_eval(const std::vector<AlgorithmSpec>& algos, Problem problem, int n, int count,
                                    OperatorKind op, std::uint64_t seed, const ModelForSize& models,
                                    const BestKnown* best_known = nullptr);

/// Mean gap per (algorithm, n, E) with E = multiplier * n.
std::vector<RunRow> budget_table(const std::vector<AlgorithmSpec>& algos, Problem problem, const std::vector<int>& sizes,
                                 const std::vector<long long>& multipliers, int count, OperatorKind op,
                                 std::uint64_t seed, const ModelForSize& models,
                                 const std::function<const BestKnown*(int n)>& best_known = {});

/// Per-algorithm means in first-appearance order (computed from stored rows).
std::vector<AlgorithmMean> summarize(const std::vector<RunRow>& rows);

std::string runs_csv(const std::vector<RunRow>& rows);
std::string means_csv(const std::vector<AlgorithmMean>& means);
/// Wide layout: one row per algorithm, one column per (n, E) cell.
std::string budget_table_csv(const std::vector<RunRow>& rows);

// ---------------------------------------------------------------------------

/// Everything needed to re-run a CLI experiment.
struct ExperimentManifest {
  std::string kind;               // subcommand
  std::vector<std::string> argv;  // arguments after the subcommand, output location excluded
  nlohmann::json details;         // problem, sizes, count, seeds, budgets, algorithms, checkpoints
  std::string output;             // output directory or file

  nlohmann::json to_json() const;
  static ExperimentManifest from_json(const nlohmann::json& doc);
};

void write_manifest(const ExperimentManifest& m, const std::string& path);
ExperimentManifest read_manifest(const std::string& path);

/// Fixed-format number rendering shared by all CSV writers.
std::string format_number(double v);

}  // namespace nicopt
