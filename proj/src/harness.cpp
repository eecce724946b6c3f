#include "nicopt/harness.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "nicopt/errors.hpp"

namespace nicopt {

std::string format_number(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

double gap_percent(double f, double f_ref) {
  if (f == f_ref) return 0.0;
  if (f_ref == 0.0) throw DataError("gap undefined against a zero reference value");
  return std::abs(f - f_ref) / std::abs(f_ref) * 100.0;
}

double rank_percentile(int rank, int size) {
  if (size <= 1) return 100.0;
  return 100.0 * (1.0 - static_cast<double>(rank - 1) / static_cast<double>(size - 1));
}

long long compensation(const CompensationInputs& in) {
  if (!(in.t_train >= 0) || !(in.t_infer >= 0) || !(in.t_neigh >= 0) || in.steps < 1) {
    throw ArgumentError("compensation inputs must be non-negative with steps >= 1");
  }
  if (in.t_neigh <= in.t_infer) {
    throw DomainError("inference is not faster than a neighborhood scan; training never pays off");
  }
  return static_cast<long long>(std::ceil(in.t_train / (static_cast<double>(in.steps) * (in.t_neigh - in.t_infer))));
}

// ---------------------------------------------------------------------------

PairPolicy model_policy(const ModelParams<float>& model, bool sample) {
  return [&model, sample](const Instance& inst, const Solution& sol, Rng& rng) {
    const auto fr = forward<float>(model, inst, sol, Mode::eval);
    return sample ? sample_action(fr.dist[0], rng) : argmax_action(fr.dist[0]);
  };
}

Instance benchmark_instance(Problem problem, int n, std::uint64_t seed, int index) {
  return generate(problem, n, derive_seed(seed, 2 * static_cast<std::uint64_t>(index)));
}

Solution benchmark_start(Problem problem, int n, std::uint64_t seed, int index) {
  Rng rng(derive_seed(seed, 2 * static_cast<std::uint64_t>(index) + 1));
  return random_solution(problem, n, rng);
}

namespace {

Rng policy_rng(std::uint64_t seed, int index) {
  return Rng(derive_seed(derive_seed(seed, 0x9e3779b9ULL), static_cast<std::uint64_t>(index)));
}

}  // namespace

OneStepSummary one_step_eval(const PairPolicy& policy, Problem problem, int n, int count, OperatorKind op,
                             std::uint64_t seed) {
  if (count < 1) throw ArgumentError("count must be positive");
  if (!operator_fits(problem, op)) throw ArgumentError("operator does not fit the problem");
  const double o = orientation(problem);
  OneStepSummary s;
  for (int i = 0; i < count; ++i) {
    const Instance inst = benchmark_instance(problem, n, seed, i);
    const Solution sol = benchmark_start(problem, n, seed, i);
    Rng rng = policy_rng(seed, i);
    const Action pair = policy(inst, sol, rng);
    const Action a = action_from_node_pair(sol, pair.i, pair.j);
    const auto canon = canonical_action(op, sol, a);
    OneStepRecord r;
    r.instance = i;
    r.delta = canon ? move_delta(inst, sol, op, *canon) : 0.0;
    const auto deltas = neighbor_deltas(inst, sol, op);
    r.size = static_cast<int>(deltas.size());
    r.rank = std::min(rank_of_delta(r.delta, deltas, problem), r.size);
    r.percentile = rank_percentile(r.rank, r.size);
    r.improving = o * r.delta > 0.0;
    s.records.push_back(r);
  }
  double rank = 0, pct = 0, r1 = 0, imp = 0;
  for (const auto& r : s.records) {
    rank += r.rank;
    pct += r.percentile;
    r1 += r.rank == 1;
    imp += r.improving;
  }
  s.mean_rank = rank / count;
  s.mean_percentile = pct / count;
  s.pct_rank1 = 100.0 * r1 / count;
  s.pct_improving = 100.0 * imp / count;
  return s;
}

std::string OneStepSummary::histogram_csv() const {
  int size = 0;
  for (const auto& r : records) size = std::max(size, r.size);
  std::vector<int> counts(static_cast<std::size_t>(size) + 1, 0);
  for (const auto& r : records) ++counts[static_cast<std::size_t>(r.rank)];
  std::ostringstream out;
  out << "rank,count\n";
  for (int k = 1; k <= size; ++k) out << k << ',' << counts[static_cast<std::size_t>(k)] << '\n';
  return out.str();
}

std::string OneStepSummary::records_csv() const {
  std::ostringstream out;
  out << "instance,rank,size,percentile,delta,improving\n";
  for (const auto& r : records) {
    out << r.instance << ',' << r.rank << ',' << r.size << ',' << format_number(r.percentile) << ','
        << format_number(r.delta) << ',' << (r.improving ? 1 : 0) << '\n';
  }
  return out.str();
}

std::string OneStepSummary::summary_csv() const {
  std::ostringstream out;
  out << "count,mean_rank,mean_percentile,pct_rank1,pct_improving\n";
  out << records.size() << ',' << format_number(mean_rank) << ',' << format_number(mean_percentile) << ','
      << format_number(pct_rank1) << ',' << format_number(pct_improving) << '\n';
  return out.str();
}

// ---------------------------------------------------------------------------

std::vector<MultiStepRow> multi_step_eval(const PairPolicy& policy, Problem problem, int n, OperatorKind op,
                                          int steps, int runs, std::uint64_t seed) {
  if (steps < 1 || runs < 1) throw ArgumentError("steps and runs must be positive");
  if (!operator_fits(problem, op)) throw ArgumentError("operator does not fit the problem");
  const double o = orientation(problem);
  std::vector<MultiStepRow> rows;
  for (int run = 0; run < runs; ++run) {
    const Instance inst = benchmark_instance(problem, n, seed, run);
    Solution sol = benchmark_start(problem, n, seed, run);
    Rng rng = policy_rng(seed, run);
    for (int t = 0; t < steps; ++t) {
      // Attainable rewards over every pair the policy may pick, no-ops included.
      double lo = 0.0, hi = 0.0;
      bool first = true, has_noop = false;
      for (int u = 0; u < n && !has_noop; ++u)
        for (int v = 0; v < n && !has_noop; ++v)
          if (u != v && !canonical_action(op, sol, action_from_node_pair(sol, u, v))) has_noop = true;
      for (double d : neighbor_deltas(inst, sol, op)) {
        const double r = o * d;
        lo = first ? r : std::min(lo, r);
        hi = first ? r : std::max(hi, r);
        first = false;
      }
      if (has_noop || first) {
        lo = first ? 0.0 : std::min(lo, 0.0);
        hi = first ? 0.0 : std::max(hi, 0.0);
      }
      const Action pair = policy(inst, sol, rng);
      const Action a = action_from_node_pair(sol, pair.i, pair.j);
      const auto canon = canonical_action(op, sol, a);
      const double delta = canon ? move_delta(inst, sol, op, *canon) : 0.0;
      sol = apply(op, sol, a);
      rows.push_back({run, t, o * delta, lo, hi, objective(inst, sol)});
    }
  }
  return rows;
}

std::string multi_step_csv(const std::vector<MultiStepRow>& rows) {
  std::ostringstream out;
  out << "run,step,reward,min_reward,max_reward,objective\n";
  for (const auto& r : rows) {
    out << r.run << ',' << r.step << ',' << format_number(r.reward) << ',' << format_number(r.min_reward) << ','
        << format_number(r.max_reward) << ',' << format_number(r.objective) << '\n';
  }
  return out.str();
}

// ---------------------------------------------------------------------------

AlgorithmSpec parse_algorithm(std::string_view name) {
  std::string s(name);
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  const std::string key = s;
  auto spec = [&](AlgorithmKind k, Strategy st) { return AlgorithmSpec{key, k, st}; };
  if (s == "nhc") return spec(AlgorithmKind::hill_climb, Strategy::neural);
  if (s == "sahc") return spec(AlgorithmKind::hill_climb, Strategy::steepest);
  if (s == "bfhc") return spec(AlgorithmKind::hill_climb, Strategy::best_first);
  if (s == "shc") return spec(AlgorithmKind::hill_climb, Strategy::stochastic);
  if (s == "msnhc") return spec(AlgorithmKind::multi_start, Strategy::neural);
  if (s == "mssahc") return spec(AlgorithmKind::multi_start, Strategy::steepest);
  if (s == "msbfhc") return spec(AlgorithmKind::multi_start, Strategy::best_first);
  if (s == "msshc") return spec(AlgorithmKind::multi_start, Strategy::stochastic);
  if (s == "nts") return spec(AlgorithmKind::tabu, Strategy::neural);
  if (s == "bfts") return spec(AlgorithmKind::tabu, Strategy::best_first);
  if (s == "nils") return spec(AlgorithmKind::ils, Strategy::neural);
  if (s == "bfils") return spec(AlgorithmKind::ils, Strategy::best_first);
  if (s == "becker") return spec(AlgorithmKind::becker, Strategy::best_first);
  throw ArgumentError("unknown algorithm '" + std::string(name) + "'");
}

SearchResult run_algorithm(const AlgorithmSpec& algo, const Instance& inst, const Solution& start, OperatorKind op,
                           const Budget& budget, const SearchOptions& opts) {
  switch (algo.kind) {
    case AlgorithmKind::hill_climb: return hill_climb(algo.strategy, inst, start, op, budget, opts);
    case AlgorithmKind::multi_start: return multi_start(algo.strategy, inst, op, budget, opts);
    case AlgorithmKind::tabu: return tabu_search(algo.strategy, inst, start, op, budget, opts);
    case AlgorithmKind::ils: return iterated_local_search(algo.strategy, inst, start, op, budget, opts);
    case AlgorithmKind::becker: {
      const auto* prp = std::get_if<PrpInstance>(&inst);
      if (!prp) throw ArgumentError("becker applies to PRP instances only");
      SearchResult r;
      r.solution = becker_construct(*prp);
      r.objective = objective(inst, r.solution);
      r.evaluations = 1;
      r.trace.rows.push_back({1, 0.0, r.objective, r.objective});
      return r;
    }
  }
  throw ArgumentError("unhandled algorithm");
}

BestKnown read_best_known(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read best-known file '" + path + "'");
  BestKnown out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (lineno == 1 || line.empty()) continue;
    const auto comma = line.find(',');
    try {
      if (comma == std::string::npos) throw std::invalid_argument("missing comma");
      out[std::stoi(line.substr(0, comma))] = std::stod(line.substr(comma + 1));
    } catch (const std::exception&) {
      throw DataError(path + ":" + std::to_string(lineno) + ": expected 'instance,value'");
    }
  }
  return out;
}

double reference_value(const Instance& inst, int index, const BestKnown* best_known) {
  if (best_known) {
    const auto it = best_known->find(index);
    if (it != best_known->end()) return it->second;
  }
  if (exact_optimum_available(inst)) return exact_optimum(inst);
  throw DataError("no best-known value for instance " + std::to_string(index) + " of size " +
                  std::to_string(size_of(inst)));
}

namespace {

SearchOptions options_for(const AlgorithmSpec& algo, int n, const ModelForSize& models, std::uint64_t seed) {
  SearchOptions opts;
  opts.seed = seed;
  if (algo.neural()) {
    opts.model = models ? models(n) : nullptr;
    if (!opts.model) throw DataError("algorithm " + algo.name + " needs a model for n=" + std::to_string(n));
  }
  return opts;
}

std::uint64_t search_seed(std::uint64_t seed, int index) {
  return derive_seed(derive_seed(seed, 0x5ea4c4ULL), static_cast<std::uint64_t>(index));
}

}  // namespace

std::vector<RunRow> bicriteria_eval(const std::vector<AlgorithmSpec>& algos, Problem problem, int n, int count,
                                    OperatorKind op, std::uint64_t seed, const ModelForSize& models,
                                    const BestKnown* best_known) {
  if (count < 1) throw ArgumentError("count must be positive");
  for (const auto& a : algos) {
    if (a.kind != AlgorithmKind::hill_climb && a.kind != AlgorithmKind::becker) {
      throw ArgumentError("bi-criteria runs hill climbers to a local optimum; " + a.name + " needs a budget");
    }
  }
  std::vector<RunRow> rows;
  for (int i = 0; i < count; ++i) {
    const Instance inst = benchmark_instance(problem, n, seed, i);
    const Solution start = benchmark_start(problem, n, seed, i);
    const double ref = reference_value(inst, i, best_known);
    for (const auto& algo : algos) {
      const auto res =
          run_algorithm(algo, inst, start, op, Budget::unbounded(), options_for(algo, n, models, search_seed(seed, i)));
      rows.push_back({algo.name, n, 0, i, res.objective, ref, gap_percent(res.objective, ref), res.evaluations});
    }
  }
  return rows;
}

std::vector<RunRow> budget_table(const std::vector<AlgorithmSpec>& algos, Problem problem, const std::vector<int>& sizes,
                                 const std::vector<long long>& multipliers, int count, OperatorKind op,
                                 std::uint64_t seed, const ModelForSize& models,
                                 const std::function<const BestKnown*(int n)>& best_known) {
  if (count < 1) throw ArgumentError("count must be positive");
  std::vector<RunRow> rows;
  for (int n : sizes) {
    const BestKnown* bk = best_known ? best_known(n) : nullptr;
    for (int i = 0; i < count; ++i) {
      const Instance inst = benchmark_instance(problem, n, seed, i);
      const Solution start = benchmark_start(problem, n, seed, i);
      const double ref = reference_value(inst, i, bk);
      for (long long mult : multipliers) {
        const long long E = mult * n;
        for (const auto& algo : algos) {
          const auto res = run_algorithm(algo, inst, start, op, Budget::evaluations(E),
                                         options_for(algo, n, models, search_seed(seed, i)));
          rows.push_back({algo.name, n, E, i, res.objective, ref, gap_percent(res.objective, ref), res.evaluations});
        }
      }
    }
  }
  return rows;
}

std::vector<AlgorithmMean> summarize(const std::vector<RunRow>& rows) {
  std::vector<AlgorithmMean> out;
  std::vector<int> counts;
  for (const auto& r : rows) {
    auto it = std::find_if(out.begin(), out.end(), [&](const AlgorithmMean& m) { return m.algorithm == r.algorithm; });
    if (it == out.end()) {
      out.push_back({r.algorithm, 0.0, 0.0});
      counts.push_back(0);
      it = out.end() - 1;
    }
    const auto k = static_cast<std::size_t>(it - out.begin());
    it->mean_gap += r.gap;
    it->mean_evaluations += static_cast<double>(r.evaluations);
    ++counts[k];
  }
  for (std::size_t k = 0; k < out.size(); ++k) {
    out[k].mean_gap /= counts[k];
    out[k].mean_evaluations /= counts[k];
  }
  return out;
}

std::string runs_csv(const std::vector<RunRow>& rows) {
  std::ostringstream out;
  out << "algorithm,n,budget,instance,objective,reference,gap,evaluations\n";
  for (const auto& r : rows) {
    out << r.algorithm << ',' << r.n << ',' << r.budget << ',' << r.instance << ',' << format_number(r.objective) << ','
        << format_number(r.reference) << ',' << format_number(r.gap) << ',' << r.evaluations << '\n';
  }
  return out.str();
}

std::string means_csv(const std::vector<AlgorithmMean>& means) {
  std::ostringstream out;
  out << "algorithm,mean_gap,mean_evaluations\n";
  for (const auto& m : means) {
    out << m.algorithm << ',' << format_number(m.mean_gap) << ',' << format_number(m.mean_evaluations) << '\n';
  }
  return out.str();
}

std::string budget_table_csv(const std::vector<RunRow>& rows) {
  std::vector<std::pair<int, long long>> cells;
  std::vector<std::string> algos;
  for (const auto& r : rows) {
    if (std::find(cells.begin(), cells.end(), std::make_pair(r.n, r.budget)) == cells.end()) {
      cells.emplace_back(r.n, r.budget);
    }
    if (std::find(algos.begin(), algos.end(), r.algorithm) == algos.end()) algos.push_back(r.algorithm);
  }
  std::ostringstream out;
  out << "algorithm";
  for (const auto& [n, e] : cells) out << ",n" << n << "_e" << e;
  out << '\n';
  for (const auto& a : algos) {
    out << a;
    for (const auto& [n, e] : cells) {
      double sum = 0.0;
      int k = 0;
      for (const auto& r : rows) {
        if (r.algorithm == a && r.n == n && r.budget == e) {
          sum += r.gap;
          ++k;
        }
      }
      out << ',' << (k ? format_number(sum / k) : std::string());
    }
    out << '\n';
  }
  return out.str();
}

// ---------------------------------------------------------------------------

nlohmann::json ExperimentManifest::to_json() const {
  return {{"kind", kind}, {"argv", argv}, {"details", details}, {"output", output}};
}

ExperimentManifest ExperimentManifest::from_json(const nlohmann::json& doc) {
  try {
    ExperimentManifest m;
    m.kind = doc.at("kind").get<std::string>();
    m.argv = doc.at("argv").get<std::vector<std::string>>();
    m.details = doc.value("details", nlohmann::json::object());
    m.output = doc.value("output", std::string());
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("bad manifest: ") + e.what());
  }
}

void write_manifest(const ExperimentManifest& m, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write manifest '" + path + "'");
  out << m.to_json().dump(2) << '\n';
}

ExperimentManifest read_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read manifest '" + path + "'");
  try {
    return ExperimentManifest::from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::parse_error& e) {
    throw DataError(std::string("bad manifest: ") + e.what());
  }
}

}  // namespace nicopt
