#include <doctest.h>

#include <cmath>
#include <sstream>

#include "nicopt/errors.hpp"
#include "nicopt/search.hpp"

using namespace nicopt;

namespace {

bool improves(Problem p, double delta) { return orientation(p) * delta > 0.0; }

bool is_local_optimum(const Instance& inst, const Solution& sol, OperatorKind op) {
  const Problem p = problem_of(inst);
  const double f = objective(inst, sol);
  for (const auto& nb : enumerate_neighbors(op, sol))
    if (improves(p, objective(inst, nb) - f)) return false;
  return true;
}

void check_trace(const SearchResult& res, const Instance& inst) {
  const Problem p = problem_of(inst);
  REQUIRE_FALSE(res.trace.rows.empty());
  for (std::size_t k = 1; k < res.trace.rows.size(); ++k) {
    const auto& a = res.trace.rows[k - 1];
    const auto& b = res.trace.rows[k];
    CHECK(b.evals >= a.evals);
    CHECK_FALSE(improves(p, a.best - b.best));  // best never gets worse
  }
  CHECK(res.trace.rows.back().best == res.objective);
  CHECK(objective(inst, res.solution) == doctest::Approx(res.objective).epsilon(1e-12));
}

// Row-major first-improvement climb written directly against apply/objective.
std::pair<Solution, long long> oracle_best_first(const Instance& inst, Solution sol, OperatorKind op) {
  const Problem p = problem_of(inst);
  long long evals = 0;
  for (;;) {
    const double f = objective(inst, sol);
    bool moved = false;
    for (const Action a : distinct_actions(op, sol)) {
      ++evals;
      const Solution next = apply(op, sol, a);
      if (improves(p, objective(inst, next) - f)) {
        sol = next;
        moved = true;
        break;
      }
    }
    if (!moved) return {sol, evals};
  }
}

}  // namespace

TEST_CASE("budget") {
  CHECK_THROWS_AS(Budget{}.validate(), ArgumentError);
  CHECK_THROWS_AS(Budget::evaluations(-1).validate(), ArgumentError);
  CHECK(Budget::evaluations(5).bounded());
  CHECK(Budget::seconds(1.0).bounded());
  EvalMeter m(Budget::evaluations(10));
  m.charge(4);
  CHECK(m.remaining() == 6);
  CHECK(m.remaining_fraction() == doctest::Approx(0.6));
  CHECK_FALSE(m.exhausted());
  m.charge(6);
  CHECK(m.exhausted());
  CHECK(m.seconds() == 0.0);
}

TEST_CASE("hill climbers stop at local optima") {
  for (Problem p : {Problem::prp, Problem::tsp, Problem::gpp}) {
    CAPTURE(to_string(p));
    const OperatorKind op = default_operator(p);
    const auto model = init_params<float>(8, 1, p, 3);
    SearchOptions opts;
    opts.model = &model;
    for (std::uint64_t seed = 0; seed < 4; ++seed) {
      const Instance inst = generate(p, 8, seed);
      Rng rng(seed);
      const Solution start = random_solution(p, 8, rng);
      for (Strategy s : {Strategy::best_first, Strategy::steepest, Strategy::neural}) {
        CAPTURE(to_string(s));
        const auto res = hill_climb(s, inst, start, op, Budget::unbounded(), opts);
        CHECK(is_local_optimum(inst, res.solution, op));
        check_trace(res, inst);
      }
      const auto st = hill_climb(Strategy::stochastic, inst, start, op, Budget::unbounded(), opts);
      check_trace(st, inst);
      CHECK_FALSE(improves(p, objective(inst, start) - st.objective));
    }
  }
}

TEST_CASE("best first matches a direct simulation") {
  for (Problem p : {Problem::prp, Problem::tsp, Problem::gpp}) {
    const Instance inst = generate(p, 10, 17);
    Rng rng(2);
    const Solution start = random_solution(p, 10, rng);
    const auto [sol, evals] = oracle_best_first(inst, start, default_operator(p));
    const auto res = hill_climb(Strategy::best_first, inst, start, default_operator(p), Budget::unbounded());
    CHECK(res.solution == sol);
    CHECK(res.evaluations == evals);
  }
}

TEST_CASE("steepest charges a full neighborhood per step") {
  const auto inst = generate_prp(9, 4);
  Rng rng(4);
  const Solution start = random_permutation(9, rng);
  const auto res = hill_climb(Strategy::steepest, inst, start, OperatorKind::insert, Budget::unbounded());
  CHECK(res.evaluations == (res.moves + 1) * 64);
  for (std::size_t k = 1; k < res.trace.rows.size(); ++k) CHECK(res.trace.rows[k].evals % 64 == 0);
}

TEST_CASE("starting at the optimum changes nothing") {
  const auto inst = generate_prp(7, 2);
  const auto [opt, value] = brute_force_best(inst);
  const auto model = init_params<float>(8, 1, Problem::prp, 1);
  SearchOptions opts;
  opts.model = &model;
  for (Strategy s : {Strategy::best_first, Strategy::steepest, Strategy::stochastic, Strategy::neural}) {
    const auto res = hill_climb(s, inst, opt, OperatorKind::insert, Budget::unbounded(), opts);
    CHECK(res.solution == opt);
    CHECK(res.moves == 0);
    CHECK(res.objective == value);
  }
}

TEST_CASE("exhausted budget returns the start") {
  const auto inst = generate_prp(8, 2);
  const Solution start = Permutation::identity(8);
  for (Strategy s : {Strategy::best_first, Strategy::steepest, Strategy::stochastic}) {
    const auto res = hill_climb(s, inst, start, OperatorKind::insert, Budget::evaluations(0));
    CHECK(res.solution == start);
    CHECK(res.evaluations == 0);
  }
}

TEST_CASE("budgets are respected") {
  const auto model = init_params<float>(8, 1, Problem::prp, 2);
  SearchOptions opts;
  opts.model = &model;
  opts.tabu_size = 10;
  const auto inst = generate_prp(10, 5);
  const long long scan = 81;
  for (long long E : {5LL, 50LL, 300LL, 1000LL}) {
    CAPTURE(E);
    Rng rng(1);
    const Solution start = random_permutation(10, rng);
    for (Strategy s : {Strategy::best_first, Strategy::steepest, Strategy::stochastic, Strategy::neural}) {
      const auto hc = hill_climb(s, inst, start, OperatorKind::insert, Budget::evaluations(E), opts);
      CHECK(hc.evaluations <= E + scan);
      check_trace(hc, inst);
      const auto ms = multi_start(s, inst, OperatorKind::insert, Budget::evaluations(E), opts);
      CHECK(ms.evaluations <= E + scan);
      check_trace(ms, inst);
    }
    for (Strategy s : {Strategy::best_first, Strategy::neural}) {
      const auto ts = tabu_search(s, inst, start, OperatorKind::insert, Budget::evaluations(E), opts);
      CHECK(ts.evaluations <= E + scan);
      check_trace(ts, inst);
      const auto ils = iterated_local_search(s, inst, start, OperatorKind::insert, Budget::evaluations(E), opts);
      CHECK(ils.evaluations <= E + scan);
      check_trace(ils, inst);
    }
  }
}

TEST_CASE("searches are deterministic per seed") {
  const auto model = init_params<float>(8, 1, Problem::gpp, 2);
  SearchOptions opts;
  opts.model = &model;
  opts.seed = 99;
  const auto inst = generate_gpp(10, 3);
  Rng rng(3);
  const Solution start = random_bipartition(10, rng);
  const auto budget = Budget::evaluations(400);
  auto same = [](const SearchResult& a, const SearchResult& b) {
    return a.solution == b.solution && a.evaluations == b.evaluations && a.trace.to_csv() == b.trace.to_csv();
  };
  CHECK(same(hill_climb(Strategy::stochastic, inst, start, OperatorKind::gpp_swap, budget, opts),
             hill_climb(Strategy::stochastic, inst, start, OperatorKind::gpp_swap, budget, opts)));
  CHECK(same(multi_start(Strategy::neural, inst, OperatorKind::gpp_swap, budget, opts),
             multi_start(Strategy::neural, inst, OperatorKind::gpp_swap, budget, opts)));
  CHECK(same(tabu_search(Strategy::neural, inst, start, OperatorKind::gpp_swap, budget, opts),
             tabu_search(Strategy::neural, inst, start, OperatorKind::gpp_swap, budget, opts)));
  CHECK(same(iterated_local_search(Strategy::best_first, inst, start, OperatorKind::gpp_swap, budget, opts),
             iterated_local_search(Strategy::best_first, inst, start, OperatorKind::gpp_swap, budget, opts)));
}

TEST_CASE("multi start") {
  const auto inst = generate_prp(10, 8);
  SUBCASE("budget below one scan returns the best start") {
    const auto res = multi_start(Strategy::steepest, inst, OperatorKind::insert, Budget::evaluations(3));
    CHECK(res.restarts >= 1);
    check_trace(res, inst);
  }
  SUBCASE("restarts happen and the incumbent is monotone") {
    const auto res = multi_start(Strategy::best_first, inst, OperatorKind::insert, Budget::evaluations(3000));
    CHECK(res.restarts > 1);
    check_trace(res, inst);
    CHECK(is_local_optimum(inst, res.solution, OperatorKind::insert));
  }
}

TEST_CASE("tabu memory") {
  TabuMemory m(3, true);
  m.push(0, 1);
  CHECK(m.contains(0, 1));
  CHECK_FALSE(m.contains(1, 0));
  m.push(2, 3);
  m.push(4, 5);
  CHECK(m.size() == 3);
  m.push(6, 7);  // evicts (0, 1)
  CHECK(m.size() == 3);
  CHECK_FALSE(m.contains(0, 1));
  CHECK(m.contains(2, 3));

  TabuMemory sym(2, false);
  sym.push(5, 2);
  CHECK(sym.contains(2, 5));
  CHECK(operator_is_symmetric(OperatorKind::swap));
  CHECK_FALSE(operator_is_symmetric(OperatorKind::insert));
  CHECK_THROWS_AS(TabuMemory(0, true), ArgumentError);
}

TEST_CASE("tabu search escapes local optima") {
  const auto inst = generate_prp(10, 12);
  Rng rng(6);
  const Solution start = random_permutation(10, rng);
  const auto hc = hill_climb(Strategy::best_first, inst, start, OperatorKind::insert, Budget::unbounded());
  SearchOptions opts;
  opts.tabu_size = 20;
  const auto ts =
      tabu_search(Strategy::best_first, inst, start, OperatorKind::insert, Budget::evaluations(hc.evaluations + 2000), opts);
  CHECK(ts.objective >= hc.objective);
  CHECK(ts.moves > hc.moves);
  CHECK_THROWS_AS(tabu_search(Strategy::best_first, inst, start, OperatorKind::insert, Budget::unbounded(), opts),
                  ArgumentError);
  CHECK_FALSE(Budget::unbounded().bounded());
}

TEST_CASE("iterated local search perturbation") {
  CHECK(perturbation_strength(20, 1.0) == 10);
  CHECK(perturbation_strength(20, 0.0) == 0);
  CHECK(perturbation_strength(20, 0.55) == 5);
  CHECK(perturbation_strength(7, 1.0) == 3);

  Rng rng(5);
  for (int k = 0; k <= 6; ++k) {
    const Solution w = random_permutation(12, rng);
    const auto moved = std::get<Permutation>(perturb(w, k, rng));
    int diff = 0;
    for (int p = 0; p < 12; ++p) diff += moved[p] != std::get<Permutation>(w)[p];
    CHECK(diff <= 2 * k);

    const Solution b = random_bipartition(12, rng);
    const auto pb = std::get<Bipartition>(perturb(b, k, rng));
    CHECK(std::count(pb.sides().begin(), pb.sides().end(), 1) == 6);
  }
  CHECK(perturb(Permutation::identity(5), 0, rng) == Solution(Permutation::identity(5)));
}

TEST_CASE("becker construction") {
  CHECK(becker_construct(PrpInstance(SquareMatrix(1, 0.0))) == Permutation::identity(1));
  SquareMatrix c(5, 2.0);
  for (int i = 0; i < 5; ++i) c(i, i) = 0.0;
  CHECK(becker_construct(PrpInstance(c)) == Permutation::identity(5));

  // item 2 has zero column sum, so it dominates; then 0 (q = 3/1) beats 1 (q = 1/3)
  SquareMatrix m(3, 0.0);
  m(0, 1) = 3.0;
  m(1, 0) = 1.0;
  m(2, 0) = 1.0;
  m(2, 1) = 1.0;
  CHECK(becker_construct(PrpInstance(m)) == Permutation({2, 0, 1}));

  const auto inst = generate_prp(6, 3);
  Rng rng(1);
  double mean = 0.0;
  for (int t = 0; t < 1000; ++t) mean += prp_objective(inst, random_permutation(6, rng)) / 1000.0;
  CHECK(prp_objective(inst, becker_construct(inst)) >= mean);
}

TEST_CASE("neural search needs a model") {
  const auto inst = generate_prp(6, 1);
  CHECK_THROWS_AS(hill_climb(Strategy::neural, inst, Permutation::identity(6), OperatorKind::insert, Budget::unbounded()),
                  ArgumentError);
  CHECK_THROWS_AS(hill_climb(Strategy::steepest, inst, Permutation::identity(6), OperatorKind::gpp_swap,
                             Budget::unbounded()),
                  ArgumentError);
}

TEST_CASE("trace csv") {
  SearchTrace t;
  t.rows.push_back({0, 0.0, 10.5, 10.5});
  t.rows.push_back({12, 0.25, 11.0, 11.0});
  CHECK(t.to_csv() == "evals,seconds,best,current\n0,0.000000,10.5,10.5\n12,0.250000,11,11\n");
  CHECK(parse_strategy("sahc") == Strategy::steepest);
  CHECK(parse_strategy("nhc") == Strategy::neural);
  CHECK_THROWS_AS(parse_strategy("xyz"), ArgumentError);
}
