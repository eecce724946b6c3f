#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numeric>

#include "nicopt/errors.hpp"
#include "nicopt/instances.hpp"
#include "support/oracles.hpp"

using namespace nicopt;

namespace {

std::vector<std::vector<double>> rows_of(const SquareMatrix& m) {
  std::vector<std::vector<double>> out(m.size(), std::vector<double>(m.size()));
  for (int i = 0; i < m.size(); ++i)
    for (int j = 0; j < m.size(); ++j) out[i][j] = m(i, j);
  return out;
}

std::vector<int> sides_as_int(const Bipartition& b) {
  return {b.sides().begin(), b.sides().end()};
}

double off_diagonal_sum(const SquareMatrix& m) {
  double s = 0.0;
  for (int i = 0; i < m.size(); ++i)
    for (int j = 0; j < m.size(); ++j)
      if (i != j) s += m(i, j);
  return s;
}

}  // namespace

TEST_CASE("prp objective: zero and constant matrices") {
  PrpInstance zero(SquareMatrix(5, 0.0));
  CHECK(prp_objective(zero, Permutation({3, 1, 4, 0, 2})) == 0.0);

  SquareMatrix c(4, 2.0);
  for (int i = 0; i < 4; ++i) c(i, i) = 0.0;
  PrpInstance constant(c);
  CHECK(prp_objective(constant, Permutation({2, 0, 3, 1})) == 12.0);
  CHECK(prp_objective(constant, Permutation::identity(4)) == 12.0);
}

TEST_CASE("prp objective matches the double-loop oracle") {
  const auto inst = generate_prp(5, 11);
  const auto b = rows_of(inst.weights());
  CHECK(prp_objective(inst, Permutation::identity(5)) == oracle::prp_value(b, {0, 1, 2, 3, 4}));
  Rng rng(4);
  for (int t = 0; t < 50; ++t) {
    const auto w = random_permutation(5, rng);
    CHECK(prp_objective(inst, w) == doctest::Approx(oracle::prp_value(b, w.order())).epsilon(1e-14));
  }
}

TEST_CASE("prp complement identity") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto inst = generate_prp(9, seed);
    const double total = off_diagonal_sum(inst.weights());
    Rng rng(seed);
    const auto w = random_permutation(9, rng);
    const double sum = prp_objective(inst, w) + prp_objective(inst, w.reversed());
    CHECK(std::abs(sum - total) <= 1e-9 * total);
  }
}

TEST_CASE("tsp tour length") {
  TspInstance square({{0, 0}, {1, 0}, {1, 1}, {0, 1}});
  CHECK(tsp_tour_length(square, Permutation({0, 1, 2, 3})) == doctest::Approx(4.0).epsilon(1e-15));

  TspInstance point({{0.3, 0.3}, {0.3, 0.3}, {0.3, 0.3}});
  CHECK(tsp_tour_length(point, Permutation({2, 0, 1})) == 0.0);

  const auto inst = generate_tsp(6, 5);
  std::vector<double> x, y;
  for (const auto& c : inst.coords()) {
    x.push_back(c.x);
    y.push_back(c.y);
  }
  const Permutation w({4, 1, 0, 5, 2, 3});
  CHECK(tsp_tour_length(inst, w) == doctest::Approx(oracle::tour_length(x, y, w.order())).epsilon(1e-13));
}

TEST_CASE("tsp length is invariant under rotation and reversal") {
  const auto inst = generate_tsp(12, 3);
  Rng rng(9);
  for (int t = 0; t < 20; ++t) {
    const auto w = random_permutation(12, rng);
    const double base = tsp_tour_length(inst, w);
    auto order = w.order();
    for (int r = 0; r < 12; ++r) {
      std::rotate(order.begin(), order.begin() + 1, order.end());
      CHECK(std::abs(tsp_tour_length(inst, Permutation(order)) - base) <= 1e-12 * base);
    }
    CHECK(std::abs(tsp_tour_length(inst, w.reversed()) - base) <= 1e-12 * base);
  }
}

TEST_CASE("gpp cut weight") {
  GppInstance empty(SquareMatrix(4, 0.0));
  CHECK(gpp_cut_weight(empty, Bipartition({0, 1, 0, 1})) == 0.0);

  SquareMatrix k4(4, 1.0);
  for (int i = 0; i < 4; ++i) k4(i, i) = 0.0;
  CHECK(gpp_cut_weight(GppInstance(k4), Bipartition({0, 0, 1, 1})) == 4.0);

  const auto inst = generate_gpp(8, 21);
  const Bipartition part({1, 0, 0, 1, 1, 0, 1, 0});
  const double expect = oracle::cut_weight(rows_of(inst.weights()), sides_as_int(part));
  CHECK(gpp_cut_weight(inst, part) == doctest::Approx(expect).epsilon(1e-14));
  CHECK(gpp_cut_weight(inst, part.flipped()) == gpp_cut_weight(inst, part));
}

TEST_CASE("unbalanced bipartitions are rejected") {
  CHECK_THROWS_AS(Bipartition({0, 0, 0, 1}), ConstraintError);
  CHECK_THROWS_AS(Bipartition({0, 2, 1, 1}), ArgumentError);
  CHECK_THROWS_AS(Permutation({0, 0, 1}), ArgumentError);
}

TEST_CASE("generate is deterministic and respects construction rules") {
  CHECK(generate_prp(5, 7) == generate_prp(5, 7));
  CHECK_FALSE(generate_prp(5, 7) == generate_prp(5, 8));
  CHECK(generate_tsp(9, 2) == generate_tsp(9, 2));
  CHECK(generate_gpp(8, 2) == generate_gpp(8, 2));

  const auto gpp = generate_gpp(6, 99);
  for (int i = 0; i < 6; ++i) {
    CHECK(gpp.b(i, i) == 0.0);
    for (int j = 0; j < 6; ++j) CHECK(gpp.b(i, j) == gpp.b(j, i));
  }

  const auto tsp = generate_tsp(20, 1);
  for (const auto& c : tsp.coords()) {
    CHECK(c.x >= 0.0);
    CHECK(c.x < 1.0);
    CHECK(c.y >= 0.0);
    CHECK(c.y < 1.0);
  }

  const auto prp = generate_prp(6, 3);
  for (int i = 0; i < 6; ++i) CHECK(prp.b(i, i) == 0.0);

  CHECK_THROWS_AS(generate_gpp(5, 1), ArgumentError);
  CHECK_THROWS_AS(generate(Problem::prp, 1, 1), ArgumentError);
}

TEST_CASE("random bipartitions are balanced") {
  Rng rng(1);
  for (int t = 0; t < 100; ++t) {
    const auto b = random_bipartition(10, rng);
    CHECK(std::count(b.sides().begin(), b.sides().end(), 1) == 5);
  }
}

TEST_CASE("lolib parsing") {
  const auto inst = parse_lolib("3\n0 1 2\n3 0 4\n5 6 0\n");
  REQUIRE(inst.size() == 3);
  CHECK(inst.b(0, 1) == 1.0);
  CHECK(inst.b(0, 2) == 2.0);
  CHECK(inst.b(1, 0) == 3.0);
  CHECK(inst.b(2, 1) == 6.0);

  CHECK_THROWS_AS(parse_lolib("3\n0 1\n"), FormatError);
  CHECK_THROWS_AS(parse_lolib("2\n0 x\n1 0\n"), FormatError);
  CHECK_THROWS_AS(parse_lolib("2\n0 1\n1 0 7\n"), FormatError);

  SUBCASE("a name line before the size is skipped") {
    const auto named = parse_lolib("be75eec\n2\n0 1.5\n2.5 0\n");
    CHECK(named.b(1, 0) == 2.5);
  }
  SUBCASE("round trip") {
    const auto g = generate_prp(7, 42);
    const auto once = parse_lolib(to_lolib(g, "gen"));
    CHECK(parse_lolib(to_lolib(once)) == once);
    CHECK(once == g);
  }
}

TEST_CASE("instance json round trip") {
  const auto dir = std::filesystem::temp_directory_path();
  for (Problem p : {Problem::prp, Problem::tsp, Problem::gpp}) {
    const Instance inst = generate(p, 6, 17);
    CHECK(instance_from_json(instance_to_json(inst, 17)) == inst);
    const auto path = (dir / ("nicopt_inst_" + std::string(to_string(p)) + ".json")).string();
    write_instance_file(path, inst);
    CHECK(read_instance_file(path) == inst);
    std::filesystem::remove(path);
  }
  CHECK_THROWS_AS(instance_from_json(nlohmann::json{{"problem", "prp"}, {"n", 2}, {"data", {{0, 1}}}}),
                  FormatError);
  CHECK_THROWS_AS(read_instance_file("/nonexistent/dir/x.json"), DataError);
}

TEST_CASE("brute force") {
  SUBCASE("n = 1") {
    const auto [sol, value] = brute_force_best(PrpInstance(SquareMatrix(1, 0.0)));
    CHECK(std::get<Permutation>(sol) == Permutation::identity(1));
    CHECK(value == 0.0);
  }
  SUBCASE("constant matrix ties resolve to the identity") {
    SquareMatrix c(5, 1.0);
    for (int i = 0; i < 5; ++i) c(i, i) = 0.0;
    const auto [sol, value] = brute_force_best(PrpInstance(c));
    CHECK(std::get<Permutation>(sol) == Permutation::identity(5));
    CHECK(value == 10.0);
  }
  SUBCASE("n = 6 prp against an independent enumeration") {
    const auto inst = generate_prp(6, 5);
    const auto b = rows_of(inst.weights());
    std::vector<int> w(6);
    std::iota(w.begin(), w.end(), 0);
    double best = -1.0;
    do best = std::max(best, oracle::prp_value(b, w));
    while (std::next_permutation(w.begin(), w.end()));
    CHECK(brute_force_best(inst).second == doctest::Approx(best).epsilon(1e-14));
  }
  SUBCASE("too large") {
    CHECK_THROWS_AS(brute_force_best(generate_prp(kBruteForceMaxPermutation + 1, 1)), SizeError);
  }
}

TEST_CASE("exact optimum agrees with brute force") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    for (Problem p : {Problem::prp, Problem::tsp, Problem::gpp}) {
      const Instance inst = generate(p, 8, seed);
      CAPTURE(to_string(p));
      CHECK(exact_optimum(inst) == doctest::Approx(brute_force_best(inst).second).epsilon(1e-12));
    }
  }
  CHECK(exact_optimum_available(generate(Problem::prp, 20, 1)));
  CHECK_FALSE(exact_optimum_available(generate(Problem::tsp, 40, 1)));
}

TEST_CASE("brute force dominates random solutions") {
  for (Problem p : {Problem::prp, Problem::tsp, Problem::gpp}) {
    const Instance inst = generate(p, 8, 3);
    const double best = brute_force_best(inst).second;
    Rng rng(5);
    for (int t = 0; t < 1000; ++t) {
      const double f = objective(inst, random_solution(p, 8, rng));
      if (sense_of(p) == Sense::maximize) {
        CHECK(f <= best + 1e-12);
      } else {
        CHECK(f >= best - 1e-12);
      }
    }
  }
}

TEST_CASE("derive_seed separates streams") {
  CHECK(derive_seed(1, 0) != derive_seed(1, 1));
  CHECK(derive_seed(1, 0) != derive_seed(2, 0));
  CHECK(derive_seed(5, 3) == derive_seed(5, 3));
}
