#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <variant>
#include <vector>

#include <json.hpp>

namespace nicopt {

enum class Problem { prp, tsp, gpp };
enum class Sense { maximize, minimize };

std::string_view to_string(Problem problem);
Problem parse_problem(std::string_view name);

inline Sense sense_of(Problem problem) {
  return problem == Problem::prp ? Sense::maximize : Sense::minimize;
}

/// +1 for maximization, -1 for minimization. Multiplying a raw objective
/// delta by this yields an improvement (positive is better).
inline double orientation(Problem problem) {
  return sense_of(problem) == Sense::maximize ? 1.0 : -1.0;
}

using Rng = std::mt19937_64;

/// Mixes a base seed with a stream index so that derived generators are
/// decorrelated (splitmix64 finalizer).
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream);

/// Dense row-major n x n matrix of doubles.
class SquareMatrix {
 public:
  SquareMatrix() = default;
  explicit SquareMatrix(int n, double fill = 0.0);
  SquareMatrix(int n, std::vector<double> row_major);

  int size() const { return n_; }
  double operator()(int i, int j) const { return data_[static_cast<std::size_t>(i) * n_ + j]; }
  double& operator()(int i, int j) { return data_[static_cast<std::size_t>(i) * n_ + j]; }
  std::span<const double> row(int i) const {
    return {data_.data() + static_cast<std::size_t>(i) * n_, static_cast<std::size_t>(n_)};
  }
  const std::vector<double>& data() const { return data_; }

  friend bool operator==(const SquareMatrix&, const SquareMatrix&) = default;

 private:
  int n_ = 0;
  std::vector<double> data_;
};

/// Preference matrix B for the preference ranking (linear ordering) problem.
class PrpInstance {
 public:
  explicit PrpInstance(SquareMatrix b);

  int size() const { return b_.size(); }
  double b(int i, int j) const { return b_(i, j); }
  const SquareMatrix& weights() const { return b_; }

  friend bool operator==(const PrpInstance&, const PrpInstance&) = default;

 private:
  SquareMatrix b_;
};

struct Point {
  double x = 0.0;
  double y = 0.0;
  friend bool operator==(const Point&, const Point&) = default;
};

/// Symmetric Euclidean TSP. Distances are precomputed at construction.
class TspInstance {
 public:
  explicit TspInstance(std::vector<Point> coords);

  int size() const { return static_cast<int>(coords_.size()); }
  double dist(int i, int j) const { return dist_(i, j); }
  const SquareMatrix& distances() const { return dist_; }
  const std::vector<Point>& coords() const { return coords_; }

  friend bool operator==(const TspInstance& a, const TspInstance& b) { return a.coords_ == b.coords_; }

 private:
  std::vector<Point> coords_;
  SquareMatrix dist_;
};

/// Weighted undirected graph for balanced 2-partitioning; weight 0 means no edge.
class GppInstance {
 public:
  explicit GppInstance(SquareMatrix b);

  int size() const { return b_.size(); }
  double b(int i, int j) const { return b_(i, j); }
  const SquareMatrix& weights() const { return b_; }

  friend bool operator==(const GppInstance&, const GppInstance&) = default;

 private:
  SquareMatrix b_;
};

using Instance = std::variant<PrpInstance, TspInstance, GppInstance>;

Problem problem_of(const Instance& inst);
int size_of(const Instance& inst);
/// b_ij for PRP/GPP, d_ij for TSP.
double edge_weight(const Instance& inst, int i, int j);

/// A bijection on {0..n-1}; order[k] is the item at position k.
class Permutation {
 public:
  Permutation() = default;
  explicit Permutation(std::vector<int> order);
  static Permutation identity(int n);

  int size() const { return static_cast<int>(order_.size()); }
  int operator[](int pos) const { return order_[static_cast<std::size_t>(pos)]; }
  const std::vector<int>& order() const { return order_; }
  /// positions()[item] = position of item.
  std::vector<int> positions() const;
  Permutation reversed() const;

  friend bool operator==(const Permutation&, const Permutation&) = default;
  friend auto operator<=>(const Permutation& a, const Permutation& b) { return a.order_ <=> b.order_; }

 private:
  std::vector<int> order_;
};

/// Balanced bipartition: exactly n/2 nodes on side 0.
class Bipartition {
 public:
  Bipartition() = default;
  explicit Bipartition(std::vector<std::uint8_t> side);

  int size() const { return static_cast<int>(side_.size()); }
  int operator[](int node) const { return side_[static_cast<std::size_t>(node)]; }
  const std::vector<std::uint8_t>& sides() const { return side_; }
  Bipartition flipped() const;

  friend bool operator==(const Bipartition&, const Bipartition&) = default;
  friend auto operator<=>(const Bipartition& a, const Bipartition& b) { return a.side_ <=> b.side_; }

 private:
  std::vector<std::uint8_t> side_;
};

using Solution = std::variant<Permutation, Bipartition>;

int size_of(const Solution& sol);

double prp_objective(const PrpInstance& inst, const Permutation& sol);
double tsp_tour_length(const TspInstance& inst, const Permutation& sol);
double gpp_cut_weight(const GppInstance& inst, const Bipartition& sol);

/// Raw objective of the matching problem; throws ArgumentError when the
/// solution encoding does not fit the instance.
double objective(const Instance& inst, const Solution& sol);

/// Objective oriented so that larger is always better.
inline double oriented_objective(const Instance& inst, const Solution& sol) {
  return orientation(problem_of(inst)) * objective(inst, sol);
}

PrpInstance generate_prp(int n, std::uint64_t seed);
TspInstance generate_tsp(int n, std::uint64_t seed);
GppInstance generate_gpp(int n, std::uint64_t seed);
Instance generate(Problem problem, int n, std::uint64_t seed);

Permutation random_permutation(int n, Rng& rng);
Bipartition random_bipartition(int n, Rng& rng);
/// Uniform random permutation or balanced bipartition matching the problem.
Solution random_solution(Problem problem, int n, Rng& rng);

/// Parses the LOLIB text layout: optional name/comment lines, a line holding
/// the single integer n, then n*n numbers in row-major order. The diagonal is
/// forced to zero.
PrpInstance parse_lolib(std::string_view text);
std::string to_lolib(const PrpInstance& inst, std::string_view name = {});

nlohmann::json instance_to_json(const Instance& inst, std::optional<std::uint64_t> seed = std::nullopt);
Instance instance_from_json(const nlohmann::json& doc);

Instance read_instance_file(const std::string& path);
void write_instance_file(const std::string& path, const Instance& inst, std::optional<std::uint64_t> seed = std::nullopt);

inline constexpr int kBruteForceMaxPermutation = 10;
inline constexpr int kBruteForceMaxBipartition = 12;

/// Exhaustive enumeration in lexicographic order; the first optimum found
/// (lexicographically smallest) is returned.
std::pair<Solution, double> brute_force_best(const Instance& inst);

/// Optimal objective value by dynamic programming over subsets (PRP n <= 20,
/// TSP n <= 16) or balanced-subset enumeration (GPP n <= 20).
double exact_optimum(const Instance& inst);
bool exact_optimum_available(const Instance& inst);

}  // namespace nicopt
