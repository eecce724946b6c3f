#include "nicopt/instances.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

#include "nicopt/errors.hpp"

namespace nicopt {

std::string_view to_string(Problem problem) {
  switch (problem) {
    case Problem::prp: return "prp";
    case Problem::tsp: return "tsp";
    case Problem::gpp: return "gpp";
  }
  return "?";
}

Problem parse_problem(std::string_view name) {
  if (name == "prp" || name == "lop") return Problem::prp;
  if (name == "tsp") return Problem::tsp;
  if (name == "gpp") return Problem::gpp;
  throw ArgumentError("unknown problem '" + std::string(name) + "' (expected prp, tsp or gpp)");
}

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream) {
  std::uint64_t z = base + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

SquareMatrix::SquareMatrix(int n, double fill)
    : n_(n), data_(static_cast<std::size_t>(n) * static_cast<std::size_t>(n), fill) {
  if (n < 0) throw ArgumentError("matrix size must be non-negative");
}

SquareMatrix::SquareMatrix(int n, std::vector<double> row_major) : n_(n), data_(std::move(row_major)) {
  if (n < 0 || data_.size() != static_cast<std::size_t>(n) * static_cast<std::size_t>(n)) {
    throw ArgumentError("matrix data has " + std::to_string(data_.size()) + " entries, expected " +
                        std::to_string(static_cast<long long>(n) * n));
  }
}

namespace {

void require_finite(const SquareMatrix& m, const char* what) {
  for (double v : m.data()) {
    if (!std::isfinite(v)) throw ArgumentError(std::string(what) + " contains a non-finite entry");
  }
}

}  // namespace

PrpInstance::PrpInstance(SquareMatrix b) : b_(std::move(b)) {
  if (b_.size() < 1) throw ArgumentError("PRP instance needs at least one item");
  require_finite(b_, "preference matrix");
  for (int i = 0; i < b_.size(); ++i) b_(i, i) = 0.0;
}

TspInstance::TspInstance(std::vector<Point> coords) : coords_(std::move(coords)) {
  const int n = size();
  if (n < 1) throw ArgumentError("TSP instance needs at least one city");
  dist_ = SquareMatrix(n);
  for (int i = 0; i < n; ++i) {
    if (!std::isfinite(coords_[i].x) || !std::isfinite(coords_[i].y)) {
      throw ArgumentError("city coordinates must be finite");
    }
    for (int j = i + 1; j < n; ++j) {
      const double d = std::hypot(coords_[i].x - coords_[j].x, coords_[i].y - coords_[j].y);
      dist_(i, j) = d;
      dist_(j, i) = d;
    }
  }
}

GppInstance::GppInstance(SquareMatrix b) : b_(std::move(b)) {
  const int n = b_.size();
  if (n < 2 || n % 2 != 0) throw ArgumentError("GPP instance needs an even number of nodes >= 2");
  require_finite(b_, "graph weight matrix");
  for (int i = 0; i < n; ++i) {
    if (b_(i, i) != 0.0) throw ArgumentError("GPP weight matrix must have a zero diagonal");
    for (int j = i + 1; j < n; ++j) {
      if (b_(i, j) != b_(j, i)) throw ArgumentError("GPP weight matrix must be symmetric");
    }
  }
}

Problem problem_of(const Instance& inst) {
  return static_cast<Problem>(inst.index());
}

int size_of(const Instance& inst) {
  return std::visit([](const auto& x) { return x.size(); }, inst);
}

double edge_weight(const Instance& inst, int i, int j) {
  switch (problem_of(inst)) {
    case Problem::prp: return std::get<PrpInstance>(inst).b(i, j);
    case Problem::tsp: return std::get<TspInstance>(inst).dist(i, j);
    case Problem::gpp: return std::get<GppInstance>(inst).b(i, j);
  }
  return 0.0;
}

Permutation::Permutation(std::vector<int> order) : order_(std::move(order)) {
  std::vector<char> seen(order_.size(), 0);
  for (int v : order_) {
    if (v < 0 || static_cast<std::size_t>(v) >= order_.size() || seen[static_cast<std::size_t>(v)]) {
      throw ArgumentError("not a permutation of 0..n-1");
    }
    seen[static_cast<std::size_t>(v)] = 1;
  }
}

Permutation Permutation::identity(int n) {
  std::vector<int> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  return Permutation(std::move(order));
}

std::vector<int> Permutation::positions() const {
  std::vector<int> pos(order_.size());
  for (std::size_t k = 0; k < order_.size(); ++k) pos[static_cast<std::size_t>(order_[k])] = static_cast<int>(k);
  return pos;
}

Permutation Permutation::reversed() const {
  return Permutation(std::vector<int>(order_.rbegin(), order_.rend()));
}

Bipartition::Bipartition(std::vector<std::uint8_t> side) : side_(std::move(side)) {
  std::size_t zeros = 0;
  for (auto s : side_) {
    if (s > 1) throw ArgumentError("bipartition sides must be 0 or 1");
    zeros += (s == 0);
  }
  if (side_.size() % 2 != 0 || zeros * 2 != side_.size()) {
    throw ConstraintError("bipartition is not balanced: " + std::to_string(zeros) + " of " +
                          std::to_string(side_.size()) + " nodes on side 0");
  }
}

Bipartition Bipartition::flipped() const {
  std::vector<std::uint8_t> s(side_);
  for (auto& v : s) v = static_cast<std::uint8_t>(1 - v);
  return Bipartition(std::move(s));
}

int size_of(const Solution& sol) {
  return std::visit([](const auto& x) { return x.size(); }, sol);
}

namespace {

void require_same_size(int inst_n, int sol_n) {
  if (inst_n != sol_n) {
    throw ArgumentError("solution size " + std::to_string(sol_n) + " does not match instance size " +
                        std::to_string(inst_n));
  }
}

}  // namespace

double prp_objective(const PrpInstance& inst, const Permutation& sol) {
  require_same_size(inst.size(), sol.size());
  const int n = inst.size();
  double total = 0.0;
  for (int i = 0; i < n - 1; ++i) {
    const auto row = inst.weights().row(sol[i]);
    for (int j = i + 1; j < n; ++j) total += row[static_cast<std::size_t>(sol[j])];
  }
  return total;
}

double tsp_tour_length(const TspInstance& inst, const Permutation& sol) {
  require_same_size(inst.size(), sol.size());
  const int n = inst.size();
  double total = 0.0;
  for (int k = 0; k < n; ++k) total += inst.dist(sol[k], sol[(k + 1) % n]);
  return total;
}

double gpp_cut_weight(const GppInstance& inst, const Bipartition& sol) {
  require_same_size(inst.size(), sol.size());
  const int n = inst.size();
  double total = 0.0;
  for (int i = 0; i < n; ++i) {
    for (int j = i + 1; j < n; ++j) {
      if (sol[i] != sol[j]) total += inst.b(i, j);
    }
  }
  return total;
}

double objective(const Instance& inst, const Solution& sol) {
  switch (problem_of(inst)) {
    case Problem::prp:
      if (const auto* p = std::get_if<Permutation>(&sol)) return prp_objective(std::get<PrpInstance>(inst), *p);
      break;
    case Problem::tsp:
      if (const auto* p = std::get_if<Permutation>(&sol)) return tsp_tour_length(std::get<TspInstance>(inst), *p);
      break;
    case Problem::gpp:
      if (const auto* p = std::get_if<Bipartition>(&sol)) return gpp_cut_weight(std::get<GppInstance>(inst), *p);
      break;
  }
  throw ArgumentError("solution encoding does not match the " + std::string(to_string(problem_of(inst))) +
                      " instance");
}

PrpInstance generate_prp(int n, std::uint64_t seed) {
  if (n < 2) throw ArgumentError("generate: n must be >= 2");
  Rng rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  SquareMatrix b(n);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      if (i != j) b(i, j) = unit(rng);
    }
  }
  return PrpInstance(std::move(b));
}

TspInstance generate_tsp(int n, std::uint64_t seed) {
  if (n < 2) throw ArgumentError("generate: n must be >= 2");
  Rng rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<Point> coords(static_cast<std::size_t>(n));
  for (auto& c : coords) {
    c.x = unit(rng);
    c.y = unit(rng);
  }
  return TspInstance(std::move(coords));
}

GppInstance generate_gpp(int n, std::uint64_t seed) {
  if (n < 2) throw ArgumentError("generate: n must be >= 2");
  if (n % 2 != 0) throw ArgumentError("generate: GPP needs an even n, got " + std::to_string(n));
  Rng rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  SquareMatrix b(n);
  for (int i = 0; i < n; ++i) {
    for (int j = i + 1; j < n; ++j) {
      if (unit(rng) < 0.5) {
        const double w = unit(rng);
        b(i, j) = w;
        b(j, i) = w;
      }
    }
  }
  return GppInstance(std::move(b));
}

Instance generate(Problem problem, int n, std::uint64_t seed) {
  switch (problem) {
    case Problem::prp: return generate_prp(n, seed);
    case Problem::tsp: return generate_tsp(n, seed);
    case Problem::gpp: return generate_gpp(n, seed);
  }
  throw ArgumentError("unknown problem");
}

Permutation random_permutation(int n, Rng& rng) {
  std::vector<int> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  return Permutation(std::move(order));
}

Bipartition random_bipartition(int n, Rng& rng) {
  if (n % 2 != 0) throw ArgumentError("bipartition needs an even n");
  std::vector<std::uint8_t> side(static_cast<std::size_t>(n), 0);
  std::fill(side.begin() + n / 2, side.end(), std::uint8_t{1});
  std::shuffle(side.begin(), side.end(), rng);
  return Bipartition(std::move(side));
}

Solution random_solution(Problem problem, int n, Rng& rng) {
  if (problem == Problem::gpp) return random_bipartition(n, rng);
  return random_permutation(n, rng);
}

// ---------------------------------------------------------------------------
// LOLIB

namespace {

struct Token {
  std::string_view text;
  int line;
  int column;
};

std::vector<std::vector<Token>> tokenize_lines(std::string_view text) {
  std::vector<std::vector<Token>> lines;
  int line_no = 1;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const std::size_t end = std::min(text.find('\n', pos), text.size());
    std::vector<Token> tokens;
    std::size_t k = pos;
    while (k < end) {
      while (k < end && std::isspace(static_cast<unsigned char>(text[k]))) ++k;
      const std::size_t start = k;
      while (k < end && !std::isspace(static_cast<unsigned char>(text[k]))) ++k;
      if (k > start) {
        tokens.push_back({text.substr(start, k - start), line_no, static_cast<int>(start - pos) + 1});
      }
    }
    lines.push_back(std::move(tokens));
    ++line_no;
    if (end == text.size()) break;
    pos = end + 1;
  }
  return lines;
}

std::optional<long long> parse_integer(std::string_view s) {
  long long v = 0;
  const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size()) return std::nullopt;
  return v;
}

std::optional<double> parse_real(std::string_view s) {
  if (!s.empty() && s.front() == '+') s.remove_prefix(1);
  double v = 0.0;
  const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size() || !std::isfinite(v)) return std::nullopt;
  return v;
}

std::string where(const Token& t) {
  return "line " + std::to_string(t.line) + ", column " + std::to_string(t.column);
}

}  // namespace

PrpInstance parse_lolib(std::string_view text) {
  const auto lines = tokenize_lines(text);
  std::size_t header = lines.size();
  long long n = 0;
  for (std::size_t l = 0; l < lines.size(); ++l) {
    if (lines[l].size() != 1) continue;
    if (auto v = parse_integer(lines[l][0].text); v && *v > 0) {
      header = l;
      n = *v;
      break;
    }
  }
  if (header == lines.size()) throw FormatError("LOLIB: no line holding the matrix size n was found");
  if (n > 100000) throw FormatError("LOLIB: matrix size " + std::to_string(n) + " is implausibly large");

  const auto expected = static_cast<std::size_t>(n * n);
  std::vector<double> data;
  data.reserve(expected);
  const Token* last = &lines[header][0];
  for (std::size_t l = header + 1; l < lines.size(); ++l) {
    for (const auto& tok : lines[l]) {
      auto v = parse_real(tok.text);
      if (!v) throw FormatError("LOLIB: non-numeric token '" + std::string(tok.text) + "' at " + where(tok));
      if (data.size() == expected) {
        throw FormatError("LOLIB: more than n*n = " + std::to_string(expected) + " entries; extra token at " +
                          where(tok));
      }
      data.push_back(*v);
      last = &tok;
    }
  }
  if (data.size() != expected) {
    throw FormatError("LOLIB: expected n*n = " + std::to_string(expected) + " entries after the size line, found " +
                      std::to_string(data.size()) + " (input ends after " + where(*last) + ")");
  }
  return PrpInstance(SquareMatrix(static_cast<int>(n), std::move(data)));
}

std::string to_lolib(const PrpInstance& inst, std::string_view name) {
  std::ostringstream out;
  out.precision(17);
  if (!name.empty()) out << name << '\n';
  const int n = inst.size();
  out << n << '\n';
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      if (j) out << ' ';
      out << inst.b(i, j);
    }
    out << '\n';
  }
  return out.str();
}

// ---------------------------------------------------------------------------
// JSON

nlohmann::json instance_to_json(const Instance& inst, std::optional<std::uint64_t> seed) {
  nlohmann::json doc;
  doc["problem"] = std::string(to_string(problem_of(inst)));
  const int n = size_of(inst);
  doc["n"] = n;
  if (seed) doc["seed"] = *seed;
  nlohmann::json data = nlohmann::json::array();
  if (const auto* tsp = std::get_if<TspInstance>(&inst)) {
    for (const auto& c : tsp->coords()) data.push_back({c.x, c.y});
  } else {
    for (int i = 0; i < n; ++i) {
      nlohmann::json row = nlohmann::json::array();
      for (int j = 0; j < n; ++j) row.push_back(edge_weight(inst, i, j));
      data.push_back(std::move(row));
    }
  }
  doc["data"] = std::move(data);
  return doc;
}

Instance instance_from_json(const nlohmann::json& doc) {
  try {
    const Problem problem = parse_problem(doc.at("problem").get<std::string>());
    const int n = doc.at("n").get<int>();
    const auto& data = doc.at("data");
    if (!data.is_array() || static_cast<int>(data.size()) != n) {
      throw FormatError("instance JSON: 'data' must hold " + std::to_string(n) + " rows");
    }
    if (problem == Problem::tsp) {
      std::vector<Point> coords;
      for (const auto& c : data) {
        if (!c.is_array() || c.size() != 2) throw FormatError("instance JSON: TSP coordinates must be [x, y] pairs");
        coords.push_back({c[0].get<double>(), c[1].get<double>()});
      }
      return TspInstance(std::move(coords));
    }
    std::vector<double> flat;
    flat.reserve(static_cast<std::size_t>(n) * n);
    for (const auto& row : data) {
      if (!row.is_array() || static_cast<int>(row.size()) != n) {
        throw FormatError("instance JSON: every matrix row must hold " + std::to_string(n) + " entries");
      }
      for (const auto& v : row) flat.push_back(v.get<double>());
    }
    SquareMatrix m(n, std::move(flat));
    if (problem == Problem::prp) return PrpInstance(std::move(m));
    return GppInstance(std::move(m));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("instance JSON: ") + e.what());
  }
}

Instance read_instance_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open instance file '" + path + "'");
  std::stringstream buffer;
  buffer << in.rdbuf();
  const std::string text = buffer.str();
  const auto first = text.find_first_not_of(" \t\r\n");
  if (first != std::string::npos && text[first] == '{') {
    nlohmann::json doc;
    try {
      doc = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
      throw FormatError("instance file '" + path + "': " + e.what());
    }
    return instance_from_json(doc);
  }
  return parse_lolib(text);
}

void write_instance_file(const std::string& path, const Instance& inst, std::optional<std::uint64_t> seed) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write instance file '" + path + "'");
  out << instance_to_json(inst, seed).dump() << '\n';
}

// ---------------------------------------------------------------------------
// Exact methods

namespace {

template <class Better>
std::pair<Solution, double> best_permutation(int n, Better&& evaluate_and_compare) {
  std::vector<int> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::vector<int> best = order;
  double best_value = std::numeric_limits<double>::quiet_NaN();
  do {
    if (evaluate_and_compare(order, best_value)) best = order;
  } while (std::next_permutation(order.begin(), order.end()));
  return {Permutation(std::move(best)), best_value};
}

std::vector<std::uint8_t> sides_from_mask(unsigned mask, int n) {
  std::vector<std::uint8_t> side(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) side[static_cast<std::size_t>(i)] = (mask >> (n - 1 - i)) & 1U;
  return side;
}

double cut_of_mask(const GppInstance& g, unsigned mask, int n) {
  double total = 0.0;
  for (int i = 0; i < n; ++i) {
    const unsigned si = (mask >> (n - 1 - i)) & 1U;
    for (int j = i + 1; j < n; ++j) {
      if (si != ((mask >> (n - 1 - j)) & 1U)) total += g.b(i, j);
    }
  }
  return total;
}

}  // namespace

std::pair<Solution, double> brute_force_best(const Instance& inst) {
  const int n = size_of(inst);
  switch (problem_of(inst)) {
    case Problem::prp: {
      if (n > kBruteForceMaxPermutation) {
        throw SizeError("brute force limited to n <= " + std::to_string(kBruteForceMaxPermutation));
      }
      const auto& prp = std::get<PrpInstance>(inst);
      return best_permutation(n, [&](const std::vector<int>& order, double& best) {
        double v = 0.0;
        for (int i = 0; i < n - 1; ++i)
          for (int j = i + 1; j < n; ++j) v += prp.b(order[i], order[j]);
        if (std::isnan(best) || v > best) {
          best = v;
          return true;
        }
        return false;
      });
    }
    case Problem::tsp: {
      if (n > kBruteForceMaxPermutation) {
        throw SizeError("brute force limited to n <= " + std::to_string(kBruteForceMaxPermutation));
      }
      const auto& tsp = std::get<TspInstance>(inst);
      return best_permutation(n, [&](const std::vector<int>& order, double& best) {
        double v = 0.0;
        for (int k = 0; k < n; ++k) v += tsp.dist(order[k], order[(k + 1) % n]);
        if (std::isnan(best) || v < best) {
          best = v;
          return true;
        }
        return false;
      });
    }
    case Problem::gpp: {
      if (n > kBruteForceMaxBipartition) {
        throw SizeError("brute force limited to n <= " + std::to_string(kBruteForceMaxBipartition));
      }
      const auto& gpp = std::get<GppInstance>(inst);
      unsigned best_mask = 0;
      double best = std::numeric_limits<double>::infinity();
      for (unsigned mask = 0; mask < (1U << n); ++mask) {
        if (std::popcount(mask) != n / 2) continue;
        const double v = cut_of_mask(gpp, mask, n);
        if (v < best) {
          best = v;
          best_mask = mask;
        }
      }
      return {Bipartition(sides_from_mask(best_mask, n)), best};
    }
  }
  throw ArgumentError("unknown problem");
}

bool exact_optimum_available(const Instance& inst) {
  const int n = size_of(inst);
  switch (problem_of(inst)) {
    case Problem::prp: return n <= 20;
    case Problem::tsp: return n <= 16;
    case Problem::gpp: return n <= 20;
  }
  return false;
}

double exact_optimum(const Instance& inst) {
  if (!exact_optimum_available(inst)) {
    throw SizeError("no exact method for " + std::string(to_string(problem_of(inst))) + " with n = " +
                    std::to_string(size_of(inst)));
  }
  const int n = size_of(inst);
  switch (problem_of(inst)) {
    case Problem::prp: {
      // best[S] = best value of ordering the items of S as a prefix.
      const auto& prp = std::get<PrpInstance>(inst);
      const std::size_t full = std::size_t{1} << n;
      std::vector<double> best(full, -std::numeric_limits<double>::infinity());
      best[0] = 0.0;
      for (std::size_t s = 0; s < full; ++s) {
        if (best[s] == -std::numeric_limits<double>::infinity()) continue;
        for (int k = 0; k < n; ++k) {
          if (s & (std::size_t{1} << k)) continue;
          double gain = 0.0;
          for (int i = 0; i < n; ++i) {
            if (s & (std::size_t{1} << i)) gain += prp.b(i, k);
          }
          auto& slot = best[s | (std::size_t{1} << k)];
          slot = std::max(slot, best[s] + gain);
        }
      }
      return best[full - 1];
    }
    case Problem::tsp: {
      const auto& tsp = std::get<TspInstance>(inst);
      if (n <= 3) return tsp_tour_length(tsp, Permutation::identity(n));
      // Held-Karp with city 0 fixed as the start; subsets over cities 1..n-1.
      const int m = n - 1;
      const std::size_t full = std::size_t{1} << m;
      const double inf = std::numeric_limits<double>::infinity();
      std::vector<double> cost(full * static_cast<std::size_t>(m), inf);
      for (int k = 0; k < m; ++k) cost[(std::size_t{1} << k) * m + k] = tsp.dist(0, k + 1);
      for (std::size_t s = 1; s < full; ++s) {
        for (int last = 0; last < m; ++last) {
          const double c = cost[s * m + last];
          if (!(s & (std::size_t{1} << last)) || c == inf) continue;
          for (int next = 0; next < m; ++next) {
            if (s & (std::size_t{1} << next)) continue;
            auto& slot = cost[(s | (std::size_t{1} << next)) * m + next];
            slot = std::min(slot, c + tsp.dist(last + 1, next + 1));
          }
        }
      }
      double best = inf;
      for (int last = 0; last < m; ++last) best = std::min(best, cost[(full - 1) * m + last] + tsp.dist(last + 1, 0));
      return best;
    }
    case Problem::gpp: {
      const auto& gpp = std::get<GppInstance>(inst);
      double best = std::numeric_limits<double>::infinity();
      // Node 0 is pinned to side 0 (label symmetry).
      for (unsigned mask = 0; mask < (1U << (n - 1)); ++mask) {
        if (std::popcount(mask) != n / 2) continue;
        best = std::min(best, cut_of_mask(gpp, mask, n));
      }
      return best;
    }
  }
  throw ArgumentError("unknown problem");
}

}  // namespace nicopt
