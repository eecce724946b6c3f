#pragma once

// Independent reference implementations. They use the textbook definitions
// directly and share no code with the library.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

namespace oracle {

// sum over positions p < q of b[w[p]][w[q]]
inline double prp_value(const std::vector<std::vector<double>>& b, const std::vector<int>& w) {
  double s = 0.0;
  const std::size_t n = w.size();
  for (std::size_t p = 0; p < n; ++p)
    for (std::size_t q = p + 1; q < n; ++q) s += b[w[p]][w[q]];
  return s;
}

inline double tour_length(const std::vector<double>& x, const std::vector<double>& y, const std::vector<int>& w) {
  double s = 0.0;
  const std::size_t n = w.size();
  for (std::size_t p = 0; p < n; ++p) {
    const int a = w[p], c = w[(p + 1) % n];
    s += std::hypot(x[a] - x[c], y[a] - y[c]);
  }
  return s;
}

inline double cut_weight(const std::vector<std::vector<double>>& b, const std::vector<int>& side) {
  double s = 0.0;
  const std::size_t n = side.size();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j)
      if (side[i] != side[j]) s += b[i][j];
  return s;
}

// Moves the element at position i to position j.
inline std::vector<int> insert_move(std::vector<int> w, int i, int j) {
  const int v = w[i];
  w.erase(w.begin() + i);
  w.insert(w.begin() + j, v);
  return w;
}

inline std::vector<int> swap_move(std::vector<int> w, int i, int j) {
  std::swap(w[i], w[j]);
  return w;
}

inline std::vector<int> reverse_move(std::vector<int> w, int i, int j) {
  if (i > j) std::swap(i, j);
  std::reverse(w.begin() + i, w.begin() + j + 1);
  return w;
}

// Canonical form of a cyclic undirected tour: start at city 0, smaller neighbor second.
inline std::vector<int> canonical_tour(const std::vector<int>& w) {
  const std::size_t n = w.size();
  const auto at = std::find(w.begin(), w.end(), 0) - w.begin();
  std::vector<int> f(n), r(n);
  for (std::size_t k = 0; k < n; ++k) {
    f[k] = w[(at + k) % n];
    r[k] = w[(at + n - k) % n];
  }
  return std::min(f, r);
}

}  // namespace oracle
