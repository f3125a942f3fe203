#pragma once

#include <limits>
#include <map>
#include <random>
#include <set>

#include "anneal/kmeans.hpp"

namespace anneal::test {

inline Eigen::MatrixXd random_points(std::mt19937_64& rng, int dim, int n) {
  std::normal_distribution<double> g(0, 1);
  Eigen::MatrixXd p(dim, n);
  for (int j = 0; j < n; ++j)
    for (int d = 0; d < dim; ++d) p(d, j) = g(rng);
  return p;
}

/// Exhaustive minimum-SSE split of the columns into two non-empty groups.
inline std::vector<int> best_two_partition(const Eigen::MatrixXd& p) {
  const int n = static_cast<int>(p.cols());
  double best = std::numeric_limits<double>::infinity();
  std::vector<int> arg;
  for (unsigned mask = 1; mask < (1u << n) - 1; ++mask) {
    if (mask & 1u) continue;  // fix point 0 in group 0 to skip mirror images
    double sse = 0;
    for (int g = 0; g < 2; ++g) {
      Eigen::VectorXd mean = Eigen::VectorXd::Zero(p.rows());
      int cnt = 0;
      for (int i = 0; i < n; ++i)
        if (((mask >> i) & 1u) == static_cast<unsigned>(g)) {
          mean += p.col(i);
          ++cnt;
        }
      mean /= cnt;
      for (int i = 0; i < n; ++i)
        if (((mask >> i) & 1u) == static_cast<unsigned>(g)) sse += (p.col(i) - mean).squaredNorm();
    }
    if (sse < best) {
      best = sse;
      arg.assign(static_cast<std::size_t>(n), 0);
      for (int i = 0; i < n; ++i) arg[static_cast<std::size_t>(i)] = static_cast<int>((mask >> i) & 1u);
    }
  }
  return arg;
}

inline bool same_partition(const std::vector<int>& a, const std::vector<int>& b) {
  std::map<int, int> m;
  for (std::size_t i = 0; i < a.size(); ++i) {
    auto [it, fresh] = m.emplace(a[i], b[i]);
    if (!fresh && it->second != b[i]) return false;
  }
  std::set<int> images;
  for (auto& [k, v] : m) images.insert(v);
  return images.size() == m.size();
}

}  // namespace anneal::test
