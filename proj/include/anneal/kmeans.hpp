#pragma once

#include <Eigen/Dense>

#include <limits>
#include <random>
#include <vector>

#include "anneal/error.hpp"
#include "anneal/random.hpp"

namespace anneal {

struct ClusterModel {
  Eigen::MatrixXd centroids;         // dim x k
  std::vector<int> assignment;       // per point, in [0, k)
  std::vector<std::size_t> sizes;    // members per cluster
  double sse = 0.0;                  // within-cluster sum of squared distances
  std::vector<double> sse_history;   // SSE after seeding and after every Lloyd iteration
  int iterations = 0;
  bool converged = false;
  bool monotone = true;              // SSE never increased between iterations
  std::size_t empty_clusters = 0;
  std::uint64_t seed = 0;
};

namespace detail {

inline double sq_dist(const Eigen::MatrixXd& x, Eigen::Index i, const Eigen::MatrixXd& c, Eigen::Index j) {
  return (x.col(i) - c.col(j)).squaredNorm();
}

inline double total_sse(const Eigen::MatrixXd& x, const Eigen::MatrixXd& c, const std::vector<int>& a) {
  double s = 0.0;
  for (Eigen::Index i = 0; i < x.cols(); ++i) s += sq_dist(x, i, c, a[static_cast<std::size_t>(i)]);
  return s;
}

}  // namespace detail

/// Lloyd's algorithm with k-means++ seeding over the columns of `points`.
///
/// A point moves only to a strictly closer centroid, which keeps the SSE
/// sequence non-increasing in floating point as well. Empty clusters keep
/// their previous centroid. When there are fewer distinct points than k the
/// surplus seeds duplicate an existing centroid and stay empty.
inline ClusterModel kmeans(const Eigen::MatrixXd& points, int k, std::uint64_t seed, int max_iters = 100) {
  const Eigen::Index n = points.cols();
  if (k < 1) throw ConfigError("k must be >= 1");
  if (n < 1) throw ConfigError("k-means needs at least one point");
  if (max_iters < 0) throw ConfigError("max_iters must be non-negative");

  ClusterModel cm;
  cm.seed = seed;
  cm.centroids.resize(points.rows(), k);
  Rng rng(derive_seed(seed, {stream_tag("kmeans++")}));

  // k-means++ seeding.
  std::vector<double> d2(static_cast<std::size_t>(n), std::numeric_limits<double>::infinity());
  Eigen::Index first = static_cast<Eigen::Index>(uniform_index(rng, static_cast<std::size_t>(n)));
  cm.centroids.col(0) = points.col(first);
  for (int j = 1; j < k; ++j) {
    double total = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      d2[static_cast<std::size_t>(i)] = std::min(d2[static_cast<std::size_t>(i)], detail::sq_dist(points, i, cm.centroids, j - 1));
      total += d2[static_cast<std::size_t>(i)];
    }
    Eigen::Index pick = first;
    if (total > 0.0) {
      double r = std::uniform_real_distribution<double>(0.0, total)(rng);
      pick = -1;
      for (Eigen::Index i = 0; i < n; ++i) {
        const double w = d2[static_cast<std::size_t>(i)];
        if (w <= 0.0) continue;
        pick = i;
        if (r < w) break;
        r -= w;
      }
    }
    cm.centroids.col(j) = points.col(pick);
  }

  // Initial assignment: nearest centroid, ties to the lowest index.
  cm.assignment.assign(static_cast<std::size_t>(n), 0);
  for (Eigen::Index i = 0; i < n; ++i) {
    double best = detail::sq_dist(points, i, cm.centroids, 0);
    for (int j = 1; j < k; ++j) {
      const double d = detail::sq_dist(points, i, cm.centroids, j);
      if (d < best) {
        best = d;
        cm.assignment[static_cast<std::size_t>(i)] = j;
      }
    }
  }
  cm.sse_history.push_back(detail::total_sse(points, cm.centroids, cm.assignment));

  for (int it = 0; it < max_iters; ++it) {
    // Update step.
    Eigen::MatrixXd sums = Eigen::MatrixXd::Zero(points.rows(), k);
    std::vector<std::size_t> counts(static_cast<std::size_t>(k), 0);
    for (Eigen::Index i = 0; i < n; ++i) {
      const int a = cm.assignment[static_cast<std::size_t>(i)];
      sums.col(a) += points.col(i);
      ++counts[static_cast<std::size_t>(a)];
    }
    for (int j = 0; j < k; ++j)
      if (counts[static_cast<std::size_t>(j)] > 0) cm.centroids.col(j) = sums.col(j) / static_cast<double>(counts[static_cast<std::size_t>(j)]);

    // Assignment step.
    bool changed = false;
    for (Eigen::Index i = 0; i < n; ++i) {
      int& a = cm.assignment[static_cast<std::size_t>(i)];
      double best = detail::sq_dist(points, i, cm.centroids, a);
      for (int j = 0; j < k; ++j) {
        if (j == a) continue;
        const double d = detail::sq_dist(points, i, cm.centroids, j);
        if (d < best) {
          best = d;
          a = j;
          changed = true;
        }
      }
    }
    ++cm.iterations;
    const double sse = detail::total_sse(points, cm.centroids, cm.assignment);
    if (sse > cm.sse_history.back()) cm.monotone = false;
    cm.sse_history.push_back(sse);
    if (!changed) {
      cm.converged = true;
      break;
    }
  }

  cm.sse = cm.sse_history.back();
  cm.sizes.assign(static_cast<std::size_t>(k), 0);
  for (int a : cm.assignment) ++cm.sizes[static_cast<std::size_t>(a)];
  for (auto s : cm.sizes) cm.empty_clusters += (s == 0);
  return cm;
}

}  // namespace anneal
