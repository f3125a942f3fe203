#pragma once

// Pair uncertainty. The metric-guided estimator places a threshold between
// the similarity distributions of labeled similar and dissimilar pairs and
// scores a candidate by its distance to it; the classifier-guided estimator
// does the same with the pair classifier's posterior and a fixed 0.5.

#include <algorithm>
#include <cmath>
#include <ostream>
#include <span>
#include <vector>

#include "anneal/metric.hpp"

namespace anneal {

struct ThresholdStats {
  double mu_sim = 0.0;
  double sigma_sim = 0.0;
  double mu_dsim = 0.0;
  double sigma_dsim = 0.0;
  std::size_t S = 0;
  std::size_t D = 0;
  double alpha = 0.0;
  double lambda = 0.0;
};

inline double threshold_alpha(double mu_sim, double sigma_sim, double mu_dsim, double sigma_dsim, double lambda) {
  return (mu_sim + mu_dsim - lambda * (sigma_sim - sigma_dsim)) / 2.0;
}

/// Population statistics (divisor S resp. D) of the two similarity samples.
inline ThresholdStats threshold_from_similarities(std::span<const double> similar, std::span<const double> dissimilar,
                                                  double lambda) {
  if (similar.empty() || dissimilar.empty()) {
    throw NoThreshold("threshold needs at least one similar and one dissimilar training pair (got S=" +
                      std::to_string(similar.size()) + ", D=" + std::to_string(dissimilar.size()) +
                      "); the initial training set must contain both labels");
  }
  auto moments = [](std::span<const double> x) {
    double sum = 0.0;
    for (double v : x) sum += v;
    const double mu = sum / static_cast<double>(x.size());
    double ss = 0.0;
    for (double v : x) ss += (v - mu) * (v - mu);
    return std::pair{mu, std::sqrt(ss / static_cast<double>(x.size()))};
  };
  ThresholdStats t;
  std::tie(t.mu_sim, t.sigma_sim) = moments(similar);
  std::tie(t.mu_dsim, t.sigma_dsim) = moments(dissimilar);
  t.S = similar.size();
  t.D = dissimilar.size();
  t.lambda = lambda;
  t.alpha = threshold_alpha(t.mu_sim, t.sigma_sim, t.mu_dsim, t.sigma_dsim, lambda);
  return t;
}

template <class T>
ThresholdStats estimate_threshold(const Embedding<T>& emb, std::span<const LabeledPair> labeled, double lambda,
                                  bool include_transitive = true) {
  std::vector<double> sim, dis;
  for (const auto& p : labeled) {
    if (!include_transitive && p.provenance == Provenance::transitive) continue;
    (p.label == Label::similar ? sim : dis).push_back(static_cast<double>(emb.similarity(p.key)));
  }
  return threshold_from_similarities(sim, dis, lambda);
}

template <class T>
ThresholdStats estimate_threshold(const MetricModel<T>& model, std::span<const LabeledPair> labeled, const Dataset& ds,
                                  double lambda, bool include_transitive = true) {
  return estimate_threshold(Embedding<T>(model, ds), labeled, lambda, include_transitive);
}

struct UncertaintyScore {
  PairKey key;
  double value = 0.0;  // similarity (metric-guided) or posterior (classifier-guided)
  double score = 0.0;  // |value - alpha|; smaller is more uncertain
};

/// Total selection order: ascending score, then canonical key.
inline bool more_uncertain(const UncertaintyScore& a, const UncertaintyScore& b) {
  if (a.score != b.score) return a.score < b.score;
  return a.key < b.key;
}

template <class T>
std::vector<UncertaintyScore> mgue_scores(const Embedding<T>& emb, std::span<const PairKey> candidates,
                                          const ThresholdStats& stats) {
  std::vector<UncertaintyScore> out;
  out.reserve(candidates.size());
  for (const auto& k : candidates) {
    const double s = static_cast<double>(emb.similarity(k));
    out.push_back({k, s, std::abs(s - stats.alpha)});
  }
  return out;
}

template <class T>
std::vector<UncertaintyScore> mgue_scores(const MetricModel<T>& model, std::span<const PairKey> candidates,
                                          const Dataset& ds, const ThresholdStats& stats) {
  return mgue_scores(Embedding<T>(model, ds), candidates, stats);
}

/// Posterior P(similar | pair) for a single pair, members stacked in canonical key order.
template <class T>
double bcgue_posterior(const MetricModel<T>& model, PairKey key, const Dataset& ds) {
  if (!model.has_classifier()) throw ConfigError("classifier-guided uncertainty requires a pair classifier");
  const auto f_lo = model.project(ds.feature(key.lo));
  const auto f_hi = model.project(ds.feature(key.hi));
  Mat<T> stacked(f_lo.size() + f_hi.size(), 1);
  stacked.col(0) << f_lo, f_hi;
  return sigmoid(static_cast<double>(model.classifier_logits(stacked)(0, 0)));
}

/// Batched posteriors. The first classifier layer is split into its lo and
/// hi halves and applied once per item, so each pair costs only the upper layers.
template <class T>
std::vector<double> bcgue_posteriors(const MetricModel<T>& model, const Embedding<T>& emb,
                                     std::span<const PairKey> candidates) {
  if (!model.has_classifier()) throw ConfigError("classifier-guided uncertainty requires a pair classifier");
  const auto c = model.shape().classifier_layer();
  const auto c1 = model.layer(c), c2 = model.layer(c + 1), c3 = model.layer(c + 2);
  const auto out_dim = emb.features().rows();
  const Mat<T> lo_part = (c1.W.leftCols(out_dim) * emb.features()).colwise() + c1.b;
  const Mat<T> hi_part = c1.W.rightCols(out_dim) * emb.features();

  std::vector<double> post(candidates.size());
  constexpr std::size_t chunk = 4096;
  Mat<T> r1(c1.W.rows(), static_cast<Eigen::Index>(chunk));
  for (std::size_t start = 0; start < candidates.size(); start += chunk) {
    const std::size_t n = std::min(chunk, candidates.size() - start);
    const auto cols = static_cast<Eigen::Index>(n);
    for (std::size_t j = 0; j < n; ++j) {
      const auto& k = candidates[start + j];
      r1.col(static_cast<Eigen::Index>(j)) = (lo_part.col(k.lo) + hi_part.col(k.hi)).cwiseMax(T(0));
    }
    const Mat<T> r2 = ((c2.W * r1.leftCols(cols)).colwise() + c2.b).cwiseMax(T(0));
    const Mat<T> z = (c3.W * r2).colwise() + c3.b;
    for (std::size_t j = 0; j < n; ++j) post[start + j] = sigmoid(static_cast<double>(z(0, static_cast<Eigen::Index>(j))));
  }
  return post;
}

template <class T>
std::vector<UncertaintyScore> bcgue_scores(const MetricModel<T>& model, const Embedding<T>& emb,
                                           std::span<const PairKey> candidates) {
  const auto post = bcgue_posteriors(model, emb, candidates);
  std::vector<UncertaintyScore> out;
  out.reserve(candidates.size());
  for (std::size_t i = 0; i < candidates.size(); ++i) out.push_back({candidates[i], post[i], std::abs(post[i] - 0.5)});
  return out;
}

template <class T>
std::vector<UncertaintyScore> bcgue_scores(const MetricModel<T>& model, std::span<const PairKey> candidates,
                                           const Dataset& ds) {
  return bcgue_scores(model, Embedding<T>(model, ds), candidates);
}

/// The min(p, n) most uncertain candidates in selection order.
inline std::vector<UncertaintyScore> top_p_uncertain(std::span<const UncertaintyScore> scores, std::size_t p) {
  if (p < 1) throw ConfigError("p must be >= 1");
  std::vector<UncertaintyScore> out(scores.begin(), scores.end());
  const std::size_t n = std::min(p, out.size());
  std::partial_sort(out.begin(), out.begin() + static_cast<std::ptrdiff_t>(n), out.end(), more_uncertain);
  out.resize(n);
  return out;
}

/// Tab-separated audit records: lo id, hi id, value, score.
inline void write_scores(std::ostream& os, std::span<const UncertaintyScore> scores, const Dataset& ds) {
  char buf[64];
  for (const auto& s : scores) {
    std::snprintf(buf, sizeof buf, "\t%.9g\t%.9g\n", s.value, s.score);
    os << ds.item(s.key.lo).id << '\t' << ds.item(s.key.hi).id << buf;
  }
}

}  // namespace anneal
