#pragma once

// Diversity over uncertain pairs and zero-cost label augmentation.

#include <algorithm>
#include <map>
#include <span>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "anneal/kmeans.hpp"
#include "anneal/uncertainty.hpp"

namespace anneal {

/// Order-invariant pair vector: (f1 + f2) followed by |f1 - f2|.
struct PairRepr {
  PairKey key;
  std::vector<double> vector;
};

template <class T>
PairRepr pair_representation(std::span<const T> f1, std::span<const T> f2, PairKey key = {}) {
  if (f1.size() != f2.size()) throw DimensionMismatch("pair members have different feature sizes");
  PairRepr r{key, std::vector<double>(2 * f1.size())};
  for (std::size_t i = 0; i < f1.size(); ++i) {
    r.vector[i] = static_cast<double>(f1[i]) + static_cast<double>(f2[i]);
    r.vector[f1.size() + i] = std::abs(static_cast<double>(f1[i]) - static_cast<double>(f2[i]));
  }
  return r;
}

template <class T>
PairRepr pair_representation(const Embedding<T>& emb, PairKey key) {
  const auto n = static_cast<ItemIndex>(emb.features().cols());
  if (key.lo >= n || key.hi >= n) throw Error("pair references an unknown item");
  return pair_representation(emb.feature(key.lo), emb.feature(key.hi), key);
}

struct SelectedPair {
  PairKey key;
  double value = 0.0;
  double score = 0.0;
  int cluster = -1;  // -1: not chosen as a cluster representative
};

/// Pairs awaiting oracle labels plus the audit trail of how they were chosen.
struct SelectionBatch {
  int iteration = 0;
  std::vector<SelectedPair> pairs;
  std::size_t candidates = 0;      // size of the uncertain set that was diversified
  std::size_t empty_clusters = 0;
  std::size_t filled = 0;          // slots filled by global uncertainty order
};

inline std::vector<SelectedPair> as_selected(std::span<const UncertaintyScore> s) {
  std::vector<SelectedPair> out;
  out.reserve(s.size());
  for (const auto& u : s) out.push_back({u.key, u.value, u.score, -1});
  return out;
}

/// Clusters the uncertain pairs (columns of `points`, same order) into h
/// groups and keeps the most uncertain member of each non-empty group.
/// Missing slots are filled with the globally most uncertain leftovers.
inline SelectionBatch diversify_points(std::span<const UncertaintyScore> uncertain, const Eigen::MatrixXd& points,
                                       std::size_t h, std::uint64_t seed, int max_iters = 100) {
  if (uncertain.size() < h)
    throw SelectionExhausted("only " + std::to_string(uncertain.size()) + " uncertain pairs for a batch of " +
                             std::to_string(h));
  if (static_cast<std::size_t>(points.cols()) != uncertain.size()) throw DimensionMismatch("one point per uncertain pair required");
  SelectionBatch batch;
  batch.candidates = uncertain.size();
  if (h == 0) return batch;

  const auto cm = kmeans(points, static_cast<int>(h), seed, max_iters);
  batch.empty_clusters = cm.empty_clusters;

  std::vector<int> best(h, -1);
  for (std::size_t i = 0; i < uncertain.size(); ++i) {
    const auto c = static_cast<std::size_t>(cm.assignment[i]);
    if (best[c] < 0 || more_uncertain(uncertain[i], uncertain[static_cast<std::size_t>(best[c])])) best[c] = static_cast<int>(i);
  }
  std::vector<bool> taken(uncertain.size(), false);
  for (std::size_t c = 0; c < h; ++c) {
    if (best[c] < 0) continue;
    const auto& u = uncertain[static_cast<std::size_t>(best[c])];
    batch.pairs.push_back({u.key, u.value, u.score, static_cast<int>(c)});
    taken[static_cast<std::size_t>(best[c])] = true;
  }
  if (batch.pairs.size() < h) {
    std::vector<std::size_t> rest;
    for (std::size_t i = 0; i < uncertain.size(); ++i)
      if (!taken[i]) rest.push_back(i);
    std::sort(rest.begin(), rest.end(), [&](std::size_t a, std::size_t b) { return more_uncertain(uncertain[a], uncertain[b]); });
    for (std::size_t i = 0; batch.pairs.size() < h; ++i) {
      const auto& u = uncertain[rest[i]];
      batch.pairs.push_back({u.key, u.value, u.score, -1});
      ++batch.filled;
    }
  }
  std::sort(batch.pairs.begin(), batch.pairs.end(), [](const SelectedPair& a, const SelectedPair& b) {
    if (a.score != b.score) return a.score < b.score;
    return a.key < b.key;
  });
  return batch;
}

template <class T>
SelectionBatch diversify(std::span<const UncertaintyScore> uncertain, std::size_t h, const Embedding<T>& emb,
                         std::uint64_t seed, int max_iters = 100) {
  if (uncertain.size() < h)
    throw SelectionExhausted("only " + std::to_string(uncertain.size()) + " uncertain pairs for a batch of " +
                             std::to_string(h));
  const auto dim = 2 * emb.features().rows();
  Eigen::MatrixXd points(dim, static_cast<Eigen::Index>(uncertain.size()));
  for (std::size_t i = 0; i < uncertain.size(); ++i) {
    const auto r = pair_representation(emb, uncertain[i].key);
    points.col(static_cast<Eigen::Index>(i)) = Eigen::Map<const Eigen::VectorXd>(r.vector.data(), dim);
  }
  return diversify_points(uncertain, points, h, seed, max_iters);
}

// ---------------------------------------------------------------------------
// Transitive augmentation

struct TransitiveResult {
  std::vector<LabeledPair> derived;  // sorted by key, provenance transitive, zero bit cost
  std::vector<PairKey> conflicts;    // keys implied with both labels, dropped
};

/// Label implied for the pair of outer items of two pairs sharing one item.
inline std::optional<Label> transitive_rule(Label a, Label b) {
  if (a == Label::similar && b == Label::similar) return Label::similar;
  if (a == Label::dissimilar && b == Label::dissimilar) return std::nullopt;
  return Label::dissimilar;
}

/// One transitive step. Each derivation combines a freshly labeled pair with
/// another oracle-labeled pair (existing, or new when `within_batch`) that
/// shares exactly one item. Previously derived pairs are never used as
/// sources, and keys that are already labeled are skipped.
inline TransitiveResult transitive_step(std::span<const LabeledPair> new_pairs, std::span<const LabeledPair> training_set,
                                        int iteration, bool within_batch = true) {
  std::unordered_set<PairKey, PairKeyHash> labeled;
  for (const auto& p : training_set) labeled.insert(p.key);
  for (const auto& p : new_pairs) labeled.insert(p.key);

  struct Edge {
    ItemIndex other;
    Label label;
    std::size_t source;  // index into new_pairs, or npos for existing pairs
  };
  constexpr std::size_t npos = static_cast<std::size_t>(-1);
  std::unordered_map<ItemIndex, std::vector<Edge>> adj;
  for (const auto& p : training_set) {
    if (p.provenance == Provenance::transitive) continue;
    adj[p.key.lo].push_back({p.key.hi, p.label, npos});
    adj[p.key.hi].push_back({p.key.lo, p.label, npos});
  }
  if (within_batch) {
    for (std::size_t i = 0; i < new_pairs.size(); ++i) {
      const auto& p = new_pairs[i];
      adj[p.key.lo].push_back({p.key.hi, p.label, i});
      adj[p.key.hi].push_back({p.key.lo, p.label, i});
    }
  }

  std::map<PairKey, std::pair<bool, bool>> implied;  // key -> (saw dissimilar, saw similar)
  for (std::size_t i = 0; i < new_pairs.size(); ++i) {
    const auto& p = new_pairs[i];
    for (ItemIndex shared : {p.key.lo, p.key.hi}) {
      const ItemIndex outer = p.key.other(shared);
      auto it = adj.find(shared);
      if (it == adj.end()) continue;
      for (const auto& e : it->second) {
        if (e.source == i || e.other == outer) continue;
        const auto lab = transitive_rule(p.label, e.label);
        if (!lab) continue;
        const PairKey k(outer, e.other);
        if (labeled.contains(k)) continue;
        auto& seen = implied[k];
        (*lab == Label::similar ? seen.second : seen.first) = true;
      }
    }
  }

  TransitiveResult r;
  for (const auto& [k, seen] : implied) {
    if (seen.first && seen.second) {
      r.conflicts.push_back(k);
      continue;
    }
    r.derived.push_back(LabeledPair::make(k, label_from_bool(seen.second), Provenance::transitive, iteration));
  }
  return r;
}

}  // namespace anneal
