#pragma once

// Pair-based active-learning loop: seed set construction, candidate pool,
// one propose/label/apply round per iteration and the per-iteration history.
//
// An iteration is split in two halves so that a human oracle can answer
// asynchronously: propose() trains a fresh model on the current training
// set, evaluates it and selects a batch; apply_labels() books the answers,
// adds transitive pairs and shrinks the pool. The model is a pure function
// of (training set, run seed, iteration), so it is never stored.

#include <cmath>
#include <unordered_set>

#include "anneal/eval.hpp"
#include "anneal/oracle.hpp"
#include "anneal/selection.hpp"
#include "anneal/train.hpp"
#include "anneal/uncertainty.hpp"

namespace anneal {

enum class Strategy { mgue, bcgue, random, mgue_nodiv, bcgue_nodiv, cal };

inline std::string_view to_string(Strategy s) {
  switch (s) {
    case Strategy::mgue: return "mgue";
    case Strategy::bcgue: return "bcgue";
    case Strategy::random: return "random";
    case Strategy::mgue_nodiv: return "mgue-nodiv";
    case Strategy::bcgue_nodiv: return "bcgue-nodiv";
    case Strategy::cal: return "cal";
  }
  return "?";
}

inline Strategy parse_strategy(std::string_view s) {
  for (auto v : {Strategy::mgue, Strategy::bcgue, Strategy::random, Strategy::mgue_nodiv, Strategy::bcgue_nodiv, Strategy::cal})
    if (s == to_string(v)) return v;
  if (s == "mgue_nodiv") return Strategy::mgue_nodiv;
  if (s == "bcgue_nodiv") return Strategy::bcgue_nodiv;
  throw ConfigError("unknown strategy '" + std::string(s) + "'");
}

inline bool uses_pair_classifier(Strategy s) { return s == Strategy::bcgue || s == Strategy::bcgue_nodiv; }
inline bool uses_threshold(Strategy s) { return s == Strategy::mgue || s == Strategy::mgue_nodiv; }
inline bool diversified(Strategy s) { return s == Strategy::mgue || s == Strategy::bcgue || s == Strategy::cal; }

struct LoopConfig {
  Strategy strategy = Strategy::mgue;
  int iterations = 5;
  std::size_t h = 50;
  std::size_t p_factor = 4;
  double lambda = 3.0;
  double seed_fraction = 0.05;
  int n_similar = 4;
  int n_dissimilar = 4;
  int max_resamples = 1000;
  std::size_t pool_cap = 2'000'000;
  bool transitive = true;
  bool transitive_within_batch = true;
  bool threshold_includes_transitive = true;
  std::size_t eval_k = 5;
  ApNormalization ap = ApNormalization::min_k;
  std::size_t hidden = 512;
  std::size_t output = 256;
  std::array<std::size_t, 2> classifier{256, 64};
  int kmeans_iters = 100;
  TrainConfig train;

  void validate() const {
    if (iterations < 0) throw ConfigError("iterations must be >= 0");
    if (h < 1) throw ConfigError("h must be >= 1");
    if (p_factor < 1) throw ConfigError("p_factor must be >= 1");
    if (!(seed_fraction > 0.0 && seed_fraction <= 1.0)) throw ConfigError("seed_fraction must lie in (0, 1]");
    if (n_similar < 0 || n_dissimilar < 0 || n_similar + n_dissimilar == 0)
      throw ConfigError("per-image seed pair counts must be non-negative and not both zero");
    if (pool_cap < 1) throw ConfigError("pool_cap must be >= 1");
    if (eval_k < 1) throw ConfigError("eval_k must be >= 1");
    if (hidden < 1 || output < 1 || classifier[0] < 1 || classifier[1] < 1) throw ConfigError("layer sizes must be >= 1");
    if (kmeans_iters < 1) throw ConfigError("kmeans_iters must be >= 1");
    train.validate();
  }

  ModelShape pair_shape(std::size_t input) const {
    ModelShape s{.input = input, .hidden = hidden, .output = output};
    if (uses_pair_classifier(strategy)) s.pair_classifier = classifier;
    return s;
  }

  bool operator==(const LoopConfig&) const = default;
};

/// One evaluation point plus the batch chosen from it. The last record of a
/// finished run carries an empty batch.
struct IterationRecord {
  int iteration = 0;
  double bits = 0.0;
  std::size_t training_size = 0;
  std::size_t pool_size = 0;
  std::optional<double> map;
  std::optional<ThresholdStats> threshold;
  SelectionBatch batch;
  std::vector<Label> labels;  // answers for batch.pairs, same order
  std::size_t transitive_count = 0;
  std::size_t conflicts = 0;
};

struct ALState {
  std::uint64_t seed = 0;
  std::vector<ItemIndex> seed_images;
  std::vector<LabeledPair> training_set;  // append order
  std::vector<PairKey> pool;              // sorted, disjoint from training_set
  double bits_spent = 0.0;
  int iteration = 0;                      // completed label rounds
  std::vector<IterationRecord> history;
};

inline double ledger_bits(std::span<const LabeledPair> pairs) {
  double b = 0.0;
  for (const auto& p : pairs) b += p.bit_cost;
  return b;
}

// ---------------------------------------------------------------------------
// Candidate pool

/// All unordered pairs of train items not in `labeled`, or a seeded uniform
/// subsample of `cap` pairs (before removing labeled keys) when there are more.
inline std::vector<PairKey> candidate_pool(const Dataset& ds, std::span<const LabeledPair> labeled, std::size_t cap,
                                           std::uint64_t seed) {
  const auto train = ds.indices_in(Split::train);
  const std::uint64_t n = train.size();
  const std::uint64_t total = n < 2 ? 0 : n * (n - 1) / 2;
  std::unordered_set<PairKey, PairKeyHash> skip;
  for (const auto& p : labeled) skip.insert(p.key);

  std::vector<PairKey> pool;
  if (total <= cap) {
    pool.reserve(total);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j) {
        const PairKey k(train[i], train[j]);
        if (!skip.contains(k)) pool.push_back(k);
      }
  } else {
    // Floyd's sampling of `cap` linear pair indices.
    Rng rng(derive_seed(seed, {stream_tag("pool")}));
    std::unordered_set<std::uint64_t> chosen;
    chosen.reserve(cap);
    for (std::uint64_t j = total - cap; j < total; ++j) {
      const std::uint64_t t = std::uniform_int_distribution<std::uint64_t>(0, j)(rng);
      chosen.insert(chosen.contains(t) ? j : t);
    }
    std::vector<std::uint64_t> lin(chosen.begin(), chosen.end());
    std::sort(lin.begin(), lin.end());
    // row i of the strict upper triangle starts at i*n - i*(i+1)/2
    auto row_start = [n](std::uint64_t i) { return i * n - i * (i + 1) / 2; };
    std::uint64_t i = 0;
    for (auto x : lin) {
      while (row_start(i + 1) <= x) ++i;
      const std::uint64_t j = i + 1 + (x - row_start(i));
      const PairKey k(train[i], train[j]);
      if (!skip.contains(k)) pool.push_back(k);
    }
  }
  std::sort(pool.begin(), pool.end());
  return pool;
}

inline void remove_from_pool(std::vector<PairKey>& pool, const std::unordered_set<PairKey, PairKeyHash>& keys) {
  std::erase_if(pool, [&](const PairKey& k) { return keys.contains(k); });
}

// ---------------------------------------------------------------------------
// Seed set

/// Images drawn for the seed set: ceil(fraction * |train|) train items, each
/// with enough same-class and other-class partners; images lacking them are
/// replaced by the next draw.
inline std::vector<ItemIndex> sample_seed_images(const Dataset& ds, const LoopConfig& cfg, std::uint64_t seed) {
  auto train = ds.indices_in(Split::train);
  if (train.empty()) throw ConfigError("train split is empty");
  const auto want = static_cast<std::size_t>(std::ceil(cfg.seed_fraction * static_cast<double>(train.size()) - 1e-9));
  std::vector<std::size_t> per_class(ds.num_classes(), 0);
  for (auto i : train) ++per_class[static_cast<std::size_t>(ds.item(i).class_label)];

  Rng rng(derive_seed(seed, {stream_tag("seed-images")}));
  std::shuffle(train.begin(), train.end(), rng);
  std::vector<ItemIndex> out;
  int rejected = 0;
  for (auto i : train) {
    if (out.size() == want) break;
    const auto same = per_class[static_cast<std::size_t>(ds.item(i).class_label)] - 1;
    const auto other = train.size() - same - 1;
    if (same < static_cast<std::size_t>(cfg.n_similar) || other < static_cast<std::size_t>(cfg.n_dissimilar)) {
      if (++rejected > cfg.max_resamples) break;
      continue;
    }
    out.push_back(i);
  }
  if (out.size() < want)
    throw ConfigError("could not draw " + std::to_string(want) + " seed images with " + std::to_string(cfg.n_similar) +
                      " same-class and " + std::to_string(cfg.n_dissimilar) + " other-class train partners");
  return out;
}

/// Seed pairs from class membership, each answered by the oracle and billed
/// one bit; duplicates keep their first occurrence.
inline ALState init_training_set(const Dataset& ds, const LoopConfig& cfg, const PairOracle& oracle, std::uint64_t seed) {
  cfg.validate();
  ALState s;
  s.seed = seed;
  s.seed_images = sample_seed_images(ds, cfg, seed);
  const auto train = ds.indices_in(Split::train);
  std::vector<std::vector<ItemIndex>> by_class(ds.num_classes());
  for (auto i : train) by_class[static_cast<std::size_t>(ds.item(i).class_label)].push_back(i);

  Rng rng(derive_seed(seed, {stream_tag("seed-pairs")}));
  auto draw = [&](std::vector<ItemIndex> from, int count) {
    for (int t = 0; t < count; ++t) {
      const auto j = static_cast<std::size_t>(t) + uniform_index(rng, from.size() - static_cast<std::size_t>(t));
      std::swap(from[static_cast<std::size_t>(t)], from[j]);
    }
    from.resize(static_cast<std::size_t>(count));
    return from;
  };

  std::unordered_set<PairKey, PairKeyHash> seen;
  for (auto img : s.seed_images) {
    const int c = ds.item(img).class_label;
    std::vector<ItemIndex> same, other;
    for (auto i : by_class[static_cast<std::size_t>(c)])
      if (i != img) same.push_back(i);
    for (auto i : train)
      if (ds.item(i).class_label != c) other.push_back(i);
    for (const auto& group : {draw(same, cfg.n_similar), draw(other, cfg.n_dissimilar)})
      for (auto partner : group) {
        const PairKey k(img, partner);
        if (!seen.insert(k).second) continue;
        s.training_set.push_back(LabeledPair::make(k, oracle.label(k), Provenance::seed, 0));
      }
  }
  s.bits_spent = ledger_bits(s.training_set);
  s.pool = candidate_pool(ds, s.training_set, cfg.pool_cap, seed);
  return s;
}

// ---------------------------------------------------------------------------
// Iteration halves

inline std::uint64_t iteration_seed(std::uint64_t run_seed, const char* stream, int iteration) {
  return derive_seed(run_seed, {stream_tag(stream), static_cast<std::uint64_t>(iteration)});
}

/// Fresh model trained on the current training set.
inline MetricModel<float> fit_pair_model(const ALState& s, const LoopConfig& cfg, const Dataset& ds,
                                         TrainHistory* hist = nullptr) {
  MetricModel<float> m(cfg.pair_shape(ds.dim()));
  m.initialize(iteration_seed(s.seed, "model-init", s.iteration));
  auto tc = cfg.train;
  tc.seed = iteration_seed(s.seed, "train", s.iteration);
  auto h = train(m, std::span<const LabeledPair>(s.training_set), ds, tc);
  if (hist) *hist = std::move(h);
  return m;
}

inline std::optional<double> evaluate_point(const Embedding<float>& emb, const Dataset& ds, const LoopConfig& cfg) {
  try {
    return evaluate_split_protocol(emb, ds, cfg.eval_k, cfg.ap).map;
  } catch (const UndefinedMetric&) {
    return std::nullopt;
  }
}

inline IterationRecord point_record(const ALState& s) {
  IterationRecord r;
  r.iteration = s.iteration;
  r.bits = s.bits_spent;
  r.training_size = s.training_set.size();
  r.pool_size = s.pool.size();
  return r;
}

/// Trains, evaluates and selects the next batch of h pairs from the pool.
inline IterationRecord propose(const ALState& s, const LoopConfig& cfg, const Dataset& ds) {
  if (cfg.strategy == Strategy::cal) throw ConfigError("the classification baseline does not select pairs");
  if (s.pool.size() < cfg.h)
    throw SelectionExhausted("candidate pool holds " + std::to_string(s.pool.size()) + " pairs, batch needs " +
                             std::to_string(cfg.h));
  IterationRecord r = point_record(s);
  const auto model = fit_pair_model(s, cfg, ds);
  const Embedding<float> emb(model, ds);
  r.map = evaluate_point(emb, ds, cfg);
  r.batch.iteration = s.iteration;

  if (cfg.strategy == Strategy::random) {
    Rng rng(iteration_seed(s.seed, "random", s.iteration));
    std::vector<std::size_t> idx(s.pool.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    for (std::size_t t = 0; t < cfg.h; ++t) std::swap(idx[t], idx[t + uniform_index(rng, idx.size() - t)]);
    for (std::size_t t = 0; t < cfg.h; ++t) {
      const auto k = s.pool[idx[t]];
      r.batch.pairs.push_back({k, static_cast<double>(emb.similarity(k)), 0.0, -1});
    }
    r.batch.candidates = s.pool.size();
    return r;
  }

  std::vector<UncertaintyScore> scores;
  if (uses_threshold(cfg.strategy)) {
    r.threshold = estimate_threshold(emb, std::span<const LabeledPair>(s.training_set), cfg.lambda,
                                     cfg.threshold_includes_transitive);
    scores = mgue_scores(emb, std::span<const PairKey>(s.pool), *r.threshold);
  } else {
    scores = bcgue_scores(model, emb, std::span<const PairKey>(s.pool));
  }

  if (diversified(cfg.strategy)) {
    const auto uncertain = top_p_uncertain(scores, cfg.p_factor * cfg.h);
    r.batch = diversify(std::span<const UncertaintyScore>(uncertain), cfg.h, emb,
                        iteration_seed(s.seed, "kmeans", s.iteration), cfg.kmeans_iters);
    r.batch.iteration = s.iteration;
  } else {
    const auto top = top_p_uncertain(scores, cfg.h);
    r.batch.pairs = as_selected(top);
    r.batch.candidates = scores.size();
  }
  return r;
}

/// Books the oracle answers for a proposed batch: one bit per pair, then a
/// single transitive step, then the pool loses every newly labeled key.
inline void apply_labels(ALState& s, const LoopConfig& cfg, IterationRecord rec, std::span<const Label> labels,
                         Provenance provenance) {
  if (provenance == Provenance::transitive || provenance == Provenance::seed)
    throw ConfigError("batch labels must come from an oracle");
  if (labels.size() != rec.batch.pairs.size())
    throw DimensionMismatch("got " + std::to_string(labels.size()) + " labels for a batch of " +
                            std::to_string(rec.batch.pairs.size()));
  if (rec.iteration != s.iteration) throw StateError("batch belongs to iteration " + std::to_string(rec.iteration));
  const int round = s.iteration + 1;
  std::vector<LabeledPair> fresh;
  std::unordered_set<PairKey, PairKeyHash> touched;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const auto& k = rec.batch.pairs[i].key;
    if (!std::binary_search(s.pool.begin(), s.pool.end(), k)) throw StateError("batch pair is not in the candidate pool");
    if (!touched.insert(k).second) throw StateError("batch lists a pair twice");
    fresh.push_back(LabeledPair::make(k, labels[i], provenance, round));
  }
  TransitiveResult tr;
  if (cfg.transitive)
    tr = transitive_step(std::span<const LabeledPair>(fresh), std::span<const LabeledPair>(s.training_set), round,
                         cfg.transitive_within_batch);
  s.training_set.insert(s.training_set.end(), fresh.begin(), fresh.end());
  s.training_set.insert(s.training_set.end(), tr.derived.begin(), tr.derived.end());
  for (const auto& d : tr.derived) touched.insert(d.key);
  remove_from_pool(s.pool, touched);
  s.bits_spent = ledger_bits(s.training_set);

  rec.labels.assign(labels.begin(), labels.end());
  rec.transitive_count = tr.derived.size();
  rec.conflicts = tr.conflicts.size();
  s.history.push_back(std::move(rec));
  s.iteration = round;
}

/// Final evaluation point after the last label round.
inline void finalize(ALState& s, const LoopConfig& cfg, const Dataset& ds) {
  IterationRecord r = point_record(s);
  const auto model = fit_pair_model(s, cfg, ds);
  const Embedding<float> emb(model, ds);
  r.map = evaluate_point(emb, ds, cfg);
  if (uses_threshold(cfg.strategy)) {
    try {
      r.threshold = estimate_threshold(emb, std::span<const LabeledPair>(s.training_set), cfg.lambda,
                                       cfg.threshold_includes_transitive);
    } catch (const NoThreshold&) {
    }
  }
  r.batch.iteration = s.iteration;
  s.history.push_back(std::move(r));
}

inline std::vector<Label> ask(const PairOracle& oracle, const SelectionBatch& batch) {
  std::vector<Label> out;
  out.reserve(batch.pairs.size());
  for (const auto& p : batch.pairs) out.push_back(oracle.label(p.key));
  return out;
}

inline Provenance provenance_of(const PairOracle& oracle) {
  return oracle.mode() == OracleMode::simulated ? Provenance::simulated : Provenance::human;
}

inline void run_iteration(ALState& s, const LoopConfig& cfg, const Dataset& ds, const PairOracle& oracle) {
  auto rec = propose(s, cfg, ds);
  const auto labels = ask(oracle, rec.batch);
  apply_labels(s, cfg, std::move(rec), labels, provenance_of(oracle));
}

/// Seed set, cfg.iterations rounds and the final point.
inline ALState run_pair_strategy(const Dataset& ds, const LoopConfig& cfg, const PairOracle& oracle, std::uint64_t seed) {
  auto s = init_training_set(ds, cfg, oracle, seed);
  for (int t = 0; t < cfg.iterations; ++t) run_iteration(s, cfg, ds, oracle);
  finalize(s, cfg, ds);
  return s;
}

}  // namespace anneal
