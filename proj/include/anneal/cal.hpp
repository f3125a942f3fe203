#pragma once

// Classification-based baseline: single images are labeled with one of C
// classes at log2(C) bits each. A softmax head on the projection head is
// trained with cross-entropy; least-confident items are clustered in the
// projected space and the most uncertain member of each cluster is queried.

#include <cmath>

#include "anneal/loop.hpp"

namespace anneal {

inline double bits_per_class_label(std::size_t num_classes) {
  if (num_classes < 2) throw ConfigError("class labels need at least two classes");
  return std::log2(static_cast<double>(num_classes));
}

/// Items affordable after `granted` cumulative bits: floor(granted / log2 C).
/// The remainder of each iteration carries into the next.
inline std::size_t affordable_items(double granted, std::size_t num_classes) {
  const double q = granted / bits_per_class_label(num_classes);
  return static_cast<std::size_t>(std::floor(q + 1e-9 * std::max(1.0, q)));
}

struct CalRecord {
  int iteration = 0;
  double bits = 0.0;
  std::size_t labeled = 0;
  std::optional<double> map;
  std::vector<ItemIndex> batch;  // queried items, selection order
  std::vector<double> uncertainty;
  std::size_t candidates = 0;
};

struct CALState {
  std::uint64_t seed = 0;
  std::vector<ItemIndex> labeled;   // append order
  std::vector<int> labels;          // oracle class labels, same order
  std::vector<ItemIndex> unlabeled; // sorted train items
  std::size_t seed_items = 0;
  std::size_t queried = 0;          // items bought by iterations
  double granted = 0.0;             // cumulative iteration budget in bits
  double bits_spent = 0.0;
  int iteration = 0;
  std::vector<CalRecord> history;
};

/// Seed items labeled with their class; shared with the pair strategies so
/// that both start from the same images.
inline CALState init_cal(const Dataset& ds, std::span<const ItemIndex> seed_images, const ClassOracle& oracle,
                         std::uint64_t seed) {
  CALState s;
  s.seed = seed;
  std::unordered_set<ItemIndex> taken;
  for (auto i : seed_images) {
    if (!taken.insert(i).second) continue;
    s.labeled.push_back(i);
    s.labels.push_back(oracle.class_of(i));
  }
  for (auto i : ds.indices_in(Split::train))
    if (!taken.contains(i)) s.unlabeled.push_back(i);
  s.seed_items = s.labeled.size();
  s.bits_spent = static_cast<double>(s.labeled.size()) * bits_per_class_label(ds.num_classes());
  return s;
}

inline ModelShape cal_shape(const LoopConfig& cfg, const Dataset& ds) {
  return ModelShape{.input = ds.dim(), .hidden = cfg.hidden, .output = cfg.output, .softmax_classes = ds.num_classes()};
}

inline MetricModel<float> fit_cal_model(const CALState& s, const LoopConfig& cfg, const Dataset& ds) {
  MetricModel<float> m(cal_shape(cfg, ds));
  m.initialize(iteration_seed(s.seed, "cal-model-init", s.iteration));
  auto tc = cfg.train;
  tc.seed = iteration_seed(s.seed, "cal-train", s.iteration);
  train_items(m, std::span<const ItemIndex>(s.labeled), std::span<const int>(s.labels), ds, tc);
  return m;
}

struct ItemSelection {
  std::vector<ItemIndex> candidates;  // top p*q by least confidence, selection order
  std::vector<ItemIndex> items;
  std::vector<double> uncertainty;    // 1 - max posterior of each selected item
};

/// Least-confidence candidates, clustered into q groups in the projected
/// space; the most uncertain member of each group is kept. Ties break by
/// item index.
inline ItemSelection select_items(const MetricModel<float>& model, const Embedding<float>& emb,
                                  std::span<const ItemIndex> unlabeled, std::size_t q, std::size_t p_factor,
                                  std::uint64_t seed, int kmeans_iters) {
  ItemSelection out;
  if (q == 0) return out;
  Mat<float> f(emb.features().rows(), static_cast<Eigen::Index>(unlabeled.size()));
  for (std::size_t j = 0; j < unlabeled.size(); ++j)
    f.col(static_cast<Eigen::Index>(j)) = emb.features().col(static_cast<Eigen::Index>(unlabeled[j]));
  const auto post = softmax_posteriors(model, f);
  // The selection helpers order pair scores ascending; the item travels as
  // key.lo and the score is the max posterior.
  std::vector<UncertaintyScore> u;
  u.reserve(unlabeled.size());
  for (std::size_t j = 0; j < unlabeled.size(); ++j) {
    const double top = static_cast<double>(post.col(static_cast<Eigen::Index>(j)).maxCoeff());
    u.push_back({PairKey(unlabeled[j], unlabeled[j] + 1), 1.0 - top, top});
  }
  const auto cand = top_p_uncertain(u, p_factor * q);
  Eigen::MatrixXd pts(emb.features().rows(), static_cast<Eigen::Index>(cand.size()));
  for (std::size_t j = 0; j < cand.size(); ++j) {
    out.candidates.push_back(cand[j].key.lo);
    pts.col(static_cast<Eigen::Index>(j)) = emb.features().col(static_cast<Eigen::Index>(cand[j].key.lo)).cast<double>();
  }
  const auto batch = diversify_points(std::span<const UncertaintyScore>(cand), pts, q, seed, kmeans_iters);
  for (const auto& p : batch.pairs) {
    out.items.push_back(p.key.lo);
    out.uncertainty.push_back(p.value);
  }
  return out;
}

/// One CAL round with `budget` fresh bits.
inline void run_cal_iteration(CALState& s, double budget, const ClassOracle& oracle, const LoopConfig& cfg,
                              const Dataset& ds) {
  if (!(budget >= 0.0)) throw ConfigError("bit budget must be non-negative");
  const auto C = ds.num_classes();
  const std::size_t q = affordable_items(s.granted + budget, C) - s.queried;
  if (s.unlabeled.size() < q)
    throw SelectionExhausted("only " + std::to_string(s.unlabeled.size()) + " unlabeled items for " + std::to_string(q));

  CalRecord r;
  r.iteration = s.iteration;
  r.bits = s.bits_spent;
  r.labeled = s.labeled.size();
  const auto model = fit_cal_model(s, cfg, ds);
  const Embedding<float> emb(model, ds);
  r.map = evaluate_point(emb, ds, cfg);

  if (q > 0) {
    const auto sel = select_items(model, emb, s.unlabeled, q, cfg.p_factor,
                                  iteration_seed(s.seed, "cal-kmeans", s.iteration), cfg.kmeans_iters);
    r.candidates = sel.candidates.size();
    r.batch = sel.items;
    r.uncertainty = sel.uncertainty;
    std::unordered_set<ItemIndex> chosen(sel.items.begin(), sel.items.end());
    for (auto i : sel.items) {
      s.labeled.push_back(i);
      s.labels.push_back(oracle.class_of(i));
    }
    std::erase_if(s.unlabeled, [&](ItemIndex i) { return chosen.contains(i); });
  }
  s.granted += budget;
  s.queried += q;
  s.bits_spent = static_cast<double>(s.labeled.size()) * bits_per_class_label(C);
  s.history.push_back(std::move(r));
  ++s.iteration;
}

inline void finalize_cal(CALState& s, const LoopConfig& cfg, const Dataset& ds) {
  CalRecord r;
  r.iteration = s.iteration;
  r.bits = s.bits_spent;
  r.labeled = s.labeled.size();
  const auto model = fit_cal_model(s, cfg, ds);
  r.map = evaluate_point(Embedding<float>(model, ds), ds, cfg);
  s.history.push_back(std::move(r));
}

/// CAL run with the same seed images as the pair strategies and h bits per iteration.
inline CALState run_cal(const Dataset& ds, const LoopConfig& cfg, const SimulatedOracle& oracle, std::uint64_t seed) {
  cfg.validate();
  const auto images = sample_seed_images(ds, cfg, seed);
  auto s = init_cal(ds, images, oracle, seed);
  for (int t = 0; t < cfg.iterations; ++t) run_cal_iteration(s, static_cast<double>(cfg.h), oracle, cfg, ds);
  finalize_cal(s, cfg, ds);
  return s;
}

}  // namespace anneal
