#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "anneal/cal.hpp"
#include "anneal/synthetic.hpp"
#include "test_util.hpp"

using namespace anneal;

namespace {

Dataset small_benchmark(std::uint64_t seed = 3, int classes = 4, int per_class = 20) {
  return assign_splits(make_synthetic(classes, per_class, 8, 0.8, seed), SplitFractions{}, seed);
}

LoopConfig small_config(Strategy s = Strategy::mgue) {
  LoopConfig c;
  c.strategy = s;
  c.iterations = 3;
  c.h = 10;
  c.seed_fraction = 0.1;
  c.hidden = 16;
  c.output = 8;
  c.classifier = {8, 4};
  c.train.epochs = 3;
  c.train.batch_size = 32;
  c.train.learning_rate = 1e-3;
  return c;
}

bool disjoint(const ALState& s) {
  for (const auto& p : s.training_set)
    if (std::binary_search(s.pool.begin(), s.pool.end(), p.key)) return false;
  return true;
}

}  // namespace

TEST(SimulatedOracle, ClassEqualityAndPurity) {
  const auto ds = test::random_dataset({0, 0, 1}, 2, 2, 1);
  const SimulatedOracle o(ds);
  EXPECT_EQ(o.label({0, 1}), Label::similar);
  EXPECT_EQ(o.label({1, 2}), Label::dissimilar);
  for (int t = 0; t < 5; ++t) EXPECT_EQ(o.label({2, 0}), Label::dissimilar);
  EXPECT_EQ(o.class_of(2), 1);
}

TEST(InitTrainingSet, OneImageGivesEightPairs) {
  const auto ds = small_benchmark();
  const SimulatedOracle o(ds);
  auto cfg = small_config();
  cfg.seed_fraction = 1e-6;
  const auto s = init_training_set(ds, cfg, o, 5);
  ASSERT_EQ(s.seed_images.size(), 1u);
  ASSERT_EQ(s.training_set.size(), 8u);
  int sim = 0;
  for (const auto& p : s.training_set) {
    EXPECT_TRUE(p.key.contains(s.seed_images[0]));
    EXPECT_EQ(p.provenance, Provenance::seed);
    EXPECT_EQ(p.bit_cost, 1.0);
    EXPECT_EQ(ds.item(p.key.lo).split, Split::train);
    EXPECT_EQ(ds.item(p.key.hi).split, Split::train);
    sim += p.label == Label::similar;
  }
  EXPECT_EQ(sim, 4);
  EXPECT_EQ(s.bits_spent, 8.0);
  const auto n = ds.indices_in(Split::train).size();
  EXPECT_EQ(s.pool.size(), n * (n - 1) / 2 - 8);
  EXPECT_TRUE(disjoint(s));
  EXPECT_TRUE(std::is_sorted(s.pool.begin(), s.pool.end()));
}

TEST(InitTrainingSet, ImageCountAndDedupe) {
  const auto ds = small_benchmark();
  const SimulatedOracle o(ds);
  auto cfg = small_config();
  cfg.seed_fraction = 0.05;
  const auto s = init_training_set(ds, cfg, o, 9);
  const auto n = ds.indices_in(Split::train).size();
  EXPECT_EQ(s.seed_images.size(), static_cast<std::size_t>(std::ceil(0.05 * static_cast<double>(n))));
  EXPECT_LE(s.training_set.size(), 8 * s.seed_images.size());
  std::set<PairKey> keys;
  for (const auto& p : s.training_set) EXPECT_TRUE(keys.insert(p.key).second);
  EXPECT_EQ(s.bits_spent, static_cast<double>(s.training_set.size()));
}

TEST(InitTrainingSet, Deterministic) {
  const auto ds = small_benchmark();
  const SimulatedOracle o(ds);
  const auto a = init_training_set(ds, small_config(), o, 4), b = init_training_set(ds, small_config(), o, 4);
  EXPECT_EQ(a.training_set, b.training_set);
  EXPECT_EQ(a.pool, b.pool);
  const auto c = init_training_set(ds, small_config(), o, 5);
  EXPECT_NE(a.training_set, c.training_set);
}

TEST(InitTrainingSet, SkipsImagesWithoutPartners) {
  // class 2 has a single train item: it can never be a seed image
  std::vector<int> cls;
  for (int i = 0; i < 10; ++i) cls.push_back(i % 2);
  cls.push_back(2);
  const auto ds = test::random_dataset(cls, 3, 3, 2);
  const SimulatedOracle o(ds);
  auto cfg = small_config();
  cfg.seed_fraction = 0.9;
  cfg.n_similar = 2;
  cfg.n_dissimilar = 2;
  const auto s = init_training_set(ds, cfg, o, 1);
  for (auto i : s.seed_images) EXPECT_NE(ds.item(i).class_label, 2);
  cfg.seed_fraction = 1.0;
  EXPECT_THROW(init_training_set(ds, cfg, o, 1), ConfigError);
}

TEST(CandidatePool, CapSubsamplesDeterministically) {
  const auto ds = small_benchmark();
  const auto a = candidate_pool(ds, {}, 100, 7), b = candidate_pool(ds, {}, 100, 7);
  EXPECT_EQ(a.size(), 100u);
  EXPECT_EQ(a, b);
  EXPECT_TRUE(std::is_sorted(a.begin(), a.end()));
  EXPECT_EQ(std::adjacent_find(a.begin(), a.end()), a.end());
  for (const auto& k : a) {
    EXPECT_EQ(ds.item(k.lo).split, Split::train);
    EXPECT_EQ(ds.item(k.hi).split, Split::train);
  }
  EXPECT_NE(a, candidate_pool(ds, {}, 100, 8));
}

TEST(RunIteration, LedgerAndDisjointness) {
  const auto ds = small_benchmark();
  const SimulatedOracle o(ds);
  for (auto strat : {Strategy::mgue, Strategy::bcgue, Strategy::random, Strategy::mgue_nodiv}) {
    const auto cfg = small_config(strat);
    auto s = init_training_set(ds, cfg, o, 2);
    const double seed_bits = s.bits_spent;
    for (int t = 0; t < 3; ++t) {
      const auto before = s.pool.size();
      run_iteration(s, cfg, ds, o);
      EXPECT_TRUE(disjoint(s));
      const auto& rec = s.history.back();
      EXPECT_EQ(rec.batch.pairs.size(), 10u);
      EXPECT_EQ(s.pool.size(), before - 10 - rec.transitive_count);
      EXPECT_EQ(uses_threshold(strat), rec.threshold.has_value());
    }
    std::size_t transitive = 0;
    for (const auto& p : s.training_set) transitive += p.provenance == Provenance::transitive;
    EXPECT_EQ(s.bits_spent, seed_bits + 30.0) << to_string(strat);
    EXPECT_EQ(s.training_set.size(), static_cast<std::size_t>(seed_bits) + 30 + transitive);
  }
}

TEST(RunIteration, RandomCanEmptyThePool) {
  const auto ds = small_benchmark(3, 2, 10);
  const SimulatedOracle o(ds);
  auto cfg = small_config(Strategy::random);
  cfg.transitive = false;
  cfg.eval_k = 2;  // two archive items
  auto s = init_training_set(ds, cfg, o, 1);
  cfg.h = s.pool.size();
  run_iteration(s, cfg, ds, o);
  EXPECT_TRUE(s.pool.empty());
  EXPECT_THROW(propose(s, cfg, ds), SelectionExhausted);
}

TEST(RunIteration, DeterministicHistory) {
  const auto ds = small_benchmark();
  const SimulatedOracle o(ds);
  const auto cfg = small_config(Strategy::mgue);
  const auto a = run_pair_strategy(ds, cfg, o, 11), b = run_pair_strategy(ds, cfg, o, 11);
  ASSERT_EQ(a.history.size(), 4u);
  ASSERT_EQ(b.history.size(), 4u);
  for (std::size_t i = 0; i < a.history.size(); ++i) {
    EXPECT_EQ(a.history[i].map, b.history[i].map);
    ASSERT_EQ(a.history[i].batch.pairs.size(), b.history[i].batch.pairs.size());
    for (std::size_t j = 0; j < a.history[i].batch.pairs.size(); ++j) {
      EXPECT_EQ(a.history[i].batch.pairs[j].key, b.history[i].batch.pairs[j].key);
      EXPECT_EQ(a.history[i].batch.pairs[j].score, b.history[i].batch.pairs[j].score);
    }
  }
  EXPECT_EQ(a.training_set, b.training_set);
  EXPECT_TRUE(a.history.back().batch.pairs.empty());
}

TEST(ApplyLabels, RejectsMismatchedInput) {
  const auto ds = small_benchmark();
  const SimulatedOracle o(ds);
  const auto cfg = small_config(Strategy::random);
  auto s = init_training_set(ds, cfg, o, 2);
  const auto rec = propose(s, cfg, ds);
  std::vector<Label> few(3, Label::similar);
  EXPECT_THROW(apply_labels(s, cfg, rec, few, Provenance::simulated), DimensionMismatch);
  const auto labels = ask(o, rec.batch);
  EXPECT_THROW(apply_labels(s, cfg, rec, labels, Provenance::transitive), ConfigError);
  apply_labels(s, cfg, rec, labels, Provenance::human);
  EXPECT_THROW(apply_labels(s, cfg, rec, labels, Provenance::human), StateError);
}

TEST(CalBudget, CumulativeFloorWithCarry) {
  const double b = std::log2(21.0);
  EXPECT_EQ(affordable_items(336.0, 21), 76u);
  EXPECT_NEAR(76 * b, 333.8, 0.05);
  // cumulative floors: 76, 152, 229 -> per-iteration 76, 76, 77
  EXPECT_EQ(affordable_items(672.0, 21) - affordable_items(336.0, 21), 76u);
  EXPECT_EQ(affordable_items(1008.0, 21) - affordable_items(672.0, 21), 77u);
  EXPECT_EQ(affordable_items(10.0, 2), 10u);
  EXPECT_EQ(affordable_items(8.0, 4), 4u);
}

TEST(Cal, SpendsWholeLabelsOnly) {
  const auto ds = small_benchmark(5, 4, 25);
  const SimulatedOracle o(ds);
  auto cfg = small_config(Strategy::cal);
  cfg.h = 7;  // 7 bits at 2 bits per label: 3, then 4 with the carried bit
  const auto s0 = init_training_set(ds, cfg, o, 3);
  auto s = init_cal(ds, s0.seed_images, o, 3);
  EXPECT_EQ(s.bits_spent, 2.0 * static_cast<double>(s0.seed_images.size()));
  const auto seed_items = s.labeled.size();
  run_cal_iteration(s, 7.0, o, cfg, ds);
  EXPECT_EQ(s.history.back().batch.size(), 3u);
  run_cal_iteration(s, 7.0, o, cfg, ds);
  EXPECT_EQ(s.history.back().batch.size(), 4u);
  EXPECT_EQ(s.labeled.size(), seed_items + 7);
  EXPECT_EQ(s.bits_spent, 2.0 * static_cast<double>(seed_items + 7));
  for (std::size_t i = 0; i < s.labeled.size(); ++i) EXPECT_EQ(s.labels[i], ds.item(s.labeled[i]).class_label);
  std::set<ItemIndex> uniq(s.labeled.begin(), s.labeled.end());
  EXPECT_EQ(uniq.size(), s.labeled.size());
  for (auto i : s.labeled) EXPECT_FALSE(std::binary_search(s.unlabeled.begin(), s.unlabeled.end(), i));
}

TEST(Cal, UniformPosteriorsFallToIndexOrder) {
  const auto ds = small_benchmark(5, 4, 25);
  const SimulatedOracle o(ds);
  const auto cfg = small_config(Strategy::cal);
  auto s = init_cal(ds, std::vector<ItemIndex>{ds.indices_in(Split::train)[0]}, o, 1);
  auto model = fit_cal_model(s, cfg, ds);
  // zero softmax layer -> every posterior is 1/C
  const auto layers = model.shape().layers();
  std::size_t off = 0;
  for (std::size_t l = 0; l < model.shape().softmax_layer(); ++l) off += layers[l].size();
  auto p = model.parameters();
  std::fill(p.begin() + static_cast<std::ptrdiff_t>(off), p.end(), 0.0f);
  const Embedding<float> emb(model, ds);
  const std::size_t q = 3;
  const auto sel = select_items(model, emb, s.unlabeled, q, 4, 9, 50);
  ASSERT_EQ(sel.candidates.size(), 4 * q);
  for (std::size_t j = 0; j < sel.candidates.size(); ++j) EXPECT_EQ(sel.candidates[j], s.unlabeled[j]);
  ASSERT_EQ(sel.items.size(), q);
  for (std::size_t j = 0; j < q; ++j) {
    EXPECT_NEAR(sel.uncertainty[j], 0.75, 1e-6);
    if (j > 0) {
      EXPECT_LT(sel.items[j - 1], sel.items[j]);
    }
  }
}
