#include <gtest/gtest.h>

#include <algorithm>

#include "anneal/uncertainty.hpp"
#include "test_util.hpp"

using namespace anneal;

TEST(Threshold, EqualSpreadGivesMidMean) {
  const std::vector<double> sim{0.8}, dis{0.2};
  for (double lambda : {0.0, 1.0, 3.0, 17.0}) {
    const auto t = threshold_from_similarities(sim, dis, lambda);
    EXPECT_EQ(t.sigma_sim, 0.0);
    EXPECT_EQ(t.sigma_dsim, 0.0);
    EXPECT_EQ(t.alpha, 0.5);
    EXPECT_EQ(t.S, 1u);
    EXPECT_EQ(t.D, 1u);
  }
}

TEST(Threshold, AuthoredStatistics) {
  // (0.9 + 0.1 - 3 * (0.10 - 0.05)) / 2, evaluated by hand: (1.0 - 0.15) / 2
  EXPECT_NEAR(threshold_alpha(0.9, 0.10, 0.1, 0.05, 3.0), 0.425, 1e-12);
  EXPECT_EQ(threshold_alpha(0.9, 0.2, 0.1, 0.4, 0.0), 0.5);
}

TEST(Threshold, PopulationMoments) {
  // similar sims {0.6, 0.8, 1.0}: mean 0.8, population variance 0.08/3
  const std::vector<double> sim{0.6, 0.8, 1.0}, dis{-0.1, 0.1};
  const auto t = threshold_from_similarities(sim, dis, 2.0);
  EXPECT_NEAR(t.mu_sim, 0.8, 1e-15);
  EXPECT_NEAR(t.sigma_sim, std::sqrt(0.08 / 3.0), 1e-15);
  EXPECT_NEAR(t.mu_dsim, 0.0, 1e-15);
  EXPECT_NEAR(t.sigma_dsim, 0.1, 1e-15);
  EXPECT_NEAR(t.alpha, (0.8 + 0.0 - 2.0 * (std::sqrt(0.08 / 3.0) - 0.1)) / 2.0, 1e-15);
}

TEST(Threshold, MissingLabelIsExplicitError) {
  const std::vector<double> sim{0.8}, none;
  EXPECT_THROW(threshold_from_similarities(sim, none, 1.0), NoThreshold);
  EXPECT_THROW(threshold_from_similarities(none, sim, 1.0), NoThreshold);
}

TEST(Threshold, LambdaMonotonicity) {
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> u(-1, 1), s(0, 0.5), l(0, 6);
  for (int t = 0; t < 100; ++t) {
    const double ms = u(rng), md = u(rng), ss = s(rng), sd = s(rng);
    const double l1 = l(rng), l2 = l1 + 0.5;
    const double a1 = threshold_alpha(ms, ss, md, sd, l1), a2 = threshold_alpha(ms, ss, md, sd, l2);
    if (ss > sd) {
      EXPECT_LT(a2, a1);
    }
    if (ss < sd) {
      EXPECT_GT(a2, a1);
    }
  }
}

TEST(Threshold, IncludesTransitivePairsUnlessAsked) {
  const auto ds = test::random_dataset({0, 0, 1, 1}, 3, 2, 1);
  MetricModel<double> m(ModelShape{.input = 3, .hidden = 4, .output = 3});
  m.initialize(1);
  const Embedding<double> e(m, ds);
  std::vector<LabeledPair> pairs{LabeledPair::make({0, 1}, Label::similar, Provenance::seed, 0),
                                 LabeledPair::make({0, 2}, Label::dissimilar, Provenance::seed, 0),
                                 LabeledPair::make({1, 2}, Label::dissimilar, Provenance::transitive, 0)};
  EXPECT_EQ(estimate_threshold(e, std::span<const LabeledPair>(pairs), 1.0).D, 2u);
  EXPECT_EQ(estimate_threshold(e, std::span<const LabeledPair>(pairs), 1.0, false).D, 1u);
}

TEST(Mgue, ScoreIsDistanceToThreshold) {
  ThresholdStats st;
  st.alpha = 0.5;
  // Identity-like 2D embedding: construct features so similarity is known.
  std::vector<Item> items;
  std::vector<float> f;
  auto add = [&](float x, float y) {
    items.push_back({"q" + std::to_string(items.size()), 0, Split::train, std::nullopt});
    f.push_back(x);
    f.push_back(y);
  };
  add(1, 0);
  add(0.55f, std::sqrt(1 - 0.55f * 0.55f));
  Dataset ds(std::move(items), 1, 2, std::move(f));
  // Head computing the identity on the positive quadrant: W1 = I, W2 = I, zero biases.
  MetricModel<double> m(ModelShape{.input = 2, .hidden = 2, .output = 2});
  auto p = m.parameters();
  p[0] = 1; p[3] = 1;    // layer 1 weights (column-major 2x2), biases p[4], p[5]
  p[6] = 1; p[9] = 1;    // layer 2 weights, biases p[10], p[11]
  const std::vector<PairKey> keys{{0, 1}};
  const auto s = mgue_scores(m, keys, ds, st);
  ASSERT_EQ(s.size(), 1u);
  EXPECT_NEAR(s[0].value, 0.55, 1e-6);
  EXPECT_NEAR(s[0].score, 0.05, 1e-6);
}

TEST(Mgue, TieBrokenByCanonicalKey) {
  const std::vector<UncertaintyScore> scores{{{0, 3}, 0.9, std::abs(0.9 - 0.5)},
                                             {{0, 1}, 0.1, std::abs(0.1 - 0.5)},
                                             {{0, 2}, 0.48, std::abs(0.48 - 0.5)}};
  // 0.48 first; |0.1-0.5| and |0.9-0.5| compare as computed, equal ones fall back to key order.
  const auto top = top_p_uncertain(scores, 3);
  EXPECT_EQ(top[0].key, PairKey(0, 2));
  std::vector<UncertaintyScore> brute(scores.begin(), scores.end());
  std::sort(brute.begin(), brute.end(), more_uncertain);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(top[i].key, brute[i].key);
  const std::vector<UncertaintyScore> tied{{{0, 3}, 0.9, 0.4}, {{0, 1}, 0.1, 0.4}};
  EXPECT_EQ(top_p_uncertain(tied, 2)[0].key, PairKey(0, 1));
}

TEST(TopP, SelectionMatchesFullSort) {
  std::mt19937_64 rng(2);
  for (int t = 0; t < 100; ++t) {
    std::vector<UncertaintyScore> s;
    const int n = 1 + static_cast<int>(rng() % 40);
    for (int i = 0; i < n; ++i) {
      const auto a = static_cast<ItemIndex>(rng() % 30);
      auto b = static_cast<ItemIndex>(rng() % 30);
      if (a == b) b = a + 1;
      s.push_back({{a, b}, 0.0, static_cast<double>(rng() % 5) / 4.0});
    }
    const std::size_t p = 1 + rng() % 50;
    const auto top = top_p_uncertain(s, p);
    auto brute = s;
    std::stable_sort(brute.begin(), brute.end(), more_uncertain);
    ASSERT_EQ(top.size(), std::min<std::size_t>(p, s.size()));
    for (std::size_t i = 0; i < top.size(); ++i) {
      EXPECT_EQ(top[i].key, brute[i].key);
      EXPECT_EQ(top[i].score, brute[i].score);
    }
  }
}

TEST(TopP, SmallAndLargeP) {
  std::vector<UncertaintyScore> s;
  for (ItemIndex i = 0; i < 10; ++i) s.push_back({{i, 20}, 0.0, 0.1 * (10 - i)});
  const auto top3 = top_p_uncertain(s, 3);
  EXPECT_EQ(top3.size(), 3u);
  EXPECT_EQ(top3[0].key, PairKey(9, 20));
  EXPECT_EQ(top_p_uncertain(s, 100).size(), 10u);
  EXPECT_THROW(top_p_uncertain(s, 0), ConfigError);
  std::vector<UncertaintyScore> eq;
  for (ItemIndex i = 10; i > 0; --i) eq.push_back({{i, 30}, 0.0, 0.25});
  const auto e3 = top_p_uncertain(eq, 3);
  EXPECT_EQ(e3[0].key, PairKey(1, 30));
  EXPECT_EQ(e3[2].key, PairKey(3, 30));
  EXPECT_EQ(4u * 336u, top_p_uncertain(std::vector<UncertaintyScore>(2000, {{0, 1}, 0, 0}), 4 * 336).size());
}

TEST(Bcgue, ZeroClassifierGivesHalf) {
  const auto ds = test::random_dataset({0, 1, 0, 1}, 3, 2, 1);
  MetricModel<double> m(ModelShape{.input = 3, .hidden = 4, .output = 3, .pair_classifier = std::array<std::size_t, 2>{4, 2}});
  m.initialize(1);
  // zero the classifier block
  const auto head = ModelShape{.input = 3, .hidden = 4, .output = 3}.parameter_count();
  auto p = m.parameters();
  std::fill(p.begin() + static_cast<std::ptrdiff_t>(head), p.end(), 0.0);
  EXPECT_EQ(bcgue_posterior(m, {0, 2}, ds), 0.5);
  const std::vector<PairKey> keys{{0, 1}, {1, 3}, {2, 3}};
  for (const auto& s : bcgue_scores(m, keys, ds)) {
    EXPECT_EQ(s.value, 0.5);
    EXPECT_EQ(s.score, 0.0);
  }
}

TEST(Bcgue, BatchedPosteriorMatchesSingle) {
  const auto ds = test::random_dataset({0, 1, 0, 1, 0}, 3, 2, 5);
  MetricModel<double> m(ModelShape{.input = 3, .hidden = 6, .output = 4, .pair_classifier = std::array<std::size_t, 2>{5, 3}});
  m.initialize(7);
  std::vector<PairKey> keys;
  for (ItemIndex a = 0; a < 5; ++a)
    for (ItemIndex b = a + 1; b < 5; ++b) keys.emplace_back(a, b);
  const auto batched = bcgue_scores(m, keys, ds);
  for (std::size_t i = 0; i < keys.size(); ++i) {
    EXPECT_NEAR(batched[i].value, bcgue_posterior(m, keys[i], ds), 1e-12);
    EXPECT_NEAR(batched[i].score, std::abs(batched[i].value - 0.5), 1e-15);
  }
}

TEST(Bcgue, RequiresClassifier) {
  const auto ds = test::random_dataset({0, 1}, 3, 2, 1);
  MetricModel<double> m(ModelShape{.input = 3, .hidden = 4, .output = 3});
  EXPECT_THROW(bcgue_posterior(m, {0, 1}, ds), ConfigError);
}

TEST(Bcgue, LogisticProperties) {
  EXPECT_EQ(sigmoid(0.0), 0.5);
  double prev = 0.0;
  for (double z = -20; z <= 20; z += 0.5) {
    EXPECT_GT(sigmoid(z), prev);
    prev = sigmoid(z);
  }
  EXPECT_NEAR(sigmoid(40.0), 1.0, 1e-15);
  // symmetric score about 0.5
  EXPECT_NEAR(std::abs(0.9 - 0.5), 0.4, 1e-15);
  EXPECT_EQ(std::abs(0.1 - 0.5), std::abs(0.9 - 0.5));
}
