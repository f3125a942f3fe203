#pragma once

// Brute-force retrieval and mAP@k, coded from the definition with the loop
// reference model: full sort of the archive, precision counted per prefix.

#include <algorithm>
#include <optional>
#include <random>

#include "anneal/eval.hpp"
#include "reference_model.hpp"
#include "test_util.hpp"

namespace anneal::test {

struct MapInstance {
  Dataset ds;
  MetricModel<double> model;
  std::vector<ItemIndex> queries;
  std::vector<ItemIndex> archive;
  std::size_t k = 5;
};

/// Up to 12 archive items, up to 4 classes, a handful of queries.
inline MapInstance random_map_instance(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const int classes = 2 + static_cast<int>(rng() % 3);
  const int n_archive = 3 + static_cast<int>(rng() % 10);
  const int n_query = 1 + static_cast<int>(rng() % 5);
  std::vector<int> cls;
  std::vector<Split> splits;
  for (int i = 0; i < n_query + n_archive; ++i) {
    cls.push_back(static_cast<int>(rng() % static_cast<unsigned>(classes)));
    splits.push_back(i < n_query ? Split::val : Split::test);
  }
  const std::size_t dim = 2 + rng() % 4;
  MapInstance inst{random_dataset(cls, dim, classes, seed * 31 + 7, splits),
                   MetricModel<double>(ModelShape{.input = dim, .hidden = 6, .output = 4}),
                   {}, {}, 1 + rng() % static_cast<unsigned>(n_archive)};
  inst.model.initialize(seed + 100);
  for (int i = 0; i < n_query + n_archive; ++i) (i < n_query ? inst.queries : inst.archive).push_back(static_cast<ItemIndex>(i));
  return inst;
}

inline std::vector<double> ref_features(const MetricModel<double>& m, const Dataset& ds, ItemIndex i) {
  std::vector<double> x(ds.feature(i).begin(), ds.feature(i).end());
  std::vector<double> p(m.parameters().begin(), m.parameters().end());
  return ref_project(m.shape(), p, x);
}

inline std::vector<ItemIndex> brute_force_ranking(const MetricModel<double>& m, const Dataset& ds, ItemIndex q,
                                                  const std::vector<ItemIndex>& archive) {
  const auto fq = ref_features(m, ds, q);
  std::vector<std::pair<double, ItemIndex>> all;
  for (auto a : archive) all.emplace_back(ref_cosine(fq, ref_features(m, ds, a)), a);
  std::sort(all.begin(), all.end(), [](auto& x, auto& y) { return x.first != y.first ? x.first > y.first : x.second < y.second; });
  std::vector<ItemIndex> out;
  for (auto& [s, a] : all) out.push_back(a);
  return out;
}

inline std::optional<double> brute_force_map(const MapInstance& inst, ApNormalization norm) {
  double total = 0.0;
  int included = 0;
  for (auto q : inst.queries) {
    const int qc = inst.ds.item(q).class_label;
    const auto ranking = brute_force_ranking(inst.model, inst.ds, q, inst.archive);
    std::size_t relevant = 0;
    for (auto a : inst.archive) relevant += inst.ds.item(a).class_label == qc;
    const std::size_t r = norm == ApNormalization::min_k ? std::min(relevant, inst.k) : relevant;
    if (r == 0) continue;
    double sum = 0.0;
    for (std::size_t j = 1; j <= inst.k; ++j) {
      const bool rel_j = inst.ds.item(ranking[j - 1]).class_label == qc;
      if (!rel_j) continue;
      std::size_t hits = 0;
      for (std::size_t t = 0; t < j; ++t) hits += inst.ds.item(ranking[t]).class_label == qc;
      sum += static_cast<double>(hits) / static_cast<double>(j);
    }
    total += sum / static_cast<double>(r);
    ++included;
  }
  if (included == 0) return std::nullopt;
  return total / included;
}

}  // namespace anneal::test
