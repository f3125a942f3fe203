#pragma once

// Exact-search retrieval and mean average precision at k. Queries come from
// the validation split, the archive is the test split, and an archive item
// is relevant when it shares the query's class.

#include <algorithm>
#include <cstdio>
#include <optional>
#include <ostream>
#include <span>
#include <vector>

#include "anneal/metric.hpp"

namespace anneal {

/// How r_i (the AP normalizer) is counted: min(relevant in archive, k), or the raw archive count.
enum class ApNormalization { min_k, raw };

inline std::string_view to_string(ApNormalization n) { return n == ApNormalization::min_k ? "min" : "raw"; }
inline ApNormalization parse_ap_normalization(std::string_view s) {
  if (s == "min") return ApNormalization::min_k;
  if (s == "raw") return ApNormalization::raw;
  throw ConfigError("unknown AP normalization '" + std::string(s) + "'");
}

struct RetrievalResult {
  ItemIndex query = 0;
  std::vector<ItemIndex> ranked;       // top k, descending similarity, ties by index
  std::vector<std::uint8_t> relevance; // per ranked position
  std::size_t relevant_in_archive = 0;
  std::optional<double> average_precision;  // empty when the query has no relevant item
};

/// (1/r) * sum_j Prec(j) * rel(j); empty for r == 0.
inline std::optional<double> average_precision(std::span<const std::uint8_t> relevance, std::size_t r) {
  if (r == 0) return std::nullopt;
  double hits = 0.0, sum = 0.0;
  for (std::size_t j = 0; j < relevance.size(); ++j) {
    if (!relevance[j]) continue;
    hits += 1.0;
    sum += hits / static_cast<double>(j + 1);
  }
  return sum / static_cast<double>(r);
}

template <class T>
RetrievalResult retrieve(const Embedding<T>& emb, const Dataset& ds, ItemIndex query, std::span<const ItemIndex> archive,
                         std::size_t k, ApNormalization norm = ApNormalization::min_k) {
  if (archive.empty()) throw Error("retrieval against an empty archive");
  if (k < 1 || k > archive.size())
    throw ConfigError("k=" + std::to_string(k) + " must lie in [1, " + std::to_string(archive.size()) + "]");

  std::vector<std::pair<double, ItemIndex>> scored;
  scored.reserve(archive.size());
  for (ItemIndex a : archive) scored.emplace_back(static_cast<double>(emb.similarity(query, a)), a);
  std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(k), scored.end(),
                    [](const auto& x, const auto& y) { return x.first != y.first ? x.first > y.first : x.second < y.second; });

  RetrievalResult r;
  r.query = query;
  const int qc = ds.item(query).class_label;
  for (ItemIndex a : archive) r.relevant_in_archive += ds.item(a).class_label == qc;
  for (std::size_t j = 0; j < k; ++j) {
    r.ranked.push_back(scored[j].second);
    r.relevance.push_back(ds.item(scored[j].second).class_label == qc);
  }
  const std::size_t denom = norm == ApNormalization::min_k ? std::min(r.relevant_in_archive, k) : r.relevant_in_archive;
  r.average_precision = average_precision(r.relevance, denom);
  return r;
}

template <class T>
RetrievalResult retrieve(const MetricModel<T>& model, const Dataset& ds, ItemIndex query, std::span<const ItemIndex> archive,
                         std::size_t k, ApNormalization norm = ApNormalization::min_k) {
  return retrieve(Embedding<T>(model, ds), ds, query, archive, k, norm);
}

struct MapResult {
  double map = 0.0;
  std::size_t included = 0;
  std::size_t excluded = 0;  // queries without any relevant archive item
  std::vector<RetrievalResult> per_query;
};

template <class T>
MapResult map_at_k(const Embedding<T>& emb, const Dataset& ds, std::span<const ItemIndex> queries,
                   std::span<const ItemIndex> archive, std::size_t k, ApNormalization norm = ApNormalization::min_k) {
  if (queries.empty()) throw Error("mAP needs at least one query");
  MapResult m;
  double sum = 0.0;
  for (ItemIndex q : queries) {
    auto r = retrieve(emb, ds, q, archive, k, norm);
    if (r.average_precision) {
      sum += *r.average_precision;
      ++m.included;
    } else {
      ++m.excluded;
    }
    m.per_query.push_back(std::move(r));
  }
  if (m.included == 0) throw UndefinedMetric("mAP undefined: no query has a relevant archive item");
  m.map = sum / static_cast<double>(m.included);
  return m;
}

template <class T>
MapResult map_at_k(const MetricModel<T>& model, const Dataset& ds, std::span<const ItemIndex> queries,
                   std::span<const ItemIndex> archive, std::size_t k, ApNormalization norm = ApNormalization::min_k) {
  return map_at_k(Embedding<T>(model, ds), ds, queries, archive, k, norm);
}

/// Validation queries against the test archive.
template <class T>
MapResult evaluate_split_protocol(const Embedding<T>& emb, const Dataset& ds, std::size_t k,
                                  ApNormalization norm = ApNormalization::min_k) {
  const auto queries = ds.indices_in(Split::val);
  const auto archive = ds.indices_in(Split::test);
  return map_at_k(emb, ds, queries, archive, k, norm);
}

/// One line per query: id, AP (or "excluded"), comma-separated ranked ids.
inline void write_eval_report(std::ostream& os, const MapResult& m, const Dataset& ds) {
  char buf[32];
  for (const auto& r : m.per_query) {
    os << ds.item(r.query).id << '\t';
    if (r.average_precision) {
      std::snprintf(buf, sizeof buf, "%.6f", *r.average_precision);
      os << buf;
    } else {
      os << "excluded";
    }
    os << '\t';
    for (std::size_t j = 0; j < r.ranked.size(); ++j) os << (j ? "," : "") << ds.item(r.ranked[j]).id;
    os << '\n';
  }
}

}  // namespace anneal
