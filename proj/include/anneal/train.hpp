#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "anneal/metric.hpp"

namespace anneal {

enum class OptimizerKind { adam, sgd };

inline std::string_view to_string(OptimizerKind k) { return k == OptimizerKind::adam ? "adam" : "sgd"; }
inline OptimizerKind parse_optimizer(std::string_view s) {
  if (s == "adam") return OptimizerKind::adam;
  if (s == "sgd") return OptimizerKind::sgd;
  throw ConfigError("unknown optimizer '" + std::string(s) + "'");
}

struct TrainConfig {
  int epochs = 15;
  int batch_size = 128;
  double learning_rate = 1e-4;
  double margin = 0.5;
  double gamma = 0.5;  // weight of the BCE term when a pair classifier is present
  OptimizerKind optimizer = OptimizerKind::adam;
  std::uint64_t seed = 0;
  bool oversample = true;

  void validate() const {
    if (epochs < 1) throw ConfigError("epochs must be >= 1");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (!(learning_rate >= 0.0)) throw ConfigError("learning_rate must be non-negative");
    if (margin < 0.0 || margin > 1.0) throw ConfigError("margin must lie in [0, 1]");
    if (gamma < 0.0 || gamma > 1.0) throw ConfigError("gamma must lie in [0, 1]");
  }

  bool operator==(const TrainConfig&) const = default;
};

struct EpochLoss {
  int epoch = 0;
  double mean_loss = 0.0;
};

struct TrainHistory {
  std::vector<EpochLoss> epochs;
  std::vector<std::string> warnings;
};

template <class T>
class Adam {
 public:
  Adam(std::size_t n, double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : m_(n, T(0)), v_(n, T(0)), lr_(lr), b1_(beta1), b2_(beta2), eps_(eps) {}

  void step(std::span<T> params, const std::vector<T>& grad) {
    ++t_;
    const double c1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
    const T a = static_cast<T>(lr_ / c1);
    const T b1 = static_cast<T>(b1_), b2 = static_cast<T>(b2_);
    const T rc2 = static_cast<T>(1.0 / std::sqrt(c2));
    for (std::size_t i = 0; i < params.size(); ++i) {
      m_[i] = b1 * m_[i] + (T(1) - b1) * grad[i];
      v_[i] = b2 * v_[i] + (T(1) - b2) * grad[i] * grad[i];
      params[i] -= a * m_[i] / (std::sqrt(v_[i]) * rc2 + static_cast<T>(eps_));
    }
  }

 private:
  std::vector<T> m_, v_;
  double lr_, b1_, b2_, eps_;
  long t_ = 0;
};

template <class T>
void sgd_step(std::span<T> params, const std::vector<T>& grad, double lr) {
  const T a = static_cast<T>(lr);
  for (std::size_t i = 0; i < params.size(); ++i) params[i] -= a * grad[i];
}

/// One epoch's sample order. With oversampling the minority label is topped
/// up to parity with extra draws (with replacement) on top of one copy of
/// every original pair; the merged stream is then shuffled.
inline std::vector<std::size_t> epoch_stream(std::span<const Label> labels, bool oversample, Rng& rng) {
  std::vector<std::size_t> stream(labels.size());
  std::iota(stream.begin(), stream.end(), std::size_t{0});
  if (oversample) {
    std::vector<std::size_t> sim, dis;
    for (std::size_t i = 0; i < labels.size(); ++i) (labels[i] == Label::similar ? sim : dis).push_back(i);
    const auto& minority = sim.size() < dis.size() ? sim : dis;
    const std::size_t deficit = std::max(sim.size(), dis.size()) - minority.size();
    if (!minority.empty())
      for (std::size_t k = 0; k < deficit; ++k) stream.push_back(minority[uniform_index(rng, minority.size())]);
  }
  std::shuffle(stream.begin(), stream.end(), rng);
  return stream;
}

template <class T>
PairBatch<T> make_pair_batch(const Dataset& ds, std::span<const LabeledPair> pairs, std::span<const std::size_t> which) {
  PairBatch<T> batch;
  std::unordered_map<ItemIndex, std::size_t> column;
  std::vector<ItemIndex> members;
  auto col_of = [&](ItemIndex i) {
    auto [it, fresh] = column.emplace(i, members.size());
    if (fresh) members.push_back(i);
    return it->second;
  };
  batch.pairs.reserve(which.size());
  for (std::size_t w : which) {
    const auto& p = pairs[w];
    const auto lo = col_of(p.key.lo);
    const auto hi = col_of(p.key.hi);
    batch.pairs.push_back({lo, hi, p.label});
  }
  batch.inputs.resize(static_cast<Eigen::Index>(ds.dim()), static_cast<Eigen::Index>(members.size()));
  for (std::size_t c = 0; c < members.size(); ++c) {
    const auto f = ds.feature(members[c]);
    for (std::size_t d = 0; d < f.size(); ++d) batch.inputs(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(c)) = static_cast<T>(f[d]);
  }
  return batch;
}

namespace detail {

template <class T, class StepFn>
TrainHistory run_epochs(MetricModel<T>& model, const TrainConfig& cfg, std::span<const Label> stream_labels,
                        bool oversample, StepFn&& batch_loss_grad) {
  cfg.validate();
  TrainHistory hist;
  Rng rng(derive_seed(cfg.seed, {stream_tag("train-stream")}));
  std::optional<Adam<T>> adam;
  if (cfg.optimizer == OptimizerKind::adam) adam.emplace(model.parameter_count(), cfg.learning_rate);

  for (int e = 0; e < cfg.epochs; ++e) {
    const auto stream = epoch_stream(stream_labels, oversample, rng);
    double loss_sum = 0.0;
    for (std::size_t start = 0; start < stream.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t end = std::min(stream.size(), start + static_cast<std::size_t>(cfg.batch_size));
      std::span<const std::size_t> which(stream.data() + start, end - start);
      auto lg = batch_loss_grad(which);
      loss_sum += static_cast<double>(lg.loss) * static_cast<double>(which.size());
      if (adam)
        adam->step(model.parameters(), lg.gradient);
      else
        sgd_step(model.parameters(), lg.gradient, cfg.learning_rate);
    }
    hist.epochs.push_back({e + 1, loss_sum / static_cast<double>(stream.size())});
  }
  return hist;
}

}  // namespace detail

/// Trains the model in place on labeled pairs. The model is not
/// re-initialized here; callers decide between warm and fresh starts.
template <class T>
TrainHistory train(MetricModel<T>& model, std::span<const LabeledPair> pairs, const Dataset& ds, const TrainConfig& cfg) {
  if (pairs.empty()) throw Error("cannot train on an empty pair set");
  std::vector<Label> labels;
  labels.reserve(pairs.size());
  for (const auto& p : pairs) labels.push_back(p.label);
  const bool has_sim = std::find(labels.begin(), labels.end(), Label::similar) != labels.end();
  const bool has_dis = std::find(labels.begin(), labels.end(), Label::dissimilar) != labels.end();

  std::vector<std::string> warnings;
  if (!has_sim || !has_dis) warnings.push_back("training pairs carry a single label; oversampling disabled");

  auto hist = detail::run_epochs(model, cfg, labels, cfg.oversample && has_sim && has_dis,
                                 [&](std::span<const std::size_t> which) {
                                   const auto batch = make_pair_batch<T>(ds, pairs, which);
                                   return loss_gradient(model, batch, cfg.margin, cfg.gamma);
                                 });
  hist.warnings.insert(hist.warnings.begin(), warnings.begin(), warnings.end());
  return hist;
}

/// Trains projection + softmax head with cross-entropy on oracle-labeled items.
template <class T>
TrainHistory train_items(MetricModel<T>& model, std::span<const ItemIndex> items, std::span<const int> class_labels,
                         const Dataset& ds, const TrainConfig& cfg) {
  if (items.empty()) throw Error("cannot train on an empty item set");
  if (class_labels.size() != items.size()) throw DimensionMismatch("one class label per item required");
  std::vector<Label> dummy(items.size(), Label::similar);
  return detail::run_epochs(model, cfg, dummy, false, [&](std::span<const std::size_t> which) {
    ItemBatch<T> batch;
    batch.inputs.resize(static_cast<Eigen::Index>(ds.dim()), static_cast<Eigen::Index>(which.size()));
    for (std::size_t c = 0; c < which.size(); ++c) {
      const ItemIndex it = items[which[c]];
      const auto f = ds.feature(it);
      for (std::size_t d = 0; d < f.size(); ++d) batch.inputs(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(c)) = static_cast<T>(f[d]);
      batch.labels.push_back(class_labels[which[c]]);
    }
    return loss_gradient(model, batch);
  });
}

}  // namespace anneal
