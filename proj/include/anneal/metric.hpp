#pragma once

// Shared-weight projection head, optional pair classifier / softmax heads,
// cosine similarity, the pair losses and their hand-written gradients.
//
// Parameter layout: all trainable parameters live in one flat vector. Layers
// are stored in the order
//   head.1 (input -> hidden), head.2 (hidden -> output),
//   [pair classifier: (2*output -> c1), (c1 -> c2), (c2 -> 1)],
//   [softmax: (output -> classes)]
// and each layer stores its weight matrix (out x in, column-major) followed
// by its bias vector (out). Gradients use the same layout.

#include <Eigen/Dense>

#include <atomic>
#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <vector>

#include "anneal/core.hpp"
#include "anneal/random.hpp"

namespace anneal {

template <class T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>;
template <class T>
using Vec = Eigen::Matrix<T, Eigen::Dynamic, 1>;

// ---------------------------------------------------------------------------
// Diagnostics

/// Number of cosine evaluations that met a zero-norm vector.
inline std::atomic<std::uint64_t>& zero_norm_counter() {
  static std::atomic<std::uint64_t> counter{0};
  return counter;
}

// ---------------------------------------------------------------------------
// Scalar pieces

/// Cosine similarity; a zero-norm input yields 0 and bumps zero_norm_counter().
template <class T>
T cosine_similarity(std::span<const T> a, std::span<const T> b) {
  if (a.size() != b.size()) throw DimensionMismatch("cosine similarity of vectors with different sizes");
  T dot = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == T(0) || nb == T(0)) {
    zero_norm_counter().fetch_add(1, std::memory_order_relaxed);
    return T(0);
  }
  const T s = dot / (std::sqrt(na) * std::sqrt(nb));
  return std::clamp(s, T(-1), T(1));
}

inline double contrastive_loss(double s, Label y, double margin) {
  return y == Label::similar ? 1.0 - s : std::max(0.0, s - margin);
}

/// d(contrastive_loss)/ds. The hinge is taken as flat at s == margin.
inline double contrastive_loss_slope(double s, Label y, double margin) {
  if (y == Label::similar) return -1.0;
  return s > margin ? 1.0 : 0.0;
}

/// Binary cross-entropy written on the logit so it stays finite for large |z|.
inline double bce_from_logit(double z, Label y) {
  const double softplus = std::max(z, 0.0) + std::log1p(std::exp(-std::abs(z)));
  return softplus - (y == Label::similar ? z : 0.0);
}

inline double sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

inline double combined_loss(double contrastive, double bce, double gamma) {
  return (1.0 - gamma) * contrastive + gamma * bce;
}

// ---------------------------------------------------------------------------
// Shape and layout

struct DenseShape {
  std::size_t in = 0;
  std::size_t out = 0;
  std::size_t size() const { return in * out + out; }
};

struct ModelShape {
  std::size_t input = 0;
  std::size_t hidden = 512;
  std::size_t output = 256;
  /// Hidden sizes of the pair classifier; present only for the binary-classifier strategy.
  std::optional<std::array<std::size_t, 2>> pair_classifier;
  /// Class count of the softmax head used by the classification baseline.
  std::optional<std::size_t> softmax_classes;

  std::vector<DenseShape> layers() const {
    std::vector<DenseShape> l{{input, hidden}, {hidden, output}};
    if (pair_classifier) {
      l.push_back({2 * output, (*pair_classifier)[0]});
      l.push_back({(*pair_classifier)[0], (*pair_classifier)[1]});
      l.push_back({(*pair_classifier)[1], 1});
    }
    if (softmax_classes) l.push_back({output, *softmax_classes});
    return l;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& l : layers()) n += l.size();
    return n;
  }

  std::size_t classifier_layer() const { return 2; }
  std::size_t softmax_layer() const { return pair_classifier ? 5 : 2; }

  bool operator==(const ModelShape&) const = default;
};

template <class T>
struct LayerView {
  Eigen::Map<const Mat<T>> W;
  Eigen::Map<const Vec<T>> b;
};

template <class T>
struct LayerGrad {
  Eigen::Map<Mat<T>> W;
  Eigen::Map<Vec<T>> b;
};

/// Flat parameter vector plus per-layer offsets.
template <class T>
class MetricModel {
 public:
  MetricModel() = default;
  explicit MetricModel(ModelShape shape) : shape_(std::move(shape)) {
    if (shape_.input == 0 || shape_.hidden == 0 || shape_.output == 0) throw ConfigError("model dimensions must be positive");
    std::size_t off = 0;
    for (const auto& l : shape_.layers()) {
      offsets_.push_back(off);
      off += l.size();
    }
    params_.assign(off, T(0));
  }

  const ModelShape& shape() const { return shape_; }
  bool has_classifier() const { return shape_.pair_classifier.has_value(); }
  bool has_softmax() const { return shape_.softmax_classes.has_value(); }

  std::span<T> parameters() { return params_; }
  std::span<const T> parameters() const { return params_; }
  std::size_t parameter_count() const { return params_.size(); }

  /// Uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)] for weights and biases.
  void initialize(std::uint64_t seed) {
    Rng rng(derive_seed(seed, {stream_tag("init")}));
    const auto layers = shape_.layers();
    for (std::size_t li = 0; li < layers.size(); ++li) {
      const double bound = 1.0 / std::sqrt(static_cast<double>(layers[li].in));
      std::uniform_real_distribution<double> u(-bound, bound);
      T* p = params_.data() + offsets_[li];
      for (std::size_t k = 0; k < layers[li].size(); ++k) p[k] = static_cast<T>(u(rng));
    }
  }

  LayerView<T> layer(std::size_t i) const {
    const auto l = shape_.layers()[i];
    const T* p = params_.data() + offsets_[i];
    return {Eigen::Map<const Mat<T>>(p, l.out, l.in), Eigen::Map<const Vec<T>>(p + l.in * l.out, l.out)};
  }

  LayerGrad<T> layer_grad(std::vector<T>& grad, std::size_t i) const {
    const auto l = shape_.layers()[i];
    T* p = grad.data() + offsets_[i];
    return {Eigen::Map<Mat<T>>(p, l.out, l.in), Eigen::Map<Vec<T>>(p + l.in * l.out, l.out)};
  }

  /// Projects base features (one column per item) into the metric space.
  Mat<T> project(const Mat<T>& inputs) const {
    if (static_cast<std::size_t>(inputs.rows()) != shape_.input)
      throw DimensionMismatch("input has dimension " + std::to_string(inputs.rows()) + ", model expects " +
                              std::to_string(shape_.input));
    const auto l1 = layer(0);
    const auto l2 = layer(1);
    Mat<T> a1 = ((l1.W * inputs).colwise() + l1.b).cwiseMax(T(0));
    return (l2.W * a1).colwise() + l2.b;
  }

  Vec<T> project(std::span<const float> x) const {
    if (x.size() != shape_.input)
      throw DimensionMismatch("input has dimension " + std::to_string(x.size()) + ", model expects " +
                              std::to_string(shape_.input));
    Mat<T> in(x.size(), 1);
    for (std::size_t i = 0; i < x.size(); ++i) in(static_cast<Eigen::Index>(i), 0) = static_cast<T>(x[i]);
    return project(in).col(0);
  }

  /// Pair-classifier logits for stacked [f_lo; f_hi] columns.
  Eigen::Matrix<T, 1, Eigen::Dynamic> classifier_logits(const Mat<T>& stacked) const {
    if (!has_classifier()) throw ConfigError("model has no pair classifier");
    const auto c = shape_.classifier_layer();
    const auto c1 = layer(c), c2 = layer(c + 1), c3 = layer(c + 2);
    Mat<T> r1 = ((c1.W * stacked).colwise() + c1.b).cwiseMax(T(0));
    Mat<T> r2 = ((c2.W * r1).colwise() + c2.b).cwiseMax(T(0));
    return ((c3.W * r2).colwise() + c3.b);
  }

  /// Softmax-head logits for projected features.
  Mat<T> softmax_logits(const Mat<T>& features) const {
    if (!has_softmax()) throw ConfigError("model has no softmax head");
    const auto s = layer(shape_.softmax_layer());
    return (s.W * features).colwise() + s.b;
  }

  template <class U>
  MetricModel<U> cast() const {
    MetricModel<U> m(shape_);
    auto dst = m.parameters();
    for (std::size_t i = 0; i < params_.size(); ++i) dst[i] = static_cast<U>(params_[i]);
    return m;
  }

  bool operator==(const MetricModel& o) const { return shape_ == o.shape_ && params_ == o.params_; }

 private:
  ModelShape shape_;
  std::vector<std::size_t> offsets_;
  std::vector<T> params_;
};

// ---------------------------------------------------------------------------
// Embedding of a whole dataset

/// Projected features of every dataset item, with cached norms.
template <class T>
class Embedding {
 public:
  Embedding() = default;
  Embedding(const MetricModel<T>& model, const Dataset& ds) {
    if (ds.dim() != model.shape().input) throw DimensionMismatch("dataset dimension does not match the model input");
    Mat<T> in(ds.dim(), ds.size());
    const auto& f = ds.features();
    for (std::size_t j = 0; j < ds.size(); ++j)
      for (std::size_t d = 0; d < ds.dim(); ++d) in(d, j) = static_cast<T>(f[j * ds.dim() + d]);
    features_ = model.project(in);
    norms_ = features_.colwise().norm().transpose();
  }

  const Mat<T>& features() const { return features_; }
  std::span<const T> feature(ItemIndex i) const {
    return {features_.data() + static_cast<std::size_t>(i) * features_.rows(), static_cast<std::size_t>(features_.rows())};
  }

  T similarity(ItemIndex a, ItemIndex b) const {
    const T na = norms_(a), nb = norms_(b);
    if (na == T(0) || nb == T(0)) {
      zero_norm_counter().fetch_add(1, std::memory_order_relaxed);
      return T(0);
    }
    const T s = features_.col(a).dot(features_.col(b)) / (na * nb);
    return std::clamp(s, T(-1), T(1));
  }
  T similarity(PairKey k) const { return similarity(k.lo, k.hi); }

 private:
  Mat<T> features_;
  Vec<T> norms_;
};

// ---------------------------------------------------------------------------
// Minibatches and gradients

/// A pair inside a minibatch: columns of the batch input matrix, in canonical key order.
struct PairRef {
  std::size_t lo = 0;
  std::size_t hi = 0;
  Label label = Label::dissimilar;
};

template <class T>
struct PairBatch {
  Mat<T> inputs;  // input_dim x distinct members
  std::vector<PairRef> pairs;
};

template <class T>
struct ItemBatch {
  Mat<T> inputs;  // input_dim x items
  std::vector<int> labels;
};

template <class T>
struct LossAndGradient {
  T loss = 0;         // minibatch mean of the optimized loss
  T contrastive = 0;  // mean contrastive part
  T bce = 0;          // mean BCE part (0 without a classifier)
  std::vector<T> gradient;
};

namespace detail {

template <class T>
struct HeadForward {
  Mat<T> z1, a1, f;
};

template <class T>
HeadForward<T> head_forward(const MetricModel<T>& m, const Mat<T>& x) {
  const auto l1 = m.layer(0), l2 = m.layer(1);
  HeadForward<T> h;
  h.z1 = (l1.W * x).colwise() + l1.b;
  h.a1 = h.z1.cwiseMax(T(0));
  h.f = (l2.W * h.a1).colwise() + l2.b;
  return h;
}

template <class T>
void head_backward(const MetricModel<T>& m, const Mat<T>& x, const HeadForward<T>& h, const Mat<T>& df,
                   std::vector<T>& grad) {
  auto g2 = m.layer_grad(grad, 1);
  g2.W.noalias() += df * h.a1.transpose();
  g2.b += df.rowwise().sum();
  Mat<T> dz1 = (m.layer(1).W.transpose() * df).cwiseProduct((h.z1.array() > T(0)).template cast<T>().matrix());
  auto g1 = m.layer_grad(grad, 0);
  g1.W.noalias() += dz1 * x.transpose();
  g1.b += dz1.rowwise().sum();
}

}  // namespace detail

/// Mean loss over the minibatch and its gradient with respect to every
/// parameter (flat layout above). Without a classifier the loss is the
/// contrastive loss; with one it is (1-gamma)*contrastive + gamma*BCE.
template <class T>
LossAndGradient<T> loss_gradient(const MetricModel<T>& model, const PairBatch<T>& batch, double margin, double gamma) {
  if (batch.pairs.empty()) throw Error("empty minibatch");
  const bool bc = model.has_classifier();
  const double w_cl = bc ? 1.0 - gamma : 1.0;
  const double w_bce = bc ? gamma : 0.0;
  const auto n = static_cast<double>(batch.pairs.size());

  LossAndGradient<T> out;
  out.gradient.assign(model.parameter_count(), T(0));
  const auto h = detail::head_forward(model, batch.inputs);
  Mat<T> df = Mat<T>::Zero(h.f.rows(), h.f.cols());
  const Vec<T> norms = h.f.colwise().norm().transpose();

  double cl_sum = 0.0;
  for (const auto& p : batch.pairs) {
    const auto a = static_cast<Eigen::Index>(p.lo), b = static_cast<Eigen::Index>(p.hi);
    const T na = norms(a), nb = norms(b);
    if (na == T(0) || nb == T(0)) {
      zero_norm_counter().fetch_add(1, std::memory_order_relaxed);
      cl_sum += contrastive_loss(0.0, p.label, margin);
      continue;
    }
    const T s = h.f.col(a).dot(h.f.col(b)) / (na * nb);
    cl_sum += contrastive_loss(static_cast<double>(s), p.label, margin);
    const T g = static_cast<T>(w_cl * contrastive_loss_slope(static_cast<double>(s), p.label, margin) / n);
    if (g == T(0)) continue;
    df.col(a) += g * (h.f.col(b) / (na * nb) - s * h.f.col(a) / (na * na));
    df.col(b) += g * (h.f.col(a) / (na * nb) - s * h.f.col(b) / (nb * nb));
  }
  out.contrastive = static_cast<T>(cl_sum / n);

  double bce_sum = 0.0;
  if (bc) {
    const auto out_dim = h.f.rows();
    const auto bsz = static_cast<Eigen::Index>(batch.pairs.size());
    Mat<T> stacked(2 * out_dim, bsz);
    for (Eigen::Index j = 0; j < bsz; ++j) {
      stacked.col(j).head(out_dim) = h.f.col(static_cast<Eigen::Index>(batch.pairs[j].lo));
      stacked.col(j).tail(out_dim) = h.f.col(static_cast<Eigen::Index>(batch.pairs[j].hi));
    }
    const auto c = model.shape().classifier_layer();
    const auto c1 = model.layer(c), c2 = model.layer(c + 1), c3 = model.layer(c + 2);
    const Mat<T> y1 = (c1.W * stacked).colwise() + c1.b;
    const Mat<T> r1 = y1.cwiseMax(T(0));
    const Mat<T> y2 = (c2.W * r1).colwise() + c2.b;
    const Mat<T> r2 = y2.cwiseMax(T(0));
    const Mat<T> z = (c3.W * r2).colwise() + c3.b;

    Mat<T> dz(1, bsz);
    for (Eigen::Index j = 0; j < bsz; ++j) {
      const double zj = static_cast<double>(z(0, j));
      const Label y = batch.pairs[j].label;
      bce_sum += bce_from_logit(zj, y);
      dz(0, j) = static_cast<T>(w_bce * (sigmoid(zj) - as_int(y)) / n);
    }
    auto g3 = model.layer_grad(out.gradient, c + 2);
    g3.W.noalias() += dz * r2.transpose();
    g3.b += dz.rowwise().sum();
    const Mat<T> dy2 = (c3.W.transpose() * dz).cwiseProduct((y2.array() > T(0)).template cast<T>().matrix());
    auto g2 = model.layer_grad(out.gradient, c + 1);
    g2.W.noalias() += dy2 * r1.transpose();
    g2.b += dy2.rowwise().sum();
    const Mat<T> dy1 = (c2.W.transpose() * dy2).cwiseProduct((y1.array() > T(0)).template cast<T>().matrix());
    auto g1 = model.layer_grad(out.gradient, c);
    g1.W.noalias() += dy1 * stacked.transpose();
    g1.b += dy1.rowwise().sum();
    const Mat<T> dstacked = c1.W.transpose() * dy1;
    for (Eigen::Index j = 0; j < bsz; ++j) {
      df.col(static_cast<Eigen::Index>(batch.pairs[j].lo)) += dstacked.col(j).head(out_dim);
      df.col(static_cast<Eigen::Index>(batch.pairs[j].hi)) += dstacked.col(j).tail(out_dim);
    }
    out.bce = static_cast<T>(bce_sum / n);
  }

  out.loss = static_cast<T>(w_cl * cl_sum / n + w_bce * bce_sum / n);
  detail::head_backward(model, batch.inputs, h, df, out.gradient);
  return out;
}

/// Mean softmax cross-entropy over items and its gradient (classification baseline).
template <class T>
LossAndGradient<T> loss_gradient(const MetricModel<T>& model, const ItemBatch<T>& batch) {
  if (batch.labels.empty()) throw Error("empty minibatch");
  if (!model.has_softmax()) throw ConfigError("model has no softmax head");
  const auto n = static_cast<double>(batch.labels.size());
  LossAndGradient<T> out;
  out.gradient.assign(model.parameter_count(), T(0));
  const auto h = detail::head_forward(model, batch.inputs);
  const auto sl = model.shape().softmax_layer();
  const auto s = model.layer(sl);
  Mat<T> logits = (s.W * h.f).colwise() + s.b;
  Mat<T> dlogits(logits.rows(), logits.cols());
  double loss = 0.0;
  for (Eigen::Index j = 0; j < logits.cols(); ++j) {
    const T mx = logits.col(j).maxCoeff();
    Vec<T> e = (logits.col(j).array() - mx).exp().matrix();
    const T z = e.sum();
    const int y = batch.labels[static_cast<std::size_t>(j)];
    loss += static_cast<double>(std::log(z) - (logits(y, j) - mx));
    dlogits.col(j) = e / z;
    dlogits(y, j) -= T(1);
  }
  dlogits /= static_cast<T>(n);
  auto gs = model.layer_grad(out.gradient, sl);
  gs.W.noalias() += dlogits * h.f.transpose();
  gs.b += dlogits.rowwise().sum();
  const Mat<T> df = s.W.transpose() * dlogits;
  detail::head_backward(model, batch.inputs, h, df, out.gradient);
  out.loss = static_cast<T>(loss / n);
  return out;
}

/// Softmax posteriors (classes x items) for projected features.
template <class T>
Mat<T> softmax_posteriors(const MetricModel<T>& model, const Mat<T>& features) {
  Mat<T> logits = model.softmax_logits(features);
  for (Eigen::Index j = 0; j < logits.cols(); ++j) {
    const T mx = logits.col(j).maxCoeff();
    logits.col(j) = (logits.col(j).array() - mx).exp().matrix();
    logits.col(j) /= logits.col(j).sum();
  }
  return logits;
}

}  // namespace anneal
