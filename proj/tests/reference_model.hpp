#pragma once

// Loop-based forward pass over the flat parameter layout, written without
// Eigen or any engine code path. Used as the finite-difference oracle for
// the analytic gradients.

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include "anneal/metric.hpp"

namespace anneal::test {

struct RefLayer {
  std::size_t in, out, offset;
  double w(const std::vector<double>& p, std::size_t o, std::size_t i) const { return p[offset + o + i * out]; }
  double b(const std::vector<double>& p, std::size_t o) const { return p[offset + in * out + o]; }

  std::vector<double> apply(const std::vector<double>& p, const std::vector<double>& x, bool relu) const {
    std::vector<double> y(out);
    for (std::size_t o = 0; o < out; ++o) {
      double s = b(p, o);
      for (std::size_t i = 0; i < in; ++i) s += w(p, o, i) * x[i];
      y[o] = relu ? std::max(0.0, s) : s;
    }
    return y;
  }
};

inline std::vector<RefLayer> ref_layers(const ModelShape& shape) {
  std::vector<RefLayer> out;
  std::size_t off = 0;
  for (const auto& l : shape.layers()) {
    out.push_back({l.in, l.out, off});
    off += l.in * l.out + l.out;
  }
  return out;
}

inline std::vector<double> ref_project(const ModelShape& shape, const std::vector<double>& p, const std::vector<double>& x) {
  const auto L = ref_layers(shape);
  return L[1].apply(p, L[0].apply(p, x, true), false);
}

inline double ref_cosine(const std::vector<double>& a, const std::vector<double>& b) {
  double d = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    d += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  return d / std::sqrt(na * nb);
}

struct RefPair {
  std::vector<double> x_lo, x_hi;
  int y;
};

/// Mean pair loss: contrastive, or (1-gamma)*contrastive + gamma*BCE with a classifier.
inline double ref_pair_loss(const ModelShape& shape, const std::vector<double>& p, const std::vector<RefPair>& pairs,
                            double margin, double gamma) {
  const auto L = ref_layers(shape);
  double total = 0.0;
  for (const auto& pr : pairs) {
    const auto fa = ref_project(shape, p, pr.x_lo);
    const auto fb = ref_project(shape, p, pr.x_hi);
    const double s = ref_cosine(fa, fb);
    const double cl = pr.y == 1 ? 1.0 - s : std::max(0.0, s - margin);
    if (!shape.pair_classifier) {
      total += cl;
      continue;
    }
    std::vector<double> c(fa);
    c.insert(c.end(), fb.begin(), fb.end());
    const double z = L[4].apply(p, L[3].apply(p, L[2].apply(p, c, true), true), false)[0];
    const double prob = 1.0 / (1.0 + std::exp(-z));
    const double bce = -(pr.y * std::log(prob) + (1 - pr.y) * std::log(1.0 - prob));
    total += (1.0 - gamma) * cl + gamma * bce;
  }
  return total / static_cast<double>(pairs.size());
}

/// Mean softmax cross-entropy of the classification head.
inline double ref_item_loss(const ModelShape& shape, const std::vector<double>& p, const std::vector<std::vector<double>>& xs,
                            const std::vector<int>& ys) {
  const auto L = ref_layers(shape);
  const auto& sl = L[shape.softmax_layer()];
  double total = 0.0;
  for (std::size_t n = 0; n < xs.size(); ++n) {
    const auto logits = sl.apply(p, ref_project(shape, p, xs[n]), false);
    double z = 0.0;
    for (double v : logits) z += std::exp(v);
    total += std::log(z) - logits[static_cast<std::size_t>(ys[n])];
  }
  return total / static_cast<double>(xs.size());
}

/// Central differences of `loss` at `params`.
template <class F>
std::vector<double> central_differences(std::vector<double> params, F&& loss, double step = 1e-5) {
  std::vector<double> g(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double orig = params[i];
    params[i] = orig + step;
    const double up = loss(params);
    params[i] = orig - step;
    const double down = loss(params);
    params[i] = orig;
    g[i] = (up - down) / (2.0 * step);
  }
  return g;
}

inline double max_relative_error(const std::vector<double>& analytic, const std::vector<double>& numeric) {
  double worst = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i)
    worst = std::max(worst, std::abs(analytic[i] - numeric[i]) / (std::abs(analytic[i]) + 1e-8));
  return worst;
}

}  // namespace anneal::test
