#pragma once

#include <array>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <random>

#include "anneal/core.hpp"
#include "anneal/random.hpp"

namespace anneal {

struct SplitFractions {
  double train = 0.8;
  double val = 0.1;
  double test = 0.1;
};

/// Largest-remainder apportionment of n items over the three fractions.
/// Ties in the fractional part go to the earlier split (train, val, test).
inline std::array<std::size_t, 3> split_sizes(std::size_t n, const SplitFractions& f) {
  const std::array<double, 3> fr{f.train, f.val, f.test};
  for (double x : fr)
    if (!(x > 0.0)) throw ConfigError("split fractions must be positive");
  if (std::abs(fr[0] + fr[1] + fr[2] - 1.0) > 1e-9) throw ConfigError("split fractions must sum to 1");

  std::array<std::size_t, 3> sizes{};
  std::array<double, 3> rem{};
  std::size_t used = 0;
  for (int s = 0; s < 3; ++s) {
    const double exact = fr[s] * static_cast<double>(n);
    sizes[s] = static_cast<std::size_t>(std::floor(exact + 1e-9));
    rem[s] = exact - static_cast<double>(sizes[s]);
    used += sizes[s];
  }
  std::array<int, 3> order{0, 1, 2};
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return rem[a] > rem[b]; });
  for (std::size_t k = 0; used < n; ++k, ++used) ++sizes[order[k % 3]];
  return sizes;
}

/// Seeded shuffle followed by largest-remainder cut into train/val/test.
inline Dataset assign_splits(const Dataset& ds, const SplitFractions& fractions, std::uint64_t seed) {
  const auto sizes = split_sizes(ds.size(), fractions);
  if (sizes[0] == 0 || sizes[1] == 0 || sizes[2] == 0)
    throw ConfigError("dataset of " + std::to_string(ds.size()) + " items is too small for a non-empty split");

  std::vector<ItemIndex> order(ds.size());
  std::iota(order.begin(), order.end(), ItemIndex{0});
  Rng rng(derive_seed(seed, {stream_tag("splits")}));
  std::shuffle(order.begin(), order.end(), rng);

  std::vector<Split> splits(ds.size());
  for (std::size_t k = 0; k < order.size(); ++k) {
    splits[order[k]] = k < sizes[0] ? Split::train : (k < sizes[0] + sizes[1] ? Split::val : Split::test);
  }
  return ds.with_splits(splits);
}

/// C isotropic Gaussian clusters around random unit-norm mean directions.
/// `spread` is the expected norm of the per-item noise (per-coordinate
/// standard deviation spread / sqrt(dim)). Items are emitted class by class.
inline Dataset make_synthetic(int num_classes, int per_class, std::size_t dim, double spread, std::uint64_t seed) {
  if (num_classes < 2) throw ConfigError("synthetic data needs at least 2 classes");
  if (per_class < 2) throw ConfigError("synthetic data needs at least 2 items per class");
  if (!(spread > 0.0)) throw ConfigError("spread must be positive");
  if (dim == 0) throw ConfigError("dimension must be positive");

  Rng rng(derive_seed(seed, {stream_tag("synthetic")}));
  std::normal_distribution<double> normal(0.0, 1.0);

  std::vector<std::vector<double>> means(num_classes, std::vector<double>(dim));
  for (auto& m : means) {
    double norm2 = 0.0;
    do {
      norm2 = 0.0;
      for (auto& v : m) {
        v = normal(rng);
        norm2 += v * v;
      }
    } while (norm2 == 0.0);
    const double inv = 1.0 / std::sqrt(norm2);
    for (auto& v : m) v *= inv;
  }

  const double sigma = spread / std::sqrt(static_cast<double>(dim));
  std::vector<Item> items;
  std::vector<float> features;
  items.reserve(static_cast<std::size_t>(num_classes) * per_class);
  features.reserve(items.capacity() * dim);
  char id[48];
  for (int c = 0; c < num_classes; ++c) {
    for (int i = 0; i < per_class; ++i) {
      std::snprintf(id, sizeof id, "c%03d_%05d", c, i);
      items.push_back(Item{id, c, Split::unassigned, std::nullopt});
      for (std::size_t d = 0; d < dim; ++d) features.push_back(static_cast<float>(means[c][d] + sigma * normal(rng)));
    }
  }
  return Dataset(std::move(items), num_classes, dim, std::move(features));
}

}  // namespace anneal
