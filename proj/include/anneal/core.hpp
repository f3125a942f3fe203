#pragma once

// Domain types shared by every stage of the active-learning engine: items,
// canonical pair keys, labeled pairs and the immutable dataset.

#include <algorithm>
#include <compare>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "anneal/error.hpp"

namespace anneal {

using ItemIndex = std::uint32_t;

enum class Split : std::uint8_t { unassigned, train, val, test };

inline std::string_view to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
    case Split::unassigned: break;
  }
  return "unassigned";
}

inline Split parse_split(std::string_view s) {
  if (s == "train") return Split::train;
  if (s == "val") return Split::val;
  if (s == "test") return Split::test;
  if (s.empty() || s == "unassigned") return Split::unassigned;
  throw FormatError("unknown split '" + std::string(s) + "'");
}

struct Item {
  std::string id;
  int class_label = 0;
  Split split = Split::unassigned;
  std::optional<std::string> image_uri;

  bool operator==(const Item&) const = default;
};

/// Unordered pair of distinct items. Members are stored by dataset index
/// with lo < hi, so key(a, b) == key(b, a). The canonical total order on
/// keys is lexicographic on (lo, hi), i.e. manifest order.
struct PairKey {
  ItemIndex lo = 0;
  ItemIndex hi = 1;

  constexpr PairKey() = default;
  PairKey(ItemIndex a, ItemIndex b) : lo(std::min(a, b)), hi(std::max(a, b)) {
    if (a == b) throw Error("pair key requires two distinct items");
  }

  constexpr std::uint64_t packed() const {
    return (static_cast<std::uint64_t>(lo) << 32) | hi;
  }
  static PairKey from_packed(std::uint64_t v) {
    return PairKey(static_cast<ItemIndex>(v >> 32), static_cast<ItemIndex>(v & 0xffffffffu));
  }

  constexpr bool contains(ItemIndex i) const { return lo == i || hi == i; }
  constexpr ItemIndex other(ItemIndex i) const { return lo == i ? hi : lo; }

  auto operator<=>(const PairKey&) const = default;
};

struct PairKeyHash {
  std::size_t operator()(const PairKey& k) const noexcept {
    return std::hash<std::uint64_t>{}(k.packed());
  }
};

enum class Label : std::uint8_t { dissimilar = 0, similar = 1 };

constexpr int as_int(Label l) { return static_cast<int>(l); }
constexpr Label label_from_bool(bool similar) { return similar ? Label::similar : Label::dissimilar; }

enum class Provenance : std::uint8_t { seed, simulated, human, transitive };

inline std::string_view to_string(Provenance p) {
  switch (p) {
    case Provenance::seed: return "seed";
    case Provenance::simulated: return "simulated";
    case Provenance::human: return "human";
    case Provenance::transitive: return "transitive";
  }
  return "?";
}

inline Provenance parse_provenance(std::string_view s) {
  if (s == "seed") return Provenance::seed;
  if (s == "simulated") return Provenance::simulated;
  if (s == "human") return Provenance::human;
  if (s == "transitive") return Provenance::transitive;
  throw FormatError("unknown provenance '" + std::string(s) + "'");
}

/// Bits charged for a label of the given provenance: one bit per oracle
/// answer, nothing for derived labels.
constexpr double bit_cost_of(Provenance p) { return p == Provenance::transitive ? 0.0 : 1.0; }

struct LabeledPair {
  PairKey key;
  Label label = Label::dissimilar;
  Provenance provenance = Provenance::seed;
  double bit_cost = 1.0;
  int iteration = 0;

  static LabeledPair make(PairKey key, Label label, Provenance provenance, int iteration) {
    return LabeledPair{key, label, provenance, bit_cost_of(provenance), iteration};
  }

  bool operator==(const LabeledPair&) const = default;
};

/// Immutable collection of items with a dense row-major base-feature matrix.
class Dataset {
 public:
  Dataset() = default;

  Dataset(std::vector<Item> items, int num_classes, std::size_t dim, std::vector<float> features)
      : items_(std::move(items)), num_classes_(num_classes), dim_(dim), features_(std::move(features)) {
    if (num_classes_ < 1) throw Error("dataset needs at least one class");
    if (dim_ == 0) throw DimensionMismatch("base feature dimension must be positive");
    if (features_.size() != items_.size() * dim_) {
      throw DimensionMismatch("feature matrix holds " + std::to_string(features_.size() / dim_) +
                              " rows of dimension " + std::to_string(dim_) + " but " +
                              std::to_string(items_.size()) + " items are listed");
    }
    index_.reserve(items_.size());
    for (std::size_t i = 0; i < items_.size(); ++i) {
      const auto& it = items_[i];
      if (it.id.empty()) throw FormatError("item " + std::to_string(i) + " has an empty id");
      if (it.class_label < 0 || it.class_label >= num_classes_) {
        throw FormatError("item '" + it.id + "' has class label " + std::to_string(it.class_label) +
                          " outside [0, " + std::to_string(num_classes_) + ")");
      }
      if (!index_.emplace(it.id, static_cast<ItemIndex>(i)).second) {
        throw FormatError("duplicate item id '" + it.id + "'");
      }
    }
  }

  std::size_t size() const { return items_.size(); }
  int num_classes() const { return num_classes_; }
  std::size_t dim() const { return dim_; }

  const Item& item(ItemIndex i) const { return items_.at(i); }
  const std::vector<Item>& items() const { return items_; }
  const std::vector<float>& features() const { return features_; }

  std::span<const float> feature(ItemIndex i) const {
    return {features_.data() + static_cast<std::size_t>(i) * dim_, dim_};
  }

  std::optional<ItemIndex> find(std::string_view id) const {
    auto it = index_.find(std::string(id));
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }

  ItemIndex index_of(std::string_view id) const {
    if (auto i = find(id)) return *i;
    throw Error("unknown item id '" + std::string(id) + "'");
  }

  std::vector<ItemIndex> indices_in(Split s) const {
    std::vector<ItemIndex> out;
    for (std::size_t i = 0; i < items_.size(); ++i)
      if (items_[i].split == s) out.push_back(static_cast<ItemIndex>(i));
    return out;
  }

  bool all_assigned() const {
    return std::none_of(items_.begin(), items_.end(),
                        [](const Item& it) { return it.split == Split::unassigned; });
  }

  /// Copy with a new split per item (same order as items()).
  Dataset with_splits(const std::vector<Split>& splits) const {
    if (splits.size() != items_.size()) throw DimensionMismatch("split vector size mismatch");
    auto items = items_;
    for (std::size_t i = 0; i < items.size(); ++i) items[i].split = splits[i];
    return Dataset(std::move(items), num_classes_, dim_, features_);
  }

  bool operator==(const Dataset& o) const {
    return items_ == o.items_ && num_classes_ == o.num_classes_ && dim_ == o.dim_ && features_ == o.features_;
  }

 private:
  std::vector<Item> items_;
  int num_classes_ = 0;
  std::size_t dim_ = 0;
  std::vector<float> features_;
  std::unordered_map<std::string, ItemIndex> index_;
};

}  // namespace anneal
