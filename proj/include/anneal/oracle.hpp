#pragma once

#include <string>
#include <string_view>

#include "anneal/core.hpp"

namespace anneal {

enum class OracleMode { simulated, human };

inline std::string_view to_string(OracleMode m) { return m == OracleMode::simulated ? "simulated" : "human"; }
inline OracleMode parse_oracle_mode(std::string_view s) {
  if (s == "simulated") return OracleMode::simulated;
  if (s == "human") return OracleMode::human;
  throw ConfigError("unknown oracle mode '" + std::string(s) + "'");
}

/// Source of similar/dissimilar answers for pairs.
class PairOracle {
 public:
  virtual ~PairOracle() = default;
  virtual OracleMode mode() const = 0;
  virtual Label label(PairKey key) const = 0;
};

/// Source of class labels for single items.
class ClassOracle {
 public:
  virtual ~ClassOracle() = default;
  virtual int class_of(ItemIndex i) const = 0;
};

/// Answers from the dataset's class labels: similar iff same class.
class SimulatedOracle final : public PairOracle, public ClassOracle {
 public:
  explicit SimulatedOracle(const Dataset& ds) : ds_(&ds) {}
  OracleMode mode() const override { return OracleMode::simulated; }
  Label label(PairKey key) const override {
    return label_from_bool(ds_->item(key.lo).class_label == ds_->item(key.hi).class_label);
  }
  int class_of(ItemIndex i) const override { return ds_->item(i).class_label; }

 private:
  const Dataset* ds_;
};

}  // namespace anneal
