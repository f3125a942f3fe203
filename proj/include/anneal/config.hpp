#pragma once

// JSON forms of the loop and experiment configuration. Parsing is strict:
// unknown keys and wrong types are configuration errors naming the key.

#include <cmath>
#include <filesystem>
#include <set>

#include "anneal/dataset_io.hpp"
#include "anneal/loop.hpp"
#include "anneal/synthetic.hpp"
#include "json.hpp"

namespace anneal {

using json = nlohmann::json;

inline constexpr int kConfigSchemaVersion = 1;

namespace detail {

inline void check_keys(const json& j, const std::set<std::string>& allowed, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + " must be an object");
  for (const auto& [k, v] : j.items())
    if (!allowed.contains(k)) throw ConfigError("unknown key '" + k + "' in " + where);
}

template <class T>
void read(const json& j, const char* key, T& out, const std::string& where) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError("key '" + std::string(key) + "' in " + where + " has the wrong type");
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Loop configuration

inline const std::set<std::string>& loop_keys() {
  static const std::set<std::string> k{"strategy",     "lambda",   "iterations", "h",         "p_factor",
                                       "seed_fraction", "pairs_per_image", "max_resamples", "pool_cap",
                                       "transitive",   "eval_k",   "ap_normalization", "model", "train",
                                       "kmeans_iters"};
  return k;
}

inline json loop_config_to_json(const LoopConfig& c) {
  return json{
      {"strategy", std::string(to_string(c.strategy))},
      {"lambda", c.lambda},
      {"iterations", c.iterations},
      {"h", c.h},
      {"p_factor", c.p_factor},
      {"seed_fraction", c.seed_fraction},
      {"pairs_per_image", {{"similar", c.n_similar}, {"dissimilar", c.n_dissimilar}}},
      {"max_resamples", c.max_resamples},
      {"pool_cap", c.pool_cap},
      {"transitive",
       {{"enabled", c.transitive},
        {"within_batch", c.transitive_within_batch},
        {"threshold_includes_transitive", c.threshold_includes_transitive}}},
      {"eval_k", c.eval_k},
      {"ap_normalization", std::string(to_string(c.ap))},
      {"model", {{"hidden", c.hidden}, {"output", c.output}, {"classifier", c.classifier}}},
      {"train",
       {{"epochs", c.train.epochs},
        {"batch_size", c.train.batch_size},
        {"learning_rate", c.train.learning_rate},
        {"margin", c.train.margin},
        {"gamma", c.train.gamma},
        {"optimizer", std::string(to_string(c.train.optimizer))},
        {"oversample", c.train.oversample}}},
      {"kmeans_iters", c.kmeans_iters},
  };
}

/// Reads the loop fields present in `j` on top of `c`. Keys outside
/// loop_keys() are left for the caller to check.
inline void read_loop_fields(const json& j, LoopConfig& c, const std::string& where) {
  using detail::read;
  if (j.contains("strategy")) {
    std::string s;
    read(j, "strategy", s, where);
    c.strategy = parse_strategy(s);
  }
  read(j, "lambda", c.lambda, where);
  read(j, "iterations", c.iterations, where);
  read(j, "h", c.h, where);
  read(j, "p_factor", c.p_factor, where);
  read(j, "seed_fraction", c.seed_fraction, where);
  if (j.contains("pairs_per_image")) {
    const auto& p = j["pairs_per_image"];
    detail::check_keys(p, {"similar", "dissimilar"}, "pairs_per_image");
    read(p, "similar", c.n_similar, "pairs_per_image");
    read(p, "dissimilar", c.n_dissimilar, "pairs_per_image");
  }
  read(j, "max_resamples", c.max_resamples, where);
  read(j, "pool_cap", c.pool_cap, where);
  if (j.contains("transitive")) {
    const auto& t = j["transitive"];
    detail::check_keys(t, {"enabled", "within_batch", "threshold_includes_transitive"}, "transitive");
    read(t, "enabled", c.transitive, "transitive");
    read(t, "within_batch", c.transitive_within_batch, "transitive");
    read(t, "threshold_includes_transitive", c.threshold_includes_transitive, "transitive");
  }
  read(j, "eval_k", c.eval_k, where);
  if (j.contains("ap_normalization")) {
    std::string s;
    read(j, "ap_normalization", s, where);
    c.ap = parse_ap_normalization(s);
  }
  if (j.contains("model")) {
    const auto& m = j["model"];
    detail::check_keys(m, {"hidden", "output", "classifier"}, "model");
    read(m, "hidden", c.hidden, "model");
    read(m, "output", c.output, "model");
    read(m, "classifier", c.classifier, "model");
  }
  if (j.contains("train")) {
    const auto& t = j["train"];
    detail::check_keys(t, {"epochs", "batch_size", "learning_rate", "margin", "gamma", "optimizer", "oversample"},
                       "train");
    read(t, "epochs", c.train.epochs, "train");
    read(t, "batch_size", c.train.batch_size, "train");
    read(t, "learning_rate", c.train.learning_rate, "train");
    read(t, "margin", c.train.margin, "train");
    read(t, "gamma", c.train.gamma, "train");
    if (t.contains("optimizer")) {
      std::string s;
      read(t, "optimizer", s, "train");
      c.train.optimizer = parse_optimizer(s);
    }
    read(t, "oversample", c.train.oversample, "train");
  }
  read(j, "kmeans_iters", c.kmeans_iters, where);
}

inline LoopConfig loop_config_from_json(const json& j, LoopConfig base = {}) {
  detail::check_keys(j, loop_keys(), "loop config");
  read_loop_fields(j, base, "loop config");
  base.validate();
  return base;
}

// ---------------------------------------------------------------------------
// Dataset source

struct SyntheticSpec {
  int classes = 10;
  int per_class = 100;
  std::size_t dim = 32;
  double spread = 1.5;
  std::uint64_t seed = 1;
  bool operator==(const SyntheticSpec&) const = default;
};

struct DatasetSpec {
  std::optional<std::filesystem::path> manifest;  // absolute after parsing
  SyntheticSpec synthetic;
  SplitFractions fractions;
  std::uint64_t split_seed = 1;
};

inline json dataset_spec_to_json(const DatasetSpec& d) {
  json j;
  if (d.manifest) {
    j["manifest"] = d.manifest->string();
  } else {
    j["synthetic"] = {{"classes", d.synthetic.classes},
                      {"per_class", d.synthetic.per_class},
                      {"dim", d.synthetic.dim},
                      {"spread", d.synthetic.spread},
                      {"seed", d.synthetic.seed}};
  }
  j["splits"] = {{"train", d.fractions.train}, {"val", d.fractions.val}, {"test", d.fractions.test}, {"seed", d.split_seed}};
  return j;
}

inline DatasetSpec dataset_spec_from_json(const json& j, const std::filesystem::path& base_dir) {
  detail::check_keys(j, {"manifest", "synthetic", "splits"}, "dataset");
  DatasetSpec d;
  if (j.contains("manifest") == j.contains("synthetic"))
    throw ConfigError("dataset needs exactly one of 'manifest' or 'synthetic'");
  if (j.contains("manifest")) {
    std::string p;
    detail::read(j, "manifest", p, "dataset");
    std::filesystem::path mp(p);
    d.manifest = mp.is_absolute() ? mp : base_dir / mp;
  } else {
    const auto& s = j["synthetic"];
    detail::check_keys(s, {"classes", "per_class", "dim", "spread", "seed"}, "synthetic");
    detail::read(s, "classes", d.synthetic.classes, "synthetic");
    detail::read(s, "per_class", d.synthetic.per_class, "synthetic");
    detail::read(s, "dim", d.synthetic.dim, "synthetic");
    detail::read(s, "spread", d.synthetic.spread, "synthetic");
    detail::read(s, "seed", d.synthetic.seed, "synthetic");
  }
  if (j.contains("splits")) {
    const auto& s = j["splits"];
    detail::check_keys(s, {"train", "val", "test", "seed"}, "splits");
    detail::read(s, "train", d.fractions.train, "splits");
    detail::read(s, "val", d.fractions.val, "splits");
    detail::read(s, "test", d.fractions.test, "splits");
    detail::read(s, "seed", d.split_seed, "splits");
  }
  return d;
}

/// Loads or generates the dataset; items without a split are assigned one.
inline Dataset load_dataset(const DatasetSpec& d) {
  Dataset ds;
  if (d.manifest) {
    ds = load_manifest(*d.manifest);
    if (ds.all_assigned()) return ds;
    // Keep the manifest's assignments and place only the unassigned items.
    const auto fresh = assign_splits(ds, d.fractions, d.split_seed);
    std::vector<Split> splits;
    for (ItemIndex i = 0; i < ds.size(); ++i)
      splits.push_back(ds.item(i).split == Split::unassigned ? fresh.item(i).split : ds.item(i).split);
    return ds.with_splits(splits);
  }
  const auto& s = d.synthetic;
  if (s.classes < 2 || s.per_class < 1 || s.dim < 1) throw ConfigError("synthetic dataset needs >= 2 classes, >= 1 item per class and dim >= 1");
  return assign_splits(make_synthetic(s.classes, s.per_class, s.dim, s.spread, s.seed), d.fractions, d.split_seed);
}

// ---------------------------------------------------------------------------
// Experiment configuration

struct ExperimentConfig {
  int schema_version = kConfigSchemaVersion;
  DatasetSpec dataset;
  std::vector<Strategy> strategies{Strategy::mgue};
  std::vector<double> lambdas{3.0};
  std::vector<std::uint64_t> seeds{0, 1, 2};
  OracleMode oracle = OracleMode::simulated;
  LoopConfig loop;  // strategy and lambda are taken from the lists above

  void validate() const {
    if (schema_version != kConfigSchemaVersion)
      throw ConfigError("unsupported config schema_version " + std::to_string(schema_version));
    if (strategies.empty()) throw ConfigError("at least one strategy is required");
    if (lambdas.empty()) throw ConfigError("at least one lambda is required");
    if (seeds.empty()) throw ConfigError("at least one seed is required");
    if (oracle != OracleMode::simulated) throw ConfigError("experiments run with the simulated oracle; use serve for human labels");
    loop.validate();
  }
};

inline json experiment_config_to_json(const ExperimentConfig& c) {
  json j = loop_config_to_json(c.loop);
  j.erase("strategy");
  j.erase("lambda");
  j["schema_version"] = c.schema_version;
  j["dataset"] = dataset_spec_to_json(c.dataset);
  auto& s = j["strategies"] = json::array();
  for (auto v : c.strategies) s.push_back(std::string(to_string(v)));
  j["lambdas"] = c.lambdas;
  j["seeds"] = c.seeds;
  j["oracle"] = std::string(to_string(c.oracle));
  return j;
}

inline ExperimentConfig experiment_config_from_json(const json& j, const std::filesystem::path& base_dir) {
  auto keys = loop_keys();
  keys.erase("strategy");
  keys.erase("lambda");
  keys.insert({"schema_version", "dataset", "strategies", "lambdas", "seeds", "oracle"});
  detail::check_keys(j, keys, "config");
  ExperimentConfig c;
  detail::read(j, "schema_version", c.schema_version, "config");
  if (c.schema_version != kConfigSchemaVersion)
    throw ConfigError("unsupported config schema_version " + std::to_string(c.schema_version));
  if (!j.contains("dataset")) throw ConfigError("config needs a 'dataset' section");
  c.dataset = dataset_spec_from_json(j["dataset"], base_dir);
  if (j.contains("strategies")) {
    std::vector<std::string> names;
    detail::read(j, "strategies", names, "config");
    c.strategies.clear();
    for (const auto& n : names) c.strategies.push_back(parse_strategy(n));
  }
  detail::read(j, "lambdas", c.lambdas, "config");
  if (j.contains("seeds")) {
    if (j["seeds"].is_number_unsigned()) {
      c.seeds.clear();
      for (std::uint64_t s = 0; s < j["seeds"].get<std::uint64_t>(); ++s) c.seeds.push_back(s);
    } else {
      detail::read(j, "seeds", c.seeds, "config");
    }
  }
  if (j.contains("oracle")) {
    std::string o;
    detail::read(j, "oracle", o, "config");
    c.oracle = parse_oracle_mode(o);
  }
  read_loop_fields(j, c.loop, "config");
  c.validate();
  return c;
}

/// Desk-scale synthetic benchmark: 10 classes x 100 items, d0 = 32, 5% seed
/// images, 5 iterations of 50 pairs, 3 seeds. The learning rate is raised
/// to 1e-3 because the head sees only a few hundred optimizer steps here.
inline ExperimentConfig benchmark_preset() {
  ExperimentConfig c;
  c.dataset.synthetic = SyntheticSpec{10, 100, 32, 1.5, 1};
  c.dataset.split_seed = 1;
  c.strategies = {Strategy::mgue, Strategy::random};
  c.lambdas = {3.0};
  c.seeds = {0, 1, 2};
  c.loop.iterations = 5;
  c.loop.h = 50;
  c.loop.seed_fraction = 0.05;
  c.loop.train.learning_rate = 1e-3;
  return c;
}

inline ExperimentConfig load_experiment_config(const std::filesystem::path& path) {
  json j;
  try {
    j = json::parse(detail::read_text_file(path));
  } catch (const json::parse_error& e) {
    throw ConfigError("config '" + path.string() + "' does not parse: " + e.what());
  }
  return experiment_config_from_json(j, path.parent_path());
}

}  // namespace anneal
