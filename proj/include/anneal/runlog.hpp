#pragma once

// Event-sourced pair-strategy run. Every state change is an event; the live
// path builds the event and applies it through the same code as replay, so
// a run rebuilt from its log matches the live run exactly. The checkpoint is
// canonical JSON (sorted keys, fixed layout) of everything except the
// candidate pool, which is recomputed from the dataset and training set.

#include <map>

#include "anneal/config.hpp"

namespace anneal {

enum class RunStatus { idle, training, awaiting_labels, done };

inline std::string_view to_string(RunStatus s) {
  switch (s) {
    case RunStatus::idle: return "idle";
    case RunStatus::training: return "training";
    case RunStatus::awaiting_labels: return "awaiting_labels";
    case RunStatus::done: return "done";
  }
  return "?";
}

inline constexpr int kCheckpointVersion = 1;

inline std::string_view to_string(Label l) { return l == Label::similar ? "similar" : "dissimilar"; }
inline Label parse_label(std::string_view s) {
  if (s == "similar" || s == "1") return Label::similar;
  if (s == "dissimilar" || s == "0") return Label::dissimilar;
  throw FormatError("unknown label '" + std::string(s) + "'");
}

// ---------------------------------------------------------------------------
// JSON forms

namespace detail {

inline json key_json(const Dataset& ds, PairKey k) { return json{{"lo", ds.item(k.lo).id}, {"hi", ds.item(k.hi).id}}; }

inline PairKey key_from_json(const Dataset& ds, const json& j) {
  return PairKey(ds.index_of(j.at("lo").get<std::string>()), ds.index_of(j.at("hi").get<std::string>()));
}

inline json opt_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }
inline std::optional<double> opt_from_json(const json& j) {
  return j.is_null() ? std::nullopt : std::optional<double>(j.get<double>());
}

}  // namespace detail

inline json threshold_to_json(const ThresholdStats& t) {
  return json{{"mu_sim", t.mu_sim}, {"sigma_sim", t.sigma_sim}, {"mu_dsim", t.mu_dsim}, {"sigma_dsim", t.sigma_dsim},
              {"S", t.S},           {"D", t.D},                 {"alpha", t.alpha},     {"lambda", t.lambda}};
}

inline ThresholdStats threshold_from_json(const json& j) {
  ThresholdStats t;
  t.mu_sim = j.at("mu_sim").get<double>();
  t.sigma_sim = j.at("sigma_sim").get<double>();
  t.mu_dsim = j.at("mu_dsim").get<double>();
  t.sigma_dsim = j.at("sigma_dsim").get<double>();
  t.S = j.at("S").get<std::size_t>();
  t.D = j.at("D").get<std::size_t>();
  t.alpha = j.at("alpha").get<double>();
  t.lambda = j.at("lambda").get<double>();
  return t;
}

inline json record_to_json(const Dataset& ds, const IterationRecord& r) {
  json pairs = json::array();
  for (const auto& p : r.batch.pairs) {
    auto k = detail::key_json(ds, p.key);
    k["value"] = p.value;
    k["score"] = p.score;
    k["cluster"] = p.cluster;
    pairs.push_back(std::move(k));
  }
  json labels = json::array();
  for (auto l : r.labels) labels.push_back(std::string(to_string(l)));
  return json{{"iteration", r.iteration},
              {"bits", r.bits},
              {"training_size", r.training_size},
              {"pool_size", r.pool_size},
              {"map", detail::opt_json(r.map)},
              {"threshold", r.threshold ? threshold_to_json(*r.threshold) : json(nullptr)},
              {"batch",
               {{"pairs", pairs},
                {"candidates", r.batch.candidates},
                {"empty_clusters", r.batch.empty_clusters},
                {"filled", r.batch.filled}}},
              {"labels", labels},
              {"transitive_count", r.transitive_count},
              {"conflicts", r.conflicts}};
}

inline IterationRecord record_from_json(const Dataset& ds, const json& j) {
  IterationRecord r;
  r.iteration = j.at("iteration").get<int>();
  r.bits = j.at("bits").get<double>();
  r.training_size = j.at("training_size").get<std::size_t>();
  r.pool_size = j.at("pool_size").get<std::size_t>();
  r.map = detail::opt_from_json(j.at("map"));
  if (!j.at("threshold").is_null()) r.threshold = threshold_from_json(j["threshold"]);
  const auto& b = j.at("batch");
  r.batch.iteration = r.iteration;
  for (const auto& p : b.at("pairs"))
    r.batch.pairs.push_back({detail::key_from_json(ds, p), p.at("value").get<double>(), p.at("score").get<double>(),
                             p.at("cluster").get<int>()});
  r.batch.candidates = b.at("candidates").get<std::size_t>();
  r.batch.empty_clusters = b.at("empty_clusters").get<std::size_t>();
  r.batch.filled = b.at("filled").get<std::size_t>();
  for (const auto& l : j.at("labels")) r.labels.push_back(parse_label(l.get<std::string>()));
  r.transitive_count = j.at("transitive_count").get<std::size_t>();
  r.conflicts = j.at("conflicts").get<std::size_t>();
  return r;
}

inline json pair_to_json(const Dataset& ds, const LabeledPair& p) {
  auto j = detail::key_json(ds, p.key);
  j["label"] = std::string(to_string(p.label));
  j["provenance"] = std::string(to_string(p.provenance));
  j["bit_cost"] = p.bit_cost;
  j["iteration"] = p.iteration;
  return j;
}

inline LabeledPair pair_from_json(const Dataset& ds, const json& j) {
  LabeledPair p = LabeledPair::make(detail::key_from_json(ds, j), parse_label(j.at("label").get<std::string>()),
                                    parse_provenance(j.at("provenance").get<std::string>()), j.at("iteration").get<int>());
  if (j.at("bit_cost").get<double>() != p.bit_cost) throw FormatError("bit cost does not match provenance");
  return p;
}

// ---------------------------------------------------------------------------
// Run

struct LabelAck {
  Label label;          // label on record for the pair
  bool recorded;        // false when the call repeated an earlier answer
};

class ALRun {
 public:
  /// New run: the seed set is built immediately and logged as `created`.
  static ALRun create(const Dataset& ds, const LoopConfig& cfg, std::uint64_t seed, OracleMode mode) {
    cfg.validate();
    if (cfg.strategy == Strategy::cal) throw ConfigError("the classification baseline has no pair run");
    ALRun r(ds);
    r.emit(json{{"type", "created"},
                {"config", loop_config_to_json(cfg)},
                {"seed", seed},
                {"oracle", std::string(to_string(mode))}});
    return r;
  }

  /// Rebuilds a run from its complete event log.
  static ALRun replay(const Dataset& ds, const std::vector<json>& events) {
    ALRun r(ds);
    for (const auto& e : events) r.apply_event(e);
    return r;
  }

  /// Rebuilds a run from a checkpoint plus the events logged after it.
  static ALRun restore(const Dataset& ds, const json& checkpoint, std::span<const json> tail = {}) {
    ALRun r(ds);
    r.load_checkpoint(checkpoint);
    for (const auto& e : tail) r.apply_event(e);
    return r;
  }

  const LoopConfig& config() const { return cfg_; }
  OracleMode oracle_mode() const { return mode_; }
  const ALState& state() const { return state_; }
  const std::optional<IterationRecord>& pending() const { return pending_; }
  const std::map<PairKey, Label>& pending_labels() const { return pending_labels_; }
  bool finished() const { return finished_; }
  std::size_t event_count() const { return events_applied_; }
  const std::vector<json>& events() const { return log_; }
  const Dataset& dataset() const { return *ds_; }

  RunStatus status() const {
    if (finished_) return RunStatus::done;
    if (pending_) return RunStatus::awaiting_labels;
    return RunStatus::idle;
  }

  bool batch_complete() const { return pending_ && pending_labels_.size() == pending_->batch.pairs.size(); }
  bool rounds_left() const { return state_.iteration < cfg_.iterations; }

  /// Pairs of the pending batch still waiting for an answer, batch order.
  std::vector<SelectedPair> unlabeled_pending() const {
    std::vector<SelectedPair> out;
    if (!pending_) return out;
    for (const auto& p : pending_->batch.pairs)
      if (!pending_labels_.contains(p.key)) out.push_back(p);
    return out;
  }

  /// Trains and selects the next batch.
  void propose() { accept_proposal(compute_proposal()); }

  /// The expensive half of propose(); touches no run state.
  IterationRecord compute_proposal() const {
    if (finished_) throw StateError("run is finished");
    if (pending_) throw StateError("a batch is already pending");
    if (!rounds_left()) throw StateError("all iterations are done; finish the run");
    return anneal::propose(state_, cfg_, *ds_);
  }

  void accept_proposal(const IterationRecord& rec) {
    emit(json{{"type", "batch_proposed"}, {"record", record_to_json(*ds_, rec)}});
  }

  /// Records one answer for a pending pair. Repeating an earlier answer is a
  /// no-op; contradicting it is an error.
  LabelAck label(PairKey key, Label l) {
    if (!pending_) throw StateError("no batch is pending");
    const bool in_batch = std::any_of(pending_->batch.pairs.begin(), pending_->batch.pairs.end(),
                                      [&](const SelectedPair& p) { return p.key == key; });
    if (!in_batch) throw StateError("pair is not part of the pending batch");
    if (auto it = pending_labels_.find(key); it != pending_labels_.end()) {
      if (it->second != l) throw StateError("pair already labeled " + std::string(to_string(it->second)));
      return {it->second, false};
    }
    auto e = detail::key_json(*ds_, key);
    e["type"] = "label";
    e["iteration"] = pending_->iteration;
    e["label"] = std::string(to_string(l));
    emit(e);
    return {l, true};
  }

  /// Books a complete batch and closes the iteration.
  void apply() {
    if (!batch_complete()) throw StateError("batch is not complete");
    emit(json{{"type", "iteration_applied"}, {"iteration", pending_->iteration}});
  }

  /// Final evaluation point once every round is done.
  void finish() { accept_final(compute_final()); }

  IterationRecord compute_final() const {
    if (finished_) throw StateError("run is already finished");
    if (pending_) throw StateError("a batch is still pending");
    if (rounds_left()) throw StateError("iterations remain");
    ALState probe = state_;
    anneal::finalize(probe, cfg_, *ds_);
    return probe.history.back();
  }

  void accept_final(const IterationRecord& rec) {
    emit(json{{"type", "finished"}, {"record", record_to_json(*ds_, rec)}});
  }

  /// Advances a simulated run by one step; returns false once finished.
  bool step(const PairOracle& oracle) {
    if (finished_) return false;
    if (!pending_) {
      if (rounds_left()) {
        propose();
      } else {
        finish();
        return false;
      }
    }
    for (const auto& p : unlabeled_pending()) label(p.key, oracle.label(p.key));
    apply();
    return true;
  }

  void run_to_end(const PairOracle& oracle) {
    while (step(oracle)) {
    }
  }

  json checkpoint() const {
    json training = json::array();
    for (const auto& p : state_.training_set) training.push_back(pair_to_json(*ds_, p));
    json history = json::array();
    for (const auto& r : state_.history) history.push_back(record_to_json(*ds_, r));
    json images = json::array();
    for (auto i : state_.seed_images) images.push_back(ds_->item(i).id);
    json pending = nullptr;
    if (pending_) {
      json labels = json::array();
      for (const auto& [k, l] : pending_labels_) {
        auto j = detail::key_json(*ds_, k);
        j["label"] = std::string(to_string(l));
        labels.push_back(std::move(j));
      }
      pending = json{{"record", record_to_json(*ds_, *pending_)}, {"labels", labels}};
    }
    return json{{"format", "anneal-checkpoint"},
                {"version", kCheckpointVersion},
                {"config", loop_config_to_json(cfg_)},
                {"seed", state_.seed},
                {"oracle", std::string(to_string(mode_))},
                {"status", std::string(to_string(status()))},
                {"iteration", state_.iteration},
                {"bits_spent", state_.bits_spent},
                {"seed_images", images},
                {"training_set", training},
                {"pool_size", state_.pool.size()},
                {"history", history},
                {"pending", pending},
                {"finished", finished_},
                {"events", events_applied_}};
  }

  std::string checkpoint_text() const { return checkpoint().dump(1) + "\n"; }

 private:
  explicit ALRun(const Dataset& ds) : ds_(&ds) {}

  void emit(json e) {
    e["seq"] = events_applied_;
    apply_event(e);
  }

  void apply_event(const json& e) {
    try {
      if (e.at("seq").get<std::size_t>() != events_applied_)
        throw FormatError("event sequence gap at " + std::to_string(events_applied_));
      const auto type = e.at("type").get<std::string>();
      if (type == "created") {
        if (events_applied_ != 0) throw FormatError("'created' must be the first event");
        cfg_ = loop_config_from_json(e.at("config"));
        mode_ = parse_oracle_mode(e.at("oracle").get<std::string>());
        // Seed pairs always come from class membership.
        state_ = init_training_set(*ds_, cfg_, SimulatedOracle(*ds_), e.at("seed").get<std::uint64_t>());
      } else if (type == "batch_proposed") {
        if (pending_ || finished_) throw FormatError("batch proposed while another is pending");
        auto rec = record_from_json(*ds_, e.at("record"));
        if (rec.iteration != state_.iteration) throw FormatError("batch for the wrong iteration");
        pending_ = std::move(rec);
        pending_labels_.clear();
      } else if (type == "label") {
        if (!pending_ || e.at("iteration").get<int>() != pending_->iteration) throw FormatError("label without a batch");
        const auto k = detail::key_from_json(*ds_, e);
        if (pending_labels_.contains(k)) throw FormatError("pair labeled twice");
        pending_labels_[k] = parse_label(e.at("label").get<std::string>());
      } else if (type == "iteration_applied") {
        if (!batch_complete() || e.at("iteration").get<int>() != pending_->iteration)
          throw FormatError("iteration applied before its batch was complete");
        std::vector<Label> labels;
        for (const auto& p : pending_->batch.pairs) labels.push_back(pending_labels_.at(p.key));
        const auto prov = mode_ == OracleMode::simulated ? Provenance::simulated : Provenance::human;
        apply_labels(state_, cfg_, std::move(*pending_), labels, prov);
        pending_.reset();
        pending_labels_.clear();
      } else if (type == "finished") {
        if (pending_ || finished_) throw FormatError("finish with a pending batch");
        state_.history.push_back(record_from_json(*ds_, e.at("record")));
        finished_ = true;
      } else {
        throw FormatError("unknown event type '" + type + "'");
      }
    } catch (const json::exception& ex) {
      throw FormatError(std::string("malformed event: ") + ex.what());
    }
    log_.push_back(e);
    ++events_applied_;
  }

  void load_checkpoint(const json& c) {
    try {
      if (c.at("format").get<std::string>() != "anneal-checkpoint") throw FormatError("not a checkpoint");
      if (c.at("version").get<int>() != kCheckpointVersion) throw FormatError("unsupported checkpoint version");
      cfg_ = loop_config_from_json(c.at("config"));
      mode_ = parse_oracle_mode(c.at("oracle").get<std::string>());
      state_ = ALState{};
      state_.seed = c.at("seed").get<std::uint64_t>();
      state_.iteration = c.at("iteration").get<int>();
      for (const auto& id : c.at("seed_images")) state_.seed_images.push_back(ds_->index_of(id.get<std::string>()));
      for (const auto& p : c.at("training_set")) state_.training_set.push_back(pair_from_json(*ds_, p));
      for (const auto& r : c.at("history")) state_.history.push_back(record_from_json(*ds_, r));
      state_.bits_spent = ledger_bits(state_.training_set);
      if (state_.bits_spent != c.at("bits_spent").get<double>()) throw FormatError("bit ledger does not match training set");
      state_.pool = candidate_pool(*ds_, state_.training_set, cfg_.pool_cap, state_.seed);
      if (state_.pool.size() != c.at("pool_size").get<std::size_t>()) throw FormatError("candidate pool does not match");
      pending_.reset();
      pending_labels_.clear();
      if (!c.at("pending").is_null()) {
        pending_ = record_from_json(*ds_, c["pending"].at("record"));
        for (const auto& l : c["pending"].at("labels"))
          pending_labels_[detail::key_from_json(*ds_, l)] = parse_label(l.at("label").get<std::string>());
      }
      finished_ = c.at("finished").get<bool>();
      events_applied_ = c.at("events").get<std::size_t>();
    } catch (const json::exception& ex) {
      throw FormatError(std::string("malformed checkpoint: ") + ex.what());
    }
  }

  const Dataset* ds_;
  LoopConfig cfg_;
  OracleMode mode_ = OracleMode::simulated;
  ALState state_;
  std::optional<IterationRecord> pending_;
  std::map<PairKey, Label> pending_labels_;
  bool finished_ = false;
  std::size_t events_applied_ = 0;
  std::vector<json> log_;  // events applied in this process (all of them unless restored)
};

}  // namespace anneal
