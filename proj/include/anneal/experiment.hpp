#pragma once

// Experiment driver: every (strategy, lambda, seed) combination is a full
// simulated run; results are per-iteration rows, aggregated over seeds.

#include <cstdio>
#include <fstream>
#include <map>
#include <ostream>

#include "anneal/cal.hpp"
#include "anneal/runlog.hpp"

namespace anneal {

struct ResultRow {
  Strategy strategy = Strategy::mgue;
  std::optional<double> lambda;  // only for threshold strategies
  std::uint64_t seed = 0;
  int iteration = 0;
  double bits = 0.0;
  std::optional<double> map;
  std::optional<double> alpha;
  std::size_t batch_size = 0;
  std::size_t transitive_count = 0;

  bool operator==(const ResultRow&) const = default;
};

struct RunResult {
  Strategy strategy = Strategy::mgue;
  std::optional<double> lambda;
  std::uint64_t seed = 0;
  std::vector<ResultRow> rows;
  std::optional<std::string> checkpoint;  // pair strategies only
  std::vector<json> events;
};

struct ExperimentReport {
  std::vector<RunResult> runs;
};

/// Rows of a finished pair run, one per evaluation point.
inline std::vector<ResultRow> rows_of(const ALState& s, Strategy strategy, std::optional<double> lambda) {
  std::vector<ResultRow> out;
  for (const auto& r : s.history) {
    ResultRow row{strategy, lambda, s.seed, r.iteration, r.bits, r.map, std::nullopt, r.batch.pairs.size(), r.transitive_count};
    if (r.threshold) row.alpha = r.threshold->alpha;
    out.push_back(row);
  }
  return out;
}

inline std::vector<ResultRow> rows_of(const CALState& s) {
  std::vector<ResultRow> out;
  for (const auto& r : s.history)
    out.push_back({Strategy::cal, std::nullopt, s.seed, r.iteration, r.bits, r.map, std::nullopt, r.batch.size(), 0});
  return out;
}

/// Runs one combination with the simulated oracle.
inline RunResult run_single(const Dataset& ds, LoopConfig cfg, Strategy strategy, std::optional<double> lambda,
                            std::uint64_t seed) {
  cfg.strategy = strategy;
  if (lambda) cfg.lambda = *lambda;
  const SimulatedOracle oracle(ds);
  RunResult res{strategy, lambda, seed, {}, std::nullopt, {}};
  if (strategy == Strategy::cal) {
    res.rows = rows_of(run_cal(ds, cfg, oracle, seed));
    return res;
  }
  auto run = ALRun::create(ds, cfg, seed, OracleMode::simulated);
  run.run_to_end(oracle);
  res.rows = rows_of(run.state(), strategy, lambda);
  res.checkpoint = run.checkpoint_text();
  res.events = run.events();
  return res;
}

/// Every strategy x seed; threshold strategies additionally x lambda.
/// Lambdas are ignored (and runs not repeated) for the other strategies.
inline ExperimentReport run_experiment(const ExperimentConfig& cfg, const Dataset& ds,
                                       const std::function<void(const RunResult&)>& progress = {}) {
  cfg.validate();
  ExperimentReport rep;
  for (auto strategy : cfg.strategies) {
    std::vector<std::optional<double>> lambdas;
    if (uses_threshold(strategy))
      for (double l : cfg.lambdas) lambdas.emplace_back(l);
    else
      lambdas.emplace_back(std::nullopt);
    for (const auto& l : lambdas)
      for (auto seed : cfg.seeds) {
        rep.runs.push_back(run_single(ds, cfg.loop, strategy, l, seed));
        if (progress) progress(rep.runs.back());
      }
  }
  return rep;
}

// ---------------------------------------------------------------------------
// Tables

namespace detail {

inline std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

inline std::string opt_fmt(const char* f, const std::optional<double>& v) { return v ? fmt(f, *v) : "NA"; }

inline std::string lambda_text(const std::optional<double>& l) { return l ? fmt("%g", *l) : "-"; }

}  // namespace detail

inline constexpr const char* kResultsHeader =
    "strategy\tlambda\tseed\titeration\tbits\tmap_at_k\talpha_t\tbatch_size\ttransitive_count";

inline void write_results(std::ostream& os, const ExperimentReport& rep) {
  os << kResultsHeader << '\n';
  for (const auto& run : rep.runs)
    for (const auto& r : run.rows) {
      os << to_string(r.strategy) << '\t' << detail::lambda_text(r.lambda) << '\t' << r.seed << '\t' << r.iteration
         << '\t' << detail::fmt("%.6f", r.bits) << '\t' << detail::opt_fmt("%.10f", r.map) << '\t'
         << (r.alpha ? detail::fmt("%.10f", *r.alpha) : "-") << '\t' << r.batch_size << '\t' << r.transitive_count
         << '\n';
    }
}

inline std::vector<ResultRow> read_results(std::istream& is) {
  std::string line;
  if (!std::getline(is, line) || line != kResultsHeader) throw FormatError("results file lacks the expected header");
  std::vector<ResultRow> rows;
  std::size_t lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::size_t start = 0;
    for (std::size_t pos; (pos = line.find('\t', start)) != std::string::npos; start = pos + 1) f.push_back(line.substr(start, pos - start));
    f.push_back(line.substr(start));
    if (f.size() != 9) throw FormatError("results line " + std::to_string(lineno) + " has " + std::to_string(f.size()) + " fields");
    try {
      ResultRow r;
      r.strategy = parse_strategy(f[0]);
      if (f[1] != "-") r.lambda = std::stod(f[1]);
      r.seed = std::stoull(f[2]);
      r.iteration = std::stoi(f[3]);
      r.bits = std::stod(f[4]);
      if (f[5] != "NA") r.map = std::stod(f[5]);
      if (f[6] != "-") r.alpha = std::stod(f[6]);
      r.batch_size = std::stoull(f[7]);
      r.transitive_count = std::stoull(f[8]);
      rows.push_back(r);
    } catch (const std::logic_error&) {
      throw FormatError("results line " + std::to_string(lineno) + " does not parse");
    }
  }
  return rows;
}

/// Mean and sample standard deviation over seeds for one evaluation point.
struct CurvePoint {
  int iteration = 0;
  double bits = 0.0;
  double map_mean = 0.0;
  double map_std = 0.0;
  std::size_t n = 0;  // seeds with a defined mAP
};

struct Curve {
  Strategy strategy = Strategy::mgue;
  std::optional<double> lambda;
  std::vector<CurvePoint> points;
};

inline std::vector<Curve> aggregate(std::span<const ResultRow> rows) {
  using CurveKey = std::pair<int, double>;  // strategy, lambda (NaN-free sentinel for none)
  auto key_of = [](const ResultRow& r) { return CurveKey{static_cast<int>(r.strategy), r.lambda ? *r.lambda : -1e300}; };
  std::map<CurveKey, std::map<int, std::vector<const ResultRow*>>> groups;
  std::vector<CurveKey> order;
  for (const auto& r : rows) {
    const auto k = key_of(r);
    if (!groups.contains(k)) order.push_back(k);
    groups[k][r.iteration].push_back(&r);
  }
  std::vector<Curve> out;
  for (const auto& k : order) {
    Curve c;
    const auto& first = *groups[k].begin()->second.front();
    c.strategy = first.strategy;
    c.lambda = first.lambda;
    for (const auto& [it, members] : groups[k]) {
      CurvePoint p;
      p.iteration = it;
      double bits = 0.0, sum = 0.0;
      std::vector<double> maps;
      for (const auto* m : members) {
        bits += m->bits;
        if (m->map) maps.push_back(*m->map);
      }
      p.bits = bits / static_cast<double>(members.size());
      p.n = maps.size();
      for (double v : maps) sum += v;
      if (!maps.empty()) p.map_mean = sum / static_cast<double>(maps.size());
      if (maps.size() > 1) {
        double ss = 0.0;
        for (double v : maps) ss += (v - p.map_mean) * (v - p.map_mean);
        p.map_std = std::sqrt(ss / static_cast<double>(maps.size() - 1));
      }
      c.points.push_back(p);
    }
    out.push_back(std::move(c));
  }
  return out;
}

inline std::vector<Curve> aggregate(const ExperimentReport& rep) {
  std::vector<ResultRow> rows;
  for (const auto& r : rep.runs) rows.insert(rows.end(), r.rows.begin(), r.rows.end());
  return aggregate(rows);
}

/// Plot-ready table: one line per curve point.
inline void write_curves(std::ostream& os, std::span<const Curve> curves) {
  os << "strategy\tlambda\titeration\tbits\tmap_mean\tmap_std\tseeds\n";
  for (const auto& c : curves)
    for (const auto& p : c.points)
      os << to_string(c.strategy) << '\t' << detail::lambda_text(c.lambda) << '\t' << p.iteration << '\t'
         << detail::fmt("%.6f", p.bits) << '\t' << detail::fmt("%.10f", p.map_mean) << '\t'
         << detail::fmt("%.10f", p.map_std) << '\t' << p.n << '\n';
}

/// Trapezoidal area under mean mAP over mean bits.
inline double curve_area(const Curve& c) {
  double a = 0.0;
  for (std::size_t i = 1; i < c.points.size(); ++i)
    a += 0.5 * (c.points[i].map_mean + c.points[i - 1].map_mean) * (c.points[i].bits - c.points[i - 1].bits);
  return a;
}

struct SweepEntry {
  double lambda = 0.0;
  double area = 0.0;
  double final_map = 0.0;
  bool best = false;     // argmax by area (first on ties)
  bool is_default = false;
};

/// One entry per lambda curve of the given threshold strategy.
inline std::vector<SweepEntry> sweep_summary(std::span<const Curve> curves, Strategy strategy = Strategy::mgue,
                                             double default_lambda = LoopConfig{}.lambda) {
  std::vector<SweepEntry> out;
  for (const auto& c : curves) {
    if (c.strategy != strategy || !c.lambda || c.points.empty()) continue;
    out.push_back({*c.lambda, curve_area(c), c.points.back().map_mean, false, *c.lambda == default_lambda});
  }
  if (!out.empty()) {
    auto best = std::max_element(out.begin(), out.end(), [](const SweepEntry& a, const SweepEntry& b) { return a.area < b.area; });
    best->best = true;
  }
  return out;
}

inline void write_sweep(std::ostream& os, std::span<const SweepEntry> entries) {
  os << "lambda\tarea\tfinal_map\tbest\tdefault\n";
  for (const auto& e : entries)
    os << detail::fmt("%g", e.lambda) << '\t' << detail::fmt("%.10f", e.area) << '\t' << detail::fmt("%.10f", e.final_map)
       << '\t' << (e.best ? "*" : "") << '\t' << (e.is_default ? "default" : "") << '\n';
}

/// Final-point comparison: one line per curve.
inline void write_final_table(std::ostream& os, std::span<const Curve> curves) {
  os << "strategy\tlambda\tbits\tmap_mean\tmap_std\n";
  for (const auto& c : curves) {
    if (c.points.empty()) continue;
    const auto& p = c.points.back();
    os << to_string(c.strategy) << '\t' << detail::lambda_text(c.lambda) << '\t' << detail::fmt("%.6f", p.bits) << '\t'
       << detail::fmt("%.10f", p.map_mean) << '\t' << detail::fmt("%.10f", p.map_std) << '\n';
  }
}

}  // namespace anneal
