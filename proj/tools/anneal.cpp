// anneal: command-line driver for simulated experiments, evaluation and the
// annotation service.

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "anneal/experiment.hpp"
#include "anneal/service.hpp"

using namespace anneal;

namespace {

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  out << text;
  if (!out) throw IoError("write to '" + path.string() + "' failed");
}

std::string to_csv(const std::string& tsv) {
  std::string s = tsv;
  for (char& c : s)
    if (c == '\t') c = ',';
  return s;
}

std::string run_dir_name(const RunResult& r) {
  std::string n(to_string(r.strategy));
  if (r.lambda) n += "-l" + detail::fmt("%g", *r.lambda);
  return n + "-s" + std::to_string(r.seed);
}

// Options shared by run, sweep, ablate and compare.
struct ExperimentOptions {
  std::string config;
  std::string out = "anneal-out";
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> seeds;
  std::optional<int> iterations;
  std::optional<std::size_t> h;
  std::vector<std::string> strategies;
  std::vector<double> lambdas;
  bool quiet = false;
};

void add_experiment_options(CLI::App* sub, ExperimentOptions& o) {
  sub->add_option("-c,--config", o.config, "experiment config (JSON); default is the synthetic benchmark")
      ->check(CLI::ExistingFile);
  sub->add_option("-o,--out", o.out, "output directory")->capture_default_str();
  sub->add_option("--seed", o.seed, "first run seed; runs use seed, seed+1, ...");
  sub->add_option("--seeds", o.seeds, "number of seeds")->check(CLI::PositiveNumber);
  sub->add_option("--iterations", o.iterations, "AL iterations per run")->check(CLI::NonNegativeNumber);
  sub->add_option("--batch", o.h, "pairs labeled per iteration (h)")->check(CLI::PositiveNumber);
  sub->add_flag("-q,--quiet", o.quiet, "no progress lines on stderr");
}

ExperimentConfig resolve(const ExperimentOptions& o) {
  ExperimentConfig c = o.config.empty() ? benchmark_preset() : load_experiment_config(o.config);
  if (o.seed || o.seeds) {
    const std::uint64_t first = o.seed ? *o.seed : c.seeds.front();
    const std::size_t n = o.seeds ? *o.seeds : c.seeds.size();
    c.seeds.clear();
    for (std::size_t i = 0; i < n; ++i) c.seeds.push_back(first + i);
  }
  if (o.iterations) c.loop.iterations = *o.iterations;
  if (o.h) c.loop.h = *o.h;
  if (!o.strategies.empty()) {
    c.strategies.clear();
    for (const auto& s : o.strategies) c.strategies.push_back(parse_strategy(s));
  }
  if (!o.lambdas.empty()) c.lambdas = o.lambdas;
  c.validate();
  return c;
}

/// Runs the experiment and writes results.tsv, curves.tsv, final.tsv, the
/// resolved config and one checkpoint plus event log per pair run.
std::vector<Curve> run_and_write(const ExperimentConfig& cfg, const ExperimentOptions& o) {
  const Dataset ds = load_dataset(cfg.dataset);
  const fs::path out(o.out);
  auto progress = [&](const RunResult& r) {
    if (o.quiet || r.rows.empty()) return;
    const auto& last = r.rows.back();
    std::cerr << run_dir_name(r) << ": bits " << detail::fmt("%.1f", last.bits) << " mAP@" << cfg.loop.eval_k << ' '
              << detail::opt_fmt("%.4f", last.map) << '\n';
  };
  const auto rep = run_experiment(cfg, ds, progress);

  write_text(out / "config.json", experiment_config_to_json(cfg).dump(1) + "\n");
  std::ostringstream results, curves, fin;
  write_results(results, rep);
  write_text(out / "results.tsv", results.str());
  const auto cs = aggregate(rep);
  write_curves(curves, cs);
  write_text(out / "curves.tsv", curves.str());
  write_final_table(fin, cs);
  write_text(out / "final.tsv", fin.str());
  for (const auto& r : rep.runs) {
    if (!r.checkpoint) continue;
    const auto dir = out / "runs" / run_dir_name(r);
    write_text(dir / "checkpoint.json", *r.checkpoint);
    std::string log;
    for (const auto& e : r.events) log += e.dump() + "\n";
    write_text(dir / "events.jsonl", log);
  }
  return cs;
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string part;
  while (std::getline(ss, part, ','))
    if (!part.empty()) out.push_back(part);
  return out;
}

std::vector<double> parse_lambdas(const std::string& s) {
  std::vector<double> out;
  for (const auto& p : split_list(s)) {
    std::size_t used = 0;
    double v = 0;
    try {
      v = std::stod(p, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != p.size()) throw ConfigError("lambda '" + p + "' is not a number");
    out.push_back(v);
  }
  if (out.empty()) throw ConfigError("--lambda needs at least one value");
  return out;
}

Dataset dataset_for(const std::string& config, const std::string& manifest, fs::path* image_root = nullptr) {
  if (!manifest.empty()) {
    DatasetSpec d;
    d.manifest = fs::absolute(manifest);
    if (image_root) *image_root = d.manifest->parent_path();
    return load_dataset(d);
  }
  const auto cfg = config.empty() ? benchmark_preset() : load_experiment_config(config);
  if (image_root && cfg.dataset.manifest) *image_root = cfg.dataset.manifest->parent_path();
  return load_dataset(cfg.dataset);
}

// ---------------------------------------------------------------------------

int cmd_init(const std::string& config, const std::string& out_dir, std::optional<std::uint64_t> seed_opt) {
  ExperimentConfig cfg = config.empty() ? benchmark_preset() : load_experiment_config(config);
  const std::uint64_t seed = seed_opt ? *seed_opt : cfg.seeds.front();
  const Dataset ds = load_dataset(cfg.dataset);
  const fs::path out(out_dir);
  save_manifest(ds, out / "manifest.json", "features.bin");

  const SimulatedOracle oracle(ds);
  const auto s = init_training_set(ds, cfg.loop, oracle, seed);
  std::string tsv = "lo\thi\tlabel\tprovenance\n";
  for (const auto& p : s.training_set)
    tsv += ds.item(p.key.lo).id + '\t' + ds.item(p.key.hi).id + '\t' + std::string(to_string(p.label)) + "\tseed\n";
  write_text(out / "seed_pairs.tsv", tsv);

  // A config that points at the written manifest, so later commands reuse the splits.
  cfg.dataset.manifest = "manifest.json";
  write_text(out / "config.json", experiment_config_to_json(cfg).dump(1) + "\n");

  std::cout << "items " << ds.size() << " (train " << ds.indices_in(Split::train).size() << ", val "
            << ds.indices_in(Split::val).size() << ", test " << ds.indices_in(Split::test).size() << ")\n"
            << "seed images " << s.seed_images.size() << ", seed pairs " << s.training_set.size() << ", bits "
            << detail::fmt("%g", s.bits_spent) << '\n';
  return 0;
}

int cmd_eval(const std::string& checkpoint, const std::string& config, const std::string& manifest,
             std::optional<std::size_t> k, const std::string& report) {
  const Dataset ds = dataset_for(config, manifest);
  json cp;
  try {
    cp = json::parse(detail::read_text_file(checkpoint));
  } catch (const json::parse_error& e) {
    throw FormatError("corrupt checkpoint '" + checkpoint + "': " + e.what());
  }
  const ALRun run = ALRun::restore(ds, cp);
  LoopConfig lc = run.config();
  if (k) lc.eval_k = *k;
  // The model is not stored; retraining from the checkpointed state is deterministic.
  const auto model = fit_pair_model(run.state(), lc, ds);
  const Embedding<float> emb(model, ds);
  const auto m = evaluate_split_protocol(emb, ds, lc.eval_k, lc.ap);
  std::cout << "iteration " << run.state().iteration << " bits " << detail::fmt("%.6f", run.state().bits_spent)
            << " mAP@" << lc.eval_k << ' ' << detail::fmt("%.10f", m.map) << " queries " << m.included
            << " excluded " << m.excluded << '\n';
  if (!report.empty()) {
    std::ostringstream os;
    write_eval_report(os, m, ds);
    write_text(report, os.str());
  }
  return 0;
}

int cmd_serve(const std::string& config, const std::string& manifest, std::string data_dir, const std::string& host,
              int port) {
  if (data_dir.empty()) {
    const char* env = std::getenv("ANNEAL_DATA_ROOT");
    data_dir = env && *env ? env : "anneal-data";
  }
  fs::path image_root;
  Dataset ds = dataset_for(config, manifest, &image_root);
  Service svc(std::move(ds), data_dir, image_root);
  std::cerr << "serving " << svc.dataset().size() << " items on http://" << host << ':' << port << " (data "
            << data_dir << ")\n";
  if (!svc.listen(host, port)) throw IoError("cannot bind " + host + ":" + std::to_string(port));
  return 0;
}

int cmd_export(const std::string& results, const std::string& out, const std::string& kind, const std::string& format) {
  std::ifstream in(results);
  if (!in) throw IoError("cannot open '" + results + "'");
  const auto rows = read_results(in);
  const auto curves = aggregate(rows);
  std::ostringstream os;
  if (kind == "curves") {
    write_curves(os, curves);
  } else if (kind == "final") {
    write_final_table(os, curves);
  } else {
    write_sweep(os, sweep_summary(curves));
  }
  const std::string text = format == "csv" ? to_csv(os.str()) : os.str();
  if (out.empty() || out == "-")
    std::cout << text;
  else
    write_text(out, text);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Pair-based active learning for image retrieval"};
  app.require_subcommand(1);

  // init
  auto* init = app.add_subcommand("init", "write dataset manifest, splits and seed pairs");
  std::string init_config, init_out = "anneal-data";
  std::optional<std::uint64_t> init_seed;
  init->add_option("-c,--config", init_config, "experiment config (JSON)")->check(CLI::ExistingFile);
  init->add_option("-o,--out", init_out, "output directory")->capture_default_str();
  init->add_option("--seed", init_seed, "seed for the seed-pair draw");

  // run / sweep / ablate / compare
  ExperimentOptions run_o, sweep_o, ablate_o, compare_o;
  auto* run = app.add_subcommand("run", "simulated-oracle experiment from a config");
  add_experiment_options(run, run_o);
  std::string run_strategies, run_lambdas;
  run->add_option("--strategies", run_strategies, "comma-separated strategies");
  run->add_option("--lambda", run_lambdas, "comma-separated lambda values");

  auto* sweep = app.add_subcommand("sweep", "lambda grid for the metric-guided threshold");
  add_experiment_options(sweep, sweep_o);
  std::string sweep_lambdas = "1,2,3,4,5,6", sweep_strategy = "mgue";
  sweep->add_option("--lambda", sweep_lambdas, "comma-separated lambda values")->capture_default_str();
  sweep->add_option("--strategy", sweep_strategy, "mgue or mgue-nodiv")->capture_default_str();

  auto* ablate = app.add_subcommand("ablate", "diversity step on and off");
  add_experiment_options(ablate, ablate_o);
  std::string ablate_family = "both";
  ablate->add_option("--family", ablate_family, "mgue, bcgue or both")
      ->check(CLI::IsMember({"mgue", "bcgue", "both"}))
      ->capture_default_str();

  auto* compare = app.add_subcommand("compare", "strategies at equal bits");
  add_experiment_options(compare, compare_o);
  std::string compare_strategies = "mgue,bcgue,cal,random";
  compare->add_option("--strategies", compare_strategies, "comma-separated strategies")->capture_default_str();

  // eval
  auto* eval = app.add_subcommand("eval", "mAP@k of a checkpoint");
  std::string eval_cp, eval_config, eval_manifest, eval_report;
  std::optional<std::size_t> eval_k;
  std::optional<std::uint64_t> eval_seed;
  eval->add_option("--checkpoint", eval_cp, "checkpoint.json of a run")->required()->check(CLI::ExistingFile);
  eval->add_option("-c,--config", eval_config, "config naming the dataset")->check(CLI::ExistingFile);
  eval->add_option("--manifest", eval_manifest, "dataset manifest")->check(CLI::ExistingFile);
  eval->add_option("-k", eval_k, "cutoff (default: the run's eval_k)")->check(CLI::PositiveNumber);
  eval->add_option("--report", eval_report, "per-query report file");
  eval->add_option("--seed", eval_seed, "accepted for uniformity; the checkpoint fixes all seeds");

  // serve
  auto* serve = app.add_subcommand("serve", "HTTP annotation service");
  std::string serve_config, serve_manifest, serve_data, serve_host = "127.0.0.1";
  int serve_port = 8080;
  std::optional<std::uint64_t> serve_seed;
  serve->add_option("-c,--config", serve_config, "config naming the dataset")->check(CLI::ExistingFile);
  serve->add_option("--manifest", serve_manifest, "dataset manifest; image URIs resolve against its directory")
      ->check(CLI::ExistingFile);
  serve->add_option("--data-dir", serve_data, "run storage (default $ANNEAL_DATA_ROOT, else ./anneal-data)");
  serve->add_option("--host", serve_host)->capture_default_str();
  serve->add_option("--port", serve_port)->check(CLI::Range(1, 65535))->capture_default_str();
  serve->add_option("--seed", serve_seed, "accepted for uniformity; runs carry their own seed");

  // export
  auto* exp = app.add_subcommand("export", "plot-ready tables from a results file");
  std::string exp_results, exp_out, exp_kind = "curves", exp_format = "tsv";
  std::optional<std::uint64_t> exp_seed;
  exp->add_option("--results", exp_results, "results.tsv")->required()->check(CLI::ExistingFile);
  exp->add_option("-o,--out", exp_out, "output file (default stdout)");
  exp->add_option("--kind", exp_kind)->check(CLI::IsMember({"curves", "final", "sweep"}))->capture_default_str();
  exp->add_option("--format", exp_format)->check(CLI::IsMember({"tsv", "csv"}))->capture_default_str();
  exp->add_option("--seed", exp_seed, "accepted for uniformity");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::string msg = e.what();
    std::replace(msg.begin(), msg.end(), '\n', ' ');
    std::cerr << "anneal: error: " << msg << '\n';
    return 2;
  }

  try {
    if (*init) return cmd_init(init_config, init_out, init_seed);
    if (*run) {
      run_o.strategies = split_list(run_strategies);
      if (!run_lambdas.empty()) run_o.lambdas = parse_lambdas(run_lambdas);
      const auto cs = run_and_write(resolve(run_o), run_o);
      write_final_table(std::cout, cs);
      return 0;
    }
    if (*sweep) {
      const Strategy s = parse_strategy(sweep_strategy);
      if (!uses_threshold(s)) throw ConfigError("sweep needs a threshold strategy (mgue or mgue-nodiv)");
      sweep_o.strategies = {sweep_strategy};
      sweep_o.lambdas = parse_lambdas(sweep_lambdas);
      auto cfg = resolve(sweep_o);
      // the default marker follows the loaded config, not the swept list
      const double default_lambda = sweep_o.config.empty() ? LoopConfig{}.lambda : load_experiment_config(sweep_o.config).loop.lambda;
      const auto cs = run_and_write(cfg, sweep_o);
      std::ostringstream os;
      write_sweep(os, sweep_summary(cs, s, default_lambda));
      write_text(fs::path(sweep_o.out) / "sweep.tsv", os.str());
      std::cout << os.str();
      return 0;
    }
    if (*ablate) {
      if (ablate_family != "bcgue") ablate_o.strategies.insert(ablate_o.strategies.end(), {"mgue", "mgue-nodiv"});
      if (ablate_family != "mgue") ablate_o.strategies.insert(ablate_o.strategies.end(), {"bcgue", "bcgue-nodiv"});
      const auto cs = run_and_write(resolve(ablate_o), ablate_o);
      write_final_table(std::cout, cs);
      return 0;
    }
    if (*compare) {
      compare_o.strategies = split_list(compare_strategies);
      const auto cs = run_and_write(resolve(compare_o), compare_o);
      write_curves(std::cout, cs);
      return 0;
    }
    if (*eval) return cmd_eval(eval_cp, eval_config, eval_manifest, eval_k, eval_report);
    if (*serve) return cmd_serve(serve_config, serve_manifest, serve_data, serve_host, serve_port);
    if (*exp) return cmd_export(exp_results, exp_out, exp_kind, exp_format);
  } catch (const std::exception& e) {
    std::string msg = e.what();
    std::replace(msg.begin(), msg.end(), '\n', ' ');
    std::cerr << "anneal: error: " << msg << '\n';
    return 1;
  }
  return 1;
}
