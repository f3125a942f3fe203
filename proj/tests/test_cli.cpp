#include <gtest/gtest.h>

#include <cstdio>
#include <fstream>
#include <sstream>
#include <sys/wait.h>

#include "anneal/experiment.hpp"
#include "test_util.hpp"

using namespace anneal;

namespace {

struct Outcome {
  int code = -1;
  std::string out;
  std::string err;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

Outcome cli(const fs::path& dir, const std::string& args) {
  const auto out = dir / "stdout.txt", err = dir / "stderr.txt";
  const std::string cmd = std::string(ANNEAL_CLI) + " " + args + " >" + out.string() + " 2>" + err.string();
  const int status = std::system(cmd.c_str());
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, slurp(out), slurp(err)};
}

fs::path tiny_config(const fs::path& dir) {
  const json j{{"schema_version", 1},
               {"dataset", {{"synthetic", {{"classes", 3}, {"per_class", 16}, {"dim", 6}, {"spread", 1.0}, {"seed", 4}}}}},
               {"strategies", {"mgue", "random"}},
               {"lambdas", {3}},
               {"seeds", 2},
               {"iterations", 2},
               {"h", 5},
               {"seed_fraction", 0.1},
               {"eval_k", 3},
               {"model", {{"hidden", 8}, {"output", 4}, {"classifier", {4, 2}}}},
               {"train", {{"epochs", 2}, {"learning_rate", 0.001}}}};
  const auto p = dir / "cfg.json";
  std::ofstream(p) << j.dump(1);
  return p;
}

std::size_t lines(const std::string& s) { return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n')); }

}  // namespace

TEST(Cli, RunTwiceGivesIdenticalResults) {
  test::TempDir dir("cli-run");
  const auto cfg = tiny_config(dir.path());
  const auto a = dir.path() / "a", b = dir.path() / "b";
  ASSERT_EQ(cli(dir.path(), "run -q -c " + cfg.string() + " --seed 7 -o " + a.string()).code, 0);
  ASSERT_EQ(cli(dir.path(), "run -q -c " + cfg.string() + " --seed 7 -o " + b.string()).code, 0);
  const auto ra = slurp(a / "results.tsv");
  EXPECT_EQ(ra, slurp(b / "results.tsv"));
  EXPECT_EQ(slurp(a / "runs" / "mgue-l3-s8" / "checkpoint.json"), slurp(b / "runs" / "mgue-l3-s8" / "checkpoint.json"));
  std::istringstream in(ra);
  const auto rows = read_results(in);
  EXPECT_EQ(rows.size(), 2u * 2u * 3u);
  EXPECT_EQ(rows.front().seed, 7u);
}

TEST(Cli, CompareSweepExportEval) {
  test::TempDir dir("cli-cmp");
  const auto cfg = tiny_config(dir.path());
  const auto out = dir.path() / "cmp";
  auto r = cli(dir.path(), "compare -q -c " + cfg.string() + " --strategies mgue,random,cal --seeds 2 --iterations 1 -o " + out.string());
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(r.out.rfind("strategy\tlambda\titeration\tbits\tmap_mean", 0), 0u);
  EXPECT_EQ(lines(r.out), 1u + 3u * 2u);  // three curves, seed point + one iteration

  r = cli(dir.path(), "export --results " + (out / "results.tsv").string() + " --kind final --format csv");
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(r.out.rfind("strategy,lambda,bits,map_mean,map_std\n", 0), 0u);

  // eval retrains from the checkpoint and reproduces the recorded final point
  r = cli(dir.path(), "eval -c " + cfg.string() + " --checkpoint " + (out / "runs" / "mgue-l3-s0" / "checkpoint.json").string());
  ASSERT_EQ(r.code, 0) << r.err;
  std::ifstream in(out / "results.tsv");
  std::optional<double> recorded;
  for (const auto& row : read_results(in))
    if (row.strategy == Strategy::mgue && row.seed == 0 && row.iteration == 1) recorded = row.map;
  ASSERT_TRUE(recorded.has_value());
  EXPECT_NE(r.out.find(detail::fmt("%.10f", *recorded)), std::string::npos) << r.out;

  const auto sw = dir.path() / "sweep";
  r = cli(dir.path(), "sweep -q -c " + cfg.string() + " --lambda 1,2,3 --seeds 1 --iterations 1 -o " + sw.string());
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(lines(r.out), 4u);
  EXPECT_EQ(std::count(r.out.begin(), r.out.end(), '*'), 1);
  EXPECT_NE(r.out.find("3\t"), std::string::npos);
  EXPECT_NE(r.out.find("default"), std::string::npos);
  EXPECT_EQ(slurp(sw / "sweep.tsv"), r.out);
}

TEST(Cli, InitWritesReusableManifest) {
  test::TempDir dir("cli-init");
  const auto cfg = tiny_config(dir.path());
  const auto d = dir.path() / "data";
  auto r = cli(dir.path(), "init -c " + cfg.string() + " --seed 1 -o " + d.string());
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_TRUE(fs::exists(d / "manifest.json"));
  EXPECT_TRUE(fs::exists(d / "features.bin"));
  const auto pairs = slurp(d / "seed_pairs.tsv");
  EXPECT_EQ(pairs.rfind("lo\thi\tlabel\tprovenance\n", 0), 0u);
  EXPECT_GT(lines(pairs), 1u);
  const auto again = load_experiment_config(d / "config.json");
  EXPECT_EQ(load_dataset(again.dataset), load_dataset(load_experiment_config(cfg).dataset));
}

TEST(Cli, ErrorsExitNonzeroWithOneLine) {
  test::TempDir dir("cli-err");
  const auto cfg = tiny_config(dir.path());
  for (const std::string& args : std::vector<std::string>{"", "run --bogus", "run -c /nonexistent/cfg.json", "sweep --lambda 1,x -c " + cfg.string(),
                                 "compare --strategies mgue,greedy -c " + cfg.string(),
                                 "eval --checkpoint " + cfg.string() + " -c " + cfg.string()}) {
    const auto r = cli(dir.path(), args);
    EXPECT_NE(r.code, 0) << args;
    EXPECT_EQ(lines(r.err), 1u) << args << ": " << r.err;
    EXPECT_EQ(r.err.rfind("anneal: error: ", 0), 0u) << r.err;
  }
  std::ofstream(dir.path() / "bad.json") << "{\"dataset\": 3";
  const auto r = cli(dir.path(), "run -c " + (dir.path() / "bad.json").string());
  EXPECT_NE(r.code, 0);
  EXPECT_NE(r.err.find("bad.json"), std::string::npos);
}
