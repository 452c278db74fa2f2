#include <cstdlib>
#include <sstream>

#include "doctest.h"
#include "fixtures.hpp"
#include "json.hpp"
#include "red/binary_io.hpp"
#include "red/cli.hpp"

using nlohmann::json;

namespace {

struct Result {
  int code;
  std::string out, err;
};

Result cli(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = red::cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

const std::vector<std::string> kSmall = {
    "--set", "algo.hidden=[8]",      "--set", "algo.batch_size=16", "--set", "algo.total_steps=20",
    "--set", "eval.eval_every=10",   "--set", "eval.episodes_per_eval=1", "--set", "eval.final_k=2",
    "--set", "eval.seeds=[1]"};

std::vector<std::string> with_small(std::vector<std::string> args) {
  args.insert(args.end(), kSmall.begin(), kSmall.end());
  return args;
}

std::string slurp(const std::filesystem::path& p) { return red::io::read_file(p); }

}  // namespace

TEST_CASE("usage errors exit 1, help exits 0") {
  CHECK(cli({}).code == red::cli::kUsage);
  CHECK(cli({"frobnicate"}).code == red::cli::kUsage);
  CHECK(cli({"gen", "--preset", "replay_analog"}).code == red::cli::kUsage);  // missing -o
  CHECK(cli({"stats", "--bogus"}).code == red::cli::kUsage);
  const auto help = cli({"--help"});
  CHECK(help.code == red::cli::kOk);
  CHECK(help.out.find("rebalance-preview") != std::string::npos);
  CHECK(cli({"train", "--help"}).code == red::cli::kOk);
}

TEST_CASE("gen is deterministic and rejects unknown presets") {
  fixture::TempDir dir("cli_gen");
  const auto a = (dir / "a.ords").string(), b = (dir / "b.ords").string();
  const auto r = cli({"gen", "--preset", "replay_analog", "--seed", "3", "-o", a});
  CHECK(r.code == 0);
  CHECK(r.out.find("checksum") != std::string::npos);
  CHECK(cli({"gen", "--preset", "replay_analog", "--seed", "3", "-o", b}).code == 0);
  CHECK(slurp(a) == slurp(b));
  CHECK(cli({"gen", "--preset", "replay_analog", "--seed", "4", "-o", b}).code == 0);
  CHECK(slurp(a) != slurp(b));
  const auto bad = cli({"gen", "--preset", "nope", "-o", b});
  CHECK(bad.code == red::cli::kUsage);
  CHECK(bad.err.find("nope") != std::string::npos);
}

TEST_CASE("stats and rebalance-preview") {
  fixture::TempDir dir("cli_stats");
  const auto data = (dir / "d.ords").string();
  REQUIRE(cli({"gen", "--preset", "expert_analog", "-o", data}).code == 0);
  const auto s = cli({"stats", "-d", data, "--bins", "5", "--csv", (dir / "h.csv").string()});
  CHECK(s.code == 0);
  CHECK(slurp(dir / "h.csv").find('\n') != std::string::npos);

  const auto uni = cli({"rebalance-preview", "-d", data, "--alpha", "0"});
  CHECK(uni.code == 0);
  CHECK(uni.out.find("uniform, deviation 0") != std::string::npos);
  const auto skew = cli({"rebalance-preview", "-d", data, "--alpha", "1", "--csv", (dir / "p.csv").string()});
  CHECK(skew.out.find("non-uniform") != std::string::npos);
  CHECK(slurp(dir / "p.csv").rfind("index,weight,probability\n", 0) == 0);
  const auto sweep = cli({"rebalance-preview", "-d", data, "--sweep", "0,1,10"});
  CHECK(sweep.code == 0);
  CHECK(sweep.out.find("p_base,max_deviation,zero_mass_fraction") != std::string::npos);
  CHECK(cli({"rebalance-preview", "-d", data, "--mode", "bogus"}).code != 0);
  CHECK(cli({"stats", "-d", (dir / "missing.ords").string()}).code == red::cli::kUsage);
}

TEST_CASE("corrupt datasets are runtime errors") {
  fixture::TempDir dir("cli_corrupt");
  red::io::write_file(dir / "bad.ords", "not a dataset");
  const auto r = cli({"stats", "-d", (dir / "bad.ords").string()});
  CHECK(r.code == red::cli::kRuntime);
  CHECK(r.err.find("magic") != std::string::npos);
}

TEST_CASE("train runs are reproducible") {
  fixture::TempDir dir("cli_train");
  const auto a = (dir / "a").string(), b = (dir / "b").string();
  REQUIRE(cli(with_small({"train", "-o", a})).code == 0);
  REQUIRE(cli(with_small({"train", "-o", b})).code == 0);
  CHECK(slurp(dir / "a" / "report.json") == slurp(dir / "b" / "report.json"));
  CHECK(std::filesystem::exists(dir / "a" / "timing.json"));
}

TEST_CASE("config errors exit 2") {
  fixture::TempDir dir("cli_cfg");
  red::io::write_file(dir / "c.json", R"({"algo": {"famliy": "x"}})");
  CHECK(cli({"train", "-c", (dir / "c.json").string(), "-o", (dir / "o").string()}).code == red::cli::kConfig);
  CHECK(cli({"train", "--set", "sampler.alhpa=1", "-o", (dir / "o").string()}).code == red::cli::kConfig);
  CHECK(cli({"train", "--set", "sampler.alpha=x", "-o", (dir / "o").string()}).code == red::cli::kConfig);
}

TEST_CASE("root seed environment override") {
  fixture::TempDir dir("cli_env");
  ::setenv(red::cli::kRootSeedEnv, "123", 1);
  const auto r = cli(with_small({"train", "-o", (dir / "a").string()}));
  ::unsetenv(red::cli::kRootSeedEnv);
  REQUIRE(r.code == 0);
  CHECK(json::parse(slurp(dir / "a" / "report.json"))["config"]["root_seed"] == 123);
  ::setenv(red::cli::kRootSeedEnv, "twelve", 1);
  const auto bad = cli(with_small({"train", "-o", (dir / "b").string()}));
  ::unsetenv(red::cli::kRootSeedEnv);
  CHECK(bad.code == red::cli::kConfig);
}

TEST_CASE("dered with zero stage-2 steps") {
  fixture::TempDir dir("cli_dered");
  const auto r = cli(with_small({"dered", "--set", "dered.stage1_steps=20", "--set", "dered.stage2_steps=0",
                                 "-o", (dir / "d").string()}));
  REQUIRE(r.code == 0);
  const auto j = json::parse(slurp(dir / "d" / "report.json"));
  REQUIRE(j["runs"].size() == 2);
  CHECK(j["runs"][0]["mean"] == j["runs"][1]["mean"]);
  CHECK(j["heads_unchanged"][0] == true);
}

TEST_CASE("compare and report merging") {
  fixture::TempDir dir("cli_cmp");
  const auto c = (dir / "cmp").string(), t = (dir / "tr").string(), x = (dir / "other").string();
  REQUIRE(cli(with_small({"compare", "-o", c})).code == 0);
  const auto table = slurp(dir / "cmp" / "table.csv");
  CHECK(table.rfind("task,arm,mean,std,n_seeds\n", 0) == 0);
  CHECK(std::count(table.begin(), table.end(), '\n') == 5);
  for (const char* arm : {"uniform", "return_resample", "reward_resample", "top_fraction"}) {
    CHECK(table.find(std::string(",") + arm + ",") != std::string::npos);
  }
  REQUIRE(cli(with_small({"train", "-o", t})).code == 0);
  const auto merged = cli({"report", c, t, "-o", (dir / "m").string()});
  REQUIRE(merged.code == 0);
  CHECK(merged.out.find(" *") != std::string::npos);
  const auto mcsv = slurp(dir / "m" / "merged.csv");
  CHECK(mcsv.rfind("task,arm,mean,std,n_seeds,best\n", 0) == 0);
  CHECK(std::count(mcsv.begin(), mcsv.end(), '\n') == 6);
  CHECK(std::filesystem::exists(dir / "m" / "merged.txt"));
  // Same arm twice gets a directory prefix.
  const auto dup = cli({"report", t, t});
  CHECK(dup.code == 0);

  REQUIRE(cli(with_small({"train", "--set", "dataset.preset=expert_analog", "-o", x})).code == 0);
  const auto mismatch = cli({"report", c, x});
  CHECK(mismatch.code == red::cli::kConfig);
  CHECK(mismatch.err.find("expert_analog") != std::string::npos);
}
