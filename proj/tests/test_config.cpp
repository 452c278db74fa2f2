#include <cmath>

#include "doctest.h"
#include "json.hpp"
#include "red/config.hpp"
#include "red/error.hpp"

using namespace red;
using nlohmann::json;

TEST_CASE("empty document gives defaults") {
  const auto c = parse_experiment_config("{}");
  CHECK(c == ExperimentConfig{});
  CHECK(c.dataset.preset == "replay_analog");
  CHECK(std::isinf(c.sweep_values.back()));
}

TEST_CASE("fields parse") {
  const auto c = parse_experiment_config(R"({
    "root_seed": 42,
    "dataset": {"preset": "sparse_hard", "seed": 7, "n_trajectories": 30},
    "algo": {"family": "conservative_q", "hidden": [8, 4], "lr": 0.01, "activation": "tanh"},
    "sampler": {"mode": "top_fraction", "fraction": 0.25},
    "eval": {"seeds": [3], "final_k": 2},
    "dered": {"stage1_steps": 5, "freeze_head": false},
    "sweep_values": [0, "inf"]
  })");
  CHECK(c.root_seed == 42);
  CHECK(c.dataset.preset == "sparse_hard");
  CHECK(c.dataset.seed == 7u);
  CHECK(c.dataset.n_trajectories == 30);
  CHECK(c.algo.family == Family::kConservativeQ);
  CHECK(c.algo.hidden == std::vector<std::size_t>{8, 4});
  CHECK(c.algo.activation == nn::Activation::kTanh);
  CHECK(c.sampler.mode == SamplerMode::kTopFraction);
  CHECK(c.sampler.fraction == 0.25);
  CHECK(c.eval.seeds == std::vector<std::uint64_t>{3});
  REQUIRE(c.dered.has_value());
  CHECK(c.dered->stage1_steps == 5);
  CHECK(c.dered->stage2_steps == DeredConfig{}.stage2_steps);
  CHECK_FALSE(c.dered->freeze_head);
  REQUIRE(c.sweep_values.size() == 2);
  CHECK(std::isinf(c.sweep_values[1]));
  CHECK(c.task_list().size() == 1);
}

TEST_CASE("strict parsing rejects unknown keys, wrong types and invalid values") {
  const char* bad[] = {
      R"({"rootseed": 1})",
      R"({"algo": {"famliy": "conservative_q"}})",
      R"({"algo": {"family": "sac"}})",
      R"({"algo": {"lr": "fast"}})",
      R"({"algo": {"batch_size": -1}})",
      R"({"algo": {"batch_size": 1.5}})",
      R"({"algo": {"gamma": 1.5}})",
      R"({"sampler": {"alpha": -1}})",
      R"({"sampler": {"p_base": -0.1}})",
      R"({"sampler": {"fraction": 0}})",
      R"({"sampler": {"mode": "prioritized"}})",
      R"({"sampler": {"seed": 3}})",
      R"({"eval": {"seeds": []}})",
      R"({"eval": {"eval_every": 0}})",
      R"({"dataset": {"preset": "replay_analog", "path": "x.ords"}})",
      R"({"dataset": {}})",
      R"({"sweep_values": ["large"]})",
      R"({"sweep_values": [-1]})",
      R"([1, 2])",
      R"({"root_seed": 1)",
  };
  for (const std::string text : bad) {
    CAPTURE(text);
    CHECK_THROWS_AS(parse_experiment_config(text), ConfigError);
  }
}

TEST_CASE("canonical JSON round-trips") {
  ExperimentConfig c;
  c.root_seed = 9;
  c.tasks = {{"expert_analog", "", 3, 0}, {"", "/tmp/x.ords", std::nullopt, 0}};
  c.dered = DeredConfig{};
  c.algo.hidden = {5};
  const auto text = experiment_config_json(c, 2);
  CHECK(parse_experiment_config(text) == c);
  CHECK(experiment_config_json(parse_experiment_config(text), 2) == text);
  const auto j = json::parse(text);
  CHECK(j.at("sweep_values").back() == "inf");
  CHECK(j.at("eval").at("seeds").size() == 5);
}

TEST_CASE("overrides") {
  const auto base = experiment_config_json(ExperimentConfig{});
  SUBCASE("valid") {
    const auto out = apply_overrides(base, {"sampler.alpha=0.5", "algo.hidden=[16]", "eval.seeds=[1,2]",
                                            "algo.family=q_plus_bc", "dataset.seed=4", "root_seed=11"});
    const auto c = parse_experiment_config(out);
    CHECK(c.sampler.alpha == 0.5);
    CHECK(c.algo.hidden == std::vector<std::size_t>{16});
    CHECK(c.eval.seeds == std::vector<std::uint64_t>{1, 2});
    CHECK(c.algo.family == Family::kQPlusBc);
    CHECK(c.dataset.seed == 4u);
    CHECK(c.root_seed == 11);
  }
  SUBCASE("missing sections are created") {
    const auto c = parse_experiment_config(apply_overrides("{}", {"dered.stage2_steps=0", "algo.lr=0.1"}));
    REQUIRE(c.dered.has_value());
    CHECK(c.dered->stage2_steps == 0);
    CHECK(c.algo.lr == 0.1);
  }
  SUBCASE("integers are accepted for real fields") {
    CHECK(parse_experiment_config(apply_overrides(base, {"sampler.p_base=1"})).sampler.p_base == 1.0);
  }
  SUBCASE("errors") {
    const char* bad[] = {"sampler.alhpa=1", "sampler.alpha=fast", "algo.hidden=3", "algo=1",
                         "nopath", "=1", "algo.lr.x=1", "eval.seeds=[\"a\"]"};
    for (const char* o : bad) {
      CAPTURE(o);
      CHECK_THROWS_AS(apply_overrides(base, {o}), ConfigError);
    }
  }
}

TEST_CASE("describe_source") {
  CHECK(describe_source({"replay_analog", "", std::nullopt, 0}).find("replay_analog") != std::string::npos);
  CHECK(describe_source({"", "/a/b.ords", std::nullopt, 0}).find("b.ords") != std::string::npos);
}
