#pragma once

#include <cstddef>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "red/algos.hpp"
#include "red/sampler.hpp"

namespace red {

// Where a task's dataset comes from: a named generator preset, or an
// existing .ords file.
struct DatasetSource {
  std::string preset;
  std::string path;
  // Generator seed; when unset it is derived from the root seed.
  std::optional<std::uint64_t> seed;
  // 0 keeps the preset's trajectory count.
  std::size_t n_trajectories = 0;

  bool operator==(const DatasetSource&) const = default;
};

struct EvalConfig {
  std::size_t eval_every = 1000;
  std::size_t episodes_per_eval = 10;
  std::size_t final_k = 10;
  std::vector<std::uint64_t> seeds = {0, 1, 2, 3, 4};

  bool operator==(const EvalConfig&) const = default;
};

struct DeredConfig {
  std::size_t stage1_steps = 10000;
  std::size_t stage2_steps = 4000;
  double backbone_lr_mult = 0.1;
  // false selects the all-layers variant.
  bool freeze_head = true;

  bool operator==(const DeredConfig&) const = default;
};

struct ExperimentConfig {
  std::uint64_t root_seed = 0;
  DatasetSource dataset{"replay_analog", "", std::nullopt, 0};
  // Rows of sweep/compare tables; empty means just `dataset`.
  std::vector<DatasetSource> tasks;
  AlgoConfig algo;
  // `seed` is ignored here; sampler seeds come from the root seed.
  SamplerSpec sampler;
  EvalConfig eval;
  std::optional<DeredConfig> dered;
  // p_base sweep columns; +infinity (written "inf") is the uniform sampler.
  std::vector<double> sweep_values = {0.0, 0.2, 0.5, 1.0,
                                      std::numeric_limits<double>::infinity()};
  std::size_t jobs = 1;

  void validate() const;
  std::vector<DatasetSource> task_list() const;
  bool operator==(const ExperimentConfig&) const = default;
};

// Strict parse: unknown keys and wrong types raise ConfigError.
ExperimentConfig parse_experiment_config(std::string_view json_text);

// Canonical JSON (sorted keys, every field present).
std::string experiment_config_json(const ExperimentConfig& cfg, int indent = -1);

// Applies dotted-path overrides ("sampler.alpha=1.0") to a config document.
// Paths must exist in the config schema and values must match the schema
// type; violations raise ConfigError. Values are parsed as JSON, falling
// back to a plain string.
std::string apply_overrides(std::string_view json_text, const std::vector<std::string>& overrides);

std::string describe_source(const DatasetSource& src);

}  // namespace red
