#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "red/algos.hpp"
#include "red/config.hpp"
#include "red/dataset.hpp"
#include "red/envsuite.hpp"
#include "red/sampler.hpp"

namespace red {

// Seed streams, all split from the experiment root seed:
//   dataset/<preset>            generator seed when the source gives none
//   algo/<seed>                 network init (shared by every arm)
//   sampler/<arm>/<seed>        minibatch index stream
//   eval/<arm>/<seed>           evaluation rollouts
// For the two-stage schedule the arms are "stage1" and "stage2".
std::uint64_t algo_seed(std::uint64_t root, std::uint64_t seed);
std::uint64_t sampler_seed(std::uint64_t root, const std::string& arm, std::uint64_t seed);
std::uint64_t eval_seed(std::uint64_t root, const std::string& arm, std::uint64_t seed);

// A dataset with everything derived from it, shared read-only by all runs.
struct PreparedTask {
  std::string name;
  std::shared_ptr<const OfflineDataset> dataset;
  TrajectoryReturns returns;
  std::shared_ptr<const Mdp> mdp;
  std::uint64_t checksum = 0;
};

PreparedTask prepare_task(const DatasetSource& src, std::uint64_t root_seed);
PreparedTask prepare_task(std::string name, OfflineDataset ds);

// 100 * (raw - random) / (expert - random). Throws when expert <= random.
double normalized_score(double raw, const ReferenceScores& refs);

// Evaluation steps: every multiple of eval_every up to total_steps, plus
// total_steps itself. total_steps = 0 gives the single point {0}.
std::vector<std::uint64_t> eval_schedule(std::size_t total_steps, std::size_t eval_every);

// Mean undiscounted return of the greedy policy over `episodes` rollouts.
double evaluate_policy(const Mdp& mdp, const LearnerState& state, std::size_t episodes, Rng& rng);

struct EvalPoint {
  std::uint64_t step = 0;
  double raw = 0.0;
  double normalized = 0.0;
};

struct SeedRun {
  std::uint64_t seed = 0;
  std::uint64_t algo_seed = 0;
  std::uint64_t sampler_seed = 0;
  std::vector<EvalPoint> curve;
  std::vector<std::pair<std::uint64_t, LossRecord>> losses;  // sampled at eval steps
  std::size_t final_k_used = 0;
  double final_raw = 0.0;
  double final_normalized = 0.0;
  bool aborted = false;
  std::string abort_reason;
  bool sampler_uniform_fallback = false;
  std::vector<std::string> warnings;
  // Wall-clock; kept out of the deterministic report.
  double sampler_build_seconds = 0.0;
  double train_seconds = 0.0;
};

// Mean of the last final_k curve points. Fewer points clamp k and append a
// warning.
double final_k_mean(const std::vector<EvalPoint>& curve, std::size_t final_k, std::size_t* used,
                    std::vector<std::string>* warnings, bool normalized = true);

struct ArmResult {
  std::string task;
  std::string arm;
  SamplerSpec sampler;
  std::uint64_t dataset_checksum = 0;
  ReferenceScores refs;
  std::vector<SeedRun> seeds;
  // Aggregate over completed seeds: mean and sample std of final-k means.
  double mean = 0.0;
  double std = 0.0;
  std::size_t n_completed = 0;
  std::vector<std::string> warnings;

  bool any_aborted() const;
};

void aggregate(ArmResult& arm);

struct ArmSpec {
  std::string label;
  SamplerSpec sampler;
};

// Runs every (task, arm, seed) job with up to `jobs` worker threads; the
// result order is task-major then arm. Jobs own their state, so the output
// does not depend on `jobs`.
std::vector<ArmResult> run_arms(const ExperimentConfig& cfg, const std::vector<PreparedTask>& tasks,
                                const std::vector<ArmSpec>& arms, std::size_t jobs);

// Single-stage training with cfg.sampler.
ArmResult run_training(const ExperimentConfig& cfg, const PreparedTask& task,
                       const std::string& arm = "train", std::size_t jobs = 1);

struct DeredResult {
  ArmResult stage1;
  ArmResult stage2;
  // Per seed: every trained net's head layers bitwise equal to the stage-1
  // checkpoint after stage 2.
  std::vector<bool> heads_unchanged;
  std::vector<LearnerState> stage1_states;
  std::vector<LearnerState> stage2_states;
};

// Stage 1: uniform sampler for dered.stage1_steps. The learner is written
// to an in-memory checkpoint (and to checkpoint_dir when given), reloaded,
// given fresh optimizers with the backbone lr scaled and the head frozen
// per config, then trained with cfg.sampler for dered.stage2_steps.
DeredResult two_stage_train(const ExperimentConfig& cfg, const PreparedTask& task,
                            std::size_t jobs = 1,
                            const std::filesystem::path& checkpoint_dir = {});

bool heads_equal(const nn::Mlp& a, const nn::Mlp& b);

struct Table {
  std::vector<std::string> rows;     // tasks
  std::vector<std::string> columns;  // arms
  std::vector<ArmResult> cells;      // row-major
  const ArmResult& at(std::size_t r, std::size_t c) const { return cells[r * columns.size() + c]; }
};

// Column label for a p_base sweep value ("inf" for the uniform limit).
std::string sweep_label(double p_base);

// Rows are tasks, columns cfg.sweep_values; +inf runs the uniform sampler.
Table sweep_pbase(const ExperimentConfig& cfg, const std::vector<PreparedTask>& tasks,
                  std::size_t jobs = 1);

// Arms uniform, return_resample, reward_resample, top_fraction; the
// resampling arms take alpha, p_base and fraction from cfg.sampler.
std::vector<ArmSpec> rebalance_arms(const SamplerSpec& base);
Table compare_rebalance_methods(const ExperimentConfig& cfg, const std::vector<PreparedTask>& tasks,
                                std::size_t jobs = 1);

// Report documents. JSON output is canonical (sorted keys) so identical
// inputs give identical bytes; timing goes to a separate document.
struct ExperimentReport {
  std::string kind;
  ExperimentConfig config;
  std::vector<PreparedTask> tasks;
  std::vector<ArmResult> runs;
  std::vector<bool> heads_unchanged;  // two-stage reports only
};

std::string report_json(const ExperimentReport& report);
// Per-run sampler build and training seconds with overhead_fraction; two-stage
// reports add a per-seed "pipelines" entry covering both stages.
std::string timing_json(const ExperimentReport& report);

// Long CSV: task,arm,mean,std,n_seeds.
std::string table_csv(const std::vector<ArmResult>& runs);
// Wide CSV: task, one column per arm holding the mean.
std::string wide_csv(const std::vector<ArmResult>& runs);
std::string curves_csv(const std::vector<ArmResult>& runs);

// Writes report.json, timing.json, table.csv, table_wide.csv, curves.csv
// and one loss CSV per seed run.
void write_report(const ExperimentReport& report, const std::filesystem::path& dir);

}  // namespace red
