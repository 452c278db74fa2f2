#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "red/dataset.hpp"
#include "red/nn.hpp"
#include "red/sampler.hpp"

namespace red {

// Discrete-action analogs of the four baseline families:
//   ExpectileAWR      expectile value + advantage-weighted policy extraction
//   ConservativeQ     TD learning with a logsumexp conservative penalty
//   ExpAdvRegression  TD-trained Q with exp-advantage-weighted regression
//   QPlusBC           TD-trained Q, policy maximises normalised Q plus a BC term
enum class Family { kExpectileAwr, kConservativeQ, kExpAdvRegression, kQPlusBc };

std::string to_string(Family f);
Family parse_family(std::string_view name);
const std::vector<Family>& all_families();

struct AlgoConfig {
  Family family = Family::kExpectileAwr;
  double gamma = 0.99;
  double tau_expectile = 0.7;
  double beta_awr = 3.0;
  double w_max = 100.0;
  double cql_weight = 1.0;
  double bc_weight = 1.0;
  std::size_t target_update_period = 100;
  std::size_t batch_size = 256;
  std::size_t total_steps = 20000;
  double lr = 3e-4;
  std::vector<std::size_t> hidden = {64, 64};
  nn::Activation activation = nn::Activation::kRelu;

  void validate() const;
  bool operator==(const AlgoConfig&) const = default;
};

// Scale of the Q term in the QPlusBC policy loss, as in TD3+BC:
// lambda = kQPlusBcAlpha / mean |Q|.
inline constexpr double kQPlusBcAlpha = 2.5;

// mean over u of |tau - 1{u < 0}| * u^2.
double expectile_loss(std::span<const double> u, double tau);
double expectile_loss(double u, double tau);

// min(exp(advantage / beta), w_max).
double awr_weight(double advantage, double beta, double w_max);

// logsumexp(q_row) - q_row[data_action], max-shifted.
double cql_penalty(std::span<const double> q_row, std::size_t data_action);

struct LearnerState {
  Family family = Family::kExpectileAwr;
  std::size_t obs_dim = 0;
  std::size_t n_actions = 0;
  nn::Mlp q;
  nn::Mlp q_target;
  nn::Mlp v;       // ExpectileAWR only
  nn::Mlp policy;  // absent for ConservativeQ, whose greedy policy reads q
  nn::OptimState q_opt, v_opt, policy_opt;
  bool freeze_head = false;
  std::uint64_t step = 0;

  bool has_v() const { return family == Family::kExpectileAwr; }
  bool has_policy() const { return family != Family::kConservativeQ; }
};

LearnerState init_learner(const AlgoConfig& cfg, std::size_t obs_dim, std::size_t n_actions,
                          std::uint64_t seed);

// Fresh Adam moments for every net; backbone lr scaled by backbone_mult and
// heads optionally frozen. Used between the two training stages.
void reset_optimizers(LearnerState& state, const AlgoConfig& cfg, double backbone_mult,
                      bool freeze_head);

struct LossRecord {
  double q_loss = 0.0;
  double v_loss = 0.0;
  double policy_loss = 0.0;
  double cql_penalty = 0.0;
};

// One gradient step per relevant net on the given transition indices. TD
// targets bootstrap through timeouts. Throws NanAbort on a non-finite loss.
LossRecord train_step(LearnerState& state, const AlgoConfig& cfg, const OfflineDataset& ds,
                      std::span<const std::size_t> batch);

// Draws cfg.batch_size indices from the source and trains on them.
LossRecord train_step(LearnerState& state, const AlgoConfig& cfg, const OfflineDataset& ds,
                      BatchSource& source);

// Logits the greedy policy maximises: policy net output, or Q for
// ConservativeQ. obs is obs_dim x B.
nn::Matrix policy_logits(const LearnerState& state, const nn::Matrix& obs);

// Argmax over logits, lowest index on ties.
std::size_t argmax_action(std::span<const double> logits);

class GreedyPolicy {
 public:
  explicit GreedyPolicy(const LearnerState& state) : state_(&state) {}
  std::size_t operator()(std::span<const double> obs) const;

 private:
  const LearnerState* state_;
};

GreedyPolicy extract_policy(const LearnerState& state);

// Checkpoint holds every net plus family and step counter. Loading checks
// the family and every net shape against the config; optimizer state is not
// stored.
std::string serialize_learner(const LearnerState& state);
LearnerState parse_learner(std::span<const char> bytes, const AlgoConfig& cfg, std::size_t obs_dim,
                           std::size_t n_actions);
void save_learner(const std::filesystem::path& path, const LearnerState& state);
LearnerState load_learner(const std::filesystem::path& path, const AlgoConfig& cfg,
                          std::size_t obs_dim, std::size_t n_actions);

std::string loss_csv_header();
std::string loss_csv_row(std::uint64_t step, const LossRecord& r);

}  // namespace red
