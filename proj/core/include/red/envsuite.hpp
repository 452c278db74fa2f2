#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "red/dataset.hpp"
#include "red/rng.hpp"

namespace red {

struct StepResult {
  std::size_t next_state = 0;
  double reward = 0.0;
  bool terminal = false;
};

struct ReferenceScores {
  double random = 0.0;
  double expert = 0.0;
};

// Small deterministic MDP stored as dense tables. Observations are fixed
// real vectors per state; the action space is discrete.
class Mdp {
 public:
  struct Tables {
    std::size_t num_actions = 0;
    std::size_t obs_dim = 0;
    std::size_t start_state = 0;
    std::vector<std::size_t> next;      // [state * num_actions + action]
    std::vector<double> reward;         // same layout
    std::vector<std::uint8_t> terminal; // same layout
    std::vector<double> obs;            // [state * obs_dim + k]
  };

  // Runs value iteration and the reference-score rollouts.
  Mdp(std::string name, std::size_t horizon, Tables tables);

  const std::string& name() const { return name_; }
  std::size_t obs_dim() const { return t_.obs_dim; }
  std::size_t num_actions() const { return t_.num_actions; }
  std::size_t num_states() const { return t_.obs.size() / t_.obs_dim; }
  std::size_t horizon() const { return horizon_; }
  ActionSpace action_space() const { return ActionSpace::discrete(t_.num_actions); }

  std::size_t reset(Rng&) const { return t_.start_state; }
  StepResult step(std::size_t state, std::size_t action, Rng&) const {
    const std::size_t k = state * t_.num_actions + action;
    return {t_.next[k], t_.reward[k], t_.terminal[k] != 0};
  }
  std::span<const double> observe(std::size_t state) const {
    return {t_.obs.data() + state * t_.obs_dim, t_.obs_dim};
  }

  // Greedy action of the discounted optimal policy (gamma = 0.99), lowest
  // index on ties.
  std::size_t expert_action(std::size_t state) const { return expert_[state]; }
  const ReferenceScores& reference_scores() const { return refs_; }

 private:
  void solve_expert();
  void compute_reference_scores();

  std::string name_;
  std::size_t horizon_;
  Tables t_;
  std::vector<std::size_t> expert_;
  ReferenceScores refs_;
};

inline constexpr std::size_t kReferenceEpisodes = 10000;
inline constexpr std::uint64_t kReferenceSeed = 0x5eed5c0e;

// Chain of positions 0..L-1 starting at 0, actions {0: left, 1: right}.
// Reaching a position beyond the furthest one visited so far pays +1; every
// other step pays -0.1. The episode terminates on reaching L-1. The state
// tracks (position, furthest) so an oscillating policy cannot farm reward;
// the observation is both, normalised to [0, 1].
std::shared_ptr<const Mdp> mdp_dense_chain(std::size_t length, std::size_t horizon);

// n x n grid, start (0, 0), goal (n-1, n-1), actions {+x, +y, -x, -y}.
// Moves into walls or off the grid leave the agent in place. Reward 1 on
// entering the goal (terminal), 0 otherwise. Observation (x, y) / (n - 1).
// Walls: every third column x = 2, 5, 8, ... (excluding the last column)
// is blocked except for a doorway of (n + 2) / 3 cells that alternates
// between the top and bottom edges, starting at the top.
std::shared_ptr<const Mdp> mdp_grid_maze(std::size_t size, std::size_t horizon);

// Parses canonical names "dense_chain_L<l>_H<h>" and "grid_maze_n<n>_H<h>".
std::shared_ptr<const Mdp> make_mdp(std::string_view name);

std::vector<bool> grid_maze_walls(std::size_t size);

// Maps (state, observation) to an action.
using PolicyFn = std::function<std::size_t(std::size_t state, std::span<const double> obs)>;

struct EpisodeResult {
  double ret = 0.0;
  std::size_t length = 0;
  bool terminated = false;
};

EpisodeResult run_episode(const Mdp& mdp, const PolicyFn& policy, Rng& rng);

// Epsilon-greedy blend of uniform-random (quality 0) and the expert
// (quality 1): the expert action is taken with probability `quality`.
std::size_t mixed_action(const Mdp& mdp, std::size_t state, double quality, Rng& rng);

struct MixtureComponent {
  double quality = 0.0;
  double weight = 0.0;
  bool operator==(const MixtureComponent&) const = default;
};

struct GeneratorConfig {
  std::string mdp;  // canonical MDP name
  std::size_t n_trajectories = 0;
  std::vector<MixtureComponent> mixture;
  std::uint64_t seed = 0;

  void validate() const;
  bool operator==(const GeneratorConfig&) const = default;
};

// Pure function of the config: same seed, bit-identical dataset.
OfflineDataset generate_dataset(const GeneratorConfig& cfg);

// Named presets: replay_analog, expert_analog, sparse_analog,
// sparse_hard_analog.
GeneratorConfig preset_config(std::string_view preset, std::uint64_t seed);
const std::vector<std::string>& preset_names();

}  // namespace red
