#include "red/envsuite.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>

#include "red/error.hpp"

namespace red {

namespace {

constexpr double kExpertGamma = 0.99;

}  // namespace

Mdp::Mdp(std::string name, std::size_t horizon, Tables tables)
    : name_(std::move(name)), horizon_(horizon), t_(std::move(tables)) {
  if (horizon_ == 0) throw Error(name_ + ": horizon must be positive");
  if (t_.num_actions == 0 || t_.obs_dim == 0) throw Error(name_ + ": empty action or obs space");
  const std::size_t n = num_states();
  if (t_.next.size() != n * t_.num_actions || t_.reward.size() != n * t_.num_actions ||
      t_.terminal.size() != n * t_.num_actions) {
    throw Error(name_ + ": transition tables have inconsistent sizes");
  }
  solve_expert();
  compute_reference_scores();
}

void Mdp::solve_expert() {
  const std::size_t n = num_states();
  const std::size_t na = t_.num_actions;
  std::vector<double> v(n, 0.0), q(na);
  for (int iter = 0; iter < 100000; ++iter) {
    double delta = 0.0;
    for (std::size_t s = 0; s < n; ++s) {
      double best = -INFINITY;
      for (std::size_t a = 0; a < na; ++a) {
        const std::size_t k = s * na + a;
        best = std::max(best, t_.reward[k] + (t_.terminal[k] ? 0.0 : kExpertGamma * v[t_.next[k]]));
      }
      delta = std::max(delta, std::abs(best - v[s]));
      v[s] = best;
    }
    if (delta < 1e-12) break;
  }
  expert_.resize(n);
  for (std::size_t s = 0; s < n; ++s) {
    std::size_t arg = 0;
    double best = -INFINITY;
    for (std::size_t a = 0; a < na; ++a) {
      const std::size_t k = s * na + a;
      const double val = t_.reward[k] + (t_.terminal[k] ? 0.0 : kExpertGamma * v[t_.next[k]]);
      if (val > best + 1e-9) {
        best = val;
        arg = a;
      }
    }
    expert_[s] = arg;
  }
}

void Mdp::compute_reference_scores() {
  Rng rng(kReferenceSeed);
  const PolicyFn random_policy = [&](std::size_t, std::span<const double>) {
    return static_cast<std::size_t>(rng.below(t_.num_actions));
  };
  const PolicyFn expert_policy = [&](std::size_t s, std::span<const double>) {
    return expert_[s];
  };
  double random_sum = 0.0, expert_sum = 0.0;
  for (std::size_t e = 0; e < kReferenceEpisodes; ++e) {
    random_sum += run_episode(*this, random_policy, rng).ret;
    expert_sum += run_episode(*this, expert_policy, rng).ret;
  }
  refs_.random = random_sum / static_cast<double>(kReferenceEpisodes);
  refs_.expert = expert_sum / static_cast<double>(kReferenceEpisodes);
  if (!(refs_.expert > refs_.random)) {
    throw Error(name_ + ": expert reference score does not exceed random");
  }
}

EpisodeResult run_episode(const Mdp& mdp, const PolicyFn& policy, Rng& rng) {
  EpisodeResult res;
  std::size_t s = mdp.reset(rng);
  for (std::size_t t = 0; t < mdp.horizon(); ++t) {
    const auto step = mdp.step(s, policy(s, mdp.observe(s)), rng);
    res.ret += step.reward;
    res.length = t + 1;
    s = step.next_state;
    if (step.terminal) {
      res.terminated = true;
      break;
    }
  }
  return res;
}

std::size_t mixed_action(const Mdp& mdp, std::size_t state, double quality, Rng& rng) {
  if (quality >= 1.0 || rng.uniform() < quality) return mdp.expert_action(state);
  return static_cast<std::size_t>(rng.below(mdp.num_actions()));
}

std::shared_ptr<const Mdp> mdp_dense_chain(std::size_t length, std::size_t horizon) {
  if (length < 2) throw Error("dense chain needs length >= 2");
  if (horizon < 1) throw Error("dense chain needs horizon >= 1");
  // State (pos, furthest) with pos <= furthest, indexed furthest*(furthest+1)/2 + pos.
  const auto index = [](std::size_t pos, std::size_t far) { return far * (far + 1) / 2 + pos; };
  const std::size_t n = length * (length + 1) / 2;
  const double scale = 1.0 / static_cast<double>(length - 1);
  Mdp::Tables t;
  t.num_actions = 2;
  t.obs_dim = 2;
  t.start_state = index(0, 0);
  t.next.resize(n * 2);
  t.reward.resize(n * 2);
  t.terminal.resize(n * 2);
  t.obs.resize(n * 2);
  for (std::size_t far = 0; far < length; ++far) {
    for (std::size_t pos = 0; pos <= far; ++pos) {
      const std::size_t s = index(pos, far);
      t.obs[s * 2] = static_cast<double>(pos) * scale;
      t.obs[s * 2 + 1] = static_cast<double>(far) * scale;
      // left
      const std::size_t lpos = pos == 0 ? 0 : pos - 1;
      t.next[s * 2] = index(lpos, far);
      t.reward[s * 2] = -0.1;
      t.terminal[s * 2] = 0;
      // right
      const std::size_t rpos = std::min(pos + 1, length - 1);
      const std::size_t rfar = std::max(far, rpos);
      t.next[s * 2 + 1] = index(rpos, rfar);
      t.reward[s * 2 + 1] = rfar > far ? 1.0 : -0.1;
      t.terminal[s * 2 + 1] = rpos == length - 1 ? 1 : 0;
    }
  }
  return std::make_shared<const Mdp>(
      "dense_chain_L" + std::to_string(length) + "_H" + std::to_string(horizon), horizon,
      std::move(t));
}

std::vector<bool> grid_maze_walls(std::size_t size) {
  std::vector<bool> wall(size * size, false);
  const std::size_t door_width = (size + 2) / 3;
  bool door_top = true;
  for (std::size_t x = 2; x + 1 < size; x += 3) {
    for (std::size_t y = 0; y < size; ++y) {
      const bool door = door_top ? y + door_width >= size : y < door_width;
      if (!door) wall[y * size + x] = true;
    }
    door_top = !door_top;
  }
  return wall;
}

std::shared_ptr<const Mdp> mdp_grid_maze(std::size_t size, std::size_t horizon) {
  if (size < 3) throw Error("grid maze needs size >= 3");
  if (horizon < 1) throw Error("grid maze needs horizon >= 1");
  const auto wall = grid_maze_walls(size);
  const std::size_t n = size * size;
  const std::size_t goal = n - 1;
  const double scale = 1.0 / static_cast<double>(size - 1);
  static constexpr int kDx[4] = {1, 0, -1, 0};
  static constexpr int kDy[4] = {0, 1, 0, -1};
  Mdp::Tables t;
  t.num_actions = 4;
  t.obs_dim = 2;
  t.start_state = 0;
  t.next.resize(n * 4);
  t.reward.resize(n * 4);
  t.terminal.resize(n * 4);
  t.obs.resize(n * 2);
  for (std::size_t y = 0; y < size; ++y) {
    for (std::size_t x = 0; x < size; ++x) {
      const std::size_t s = y * size + x;
      t.obs[s * 2] = static_cast<double>(x) * scale;
      t.obs[s * 2 + 1] = static_cast<double>(y) * scale;
      for (std::size_t a = 0; a < 4; ++a) {
        const auto nx = static_cast<long>(x) + kDx[a];
        const auto ny = static_cast<long>(y) + kDy[a];
        std::size_t ns = s;
        if (nx >= 0 && ny >= 0 && nx < static_cast<long>(size) && ny < static_cast<long>(size)) {
          const auto cand = static_cast<std::size_t>(ny) * size + static_cast<std::size_t>(nx);
          if (!wall[cand]) ns = cand;
        }
        const bool at_goal = ns == goal && s != goal;
        t.next[s * 4 + a] = ns;
        t.reward[s * 4 + a] = at_goal ? 1.0 : 0.0;
        t.terminal[s * 4 + a] = at_goal ? 1 : 0;
      }
    }
  }
  return std::make_shared<const Mdp>(
      "grid_maze_n" + std::to_string(size) + "_H" + std::to_string(horizon), horizon, std::move(t));
}

namespace {

bool parse_size(std::string_view text, std::size_t& out) {
  if (text.empty()) return false;
  auto res = std::from_chars(text.data(), text.data() + text.size(), out);
  return res.ec == std::errc() && res.ptr == text.data() + text.size();
}

}  // namespace

std::shared_ptr<const Mdp> make_mdp(std::string_view name) {
  const auto parse_two = [&](std::string_view prefix, char first_tag, std::size_t& a,
                             std::size_t& b) {
    if (!name.starts_with(prefix)) return false;
    auto rest = name.substr(prefix.size());
    if (rest.empty() || rest[0] != first_tag) return false;
    const auto sep = rest.find("_H");
    if (sep == std::string_view::npos) return false;
    return parse_size(rest.substr(1, sep - 1), a) && parse_size(rest.substr(sep + 2), b);
  };
  std::size_t a = 0, b = 0;
  if (parse_two("dense_chain_", 'L', a, b)) return mdp_dense_chain(a, b);
  if (parse_two("grid_maze_", 'n', a, b)) return mdp_grid_maze(a, b);
  throw Error("unknown mdp \"" + std::string(name) + "\"");
}

void GeneratorConfig::validate() const {
  if (n_trajectories == 0) throw ConfigError("generator: n_trajectories must be positive");
  if (mixture.empty()) throw ConfigError("generator: mixture must be non-empty");
  double total = 0.0;
  for (const auto& c : mixture) {
    if (!(c.weight > 0.0)) throw ConfigError("generator: mixture weights must be positive");
    if (!(c.quality >= 0.0 && c.quality <= 1.0)) {
      throw ConfigError("generator: quality levels must lie in [0, 1]");
    }
    total += c.weight;
  }
  if (std::abs(total - 1.0) > 1e-9) throw ConfigError("generator: mixture weights must sum to 1");
}

OfflineDataset generate_dataset(const GeneratorConfig& cfg) {
  cfg.validate();
  const auto mdp = make_mdp(cfg.mdp);
  DatasetMeta meta{mdp->obs_dim(), mdp->action_space(), mdp->name(), cfg.seed};
  DatasetBuilder builder(meta);
  Rng rng(cfg.seed);
  for (std::size_t e = 0; e < cfg.n_trajectories; ++e) {
    double u = rng.uniform();
    double quality = cfg.mixture.back().quality;
    for (const auto& c : cfg.mixture) {
      if (u < c.weight) {
        quality = c.quality;
        break;
      }
      u -= c.weight;
    }
    std::size_t s = mdp->reset(rng);
    for (std::size_t t = 0; t < mdp->horizon(); ++t) {
      const std::size_t a = mixed_action(*mdp, s, quality, rng);
      const auto step = mdp->step(s, a, rng);
      const double action = static_cast<double>(a);
      const bool timeout = !step.terminal && t + 1 == mdp->horizon();
      builder.add(mdp->observe(s), std::span<const double>(&action, 1), step.reward,
                  mdp->observe(step.next_state), step.terminal, timeout);
      s = step.next_state;
      if (step.terminal) break;
    }
  }
  return std::move(builder).build();
}

const std::vector<std::string>& preset_names() {
  static const std::vector<std::string> names = {"replay_analog", "expert_analog",
                                                 "sparse_analog", "sparse_hard_analog"};
  return names;
}

GeneratorConfig preset_config(std::string_view preset, std::uint64_t seed) {
  GeneratorConfig cfg;
  cfg.seed = seed;
  if (preset == "replay_analog") {
    cfg.mdp = "dense_chain_L30_H40";
    cfg.n_trajectories = 200;
    cfg.mixture = {{0.05, 0.7}, {0.3, 0.2}, {0.9, 0.1}};
  } else if (preset == "expert_analog") {
    cfg.mdp = "dense_chain_L50_H50";
    cfg.n_trajectories = 200;
    cfg.mixture = {{0.3, 0.5}, {1.0, 0.5}};
  } else if (preset == "sparse_analog") {
    cfg.mdp = "grid_maze_n8_H64";
    cfg.n_trajectories = 200;
    cfg.mixture = {{0.3, 0.5}, {0.6, 0.5}};
  } else if (preset == "sparse_hard_analog") {
    cfg.mdp = "grid_maze_n12_H96";
    cfg.n_trajectories = 300;
    cfg.mixture = {{0.1, 0.6}, {0.3, 0.3}, {0.6, 0.1}};
  } else {
    throw ConfigError("unknown preset \"" + std::string(preset) + "\"");
  }
  return cfg;
}

}  // namespace red
