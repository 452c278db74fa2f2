#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace red {

struct ActionSpace {
  enum class Kind { kDiscrete, kBox };

  Kind kind = Kind::kDiscrete;
  // Number of actions for discrete spaces, dimension for box spaces.
  std::size_t size = 0;

  static ActionSpace discrete(std::size_t n) { return {Kind::kDiscrete, n}; }
  static ActionSpace box(std::size_t d) { return {Kind::kBox, d}; }

  // Number of f64 slots an action occupies in storage.
  std::size_t width() const { return kind == Kind::kDiscrete ? 1 : size; }
  bool is_discrete() const { return kind == Kind::kDiscrete; }

  bool operator==(const ActionSpace&) const = default;
};

struct DatasetMeta {
  std::size_t obs_dim = 0;
  ActionSpace action;
  std::string env_name;
  std::uint64_t seed = 0;

  bool operator==(const DatasetMeta&) const = default;
};

struct Transition {
  std::vector<double> obs;
  // One slot holding the index for discrete spaces.
  std::vector<double> action;
  double reward = 0.0;
  std::vector<double> next_obs;
  bool terminal = false;  // environment termination
  bool timeout = false;   // horizon cutoff, bootstraps like a non-terminal

  bool operator==(const Transition&) const = default;
};

// Half-open transition range [start, end) of one trajectory.
struct TrajectoryBounds {
  std::size_t start = 0;
  std::size_t end = 0;

  std::size_t length() const { return end - start; }
  bool operator==(const TrajectoryBounds&) const = default;
};

// Flat, immutable transition store plus trajectory index. Construction
// validates every structural invariant; a constructed dataset is always
// well-formed.
class OfflineDataset {
 public:
  OfflineDataset(DatasetMeta meta, std::vector<double> obs, std::vector<double> actions,
                 std::vector<double> rewards, std::vector<double> next_obs,
                 std::vector<std::uint8_t> terminal, std::vector<std::uint8_t> timeout,
                 std::vector<TrajectoryBounds> bounds);

  const DatasetMeta& meta() const { return meta_; }
  std::size_t size() const { return rewards_.size(); }
  std::size_t num_trajectories() const { return bounds_.size(); }
  const std::vector<TrajectoryBounds>& trajectories() const { return bounds_; }

  std::span<const double> obs(std::size_t i) const {
    return {obs_.data() + i * meta_.obs_dim, meta_.obs_dim};
  }
  std::span<const double> next_obs(std::size_t i) const {
    return {next_obs_.data() + i * meta_.obs_dim, meta_.obs_dim};
  }
  std::span<const double> action(std::size_t i) const {
    const std::size_t w = meta_.action.width();
    return {actions_.data() + i * w, w};
  }
  std::size_t discrete_action(std::size_t i) const {
    return static_cast<std::size_t>(actions_[i]);
  }
  double reward(std::size_t i) const { return rewards_[i]; }
  bool terminal(std::size_t i) const { return terminal_[i] != 0; }
  bool timeout(std::size_t i) const { return timeout_[i] != 0; }

  std::span<const double> rewards() const { return rewards_; }
  Transition transition(std::size_t i) const;

  bool operator==(const OfflineDataset&) const = default;

 private:
  void validate() const;

  DatasetMeta meta_;
  std::vector<double> obs_;
  std::vector<double> actions_;
  std::vector<double> rewards_;
  std::vector<double> next_obs_;
  std::vector<std::uint8_t> terminal_;
  std::vector<std::uint8_t> timeout_;
  std::vector<TrajectoryBounds> bounds_;
};

// Appends transitions in order. A trajectory closes on the first transition
// flagged terminal or timeout.
class DatasetBuilder {
 public:
  explicit DatasetBuilder(DatasetMeta meta) : meta_(std::move(meta)) {}

  void add(std::span<const double> obs, std::span<const double> action, double reward,
           std::span<const double> next_obs, bool terminal, bool timeout);
  void add(const Transition& t) { add(t.obs, t.action, t.reward, t.next_obs, t.terminal, t.timeout); }

  std::size_t size() const { return rewards_.size(); }

  // Throws if the last trajectory is still open.
  OfflineDataset build() &&;

 private:
  DatasetMeta meta_;
  std::vector<double> obs_, actions_, rewards_, next_obs_;
  std::vector<std::uint8_t> terminal_, timeout_;
  std::vector<TrajectoryBounds> bounds_;
  std::size_t open_start_ = 0;
};

struct TrajectoryReturns {
  std::vector<double> returns;  // one per trajectory, undiscounted
  double r_min = 0.0;
  double r_max = 0.0;
  std::vector<double> per_transition_return;
  std::vector<std::size_t> trajectory_of;  // transition -> trajectory index

  bool degenerate() const { return r_max == r_min; }
};

TrajectoryReturns compute_trajectory_returns(const OfflineDataset& ds);

// Min-max normalisation plus floor: (v - min)/(max - min) + p_base, or
// 1 + p_base everywhere when max == min. Throws on negative p_base.
std::vector<double> min_max_weights(std::span<const double> values, double p_base);

// Per-transition normalised trajectory return.
std::vector<double> normalized_return(const TrajectoryReturns& tr, double p_base);

struct Histogram {
  std::vector<double> bin_edges;  // counts.size() + 1 entries
  std::vector<std::size_t> counts;
};

// Equal-width bins over [r_min, r_max]; the last bin is closed. A degenerate
// span yields a single bin [r, r].
Histogram return_histogram(const TrajectoryReturns& tr, std::size_t bins);
std::string histogram_csv(const Histogram& h);

struct ReturnSummary {
  std::size_t n_transitions = 0;
  std::size_t n_trajectories = 0;
  double mean = 0.0;
  double median = 0.0;
  double min = 0.0;
  double max = 0.0;

  bool right_skewed() const { return median < mean; }
};

ReturnSummary summarize_returns(const TrajectoryReturns& tr);

inline constexpr char kDatasetMagic[] = "ORDS";
inline constexpr std::uint32_t kDatasetVersion = 1;

std::string serialize_dataset(const OfflineDataset& ds);
OfflineDataset parse_dataset(std::span<const char> bytes);

void save_dataset(const OfflineDataset& ds, const std::filesystem::path& path);
OfflineDataset load_dataset(const std::filesystem::path& path);

// FNV-1a over the serialized bytes; equal checksums mean equal files.
std::uint64_t dataset_checksum(const OfflineDataset& ds);

}  // namespace red
