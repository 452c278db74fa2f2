#include "red/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "json.hpp"
#include "red/binary_io.hpp"
#include "red/csv.hpp"
#include "red/error.hpp"
#include "red/rng.hpp"

namespace red {

using nlohmann::json;

OfflineDataset::OfflineDataset(DatasetMeta meta, std::vector<double> obs,
                               std::vector<double> actions, std::vector<double> rewards,
                               std::vector<double> next_obs, std::vector<std::uint8_t> terminal,
                               std::vector<std::uint8_t> timeout,
                               std::vector<TrajectoryBounds> bounds)
    : meta_(std::move(meta)),
      obs_(std::move(obs)),
      actions_(std::move(actions)),
      rewards_(std::move(rewards)),
      next_obs_(std::move(next_obs)),
      terminal_(std::move(terminal)),
      timeout_(std::move(timeout)),
      bounds_(std::move(bounds)) {
  validate();
}

void OfflineDataset::validate() const {
  const std::size_t n = rewards_.size();
  if (meta_.obs_dim == 0) throw Error("dataset: obs_dim must be positive");
  if (meta_.action.size == 0) throw Error("dataset: action space must be non-empty");
  if (obs_.size() != n * meta_.obs_dim || next_obs_.size() != n * meta_.obs_dim) {
    throw Error("dataset: observation arrays do not match obs_dim");
  }
  if (actions_.size() != n * meta_.action.width()) {
    throw Error("dataset: action array does not match action space");
  }
  if (terminal_.size() != n || timeout_.size() != n) {
    throw Error("dataset: flag arrays do not match transition count");
  }
  std::size_t expect = 0;
  for (std::size_t j = 0; j < bounds_.size(); ++j) {
    const auto& b = bounds_[j];
    if (b.start != expect || b.end <= b.start || b.end > n) {
      throw Error("dataset: trajectory " + std::to_string(j) +
                  " bounds are not contiguous, non-empty and in range");
    }
    for (std::size_t t = b.start; t < b.end; ++t) {
      const bool last = t + 1 == b.end;
      const bool ends = terminal_[t] != 0 || timeout_[t] != 0;
      if (terminal_[t] != 0 && timeout_[t] != 0) {
        throw Error("dataset: transition " + std::to_string(t) + " is both terminal and timeout");
      }
      if (ends != last) {
        throw Error("dataset: transition " + std::to_string(t) +
                    (last ? " ends a trajectory without terminal/timeout"
                          : " is flagged terminal/timeout inside a trajectory"));
      }
    }
    expect = b.end;
  }
  if (expect != n) throw Error("dataset: trajectory bounds do not cover all transitions");
  if (meta_.action.is_discrete()) {
    for (std::size_t t = 0; t < n; ++t) {
      const double a = actions_[t];
      if (!(a >= 0.0) || a != std::floor(a) || a >= static_cast<double>(meta_.action.size)) {
        throw Error("dataset: transition " + std::to_string(t) + " has invalid discrete action");
      }
    }
  }
}

Transition OfflineDataset::transition(std::size_t i) const {
  Transition t;
  auto o = obs(i);
  auto a = action(i);
  auto no = next_obs(i);
  t.obs.assign(o.begin(), o.end());
  t.action.assign(a.begin(), a.end());
  t.reward = rewards_[i];
  t.next_obs.assign(no.begin(), no.end());
  t.terminal = terminal(i);
  t.timeout = timeout(i);
  return t;
}

void DatasetBuilder::add(std::span<const double> obs, std::span<const double> action,
                         double reward, std::span<const double> next_obs, bool terminal,
                         bool timeout) {
  if (obs.size() != meta_.obs_dim || next_obs.size() != meta_.obs_dim) {
    throw Error("dataset builder: observation has dimension " + std::to_string(obs.size()) +
                ", expected " + std::to_string(meta_.obs_dim));
  }
  if (action.size() != meta_.action.width()) {
    throw Error("dataset builder: action has wrong width");
  }
  if (terminal && timeout) throw Error("dataset builder: terminal and timeout both set");
  obs_.insert(obs_.end(), obs.begin(), obs.end());
  actions_.insert(actions_.end(), action.begin(), action.end());
  rewards_.push_back(reward);
  next_obs_.insert(next_obs_.end(), next_obs.begin(), next_obs.end());
  terminal_.push_back(terminal ? 1 : 0);
  timeout_.push_back(timeout ? 1 : 0);
  if (terminal || timeout) {
    bounds_.push_back({open_start_, rewards_.size()});
    open_start_ = rewards_.size();
  }
}

OfflineDataset DatasetBuilder::build() && {
  if (open_start_ != rewards_.size()) throw Error("dataset builder: last trajectory is still open");
  return OfflineDataset(std::move(meta_), std::move(obs_), std::move(actions_),
                        std::move(rewards_), std::move(next_obs_), std::move(terminal_),
                        std::move(timeout_), std::move(bounds_));
}

namespace {

// Correctly rounded sum (Shewchuk partials), so equal reward multisets
// give bitwise-equal returns regardless of order.
class ExactSum {
 public:
  void add(double x) {
    std::size_t k = 0;
    for (double y : partials_) {
      if (std::abs(x) < std::abs(y)) std::swap(x, y);
      const double hi = x + y;
      const double lo = y - (hi - x);
      if (lo != 0.0) partials_[k++] = lo;
      x = hi;
    }
    partials_.resize(k);
    partials_.push_back(x);
  }

  double value() const {
    if (partials_.empty()) return 0.0;
    std::size_t n = partials_.size();
    double hi = partials_[--n];
    double lo = 0.0;
    while (n > 0) {
      const double x = hi;
      const double y = partials_[--n];
      hi = x + y;
      lo = y - (hi - x);
      if (lo != 0.0) break;
    }
    // Round-half-even correction across the remaining partials.
    if (n > 0 && ((lo < 0.0 && partials_[n - 1] < 0.0) || (lo > 0.0 && partials_[n - 1] > 0.0))) {
      const double y = lo * 2.0;
      const double x = hi + y;
      if (y == x - hi) hi = x;
    }
    return hi;
  }

 private:
  std::vector<double> partials_;
};

}  // namespace

TrajectoryReturns compute_trajectory_returns(const OfflineDataset& ds) {
  if (ds.size() == 0) throw Error("empty dataset");
  TrajectoryReturns tr;
  tr.returns.reserve(ds.num_trajectories());
  tr.per_transition_return.resize(ds.size());
  tr.trajectory_of.resize(ds.size());
  const auto& bounds = ds.trajectories();
  for (std::size_t j = 0; j < bounds.size(); ++j) {
    ExactSum acc;
    for (std::size_t t = bounds[j].start; t < bounds[j].end; ++t) acc.add(ds.reward(t));
    const double sum = acc.value();
    tr.returns.push_back(sum);
    for (std::size_t t = bounds[j].start; t < bounds[j].end; ++t) {
      tr.per_transition_return[t] = sum;
      tr.trajectory_of[t] = j;
    }
  }
  const auto [lo, hi] = std::minmax_element(tr.returns.begin(), tr.returns.end());
  tr.r_min = *lo;
  tr.r_max = *hi;
  return tr;
}

std::vector<double> min_max_weights(std::span<const double> values, double p_base) {
  if (!(p_base >= 0.0) || !std::isfinite(p_base)) {
    throw Error("p_base must be finite and non-negative");
  }
  std::vector<double> out(values.size(), 1.0 + p_base);
  if (values.empty()) return out;
  const auto [lo, hi] = std::minmax_element(values.begin(), values.end());
  const double vmin = *lo;
  const double span = *hi - vmin;
  if (span == 0.0) return out;
  for (std::size_t i = 0; i < values.size(); ++i) {
    // Clamp guards the top end against 1 + ulp rounding.
    out[i] = std::min((values[i] - vmin) / span, 1.0) + p_base;
  }
  return out;
}

std::vector<double> normalized_return(const TrajectoryReturns& tr, double p_base) {
  return min_max_weights(tr.per_transition_return, p_base);
}

Histogram return_histogram(const TrajectoryReturns& tr, std::size_t bins) {
  if (bins == 0) throw Error("histogram needs at least one bin");
  Histogram h;
  if (tr.degenerate()) {
    h.bin_edges = {tr.r_min, tr.r_max};
    h.counts = {tr.returns.size()};
    return h;
  }
  const double width = (tr.r_max - tr.r_min) / static_cast<double>(bins);
  h.bin_edges.resize(bins + 1);
  for (std::size_t b = 0; b <= bins; ++b) {
    h.bin_edges[b] = tr.r_min + width * static_cast<double>(b);
  }
  h.bin_edges.back() = tr.r_max;
  h.counts.assign(bins, 0);
  for (double r : tr.returns) {
    auto b = static_cast<std::size_t>((r - tr.r_min) / width);
    h.counts[std::min(b, bins - 1)]++;
  }
  return h;
}

std::string histogram_csv(const Histogram& h) {
  csv::Writer w({"bin_lo", "bin_hi", "count"});
  for (std::size_t b = 0; b < h.counts.size(); ++b) {
    w.row({csv::num(h.bin_edges[b]), csv::num(h.bin_edges[b + 1]), std::to_string(h.counts[b])});
  }
  return w.str();
}

ReturnSummary summarize_returns(const TrajectoryReturns& tr) {
  ReturnSummary s;
  s.n_transitions = tr.per_transition_return.size();
  s.n_trajectories = tr.returns.size();
  s.min = tr.r_min;
  s.max = tr.r_max;
  s.mean = std::accumulate(tr.returns.begin(), tr.returns.end(), 0.0) /
           static_cast<double>(tr.returns.size());
  std::vector<double> sorted = tr.returns;
  std::sort(sorted.begin(), sorted.end());
  const std::size_t m = sorted.size() / 2;
  s.median = sorted.size() % 2 == 1 ? sorted[m] : 0.5 * (sorted[m - 1] + sorted[m]);
  return s;
}

namespace {

json action_json(const ActionSpace& a) {
  return a.is_discrete() ? json{{"discrete", a.size}} : json{{"box", a.size}};
}

ActionSpace action_from_json(const json& j) {
  if (!j.is_object() || j.size() != 1) {
    throw ParseError("header", "action must be {\"discrete\": n} or {\"box\": d}");
  }
  const std::string key = j.begin().key();
  const json& val = j.begin().value();
  if (!val.is_number_unsigned() || val.get<std::size_t>() == 0) {
    throw ParseError("header", "action size must be a positive integer");
  }
  if (key == "discrete") return ActionSpace::discrete(val.get<std::size_t>());
  if (key == "box") return ActionSpace::box(val.get<std::size_t>());
  throw ParseError("header", "unknown action kind \"" + key + "\"");
}

template <typename T>
T header_field(const json& h, const char* key) {
  auto it = h.find(key);
  if (it == h.end()) throw ParseError("header", std::string("missing field \"") + key + "\"");
  try {
    return it->get<T>();
  } catch (const json::exception&) {
    throw ParseError("header", std::string("field \"") + key + "\" has the wrong type");
  }
}

}  // namespace

std::string serialize_dataset(const OfflineDataset& ds) {
  const auto& m = ds.meta();
  json header = {{"obs_dim", m.obs_dim},
                 {"action", action_json(m.action)},
                 {"env_name", m.env_name},
                 {"seed", m.seed},
                 {"n_transitions", ds.size()},
                 {"n_trajectories", ds.num_trajectories()}};
  io::BinaryWriter w;
  w.put_envelope(kDatasetMagic, kDatasetVersion, header.dump());
  for (std::size_t i = 0; i < ds.size(); ++i) {
    for (double v : ds.obs(i)) w.put_f64(v);
    for (double v : ds.action(i)) w.put_f64(v);
    w.put_f64(ds.reward(i));
    for (double v : ds.next_obs(i)) w.put_f64(v);
    w.put_u8(ds.terminal(i) ? 1 : 0);
    w.put_u8(ds.timeout(i) ? 1 : 0);
  }
  for (const auto& b : ds.trajectories()) {
    w.put_u64(b.start);
    w.put_u64(b.end);
  }
  return w.take();
}

OfflineDataset parse_dataset(std::span<const char> bytes) {
  io::BinaryReader r(bytes);
  const auto env = io::read_envelope(r, kDatasetMagic);
  if (env.version != kDatasetVersion) {
    throw ParseError("version", "unsupported version " + std::to_string(env.version));
  }
  json h;
  try {
    h = json::parse(env.header_json);
  } catch (const json::exception& e) {
    throw ParseError("header", std::string("invalid JSON: ") + e.what());
  }
  DatasetMeta meta;
  meta.obs_dim = header_field<std::size_t>(h, "obs_dim");
  if (!h.contains("action")) throw ParseError("header", "missing field \"action\"");
  meta.action = action_from_json(h.at("action"));
  meta.env_name = header_field<std::string>(h, "env_name");
  meta.seed = header_field<std::uint64_t>(h, "seed");
  const auto n = header_field<std::size_t>(h, "n_transitions");
  const auto n_traj = header_field<std::size_t>(h, "n_trajectories");
  if (meta.obs_dim == 0) throw ParseError("header", "obs_dim must be positive");

  const std::size_t aw = meta.action.width();
  const std::size_t record_bytes = 8 * (2 * meta.obs_dim + aw + 1) + 2;
  if (n > r.remaining() / record_bytes) {
    throw ParseError("transition " + std::to_string(r.remaining() / record_bytes),
                     "truncated: header declares " + std::to_string(n) + " transitions");
  }

  std::vector<double> obs, actions, rewards, next_obs;
  std::vector<std::uint8_t> terminal, timeout;
  obs.reserve(n * meta.obs_dim);
  next_obs.reserve(n * meta.obs_dim);
  actions.reserve(n * aw);
  rewards.reserve(n);
  terminal.reserve(n);
  timeout.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::string rec = "transition " + std::to_string(i);
    for (std::size_t k = 0; k < meta.obs_dim; ++k) obs.push_back(r.get_f64(rec));
    for (std::size_t k = 0; k < aw; ++k) actions.push_back(r.get_f64(rec));
    rewards.push_back(r.get_f64(rec));
    for (std::size_t k = 0; k < meta.obs_dim; ++k) next_obs.push_back(r.get_f64(rec));
    const auto term = r.get_u8(rec);
    const auto tout = r.get_u8(rec);
    if (term > 1 || tout > 1) throw ParseError(rec, "flag bytes must be 0 or 1");
    if (term == 1 && tout == 1) throw ParseError(rec, "terminal and timeout both set");
    terminal.push_back(term);
    timeout.push_back(tout);
  }
  std::vector<TrajectoryBounds> bounds;
  bounds.reserve(n_traj);
  for (std::size_t j = 0; j < n_traj; ++j) {
    const std::string rec = "trajectory bound " + std::to_string(j);
    TrajectoryBounds b;
    b.start = r.get_u64(rec);
    b.end = r.get_u64(rec);
    bounds.push_back(b);
  }
  if (r.remaining() != 0) {
    throw ParseError("trailer", std::to_string(r.remaining()) + " unexpected trailing bytes");
  }
  try {
    return OfflineDataset(std::move(meta), std::move(obs), std::move(actions), std::move(rewards),
                          std::move(next_obs), std::move(terminal), std::move(timeout),
                          std::move(bounds));
  } catch (const ParseError&) {
    throw;
  } catch (const Error& e) {
    throw ParseError("structure", e.what());
  }
}

void save_dataset(const OfflineDataset& ds, const std::filesystem::path& path) {
  io::write_file(path, serialize_dataset(ds));
}

OfflineDataset load_dataset(const std::filesystem::path& path) {
  const std::string bytes = io::read_file(path);
  return parse_dataset(bytes);
}

std::uint64_t dataset_checksum(const OfflineDataset& ds) {
  return fnv1a64(serialize_dataset(ds));
}

}  // namespace red
