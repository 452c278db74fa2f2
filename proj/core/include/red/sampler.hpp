#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "red/dataset.hpp"
#include "red/rng.hpp"

namespace red {

enum class SamplerMode { kUniform, kReturnResample, kRewardResample, kTopFraction };

std::string to_string(SamplerMode mode);
SamplerMode parse_sampler_mode(std::string_view name);

struct SamplerSpec {
  SamplerMode mode = SamplerMode::kReturnResample;
  double alpha = 1.0;
  double p_base = 0.0;
  double fraction = 0.1;  // TopFraction only
  std::uint64_t seed = 0;

  void validate() const;
  bool operator==(const SamplerSpec&) const = default;
};

struct Distribution {
  std::vector<double> probs;
  // Set when every weight was zero under alpha > 0 and uniform was used.
  bool uniform_fallback = false;
};

// P(i) = p_i^alpha / sum_k p_k^alpha with 0^0 = 1.
Distribution sampling_distribution(std::span<const double> weights, double alpha);

// min-max normalised per-transition reward plus p_base.
std::vector<double> reward_weights(const OfflineDataset& ds, double p_base);

// Number of transitions kept by a top-fraction filter: ceil(fraction * n),
// at least one.
std::size_t top_fraction_count(std::size_t n, double fraction);

// Indices of the ceil(fraction * N) transitions with the highest trajectory
// return. Ties at the cutoff prefer the lower (trajectory, transition)
// index. Result is sorted ascending.
std::vector<std::size_t> top_fraction_filter(const OfflineDataset& ds, const TrajectoryReturns& tr,
                                             double fraction);

// Per-transition weights before exponentiation, as selected by the mode.
std::vector<double> sampler_weights(const SamplerSpec& spec, const OfflineDataset& ds,
                                    const TrajectoryReturns& tr);

// Vose alias table: O(N) construction, O(1) draws.
class AliasTable {
 public:
  AliasTable() = default;
  explicit AliasTable(std::span<const double> probs);

  std::size_t draw(Rng& rng) const {
    const std::size_t column = rng.below(prob_.size());
    return rng.uniform() < prob_[column] ? column : alias_[column];
  }
  std::size_t size() const { return prob_.size(); }
  // Per-entry probability the table actually encodes.
  std::vector<double> implied_probabilities() const;

 private:
  std::vector<double> prob_;
  std::vector<std::uint32_t> alias_;
};

// Anything that hands out minibatch indices. Learners only see this
// interface, so samplers are interchangeable.
class BatchSource {
 public:
  virtual ~BatchSource() = default;
  virtual void next_batch(std::size_t batch_size, std::vector<std::size_t>& out) = 0;
};

class WeightedSampler final : public BatchSource {
 public:
  WeightedSampler(std::vector<double> probs, std::uint64_t seed, bool uniform_fallback = false);

  const std::vector<double>& probs() const { return probs_; }
  bool uniform_fallback() const { return uniform_fallback_; }

  std::size_t sample() { return table_.draw(rng_); }
  std::vector<std::size_t> sample_batch(std::size_t batch_size);
  void next_batch(std::size_t batch_size, std::vector<std::size_t>& out) override;

 private:
  std::vector<double> probs_;
  AliasTable table_;
  Rng rng_;
  bool uniform_fallback_ = false;
};

// Builds the static distribution once; it is never updated afterwards.
WeightedSampler build_sampler(const SamplerSpec& spec, const OfflineDataset& ds,
                              const TrajectoryReturns& tr);

// Wraps a source and keeps every index it handed out.
class RecordingSource final : public BatchSource {
 public:
  explicit RecordingSource(BatchSource& inner) : inner_(inner) {}

  void next_batch(std::size_t batch_size, std::vector<std::size_t>& out) override {
    inner_.next_batch(batch_size, out);
    log_.insert(log_.end(), out.begin(), out.end());
  }
  const std::vector<std::size_t>& log() const { return log_; }

 private:
  BatchSource& inner_;
  std::vector<std::size_t> log_;
};

double max_uniform_deviation(std::span<const double> probs);

struct DistributionSummary {
  std::size_t n = 0;
  std::vector<std::pair<std::size_t, double>> top;     // highest probabilities
  std::vector<std::pair<std::size_t, double>> bottom;  // lowest probabilities
  double zero_mass_fraction = 0.0;
  double max_deviation = 0.0;
  bool uniform = false;
};

DistributionSummary summarize_distribution(std::span<const double> probs, std::size_t k);

// CSV with header index,weight,probability.
std::string distribution_csv(std::span<const double> weights, std::span<const double> probs);

}  // namespace red
