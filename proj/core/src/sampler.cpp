#include "red/sampler.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "red/csv.hpp"
#include "red/error.hpp"

namespace red {

std::string to_string(SamplerMode mode) {
  switch (mode) {
    case SamplerMode::kUniform: return "uniform";
    case SamplerMode::kReturnResample: return "return_resample";
    case SamplerMode::kRewardResample: return "reward_resample";
    case SamplerMode::kTopFraction: return "top_fraction";
  }
  return "unknown";
}

SamplerMode parse_sampler_mode(std::string_view name) {
  if (name == "uniform") return SamplerMode::kUniform;
  if (name == "return_resample") return SamplerMode::kReturnResample;
  if (name == "reward_resample") return SamplerMode::kRewardResample;
  if (name == "top_fraction") return SamplerMode::kTopFraction;
  throw ConfigError("unknown sampler mode \"" + std::string(name) + "\"");
}

void SamplerSpec::validate() const {
  if (!(alpha >= 0.0) || !std::isfinite(alpha)) throw ConfigError("sampler.alpha must be >= 0");
  if (!(p_base >= 0.0) || !std::isfinite(p_base)) throw ConfigError("sampler.p_base must be >= 0");
  if (!(fraction > 0.0 && fraction <= 1.0)) {
    throw ConfigError("sampler.fraction must lie in (0, 1]");
  }
}

Distribution sampling_distribution(std::span<const double> weights, double alpha) {
  if (weights.empty()) throw Error("sampling distribution needs at least one weight");
  if (!(alpha >= 0.0) || !std::isfinite(alpha)) throw Error("alpha must be finite and >= 0");
  const std::size_t n = weights.size();
  // Four independent max chains; the invalid-weight scan runs only on failure.
  double m[4] = {0.0, 0.0, 0.0, 0.0};
  bool bad = false;
  for (std::size_t i = 0; i < n; ++i) {
    const double p = weights[i];
    bad |= !(p >= 0.0 && p <= std::numeric_limits<double>::max());
    m[i & 3] = std::max(m[i & 3], p);
  }
  if (bad) {
    for (std::size_t i = 0; i < n; ++i) {
      if (!std::isfinite(weights[i]) || weights[i] < 0.0) {
        throw Error("weight " + std::to_string(i) + " is negative or non-finite");
      }
    }
  }
  const double wmax = std::max(std::max(m[0], m[1]), std::max(m[2], m[3]));
  Distribution d;
  if (alpha == 0.0 || wmax == 0.0) {
    d.uniform_fallback = alpha > 0.0;
    d.probs.assign(n, 1.0 / static_cast<double>(n));
    return d;
  }
  // Scaling by the max keeps p^alpha representable for large alpha; the
  // ratio p_i^a / sum p_k^a is unchanged.
  d.probs.resize(n);
  const double inv_max = 1.0 / wmax;
  double* out = d.probs.data();
  const double* in = weights.data();
  if (alpha == 1.0) {
    for (std::size_t i = 0; i < n; ++i) out[i] = in[i] * inv_max;
  } else {
    for (std::size_t i = 0; i < n; ++i) out[i] = std::pow(in[i] * inv_max, alpha);
  }
  // Four interleaved Neumaier sums break the dependency chain.
  double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
  double c0 = 0.0, c1 = 0.0, c2 = 0.0, c3 = 0.0;
  const auto neumaier = [](double& s, double& c, double w) {
    const double t = s + w;
    c += std::abs(s) >= std::abs(w) ? (s - t) + w : (w - t) + s;
    s = t;
  };
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    neumaier(s0, c0, out[i]);
    neumaier(s1, c1, out[i + 1]);
    neumaier(s2, c2, out[i + 2]);
    neumaier(s3, c3, out[i + 3]);
  }
  for (; i < n; ++i) neumaier(s0, c0, out[i]);
  double total = 0.0, total_comp = 0.0;
  for (double w : {s0, c0, s1, c1, s2, c2, s3, c3}) neumaier(total, total_comp, w);
  total += total_comp;
  const double inv_total = 1.0 / total;
  for (double& p : d.probs) p *= inv_total;
  return d;
}

std::vector<double> reward_weights(const OfflineDataset& ds, double p_base) {
  if (ds.size() == 0) throw Error("empty dataset");
  return min_max_weights(ds.rewards(), p_base);
}

std::size_t top_fraction_count(std::size_t n, double fraction) {
  if (!(fraction > 0.0 && fraction <= 1.0)) throw Error("fraction must lie in (0, 1]");
  // The epsilon absorbs products like 0.3 * 10 = 3.0000000000000004.
  const double raw = std::ceil(fraction * static_cast<double>(n) - 1e-9);
  const auto k = static_cast<std::size_t>(std::max(raw, 1.0));
  return std::min(k, n);
}

std::vector<std::size_t> top_fraction_filter(const OfflineDataset& ds, const TrajectoryReturns& tr,
                                             double fraction) {
  const std::size_t n = ds.size();
  const std::size_t k = top_fraction_count(n, fraction);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  // Transitions are stored trajectory by trajectory, so ascending transition
  // index is also ascending (trajectory, transition) order.
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return tr.per_transition_return[a] > tr.per_transition_return[b];
  });
  order.resize(k);
  std::sort(order.begin(), order.end());
  return order;
}

std::vector<double> sampler_weights(const SamplerSpec& spec, const OfflineDataset& ds,
                                    const TrajectoryReturns& tr) {
  spec.validate();
  switch (spec.mode) {
    case SamplerMode::kUniform: return std::vector<double>(ds.size(), 1.0);
    case SamplerMode::kReturnResample: return normalized_return(tr, spec.p_base);
    case SamplerMode::kRewardResample: return reward_weights(ds, spec.p_base);
    case SamplerMode::kTopFraction: {
      std::vector<double> w(ds.size(), 0.0);
      for (std::size_t i : top_fraction_filter(ds, tr, spec.fraction)) w[i] = 1.0;
      return w;
    }
  }
  throw Error("unhandled sampler mode");
}

AliasTable::AliasTable(std::span<const double> probs) {
  const std::size_t n = probs.size();
  if (n == 0) throw Error("alias table needs at least one entry");
  if (n > std::numeric_limits<std::uint32_t>::max()) throw Error("alias table supports at most 2^32 - 1 entries");
  // prob_ holds the scaled masses while pairing. Small entries stack up from
  // the front of `work`, large ones from the back.
  prob_.resize(n);
  alias_.resize(n);
  if (probs[0] > 0.0 &&
      std::all_of(probs.begin(), probs.end(), [&](double p) { return p == probs[0]; })) {
    std::fill(prob_.begin(), prob_.end(), 1.0);
    std::iota(alias_.begin(), alias_.end(), std::uint32_t{0});
    return;
  }
  std::vector<std::uint32_t> work(n);
  std::size_t n_small = 0, large_begin = n;
  std::size_t fallback = 0;
  const double scale = static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) {
    prob_[i] = probs[i] * scale;
    alias_[i] = static_cast<std::uint32_t>(i);
    if (probs[i] > probs[fallback]) fallback = i;
    // Branch-free push. n_small < large_begin here, so both slots are free;
    // when they coincide both stores write i.
    const bool small = prob_[i] < 1.0;
    work[n_small] = static_cast<std::uint32_t>(i);
    work[large_begin - 1] = static_cast<std::uint32_t>(i);
    n_small += small;
    large_begin -= !small;
  }
  // Large entries were written back to front; flip them so the most recent
  // one sits on top, as with the small stack.
  std::reverse(work.begin() + static_cast<std::ptrdiff_t>(large_begin), work.end());
  std::size_t large_top = n;
  if (large_top > large_begin) {
    // The active large entry's mass stays in a register until it turns small.
    std::uint32_t more = work[large_top - 1];
    double mass = prob_[more];
    while (n_small > 0) {
      const std::uint32_t less = work[--n_small];
      alias_[less] = more;
      mass = (mass + prob_[less]) - 1.0;
      if (mass < 1.0) {
        prob_[more] = mass;
        --large_top;
        work[n_small++] = more;
        if (large_top == large_begin) break;
        more = work[large_top - 1];
        mass = prob_[more];
      }
    }
    if (large_top > large_begin) prob_[more] = mass;
  }
  for (std::size_t k = large_begin; k < large_top; ++k) prob_[work[k]] = 1.0;
  // Leftover small entries are rounding residue. A zero-mass entry must
  // never be returned, so it redirects to the heaviest entry instead.
  for (std::size_t k = 0; k < n_small; ++k) {
    const std::size_t i = work[k];
    if (probs[i] > 0.0) {
      prob_[i] = 1.0;
    } else {
      prob_[i] = 0.0;
      alias_[i] = static_cast<std::uint32_t>(fallback);
    }
  }
}

std::vector<double> AliasTable::implied_probabilities() const {
  const double inv_n = 1.0 / static_cast<double>(prob_.size());
  std::vector<double> out(prob_.size(), 0.0);
  for (std::size_t i = 0; i < prob_.size(); ++i) {
    out[i] += prob_[i];
    out[alias_[i]] += 1.0 - prob_[i];
  }
  for (double& p : out) p *= inv_n;
  return out;
}

WeightedSampler::WeightedSampler(std::vector<double> probs, std::uint64_t seed,
                                 bool uniform_fallback)
    : probs_(std::move(probs)), table_(probs_), rng_(seed), uniform_fallback_(uniform_fallback) {}

std::vector<std::size_t> WeightedSampler::sample_batch(std::size_t batch_size) {
  std::vector<std::size_t> out;
  next_batch(batch_size, out);
  return out;
}

void WeightedSampler::next_batch(std::size_t batch_size, std::vector<std::size_t>& out) {
  out.resize(batch_size);
  for (auto& i : out) i = table_.draw(rng_);
}

WeightedSampler build_sampler(const SamplerSpec& spec, const OfflineDataset& ds,
                              const TrajectoryReturns& tr) {
  if (tr.per_transition_return.size() != ds.size()) {
    throw Error("trajectory returns do not match dataset");
  }
  if (spec.mode == SamplerMode::kUniform) {
    spec.validate();
    return WeightedSampler(std::vector<double>(ds.size(), 1.0 / static_cast<double>(ds.size())),
                           spec.seed, false);
  }
  const auto weights = sampler_weights(spec, ds, tr);
  const double alpha =
      spec.mode == SamplerMode::kReturnResample || spec.mode == SamplerMode::kRewardResample
          ? spec.alpha
          : 1.0;
  auto dist = sampling_distribution(weights, alpha);
  return WeightedSampler(std::move(dist.probs), spec.seed, dist.uniform_fallback);
}

double max_uniform_deviation(std::span<const double> probs) {
  const double u = 1.0 / static_cast<double>(probs.size());
  double dev = 0.0;
  for (double p : probs) dev = std::max(dev, std::abs(p - u));
  return dev;
}

DistributionSummary summarize_distribution(std::span<const double> probs, std::size_t k) {
  DistributionSummary s;
  s.n = probs.size();
  std::vector<std::size_t> order(probs.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return probs[a] > probs[b]; });
  k = std::min(k, order.size());
  for (std::size_t i = 0; i < k; ++i) s.top.emplace_back(order[i], probs[order[i]]);
  for (std::size_t i = 0; i < k; ++i) {
    const std::size_t idx = order[order.size() - 1 - i];
    s.bottom.emplace_back(idx, probs[idx]);
  }
  const auto zeros = std::count(probs.begin(), probs.end(), 0.0);
  s.zero_mass_fraction = static_cast<double>(zeros) / static_cast<double>(probs.size());
  s.max_deviation = max_uniform_deviation(probs);
  s.uniform = s.max_deviation == 0.0;
  return s;
}

std::string distribution_csv(std::span<const double> weights, std::span<const double> probs) {
  csv::Writer w({"index", "weight", "probability"});
  for (std::size_t i = 0; i < probs.size(); ++i) {
    w.row({std::to_string(i), csv::num(weights[i]), csv::num(probs[i])});
  }
  return w.str();
}

}  // namespace red
