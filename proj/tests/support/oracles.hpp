#pragma once

// Independent reference computations used as test oracles. They share no
// code with the library beyond the data types they read.

#include <algorithm>
#include <boost/multiprecision/cpp_bin_float.hpp>
#include <boost/multiprecision/cpp_dec_float.hpp>
#include <cmath>
#include <functional>
#include <map>
#include <numeric>
#include <vector>

#include "red/dataset.hpp"
#include "red/nn.hpp"

namespace oracle {

using HighPrec = boost::multiprecision::cpp_dec_float_50;
// Wide binary float: sums of a few thousand doubles of similar magnitude are
// exact, and conversion back to double rounds correctly.
using WideBin = boost::multiprecision::number<boost::multiprecision::cpp_bin_float<256, boost::multiprecision::digit_base_2>>;

// P(i) = p_i^alpha / sum_k p_k^alpha in 50-digit arithmetic, 0^0 = 1.
inline std::vector<double> normalize_high_precision(const std::vector<double>& p, double alpha) {
  std::vector<HighPrec> powered(p.size());
  HighPrec total = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (alpha == 0.0) {
      powered[i] = 1;
    } else if (p[i] == 0.0) {
      powered[i] = 0;
    } else {
      powered[i] = boost::multiprecision::pow(HighPrec(p[i]), HighPrec(alpha));
    }
    total += powered[i];
  }
  std::vector<double> out(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) out[i] = static_cast<double>(powered[i] / total);
  return out;
}

// Returns summed exactly by walking the raw reward/flag arrays,
// closing an episode whenever terminal or timeout is set.
inline std::vector<double> episode_returns(const red::OfflineDataset& ds) {
  std::vector<double> out;
  WideBin acc = 0;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    acc += ds.reward(i);
    if (ds.terminal(i) || ds.timeout(i)) {
      out.push_back(static_cast<double>(acc));
      acc = 0;
    }
  }
  return out;
}

// Indices of the ceil(f * N) best transitions by per-transition return,
// ties by (trajectory, transition), via a full stable sort of all pairs.
inline std::vector<std::size_t> top_fraction(const std::vector<double>& per_transition_return,
                                             const std::vector<std::size_t>& trajectory_of,
                                             std::size_t keep) {
  std::vector<std::size_t> idx(per_transition_return.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    if (per_transition_return[a] != per_transition_return[b]) {
      return per_transition_return[a] > per_transition_return[b];
    }
    if (trajectory_of[a] != trajectory_of[b]) return trajectory_of[a] < trajectory_of[b];
    return a < b;
  });
  idx.resize(keep);
  std::sort(idx.begin(), idx.end());
  return idx;
}

// Straightforward per-sample forward pass with explicit loops.
inline std::vector<double> forward_loops(const red::nn::Mlp& net, const std::vector<double>& x) {
  std::vector<double> h = x;
  const auto& layers = net.layers();
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const auto& L = layers[l];
    std::vector<double> next(static_cast<std::size_t>(L.w.rows()));
    for (Eigen::Index r = 0; r < L.w.rows(); ++r) {
      double s = L.b(r);
      for (Eigen::Index c = 0; c < L.w.cols(); ++c) s += L.w(r, c) * h[static_cast<std::size_t>(c)];
      if (l + 1 < layers.size()) {
        s = net.activation() == red::nn::Activation::kRelu ? std::max(0.0, s) : std::tanh(s);
      }
      next[static_cast<std::size_t>(r)] = s;
    }
    h = std::move(next);
  }
  return h;
}

// Central differences of f with respect to every parameter of `net`.
struct NumericGrad {
  std::vector<red::nn::Matrix> dw;
  std::vector<red::nn::Vector> db;
};

inline NumericGrad numeric_gradient(red::nn::Mlp net, const std::function<double(const red::nn::Mlp&)>& f,
                                    double eps = 1e-5) {
  NumericGrad g;
  const std::size_t n = net.num_layers();
  for (std::size_t l = 0; l < n; ++l) {
    auto& w = net.mutable_layers()[l].w;
    red::nn::Matrix dw(w.rows(), w.cols());
    for (Eigen::Index i = 0; i < w.size(); ++i) {
      const double orig = w.data()[i];
      net.mutable_layers()[l].w.data()[i] = orig + eps;
      const double up = f(net);
      net.mutable_layers()[l].w.data()[i] = orig - eps;
      const double down = f(net);
      net.mutable_layers()[l].w.data()[i] = orig;
      dw.data()[i] = (up - down) / (2 * eps);
    }
    g.dw.push_back(dw);
    auto& b = net.mutable_layers()[l].b;
    red::nn::Vector db(b.size());
    for (Eigen::Index i = 0; i < b.size(); ++i) {
      const double orig = b(i);
      net.mutable_layers()[l].b(i) = orig + eps;
      const double up = f(net);
      net.mutable_layers()[l].b(i) = orig - eps;
      const double down = f(net);
      net.mutable_layers()[l].b(i) = orig;
      db(i) = (up - down) / (2 * eps);
    }
    g.db.push_back(db);
  }
  return g;
}

// max |a - b| / max(1, |a|, |b|) over all entries; the unit floor keeps
// near-zero gradients from dominating through cancellation noise.
inline double max_relative_error(const std::vector<red::nn::Matrix>& a, const std::vector<red::nn::Matrix>& b) {
  double worst = 0.0;
  for (std::size_t l = 0; l < a.size(); ++l) {
    for (Eigen::Index i = 0; i < a[l].size(); ++i) {
      const double x = a[l].data()[i], y = b[l].data()[i];
      worst = std::max(worst, std::abs(x - y) / std::max({1e-3, std::abs(x), std::abs(y)}));
    }
  }
  return worst;
}

// Exact SARSA-style evaluation on the empirical MDP of a dataset whose
// transitions are deterministic in (state, action): Q(s,a) = r + g*(1-d)*V(s')
// where V(s') = sum_a' mu(a'|s') Q(s',a') under the empirical action
// frequencies mu, i.e. the expectile-0.5 (mean) fixed point. States are
// identified by exact observation vectors.
struct SarsaFixedPoint {
  std::map<std::vector<double>, std::size_t> state_of;
  std::vector<std::vector<double>> q;  // [state][action], NaN when unseen
  std::vector<double> v;
};

inline SarsaFixedPoint sarsa_fixed_point(const red::OfflineDataset& ds, std::size_t n_actions, double gamma,
                                         int iterations = 20000) {
  SarsaFixedPoint fp;
  auto id = [&](std::span<const double> o) {
    std::vector<double> key(o.begin(), o.end());
    auto [it, inserted] = fp.state_of.emplace(key, fp.state_of.size());
    return it->second;
  };
  struct Edge {
    std::size_t s, a, s2;
    double r;
    bool done;
  };
  std::vector<Edge> edges;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    edges.push_back({id(ds.obs(i)), ds.discrete_action(i), id(ds.next_obs(i)), ds.reward(i), ds.terminal(i)});
  }
  const std::size_t ns = fp.state_of.size();
  std::vector<std::vector<double>> count(ns, std::vector<double>(n_actions, 0.0));
  for (const auto& e : edges) count[e.s][e.a] += 1;
  fp.q.assign(ns, std::vector<double>(n_actions, 0.0));
  fp.v.assign(ns, 0.0);
  for (int it = 0; it < iterations; ++it) {
    std::vector<std::vector<double>> sum(ns, std::vector<double>(n_actions, 0.0));
    for (const auto& e : edges) sum[e.s][e.a] += e.r + (e.done ? 0.0 : gamma * fp.v[e.s2]);
    for (std::size_t s = 0; s < ns; ++s) {
      double vs = 0.0, total = 0.0;
      for (std::size_t a = 0; a < n_actions; ++a) {
        if (count[s][a] > 0) {
          fp.q[s][a] = sum[s][a] / count[s][a];
          vs += count[s][a] * fp.q[s][a];
          total += count[s][a];
        }
      }
      fp.v[s] = total > 0 ? vs / total : 0.0;
    }
  }
  for (std::size_t s = 0; s < ns; ++s) {
    for (std::size_t a = 0; a < n_actions; ++a) {
      if (count[s][a] == 0) fp.q[s][a] = std::nan("");
    }
  }
  return fp;
}

}  // namespace oracle
