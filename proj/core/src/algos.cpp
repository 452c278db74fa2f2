#include "red/algos.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "json.hpp"
#include "red/csv.hpp"
#include "red/error.hpp"
#include "red/rng.hpp"

namespace red {

using nn::Matrix;
using nn::Vector;

std::string to_string(Family f) {
  switch (f) {
    case Family::kExpectileAwr: return "expectile_awr";
    case Family::kConservativeQ: return "conservative_q";
    case Family::kExpAdvRegression: return "exp_adv_regression";
    case Family::kQPlusBc: return "q_plus_bc";
  }
  return "unknown";
}

Family parse_family(std::string_view name) {
  for (Family f : all_families()) {
    if (to_string(f) == name) return f;
  }
  throw ConfigError("unknown algo family \"" + std::string(name) + "\"");
}

const std::vector<Family>& all_families() {
  static const std::vector<Family> fams = {Family::kExpectileAwr, Family::kConservativeQ,
                                           Family::kExpAdvRegression, Family::kQPlusBc};
  return fams;
}

void AlgoConfig::validate() const {
  if (!(gamma > 0.0 && gamma <= 1.0)) throw ConfigError("algo.gamma must lie in (0, 1]");
  if (!(tau_expectile > 0.0 && tau_expectile < 1.0)) {
    throw ConfigError("algo.tau_expectile must lie in (0, 1)");
  }
  if (!(beta_awr > 0.0)) throw ConfigError("algo.beta_awr must be positive");
  if (!(w_max > 0.0)) throw ConfigError("algo.w_max must be positive");
  if (!(cql_weight >= 0.0)) throw ConfigError("algo.cql_weight must be >= 0");
  if (!(bc_weight >= 0.0)) throw ConfigError("algo.bc_weight must be >= 0");
  if (target_update_period == 0) throw ConfigError("algo.target_update_period must be positive");
  if (batch_size == 0) throw ConfigError("algo.batch_size must be positive");
  if (!(lr > 0.0)) throw ConfigError("algo.lr must be positive");
  for (std::size_t h : hidden) {
    if (h == 0) throw ConfigError("algo.hidden sizes must be positive");
  }
}

double expectile_loss(double u, double tau) {
  const double w = u < 0.0 ? 1.0 - tau : tau;
  return w * u * u;
}

double expectile_loss(std::span<const double> u, double tau) {
  if (u.empty()) return 0.0;
  double sum = 0.0;
  for (double x : u) sum += expectile_loss(x, tau);
  return sum / static_cast<double>(u.size());
}

double awr_weight(double advantage, double beta, double w_max) {
  if (!(beta > 0.0)) throw Error("awr beta must be positive");
  // Comparing in log space avoids overflow for huge advantages.
  if (advantage / beta >= std::log(w_max)) return w_max;
  return std::min(std::exp(advantage / beta), w_max);
}

namespace {

double log_sum_exp(const double* x, std::size_t n) {
  double m = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < n; ++i) m = std::max(m, x[i]);
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += std::exp(x[i] - m);
  return m + std::log(s);
}

}  // namespace

double cql_penalty(std::span<const double> q_row, std::size_t data_action) {
  if (q_row.empty() || data_action >= q_row.size()) throw Error("cql penalty: bad action index");
  const double m = *std::max_element(q_row.begin(), q_row.end());
  // lse - q_a = log(sum exp(q - m)) - (q_a - m); log1p keeps precision when
  // the data action dominates.
  double rest = 0.0;
  for (std::size_t i = 0; i < q_row.size(); ++i) {
    if (i != data_action) rest += std::exp(q_row[i] - m);
  }
  const double own = std::exp(q_row[data_action] - m);
  return std::log1p(rest / own);
}

LearnerState init_learner(const AlgoConfig& cfg, std::size_t obs_dim, std::size_t n_actions,
                          std::uint64_t seed) {
  cfg.validate();
  if (obs_dim == 0 || n_actions == 0) throw Error("learner needs obs and action dims");
  LearnerState s;
  s.family = cfg.family;
  s.obs_dim = obs_dim;
  s.n_actions = n_actions;
  const auto dims = [&](std::size_t out) {
    std::vector<std::size_t> d = {obs_dim};
    d.insert(d.end(), cfg.hidden.begin(), cfg.hidden.end());
    d.push_back(out);
    return d;
  };
  s.q = nn::Mlp(dims(n_actions), cfg.activation, derive_seed(seed, "q"));
  s.q_target = s.q;
  if (s.has_v()) s.v = nn::Mlp(dims(1), cfg.activation, derive_seed(seed, "v"));
  if (s.has_policy()) s.policy = nn::Mlp(dims(n_actions), cfg.activation, derive_seed(seed, "policy"));
  reset_optimizers(s, cfg, 1.0, false);
  return s;
}

void reset_optimizers(LearnerState& state, const AlgoConfig& cfg, double backbone_mult,
                      bool freeze_head) {
  nn::AdamConfig adam;
  adam.lr = cfg.lr;
  adam.backbone_mult = backbone_mult;
  state.q_opt = nn::OptimState(state.q, adam);
  if (state.has_v()) state.v_opt = nn::OptimState(state.v, adam);
  if (state.has_policy()) state.policy_opt = nn::OptimState(state.policy, adam);
  state.freeze_head = freeze_head;
}

namespace {

struct Batch {
  Matrix obs;       // obs_dim x B
  Matrix next_obs;  // obs_dim x B
  std::vector<std::size_t> action;
  Vector reward;
  Vector not_done;  // 0 for terminal, 1 otherwise (timeouts bootstrap)
};

Batch gather(const OfflineDataset& ds, std::span<const std::size_t> idx) {
  const auto d = static_cast<Eigen::Index>(ds.meta().obs_dim);
  const auto b = static_cast<Eigen::Index>(idx.size());
  Batch out;
  out.obs.resize(d, b);
  out.next_obs.resize(d, b);
  out.action.resize(idx.size());
  out.reward.resize(b);
  out.not_done.resize(b);
  for (Eigen::Index j = 0; j < b; ++j) {
    const std::size_t i = idx[static_cast<std::size_t>(j)];
    const auto o = ds.obs(i);
    const auto no = ds.next_obs(i);
    for (Eigen::Index k = 0; k < d; ++k) {
      out.obs(k, j) = o[static_cast<std::size_t>(k)];
      out.next_obs(k, j) = no[static_cast<std::size_t>(k)];
    }
    out.action[static_cast<std::size_t>(j)] = ds.discrete_action(i);
    out.reward(j) = ds.reward(i);
    out.not_done(j) = ds.terminal(i) ? 0.0 : 1.0;
  }
  return out;
}

// Column-wise softmax.
Matrix softmax(const Matrix& logits) {
  Matrix p = logits;
  for (Eigen::Index j = 0; j < p.cols(); ++j) {
    const double m = p.col(j).maxCoeff();
    p.col(j) = (p.col(j).array() - m).exp().matrix();
    p.col(j) /= p.col(j).sum();
  }
  return p;
}

double log_prob(const Matrix& logits, Eigen::Index j, std::size_t a) {
  return logits(static_cast<Eigen::Index>(a), j) - log_sum_exp(logits.col(j).data(), logits.rows());
}

void check_finite(double v, const char* what, const LearnerState& s) {
  if (!std::isfinite(v)) {
    throw NanAbort(std::string("non-finite ") + what + " at step " + std::to_string(s.step) +
                   " (" + to_string(s.family) + ")");
  }
}

void update(nn::Mlp& net, const nn::Mlp::Cache& cache, const Matrix& d_out, nn::OptimState& opt,
            bool freeze_head) {
  const auto grads = nn::backward(net, cache, d_out);
  nn::apply_update(net, grads, opt, freeze_head);
}

// Squared TD error on the data action; returns loss, fills dQ.
double td_loss(const Matrix& q, const Batch& b, const Vector& target, Matrix& dq) {
  const double inv_b = 1.0 / static_cast<double>(q.cols());
  dq.setZero(q.rows(), q.cols());
  double loss = 0.0;
  for (Eigen::Index j = 0; j < q.cols(); ++j) {
    const auto a = static_cast<Eigen::Index>(b.action[static_cast<std::size_t>(j)]);
    const double err = q(a, j) - target(j);
    loss += err * err;
    dq(a, j) = 2.0 * err * inv_b;
  }
  return loss * inv_b;
}

// Advantage-weighted log-likelihood of data actions; returns loss, fills
// the logits gradient.
double awr_policy_loss(const Matrix& logits, const Batch& b, const Vector& advantage,
                       const AlgoConfig& cfg, Matrix& dlogits) {
  const double inv_b = 1.0 / static_cast<double>(logits.cols());
  dlogits = softmax(logits);
  double loss = 0.0;
  for (Eigen::Index j = 0; j < logits.cols(); ++j) {
    const std::size_t a = b.action[static_cast<std::size_t>(j)];
    const double w = awr_weight(advantage(j), cfg.beta_awr, cfg.w_max);
    loss -= w * log_prob(logits, j, a);
    dlogits.col(j) *= w * inv_b;
    dlogits(static_cast<Eigen::Index>(a), j) -= w * inv_b;
  }
  return loss * inv_b;
}

Vector data_action_values(const Matrix& q, const Batch& b) {
  Vector out(q.cols());
  for (Eigen::Index j = 0; j < q.cols(); ++j) {
    out(j) = q(static_cast<Eigen::Index>(b.action[static_cast<std::size_t>(j)]), j);
  }
  return out;
}

LossRecord step_expectile_awr(LearnerState& s, const AlgoConfig& cfg, const Batch& b) {
  LossRecord rec;
  const double inv_b = 1.0 / static_cast<double>(b.obs.cols());
  const Vector q_data = data_action_values(s.q_target.forward(b.obs), b);

  {  // value: expectile regression toward target Q
    nn::Mlp::Cache cache;
    const Matrix v = s.v.forward(b.obs, cache);
    Matrix dv(1, v.cols());
    double loss = 0.0;
    for (Eigen::Index j = 0; j < v.cols(); ++j) {
      const double u = q_data(j) - v(0, j);
      const double w = u < 0.0 ? 1.0 - cfg.tau_expectile : cfg.tau_expectile;
      loss += w * u * u;
      dv(0, j) = -2.0 * w * u * inv_b;
    }
    rec.v_loss = loss * inv_b;
    check_finite(rec.v_loss, "v-loss", s);
    update(s.v, cache, dv, s.v_opt, s.freeze_head);
  }
  {  // policy: advantage-weighted regression
    const Matrix v = s.v.forward(b.obs);
    const Vector adv = q_data - v.row(0).transpose();
    nn::Mlp::Cache cache;
    const Matrix logits = s.policy.forward(b.obs, cache);
    Matrix dlogits;
    rec.policy_loss = awr_policy_loss(logits, b, adv, cfg, dlogits);
    check_finite(rec.policy_loss, "policy-loss", s);
    update(s.policy, cache, dlogits, s.policy_opt, s.freeze_head);
  }
  {  // Q: regression to r + gamma * V(s')
    const Matrix v_next = s.v.forward(b.next_obs);
    const Vector target =
        b.reward + cfg.gamma * b.not_done.cwiseProduct(v_next.row(0).transpose());
    nn::Mlp::Cache cache;
    const Matrix q = s.q.forward(b.obs, cache);
    Matrix dq;
    rec.q_loss = td_loss(q, b, target, dq);
    check_finite(rec.q_loss, "q-loss", s);
    update(s.q, cache, dq, s.q_opt, s.freeze_head);
  }
  return rec;
}

LossRecord step_conservative_q(LearnerState& s, const AlgoConfig& cfg, const Batch& b) {
  LossRecord rec;
  const double inv_b = 1.0 / static_cast<double>(b.obs.cols());
  const Matrix q_next = s.q_target.forward(b.next_obs);
  const Vector target =
      b.reward + cfg.gamma * b.not_done.cwiseProduct(q_next.colwise().maxCoeff().transpose());
  nn::Mlp::Cache cache;
  const Matrix q = s.q.forward(b.obs, cache);
  Matrix dq;
  rec.q_loss = td_loss(q, b, target, dq);
  double penalty = 0.0;
  const Matrix p = softmax(q);
  for (Eigen::Index j = 0; j < q.cols(); ++j) {
    const std::size_t a = b.action[static_cast<std::size_t>(j)];
    penalty += cql_penalty(std::span<const double>(q.col(j).data(), s.n_actions), a);
    dq.col(j) += cfg.cql_weight * inv_b * p.col(j);
    dq(static_cast<Eigen::Index>(a), j) -= cfg.cql_weight * inv_b;
  }
  rec.cql_penalty = penalty * inv_b;
  rec.q_loss += cfg.cql_weight * rec.cql_penalty;
  check_finite(rec.q_loss, "q-loss", s);
  update(s.q, cache, dq, s.q_opt, s.freeze_head);
  return rec;
}

LossRecord step_exp_adv_regression(LearnerState& s, const AlgoConfig& cfg, const Batch& b) {
  LossRecord rec;
  {  // Q: expected SARSA under the current policy
    const Matrix q_next = s.q_target.forward(b.next_obs);
    const Matrix pi_next = softmax(s.policy.forward(b.next_obs));
    const Vector v_next = q_next.cwiseProduct(pi_next).colwise().sum().transpose();
    const Vector target = b.reward + cfg.gamma * b.not_done.cwiseProduct(v_next);
    nn::Mlp::Cache cache;
    const Matrix q = s.q.forward(b.obs, cache);
    Matrix dq;
    rec.q_loss = td_loss(q, b, target, dq);
    check_finite(rec.q_loss, "q-loss", s);
    update(s.q, cache, dq, s.q_opt, s.freeze_head);
  }
  {  // policy: A = Q(s, a) - E_pi Q(s, .)
    const Matrix q = s.q.forward(b.obs);
    nn::Mlp::Cache cache;
    const Matrix logits = s.policy.forward(b.obs, cache);
    const Matrix pi = softmax(logits);
    const Vector baseline = q.cwiseProduct(pi).colwise().sum().transpose();
    const Vector adv = data_action_values(q, b) - baseline;
    Matrix dlogits;
    rec.policy_loss = awr_policy_loss(logits, b, adv, cfg, dlogits);
    check_finite(rec.policy_loss, "policy-loss", s);
    update(s.policy, cache, dlogits, s.policy_opt, s.freeze_head);
  }
  return rec;
}

LossRecord step_q_plus_bc(LearnerState& s, const AlgoConfig& cfg, const Batch& b) {
  LossRecord rec;
  const double inv_b = 1.0 / static_cast<double>(b.obs.cols());
  {  // Q: bootstrap through the greedy policy action
    const Matrix q_next = s.q_target.forward(b.next_obs);
    const Matrix logits_next = s.policy.forward(b.next_obs);
    Vector target(b.obs.cols());
    for (Eigen::Index j = 0; j < target.size(); ++j) {
      const auto a = argmax_action(std::span<const double>(logits_next.col(j).data(), s.n_actions));
      target(j) = b.reward(j) + cfg.gamma * b.not_done(j) * q_next(static_cast<Eigen::Index>(a), j);
    }
    nn::Mlp::Cache cache;
    const Matrix q = s.q.forward(b.obs, cache);
    Matrix dq;
    rec.q_loss = td_loss(q, b, target, dq);
    check_finite(rec.q_loss, "q-loss", s);
    update(s.q, cache, dq, s.q_opt, s.freeze_head);
  }
  {  // policy: -lambda * E_pi Q + bc_weight * CE(data action)
    const Matrix q = s.q.forward(b.obs);
    nn::Mlp::Cache cache;
    const Matrix logits = s.policy.forward(b.obs, cache);
    const Matrix pi = softmax(logits);
    const Vector q_pi = q.cwiseProduct(pi).colwise().sum().transpose();
    const double scale = q_pi.cwiseAbs().mean();
    const double lambda = kQPlusBcAlpha / std::max(scale, 1e-6);
    Matrix dlogits(logits.rows(), logits.cols());
    double loss = 0.0;
    for (Eigen::Index j = 0; j < logits.cols(); ++j) {
      const std::size_t a = b.action[static_cast<std::size_t>(j)];
      loss += -lambda * q_pi(j) - cfg.bc_weight * log_prob(logits, j, a);
      for (Eigen::Index k = 0; k < logits.rows(); ++k) {
        const double onehot = static_cast<std::size_t>(k) == a ? 1.0 : 0.0;
        dlogits(k, j) = inv_b * (-lambda * pi(k, j) * (q(k, j) - q_pi(j)) +
                                 cfg.bc_weight * (pi(k, j) - onehot));
      }
    }
    rec.policy_loss = loss * inv_b;
    check_finite(rec.policy_loss, "policy-loss", s);
    update(s.policy, cache, dlogits, s.policy_opt, s.freeze_head);
  }
  return rec;
}

}  // namespace

LossRecord train_step(LearnerState& state, const AlgoConfig& cfg, const OfflineDataset& ds,
                      std::span<const std::size_t> batch) {
  if (batch.empty()) throw Error("train_step: empty batch");
  if (!ds.meta().action.is_discrete() || ds.meta().action.size != state.n_actions ||
      ds.meta().obs_dim != state.obs_dim) {
    throw Error("train_step: dataset does not match learner shapes");
  }
  const Batch b = gather(ds, batch);
  LossRecord rec;
  switch (state.family) {
    case Family::kExpectileAwr: rec = step_expectile_awr(state, cfg, b); break;
    case Family::kConservativeQ: rec = step_conservative_q(state, cfg, b); break;
    case Family::kExpAdvRegression: rec = step_exp_adv_regression(state, cfg, b); break;
    case Family::kQPlusBc: rec = step_q_plus_bc(state, cfg, b); break;
  }
  ++state.step;
  if (state.step % cfg.target_update_period == 0) state.q_target = state.q;
  return rec;
}

LossRecord train_step(LearnerState& state, const AlgoConfig& cfg, const OfflineDataset& ds,
                      BatchSource& source) {
  std::vector<std::size_t> idx;
  source.next_batch(cfg.batch_size, idx);
  return train_step(state, cfg, ds, idx);
}

nn::Matrix policy_logits(const LearnerState& state, const nn::Matrix& obs) {
  return state.has_policy() ? state.policy.forward(obs) : state.q.forward(obs);
}

std::size_t argmax_action(std::span<const double> logits) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < logits.size(); ++i) {
    if (logits[i] > logits[best]) best = i;
  }
  return best;
}

std::size_t GreedyPolicy::operator()(std::span<const double> obs) const {
  nn::Matrix x(static_cast<Eigen::Index>(obs.size()), 1);
  for (std::size_t k = 0; k < obs.size(); ++k) x(static_cast<Eigen::Index>(k), 0) = obs[k];
  const nn::Matrix logits = policy_logits(*state_, x);
  return argmax_action(std::span<const double>(logits.data(), static_cast<std::size_t>(logits.rows())));
}

GreedyPolicy extract_policy(const LearnerState& state) { return GreedyPolicy(state); }

namespace {

std::vector<nn::NamedNet> learner_nets(const LearnerState& state) {
  std::vector<nn::NamedNet> nets = {{"q", state.q}, {"q_target", state.q_target}};
  if (state.has_v()) nets.push_back({"v", state.v});
  if (state.has_policy()) nets.push_back({"policy", state.policy});
  return nets;
}

std::string learner_meta(const LearnerState& state) {
  return nlohmann::json{{"family", to_string(state.family)},
                        {"step", state.step},
                        {"obs_dim", state.obs_dim},
                        {"n_actions", state.n_actions}}
      .dump();
}

LearnerState assemble_learner(std::vector<nn::NamedNet> nets, const std::string& meta_text,
                              const AlgoConfig& cfg, std::size_t obs_dim, std::size_t n_actions) {
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(meta_text);
  } catch (const nlohmann::json::exception&) {
    throw ParseError("checkpoint meta", "invalid JSON");
  }
  const std::string family = meta.value("family", "");
  if (family != to_string(cfg.family)) {
    throw Error("checkpoint family \"" + family + "\" does not match config");
  }
  // Build the expected shapes, then require every stored net to match.
  LearnerState s = init_learner(cfg, obs_dim, n_actions, 0);
  std::size_t found = 0;
  for (auto& named : nets) {
    nn::Mlp* slot = nullptr;
    if (named.name == "q") slot = &s.q;
    else if (named.name == "q_target") slot = &s.q_target;
    else if (named.name == "v" && s.has_v()) slot = &s.v;
    else if (named.name == "policy" && s.has_policy()) slot = &s.policy;
    if (!slot) throw Error("checkpoint has unexpected net \"" + named.name + "\"");
    if (!slot->same_structure(named.net)) {
      throw Error("checkpoint net \"" + named.name + "\" has a different shape than the config");
    }
    *slot = std::move(named.net);
    ++found;
  }
  const std::size_t expected = 2 + (s.has_v() ? 1 : 0) + (s.has_policy() ? 1 : 0);
  if (found != expected) throw Error("checkpoint is missing nets");
  s.step = meta.value("step", std::uint64_t{0});
  reset_optimizers(s, cfg, 1.0, false);
  return s;
}

}  // namespace

std::string serialize_learner(const LearnerState& state) {
  return nn::serialize_checkpoint(learner_nets(state), learner_meta(state));
}

LearnerState parse_learner(std::span<const char> bytes, const AlgoConfig& cfg, std::size_t obs_dim,
                           std::size_t n_actions) {
  std::string meta;
  auto nets = nn::parse_checkpoint(bytes, &meta);
  return assemble_learner(std::move(nets), meta, cfg, obs_dim, n_actions);
}

void save_learner(const std::filesystem::path& path, const LearnerState& state) {
  nn::save_checkpoint(path, learner_nets(state), learner_meta(state));
}

LearnerState load_learner(const std::filesystem::path& path, const AlgoConfig& cfg,
                          std::size_t obs_dim, std::size_t n_actions) {
  std::string meta;
  auto nets = nn::load_checkpoint(path, &meta);
  return assemble_learner(std::move(nets), meta, cfg, obs_dim, n_actions);
}

std::string loss_csv_header() { return "step,q_loss,v_loss,policy_loss,cql_penalty\n"; }

std::string loss_csv_row(std::uint64_t step, const LossRecord& r) {
  return std::to_string(step) + "," + csv::num(r.q_loss) + "," + csv::num(r.v_loss) + "," +
         csv::num(r.policy_loss) + "," + csv::num(r.cql_penalty) + "\n";
}

}  // namespace red
