#include <cmath>
#include <cstring>
#include <numeric>

#include "chain5.hpp"
#include "doctest.h"
#include "fixtures.hpp"
#include "oracles.hpp"
#include "red/algos.hpp"
#include "red/envsuite.hpp"
#include "red/error.hpp"

using namespace red;

namespace {

std::vector<std::size_t> all_indices(const OfflineDataset& ds) {
  std::vector<std::size_t> idx(ds.size());
  std::iota(idx.begin(), idx.end(), 0);
  return idx;
}

bool same_nets(const LearnerState& a, const LearnerState& b) {
  auto eq = [](const nn::Mlp& x, const nn::Mlp& y) {
    if (!x.same_structure(y)) return x.num_layers() == 0 && y.num_layers() == 0;
    for (std::size_t l = 0; l < x.num_layers(); ++l) {
      const auto &p = x.layers()[l], &q = y.layers()[l];
      if (std::memcmp(p.w.data(), q.w.data(), sizeof(double) * p.w.size()) ||
          std::memcmp(p.b.data(), q.b.data(), sizeof(double) * p.b.size())) {
        return false;
      }
    }
    return true;
  };
  return eq(a.q, b.q) && eq(a.q_target, b.q_target) && eq(a.v, b.v) && eq(a.policy, b.policy);
}

// Replays a fixed index list.
class ListSource final : public BatchSource {
 public:
  explicit ListSource(std::vector<std::size_t> idx) : idx_(std::move(idx)) {}
  void next_batch(std::size_t n, std::vector<std::size_t>& out) override {
    out.clear();
    for (std::size_t i = 0; i < n; ++i) out.push_back(idx_[(pos_++) % idx_.size()]);
  }

 private:
  std::vector<std::size_t> idx_;
  std::size_t pos_ = 0;
};

}  // namespace

TEST_CASE("expectile loss") {
  CHECK(expectile_loss(2.0, 0.5) == 2.0);
  CHECK(expectile_loss(-1.0, 0.9) == doctest::Approx(0.1));
  CHECK(expectile_loss(1.0, 0.9) == doctest::Approx(0.9));
  const std::vector<double> u = {1.0, -2.0, 0.5};
  CHECK(expectile_loss(u, 0.5) == doctest::Approx((0.5 + 2.0 + 0.125) / 3));
  Rng rng(1);
  for (int i = 0; i < 100; ++i) {
    const double x = rng.normal() * 3;
    CHECK(expectile_loss(x, 0.5) == doctest::Approx(0.5 * x * x));
    CHECK(expectile_loss(x, rng.uniform() * 0.98 + 0.01) >= 0.0);
  }
}

TEST_CASE("awr weight") {
  CHECK(awr_weight(0.0, 3.0, 100.0) == 1.0);
  CHECK(awr_weight(3.0 * std::log(50.0), 3.0, 100.0) == doctest::Approx(50.0));
  CHECK(awr_weight(1e308, 3.0, 100.0) == 100.0);
  CHECK(awr_weight(INFINITY, 3.0, 100.0) == 100.0);
  double prev = 0.0;
  for (double a = -50; a <= 50; a += 0.25) {
    const double w = awr_weight(a, 2.0, 20.0);
    CHECK(w > 0.0);
    CHECK(w <= 20.0);
    CHECK(w >= prev);
    prev = w;
  }
}

TEST_CASE("cql penalty") {
  for (std::size_t n : {1, 2, 5}) {
    const std::vector<double> q(n, 1.7);
    CHECK(cql_penalty(q, 0) == doctest::Approx(std::log(static_cast<double>(n))).epsilon(1e-14));
  }
  CHECK(cql_penalty(std::vector<double>{0, 0}, 0) == doctest::Approx(0.693147180559945));
  // softplus(-20) in 50 digits.
  const auto want = static_cast<double>(boost::multiprecision::log1p(boost::multiprecision::exp(oracle::HighPrec(-20))));
  const double got = cql_penalty(std::vector<double>{10, -10}, 0);
  CHECK(std::abs(got - want) <= 1e-15 * want);
  CHECK(got == doctest::Approx(2.06e-9).epsilon(0.01));
  Rng rng(2);
  for (int i = 0; i < 200; ++i) {
    std::vector<double> q(4);
    for (auto& x : q) x = rng.normal() * 50;
    CHECK(cql_penalty(q, rng.below(4)) >= 0.0);
  }
  CHECK(cql_penalty(std::vector<double>{1e6, 0}, 0) == 0.0);
  CHECK_THROWS_AS(cql_penalty(std::vector<double>{1, 2}, 2), Error);
}

TEST_CASE("argmax and greedy policy") {
  CHECK(argmax_action(std::vector<double>{0, 5}) == 1);
  CHECK(argmax_action(std::vector<double>{2, 2, 2}) == 0);
  Rng rng(3);
  for (int i = 0; i < 100; ++i) {
    std::vector<double> x(1 + rng.below(6));
    for (auto& v : x) v = std::floor(rng.normal() * 2);
    std::size_t want = 0;
    for (std::size_t k = 1; k < x.size(); ++k) {
      if (x[k] > x[want]) want = k;
    }
    CHECK(argmax_action(x) == want);
  }
}

TEST_CASE("algo config validation") {
  AlgoConfig c;
  CHECK_NOTHROW(c.validate());
  c.gamma = 0.0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = {};
  c.tau_expectile = 1.0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = {};
  c.target_update_period = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  CHECK(parse_family("q_plus_bc") == Family::kQPlusBc);
  CHECK_THROWS_AS(parse_family("sac"), ConfigError);
}

TEST_CASE("zero-initialised nets with zero rewards give finite losses and zero q-loss") {
  const auto ds = fixture::from_rewards({{0.0, 0.0, 0.0}, {0.0}});
  for (Family f : all_families()) {
    CAPTURE(to_string(f));
    AlgoConfig cfg;
    cfg.family = f;
    cfg.hidden = {4};
    auto s = init_learner(cfg, 1, 2, 1);
    const auto zero = [&](nn::Mlp& m) {
      if (m.num_layers()) m = nn::Mlp::zeros(m.dims(), cfg.activation);
    };
    zero(s.q);
    zero(s.q_target);
    zero(s.v);
    zero(s.policy);
    reset_optimizers(s, cfg, 1.0, false);
    const auto idx = all_indices(ds);
    const auto loss = train_step(s, cfg, ds, idx);
    // Equal Q rows: the penalty is ln(n_actions) and the TD part vanishes.
    if (f == Family::kConservativeQ) {
      CHECK(loss.cql_penalty == doctest::Approx(std::log(2.0)));
      CHECK(loss.q_loss - cfg.cql_weight * loss.cql_penalty == doctest::Approx(0.0));
    } else {
      CHECK(loss.q_loss == 0.0);
    }
    CHECK(std::isfinite(loss.v_loss));
    CHECK(std::isfinite(loss.policy_loss));
    CHECK(std::isfinite(loss.cql_penalty));
  }
}

TEST_CASE("gamma near zero without the penalty regresses Q onto rewards") {
  // Two actions per state with distinct deterministic rewards.
  DatasetBuilder b({1, ActionSpace::discrete(2), "t", 0});
  for (int s = 0; s < 4; ++s) {
    for (int a = 0; a < 2; ++a) {
      const double o = s / 3.0, act = a, r = 0.5 * s - a;
      b.add({&o, 1}, {&act, 1}, r, {&o, 1}, false, true);
    }
  }
  const auto ds = std::move(b).build();
  AlgoConfig cfg;
  cfg.family = Family::kConservativeQ;
  cfg.cql_weight = 0.0;
  cfg.gamma = 1e-12;
  cfg.hidden = {32};
  cfg.lr = 3e-3;
  auto s = init_learner(cfg, 1, 2, 4);
  const auto idx = all_indices(ds);
  for (int step = 0; step < 3000; ++step) train_step(s, cfg, ds, idx);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    nn::Matrix o(1, 1);
    o(0, 0) = ds.obs(i)[0];
    CHECK(s.q.forward(o)(static_cast<Eigen::Index>(ds.discrete_action(i)), 0) == doctest::Approx(ds.reward(i)).epsilon(0.02));
  }
}

TEST_CASE("ExpectileAWR with tau 0.5 reaches the empirical SARSA fixed point") {
  const auto ds = fixture::chain5_dataset();
  const auto cfg = fixture::chain5_config();
  const auto fp = oracle::sarsa_fixed_point(ds, 2, cfg.gamma);
  auto s = init_learner(cfg, 5, 2, 11);
  const auto idx = all_indices(ds);
  for (int step = 0; step < 4000; ++step) train_step(s, cfg, ds, idx);
  double worst = 0.0;
  for (const auto& [obs, sid] : fp.state_of) {
    if (obs[4] == 1.0) continue;  // terminal state never acts
    nn::Matrix o = Eigen::Map<const nn::Matrix>(obs.data(), 5, 1);
    const auto q = s.q.forward(o);
    for (Eigen::Index a = 0; a < 2; ++a) worst = std::max(worst, std::abs(q(a, 0) - fp.q[sid][static_cast<std::size_t>(a)]));
    worst = std::max(worst, std::abs(s.v.forward(o)(0, 0) - fp.v[sid]));
  }
  CHECK(worst <= 1e-2);
}

TEST_CASE("training is deterministic and sampler-agnostic") {
  const auto ds = generate_dataset(preset_config("replay_analog", 2));
  for (Family f : all_families()) {
    CAPTURE(to_string(f));
    AlgoConfig cfg;
    cfg.family = f;
    cfg.hidden = {16, 16};
    cfg.batch_size = 32;
    cfg.target_update_period = 5;
    auto a = init_learner(cfg, 2, 2, 9), b = init_learner(cfg, 2, 2, 9), c = init_learner(cfg, 2, 2, 9);
    WeightedSampler sampler(std::vector<double>(ds.size(), 1.0 / ds.size()), 77);
    RecordingSource rec(sampler);
    for (int step = 0; step < 20; ++step) train_step(a, cfg, ds, rec);
    // Replaying the recorded index stream through a different source, or
    // as explicit batches, gives the same parameters.
    ListSource replay(rec.log());
    for (int step = 0; step < 20; ++step) train_step(b, cfg, ds, replay);
    for (int step = 0; step < 20; ++step) {
      std::span<const std::size_t> batch(rec.log().data() + step * cfg.batch_size, cfg.batch_size);
      train_step(c, cfg, ds, batch);
    }
    CHECK(same_nets(a, b));
    CHECK(same_nets(a, c));
    CHECK(a.step == 20);
  }
}

TEST_CASE("target network is a hard copy every period") {
  const auto ds = generate_dataset(preset_config("replay_analog", 3));
  AlgoConfig cfg;
  cfg.family = Family::kConservativeQ;
  cfg.hidden = {8};
  cfg.batch_size = 16;
  cfg.target_update_period = 4;
  auto s = init_learner(cfg, 2, 2, 1);
  WeightedSampler sampler(std::vector<double>(ds.size(), 1.0 / ds.size()), 3);
  const auto initial = s.q_target;
  for (int step = 1; step <= 8; ++step) {
    train_step(s, cfg, ds, sampler);
    if (step % 4 == 0) {
      CHECK(s.q_target.same_parameters(s.q));
    } else {
      CHECK_FALSE(s.q_target.same_parameters(s.q));
    }
    if (step < 4) CHECK(s.q_target.same_parameters(initial));
  }
}

TEST_CASE("non-finite losses abort") {
  const auto ds = fixture::from_rewards({{1e200, 1e200}});
  AlgoConfig cfg;
  cfg.hidden = {4};
  for (Family f : all_families()) {
    cfg.family = f;
    auto s = init_learner(cfg, 1, 2, 1);
    const auto idx = all_indices(ds);
    CHECK_THROWS_AS(
        [&] {
          for (int i = 0; i < 50; ++i) train_step(s, cfg, ds, idx);
        }(),
        NanAbort);
  }
}

TEST_CASE("learner checkpoints") {
  fixture::TempDir dir("algos");
  const auto ds = generate_dataset(preset_config("expert_analog", 1));
  for (Family f : all_families()) {
    CAPTURE(to_string(f));
    AlgoConfig cfg;
    cfg.family = f;
    cfg.hidden = {8, 8};
    cfg.batch_size = 8;
    auto s = init_learner(cfg, 2, 2, 5);
    WeightedSampler sampler(std::vector<double>(ds.size(), 1.0 / ds.size()), 3);
    for (int i = 0; i < 3; ++i) train_step(s, cfg, ds, sampler);
    save_learner(dir / "l.orck", s);
    const auto back = load_learner(dir / "l.orck", cfg, 2, 2);
    CHECK(same_nets(s, back));
    CHECK(back.step == 3);

    AlgoConfig other = cfg;
    other.family = f == Family::kQPlusBc ? Family::kExpectileAwr : Family::kQPlusBc;
    CHECK_THROWS_AS(load_learner(dir / "l.orck", other, 2, 2), Error);
    AlgoConfig wider = cfg;
    wider.hidden = {16, 8};
    CHECK_THROWS_AS(load_learner(dir / "l.orck", wider, 2, 2), Error);
    CHECK_THROWS_AS(load_learner(dir / "l.orck", cfg, 3, 2), Error);
  }
}

TEST_CASE("policy extraction uses the policy net, or Q without one") {
  AlgoConfig cfg;
  cfg.hidden = {4};
  cfg.family = Family::kConservativeQ;
  auto cq = init_learner(cfg, 1, 3, 2);
  CHECK_FALSE(cq.has_policy());
  nn::Matrix o(1, 1);
  o(0, 0) = 0.3;
  const auto q = cq.q.forward(o);
  const std::vector<double> row(q.data(), q.data() + 3);
  const double obs = 0.3;
  CHECK(extract_policy(cq)({&obs, 1}) == argmax_action(row));
  cfg.family = Family::kQPlusBc;
  auto qb = init_learner(cfg, 1, 3, 2);
  const auto logits = qb.policy.forward(o);
  CHECK(extract_policy(qb)({&obs, 1}) == argmax_action(std::vector<double>(logits.data(), logits.data() + 3)));
}

TEST_CASE("loss CSV") {
  CHECK(loss_csv_header() == "step,q_loss,v_loss,policy_loss,cql_penalty\n");
  CHECK(loss_csv_row(3, {1.0, 0.5, -2.0, 0.0}) == "3,1,0.5,-2,0\n");
}
