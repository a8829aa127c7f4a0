#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "saveci/onpolicy.hpp"

using namespace saveci;

namespace {

VectorXd v1(double a) { return (VectorXd(1) << a).finished(); }

TabularMDP constant_reward_mdp(double c) {
  Rng rng(71);
  TabularMDP mdp = TabularMDP::random(3, 2, rng);
  for (auto& r : mdp.r) r.setConstant(c);
  return mdp;
}

FeatureMapFactory indicator_factory(int S) {
  std::vector<VectorXd> states;
  for (int s = 0; s < S; ++s) states.push_back(v1(s));
  return [states](const TrajectoryDataset&) { return FeatureMap::indicator(states); };
}

}  // namespace

TEST_CASE("aggregate_sqrtT: weight examples and identities") {
  // T=(4,1): weights sqrt(4)=2 and sqrt(1)=1
  auto [v, s, hw] = aggregate_sqrtT({1.0, 4.0}, {1.0, 1.0}, {4, 1});
  CHECK(v == doctest::Approx((2.0 * 1.0 + 4.0) / 3.0).epsilon(1e-14));
  CHECK(s == doctest::Approx(1.0).epsilon(1e-14));
  CHECK(hw > 0.0);
  // single batch
  auto [v1a, s1, hw1] = aggregate_sqrtT({2.5}, {0.4}, {9});
  CHECK(v1a == doctest::Approx(2.5).epsilon(1e-14));
  CHECK(s1 == doctest::Approx(0.4).epsilon(1e-14));
  CHECK(hw1 > 0.0);
  // sigma-tilde formula: sum sqrt(T) / sum(sqrt(T)/sigma)
  auto [v2, s2, hw2] = aggregate_sqrtT({1.0, 2.0}, {0.5, 2.0}, {9, 4});
  (void)v2;
  (void)hw2;
  CHECK(s2 == doctest::Approx((3.0 + 2.0) / (3.0 / 0.5 + 2.0 / 2.0)).epsilon(1e-12));
  CHECK_THROWS_AS(aggregate_sqrtT({1.0}, {0.0}, {4}), InputError);
}

TEST_CASE("equal batch lengths reduce exactly to the inverse-sigma aggregate") {
  Rng rng(72);
  for (int trial = 0; trial < 30; ++trial) {
    std::vector<double> vals, sigs;
    std::vector<int> T_list;
    int K1 = 2 + static_cast<int>(rng.uniform_int(3));
    for (int k = 0; k < K1; ++k) {
      vals.push_back(rng.normal());
      sigs.push_back(0.2 + rng.uniform());
      T_list.push_back(50);
    }
    auto [v, s, hw] = aggregate_sqrtT(vals, sigs, T_list);
    (void)hw;
    auto [v_save, s_save] = aggregate_inverse_sigma(vals, sigs);
    CHECK(v == doctest::Approx(v_save).epsilon(1e-13));
    CHECK(s == doctest::Approx(s_save).epsilon(1e-13));
  }
}

TEST_CASE("schedule validation") {
  OnPolicySchedule sched;
  sched.K = 1;
  sched.T_sched = {10};
  CHECK_THROWS_AS(sched.validate(), InputError);
  sched.K = 2;
  sched.T_sched = {10};
  CHECK_THROWS_AS(sched.validate(), InputError);
  sched.T_sched = {10, 10};
  CHECK_NOTHROW(sched.validate());
  sched.epsilon = 1.5;
  CHECK_THROWS_AS(sched.validate(), InputError);
}

TEST_CASE("epsilon=1: second batch reproduces the uniform action marginals") {
  Rng mdp_rng(78);
  TabularMDP mdp = TabularMDP::random(3, 2, mdp_rng);
  TabularEnv env(mdp, Policy::uniform(2), VectorXd::Constant(3, 1.0 / 3.0));
  OnPolicySchedule sched;
  sched.K = 2;
  sched.T_sched = {60, 60};
  sched.epsilon = 1.0;
  sched.n = 40;
  Learner uniform_learner = [](const TrajectoryDataset&) { return Policy::uniform(2); };
  EvalConfig cfg;
  cfg.gamma = 0.5;
  auto G = ReferenceDistribution::dirac(v1(1.0));
  OnPolicyResult res =
      onpolicy_run(env, sched, uniform_learner, G, cfg, indicator_factory(3), 73);
  long n1[2] = {0, 0}, n2[2] = {0, 0};
  for (const auto& r : res.data.records) {
    if (r.t < 60)
      ++n1[r.action];
    else
      ++n2[r.action];
  }
  double tot1 = static_cast<double>(n1[0] + n1[1]);
  double tot2 = static_cast<double>(n2[0] + n2[1]);
  CHECK(tot1 == 2400.0);
  CHECK(tot2 == 2400.0);
  double p1 = n1[1] / tot1, p2 = n2[1] / tot2;
  // both are Binomial(2400, 0.5) proportions: 5-sigma agreement band
  CHECK(std::abs(p1 - p2) < 5.0 * std::sqrt(0.5 * 0.5 * 2.0 / 2400.0));
}

TEST_CASE("constant reward: aggregate value is c/(1-gamma)") {
  const double c = 1.8;
  TabularMDP mdp = constant_reward_mdp(c);
  TabularEnv env(mdp, Policy::uniform(2), VectorXd::Constant(3, 1.0 / 3.0));
  OnPolicySchedule sched;
  sched.K = 3;
  sched.T_sched = {40, 40, 40};
  sched.epsilon = 0.2;
  sched.n = 20;
  Learner uniform_learner = [](const TrajectoryDataset&) { return Policy::uniform(2); };
  EvalConfig cfg;
  cfg.gamma = 0.5;
  auto G = ReferenceDistribution::dirac(v1(2.0));
  OnPolicyResult res =
      onpolicy_run(env, sched, uniform_learner, G, cfg, indicator_factory(3), 74);
  CHECK(res.aggregate.estimate == doctest::Approx(c / 0.5).epsilon(1e-6));
  CHECK(res.per_batch.size() == 2);
  for (const auto& b : res.per_batch)
    CHECK(b.interval.estimate == doctest::Approx(c / 0.5).epsilon(1e-6));
}

TEST_CASE("onpolicy_run is fully seed-deterministic") {
  Rng mdp_rng(79);
  TabularMDP mdp = TabularMDP::random(3, 2, mdp_rng);
  TabularEnv env(mdp, Policy::uniform(2), VectorXd::Constant(3, 1.0 / 3.0));
  OnPolicySchedule sched;
  sched.K = 2;
  sched.T_sched = {30, 30};
  sched.epsilon = 0.2;
  sched.n = 10;
  Learner uniform_learner = [](const TrajectoryDataset&) { return Policy::uniform(2); };
  EvalConfig cfg;
  cfg.gamma = 0.5;
  auto G = ReferenceDistribution::dirac(v1(0.0));
  OnPolicyResult a = onpolicy_run(env, sched, uniform_learner, G, cfg, indicator_factory(3), 75);
  OnPolicyResult b = onpolicy_run(env, sched, uniform_learner, G, cfg, indicator_factory(3), 75);
  CHECK(a.aggregate.estimate == b.aggregate.estimate);
  CHECK(a.aggregate.std_err == b.aggregate.std_err);
  REQUIRE(a.data.records.size() == b.data.records.size());
  for (size_t i = 0; i < a.data.records.size(); ++i) {
    CHECK(a.data.records[i].state == b.data.records[i].state);
    CHECK(a.data.records[i].action == b.data.records[i].action);
    CHECK(a.data.records[i].reward == b.data.records[i].reward);
  }
  OnPolicyResult cres =
      onpolicy_run(env, sched, uniform_learner, G, cfg, indicator_factory(3), 76);
  CHECK(cres.aggregate.estimate != a.aggregate.estimate);
}

TEST_CASE("learner at step k never observes batch k+1") {
  Rng mdp_rng(80);
  TabularMDP mdp = TabularMDP::random(3, 2, mdp_rng);
  TabularEnv env(mdp, Policy::uniform(2), VectorXd::Constant(3, 1.0 / 3.0));
  OnPolicySchedule sched;
  sched.K = 3;
  sched.T_sched = {30, 30, 30};
  sched.epsilon = 1.0;  // keep the trajectory stream independent of the learner
  sched.n = 10;
  std::vector<size_t> seen_sizes;
  Learner probe = [&](const TrajectoryDataset& prefix) {
    seen_sizes.push_back(prefix.records.size());
    return Policy::uniform(2);
  };
  EvalConfig cfg;
  cfg.gamma = 0.5;
  auto G = ReferenceDistribution::dirac(v1(0.0));
  onpolicy_run(env, sched, probe, G, cfg, indicator_factory(3), 77);
  REQUIRE(seen_sizes.size() == 2);
  CHECK(seen_sizes[0] == 300);  // batch 1 only
  CHECK(seen_sizes[1] == 600);  // batches 1..2
}
