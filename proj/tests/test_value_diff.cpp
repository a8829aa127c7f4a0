#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "saveci/envs.hpp"
#include "saveci/value_diff.hpp"

using namespace saveci;

namespace {

VectorXd v1(double a) { return (VectorXd(1) << a).finished(); }

struct PopFixture {
  TrajectoryDataset ds;
  std::vector<double> weights;
  std::shared_ptr<const FeatureMap> fm;
};

// Exact population moments of a tabular MDP under behavior b: uniform state
// visitation, action weights b(a|s), next actions split by b as well.
PopFixture population_fixture(const TabularMDP& mdp, const Policy& b) {
  MatrixXd w(mdp.S, mdp.m);
  for (int s = 0; s < mdp.S; ++s) w.row(s) = policy_probs(b, v1(s)).transpose() / mdp.S;
  auto [recs, wts] = population_transitions(mdp, w, &b);
  PopFixture out;
  out.ds = TrajectoryDataset::from_records(std::move(recs), mdp.m);
  out.weights.clear();
  for (const auto& r : out.ds.records) {
    int s = static_cast<int>(r.state[0]);
    int sp = static_cast<int>(r.next_state[0]);
    double bw = policy_probs(b, v1(sp))[*r.next_action];
    out.weights.push_back(w(s, r.action) * mdp.P[static_cast<size_t>(r.action)](s, sp) * bw);
  }
  std::vector<VectorXd> states;
  for (int s = 0; s < mdp.S; ++s) states.push_back(v1(s));
  out.fm = FeatureMap::indicator(states);
  return out;
}

TrajectoryDataset linear_data(int n, int T, std::uint64_t seed) {
  LinearEnv env(LinearEnv::Variant::A);
  return simulate_dataset(env, nullptr, n, T, seed);
}

}  // namespace

TEST_CASE("uniform behavior: fitted probabilities near one half") {
  TrajectoryDataset ds = linear_data(50, 100, 81);  // 5000 transitions, uniform behavior
  auto [k, L] = choose_L(ds.total_transitions(), 3.0 / 7.0, ds.d);
  auto fm = FeatureMap::tensor_bspline(build_knots(ds, k));
  BehaviorFit bf = fit_behavior_policy(ds, all_records(ds), fm);
  double mean_dev = 0.0;
  int checked = 0;
  for (int i = 0; i < 200; ++i) {
    const auto& r = ds.records[static_cast<size_t>(i * 7)];
    if (r.state.lpNorm<Eigen::Infinity>() > 2.5) continue;  // data is sparse in the tails
    VectorXd p = bf.probs(r.state);
    mean_dev += std::abs(p[1] - 0.5);
    ++checked;
    CHECK(std::abs(p[1] - 0.5) < 0.25);  // pointwise sampling noise cap
    CHECK(std::abs(p.sum() - 1.0) < 1e-6);
  }
  REQUIRE(checked > 100);
  CHECK(mean_dev / checked < 0.05);
}

TEST_CASE("indicator basis recovers empirical action frequencies exactly") {
  Rng rng(82);
  TabularMDP mdp = TabularMDP::random(3, 2, rng);
  Policy b = Policy::from_probs(
      [](const VectorXd& x) {
        double p = (x[0] == 0.0) ? 0.2 : (x[0] == 1.0 ? 0.5 : 0.8);
        return (VectorXd(2) << 1.0 - p, p).finished();
      },
      2, PolicyKind::TabularProbabilities, "tilted");
  TabularEnv env(mdp, b, VectorXd::Constant(3, 1.0 / 3.0));
  TrajectoryDataset ds = simulate_dataset(env, nullptr, 30, 40, 83);
  std::vector<VectorXd> states = {v1(0.0), v1(1.0), v1(2.0)};
  auto fm = FeatureMap::indicator(states);
  BehaviorFit bf = fit_behavior_policy(ds, all_records(ds), fm);
  // oracle: empirical frequencies per state
  for (int s = 0; s < 3; ++s) {
    long total = 0, ones = 0;
    for (const auto& r : ds.records)
      if (r.state[0] == s) {
        ++total;
        ones += r.action;
      }
    REQUIRE(total > 0);
    VectorXd p = bf.probs(v1(s));
    CHECK(p[1] == doctest::Approx(static_cast<double>(ones) / total).epsilon(1e-10));
    CHECK(p.sum() == doctest::Approx(1.0).epsilon(1e-10));
  }
}

TEST_CASE("fit_q_behavior matches the exact behavior Q on population moments") {
  Rng rng(84);
  for (int trial = 0; trial < 5; ++trial) {
    TabularMDP mdp = TabularMDP::random(4, 2, rng);
    Policy b = Policy::uniform(2);
    PopFixture fx = population_fixture(mdp, b);
    EvalConfig cfg;
    cfg.gamma = 0.5;
    SieveFit fit = fit_q_behavior(fx.ds, all_records(fx.ds), fx.fm, cfg, &fx.weights);
    MatrixXd Qb = tabular_exact_q(mdp, b, 0.5);
    for (int s = 0; s < mdp.S; ++s)
      for (int a = 0; a < mdp.m; ++a)
        CHECK(fit.beta[a * mdp.S + s] == doctest::Approx(Qb(s, a)).epsilon(1e-8));
  }
}

TEST_CASE("gamma=0: behavior fit equals the plain fit on usable records") {
  TrajectoryDataset ds = linear_data(10, 20, 85);
  std::vector<int> usable = records_with_next_action(ds, all_records(ds));
  CHECK(usable.size() == 10 * 19);
  auto [k, L] = choose_L(ds.total_transitions(), 3.0 / 7.0, ds.d);
  auto fm = FeatureMap::tensor_bspline(build_knots(ds, k));
  EvalConfig cfg;
  cfg.gamma = 0.0;
  SieveFit fb = fit_q_behavior(ds, all_records(ds), fm, cfg);
  SieveFit fp = fit_q(ds, usable, fm, Policy::uniform(2), cfg);
  CHECK((fb.beta - fp.beta).lpNorm<Eigen::Infinity>() < 1e-10);
}

TEST_CASE("single-transition trajectories: no usable records is an error") {
  std::vector<TransitionRecord> rs;
  for (int i = 0; i < 8; ++i) {
    TransitionRecord r;
    r.traj_id = i;
    r.t = 0;
    r.state = v1(i % 3);
    r.action = i % 2;
    r.reward = 1.0;
    r.next_state = v1((i + 1) % 3);
    rs.push_back(std::move(r));
  }
  TrajectoryDataset ds = TrajectoryDataset::from_records(std::move(rs), 2);
  std::vector<VectorXd> states = {v1(0.0), v1(1.0), v1(2.0)};
  auto fm = FeatureMap::indicator(states);
  EvalConfig cfg;
  cfg.gamma = 0.5;
  CHECK_THROWS_AS(fit_q_behavior(ds, all_records(ds), fm, cfg), InputError);
}

TEST_CASE("target equal to behavior: VD is zero on exact moments") {
  Rng rng(86);
  TabularMDP mdp = TabularMDP::random(4, 2, rng);
  Policy b = Policy::uniform(2);
  PopFixture fx = population_fixture(mdp, b);
  EvalConfig cfg;
  cfg.gamma = 0.5;
  auto idx = all_records(fx.ds);
  SieveFit fit_pi = fit_q(fx.ds, idx, fx.fm, b, cfg, &fx.weights);
  SieveFit fit_b = fit_q_behavior(fx.ds, idx, fx.fm, cfg, &fx.weights);
  BehaviorFit bf = fit_behavior_policy(fx.ds, idx, fx.fm, &fx.weights);
  ValueInterval iv = vd_point(fx.ds, idx, fit_pi, b, fit_b, bf, v1(1.0), 0.05, &fx.weights);
  CHECK(iv.estimate == doctest::Approx(0.0).epsilon(1e-8));
}

TEST_CASE("deterministic behavior on exact moments: all influence terms vanish") {
  // behavior one-hot everywhere and pi == b: residuals are zero, the fitted
  // behavior probabilities are exactly one-hot, so sigma* is identically zero
  Rng rng(87);
  TabularMDP mdp = TabularMDP::random(4, 2, rng);
  Policy b = Policy::deterministic(
      [](const VectorXd& x) { return static_cast<int>(x[0]) % 2; }, 2);
  PopFixture fx = population_fixture(mdp, b);
  EvalConfig cfg;
  cfg.gamma = 0.5;
  cfg.ridge_lambda = 1e-9;  // unvisited (s,a) cells make the system singular
  auto idx = all_records(fx.ds);
  SieveFit fit_pi = fit_q(fx.ds, idx, fx.fm, b, cfg, &fx.weights);
  SieveFit fit_b = fit_q_behavior(fx.ds, idx, fx.fm, cfg, &fx.weights);
  BehaviorFit bf = fit_behavior_policy(fx.ds, idx, fx.fm, &fx.weights);
  for (int s = 0; s < 4; ++s) {
    VectorXd p = bf.probs(v1(s));
    CHECK(p[s % 2] == doctest::Approx(1.0).epsilon(1e-8));
  }
  ValueInterval iv = vd_point(fx.ds, idx, fit_pi, b, fit_b, bf, v1(0.0), 0.05, &fx.weights);
  CHECK(iv.estimate == doctest::Approx(0.0).epsilon(1e-6));
  CHECK(iv.std_err == doctest::Approx(0.0).epsilon(1e-6));
}

TEST_CASE("default delta formula") {
  TrajectoryDataset ds = linear_data(10, 20, 88);
  double mean = 0.0;
  for (const auto& r : ds.records) mean += r.reward;
  mean /= static_cast<double>(ds.records.size());
  double var = 0.0;
  for (const auto& r : ds.records) var += (r.reward - mean) * (r.reward - mean);
  var /= static_cast<double>(ds.records.size()) - 1.0;
  double expected = 0.5 * std::pow(static_cast<double>(ds.records.size()), -1.0 / 6.0) *
                    std::sqrt(var);
  CHECK(default_vd_delta(ds) == doctest::Approx(expected).epsilon(1e-6));
}

TEST_CASE("save_vd: truncation floor and monotone CI width") {
  TrajectoryDataset ds = linear_data(20, 12, 89);
  BlockPartition p = make_partition(20, 12, 10, 6);
  Policy fixed = linear_target_policy();
  Learner constant = [&](const TrajectoryDataset&) { return fixed; };
  EvalConfig cfg;
  cfg.gamma = 0.5;
  VectorXd x = (VectorXd(2) << 0.0, 0.0).finished();
  auto fmf = bspline_factory(cfg);

  SaveResult tiny1 = save_vd(ds, p, constant, x, 1e-12, cfg, fmf);
  SaveResult tiny2 = save_vd(ds, p, constant, x, 1e-13, cfg, fmf);
  // delta below every sigma*: truncation inactive, results identical
  CHECK(tiny1.aggregate.estimate == tiny2.aggregate.estimate);
  CHECK(tiny1.aggregate.std_err == tiny2.aggregate.std_err);

  // delta above every sigma*: every weight equals delta, so sigma-tilde = delta
  SaveResult big = save_vd(ds, p, constant, x, 1000.0, cfg, fmf);
  CHECK(big.aggregate.std_err == doctest::Approx(1000.0).epsilon(1e-12));

  double prev_width = -1.0;
  for (double delta : {1e-12, 0.05, 0.2, 1.0, 5.0, 1000.0}) {
    SaveResult r = save_vd(ds, p, constant, x, delta, cfg, fmf);
    double width = r.aggregate.ci_upper - r.aggregate.ci_lower;
    CHECK(width >= prev_width - 1e-12);
    prev_width = width;
  }
}
