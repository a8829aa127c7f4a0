#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "saveci/envs.hpp"
#include "saveci/save.hpp"

using namespace saveci;

namespace {

TrajectoryDataset linear_data(int n, int T, std::uint64_t seed) {
  LinearEnv env(LinearEnv::Variant::A);
  return simulate_dataset(env, nullptr, n, T, seed);
}

}  // namespace

TEST_CASE("make_partition: 2x2 grid with the pinned block order") {
  BlockPartition p = make_partition(4, 6, 2, 3);
  REQUIRE(p.K() == 4);
  CHECK(p.K_n == 2);
  CHECK(p.K_T == 2);
  // order I(1,1), I(2,1), I(1,2), I(2,2)
  CHECK(p.blocks[0].kn == 1);
  CHECK(p.blocks[0].kt == 1);
  CHECK(p.blocks[1].kn == 2);
  CHECK(p.blocks[1].kt == 1);
  CHECK(p.blocks[2].kn == 1);
  CHECK(p.blocks[2].kt == 2);
  CHECK(p.blocks[3].kn == 2);
  CHECK(p.blocks[3].kt == 2);
  for (const auto& b : p.blocks) {
    CHECK(b.i_hi - b.i_lo == 2);
    CHECK(b.t_hi - b.t_lo == 3);
  }
}

TEST_CASE("make_partition: pure time and pure trajectory splits") {
  BlockPartition by_time = make_partition(5, 12, 5, 4);
  CHECK(by_time.K_n == 1);
  CHECK(by_time.K_T == 3);
  for (const auto& b : by_time.blocks) {
    CHECK(b.i_lo == 0);
    CHECK(b.i_hi == 5);
  }
  BlockPartition by_traj = make_partition(9, 10, 3, 10);
  CHECK(by_traj.K_n == 3);
  CHECK(by_traj.K_T == 1);
  for (const auto& b : by_traj.blocks) {
    CHECK(b.t_lo == 0);
    CHECK(b.t_hi == 10);
  }
}

TEST_CASE("make_partition: remainders absorbed into the last block per axis") {
  BlockPartition p = make_partition(5, 7, 2, 3);
  CHECK(p.K_n == 2);
  CHECK(p.K_T == 2);
  CHECK(p.blocks.back().i_hi == 5);
  CHECK(p.blocks.back().t_hi == 7);
  CHECK(p.blocks.back().i_hi - p.blocks.back().i_lo == 3);  // 2 + remainder 1
  CHECK(p.blocks.back().t_hi - p.blocks.back().t_lo == 4);  // 3 + remainder 1
}

TEST_CASE("make_partition: fewer than two blocks is an error") {
  CHECK_THROWS_AS(make_partition(4, 6, 4, 6), PartitionError);
  CHECK_THROWS_AS(make_partition(1, 1, 1, 1), PartitionError);
}

TEST_CASE("ordering rule holds pairwise for every generated partition") {
  for (auto [n, T, nm, tm] : {std::tuple{4, 6, 2, 3}, std::tuple{5, 7, 2, 3},
                              std::tuple{6, 5, 2, 5}, std::tuple{3, 9, 3, 3}}) {
    BlockPartition p = make_partition(n, T, nm, tm);
    // For every k: all (i2,t2) in block k+1 vs all (i1,t1) in blocks 1..k
    // must satisfy t2 > t1 or i2 > i1.
    for (int k = 0; k + 1 < p.K(); ++k) {
      const Block& nxt = p.blocks[static_cast<size_t>(k) + 1];
      for (int j = 0; j <= k; ++j) {
        const Block& prev = p.blocks[static_cast<size_t>(j)];
        for (int i2 = nxt.i_lo; i2 < nxt.i_hi; ++i2)
          for (int t2 = nxt.t_lo; t2 < nxt.t_hi; ++t2)
            for (int i1 = prev.i_lo; i1 < prev.i_hi; ++i1)
              for (int t1 = prev.t_lo; t1 < prev.t_hi; ++t1)
                CHECK((t2 > t1 || i2 > i1));
      }
    }
    // disjoint union covers the full index grid
    std::vector<int> hits(static_cast<size_t>(n * T), 0);
    for (const auto& b : p.blocks)
      for (int i = b.i_lo; i < b.i_hi; ++i)
        for (int t = b.t_lo; t < b.t_hi; ++t) ++hits[static_cast<size_t>(i * T + t)];
    for (int h : hits) CHECK(h == 1);
  }
}

TEST_CASE("block_records respects a trajectory permutation") {
  TrajectoryDataset ds = linear_data(4, 3, 61);
  BlockPartition p = make_partition(4, 3, 2, 3);
  std::vector<int> order = {3, 2, 1, 0};
  std::vector<int> idx = block_records(ds, p.blocks[0], order);
  // block 0 holds positions 0..1 -> trajectories 3 and 2
  for (int i : idx) {
    int traj = ds.records[static_cast<size_t>(i)].traj_id;
    CHECK((traj == 3 || traj == 2));
  }
  CHECK(idx.size() == 6);
}

TEST_CASE("trajectory_permutation is a seed-deterministic permutation") {
  std::vector<int> a = trajectory_permutation(20, 9);
  std::vector<int> b = trajectory_permutation(20, 9);
  CHECK(a == b);
  std::vector<int> sorted = a;
  std::sort(sorted.begin(), sorted.end());
  for (int i = 0; i < 20; ++i) CHECK(sorted[static_cast<size_t>(i)] == i);
  CHECK(trajectory_permutation(20, 10) != a);
}

TEST_CASE("block covering the full dataset reduces to value_integrated") {
  TrajectoryDataset ds = linear_data(10, 15, 62);
  Policy pi = linear_target_policy();
  EvalConfig cfg;
  cfg.gamma = 0.5;
  auto G = ReferenceDistribution::dirac((VectorXd(2) << 0.2, 0.1).finished());
  auto fmf = bspline_factory(cfg);
  ValueInterval via_block = block_fit_and_eval(ds, all_records(ds), pi, fmf, cfg, G);
  auto fm = fmf(ds);
  SieveFit fit = fit_q(ds, all_records(ds), fm, pi, cfg);
  ValueInterval direct = value_integrated(fit, G, pi, cfg.alpha, cfg.g_draws, cfg.seed);
  CHECK(via_block.estimate == doctest::Approx(direct.estimate).epsilon(1e-12));
  CHECK(via_block.std_err == doctest::Approx(direct.std_err).epsilon(1e-12));
}

TEST_CASE("aggregate_inverse_sigma identities") {
  auto [v, s] = aggregate_inverse_sigma({1.0, 3.0}, {1.0, 2.0});
  CHECK(v == doctest::Approx(5.0 / 3.0).epsilon(1e-14));
  CHECK(s == doctest::Approx(4.0 / 3.0).epsilon(1e-14));
  // equal sigmas: arithmetic mean and the common sigma
  auto [v2, s2] = aggregate_inverse_sigma({2.0, 4.0, 6.0}, {0.7, 0.7, 0.7});
  CHECK(v2 == doctest::Approx(4.0).epsilon(1e-14));
  CHECK(s2 == doctest::Approx(0.7).epsilon(1e-14));
  // single block
  auto [v3, s3] = aggregate_inverse_sigma({1.5}, {0.3});
  CHECK(v3 == doctest::Approx(1.5).epsilon(1e-14));
  CHECK(s3 == doctest::Approx(0.3).epsilon(1e-14));
  CHECK_THROWS_AS(aggregate_inverse_sigma({1.0}, {0.0}), InputError);
  CHECK_THROWS_AS(aggregate_inverse_sigma({1.0, 2.0}, {1.0}), InputError);
}

TEST_CASE("sigma-tilde is the harmonic mean of the block sigmas") {
  Rng rng(63);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> vals, sigs;
    int K1 = 2 + static_cast<int>(rng.uniform_int(4));
    double inv_sum = 0.0;
    for (int k = 0; k < K1; ++k) {
      vals.push_back(rng.normal());
      sigs.push_back(0.1 + rng.uniform());
      inv_sum += 1.0 / sigs.back();
    }
    auto [v, s] = aggregate_inverse_sigma(vals, sigs);
    (void)v;
    CHECK(s == doctest::Approx(K1 / inv_sum).epsilon(1e-12));
  }
}

TEST_CASE("save_evaluate: aggregate recomputable, block 1 never evaluated") {
  TrajectoryDataset ds = linear_data(20, 12, 64);
  BlockPartition p = make_partition(20, 12, 10, 6);
  Policy fixed = linear_target_policy();
  Learner constant = [&](const TrajectoryDataset&) { return fixed; };
  EvalConfig cfg;
  cfg.gamma = 0.5;
  auto G = ReferenceDistribution::dirac((VectorXd(2) << 0.0, 0.0).finished());
  SaveResult res = save_evaluate(ds, p, constant, G, cfg, bspline_factory(cfg));
  CHECK(res.K == 4);
  REQUIRE(res.per_block.size() == 3);
  CHECK(res.per_block[0].block_id == 2);
  std::vector<double> vals, sigs;
  for (const auto& b : res.per_block) {
    vals.push_back(b.interval.estimate);
    sigs.push_back(b.interval.std_err);
  }
  auto [v, s] = aggregate_inverse_sigma(vals, sigs);
  CHECK(res.aggregate.estimate == doctest::Approx(v).epsilon(1e-12));
  CHECK(res.aggregate.std_err == doctest::Approx(s).epsilon(1e-12));
  // CI half-width = z * sigma-tilde / sqrt(nT(K-1)/K)
  double half = z_quantile(cfg.alpha) * s / std::sqrt(20.0 * 12.0 * 3.0 / 4.0);
  CHECK(res.aggregate.ci_upper - res.aggregate.estimate ==
        doctest::Approx(half).epsilon(1e-10));
}

TEST_CASE("learner never sees future blocks: poisoning them changes nothing") {
  TrajectoryDataset ds = linear_data(20, 12, 65);
  BlockPartition p = make_partition(20, 12, 10, 6);
  EvalConfig cfg;
  cfg.gamma = 0.5;
  auto G = ReferenceDistribution::dirac((VectorXd(2) << 0.0, 0.0).finished());

  // learner whose output encodes exactly what data it saw
  std::vector<double> seen_sums;
  Learner probe = [&](const TrajectoryDataset& prefix) {
    double sum = 0.0;
    for (const auto& r : prefix.records) sum += r.reward;
    seen_sums.push_back(sum);
    return linear_target_policy();
  };
  save_evaluate(ds, p, probe, G, cfg, bspline_factory(cfg));
  std::vector<double> clean = seen_sums;

  // the last block is evaluation-only: poisoning it changes no prefix
  TrajectoryDataset poisoned = ds;
  const Block& last = p.blocks.back();
  for (auto& r : poisoned.records)
    if (r.traj_id >= last.i_lo && r.traj_id < last.i_hi && r.t >= last.t_lo && r.t < last.t_hi)
      r.reward = 1e6;
  seen_sums.clear();
  save_evaluate(poisoned, p, probe, G, cfg, bspline_factory(cfg));
  REQUIRE(clean.size() == seen_sums.size());
  for (size_t k = 0; k < clean.size(); ++k) CHECK(clean[k] == seen_sums[k]);

  // poisoning block 2 must leave the first prefix (block 1) untouched but
  // reach every later prefix
  TrajectoryDataset poisoned2 = ds;
  const Block& second = p.blocks[1];
  for (auto& r : poisoned2.records)
    if (r.traj_id >= second.i_lo && r.traj_id < second.i_hi && r.t >= second.t_lo &&
        r.t < second.t_hi)
      r.reward = 1e6;
  seen_sums.clear();
  save_evaluate(poisoned2, p, probe, G, cfg, bspline_factory(cfg));
  REQUIRE(clean.size() == seen_sums.size());
  CHECK(clean[0] == seen_sums[0]);
  for (size_t k = 1; k < clean.size(); ++k) CHECK(clean[k] != seen_sums[k]);
}

TEST_CASE("aggregate is invariant to trajectory relabeling of the data") {
  // permute trajectory ids and pass the inverse order: identical result
  TrajectoryDataset ds = linear_data(16, 12, 66);
  BlockPartition p = make_partition(16, 12, 8, 6);
  Policy fixed = linear_target_policy();
  Learner constant = [&](const TrajectoryDataset&) { return fixed; };
  EvalConfig cfg;
  cfg.gamma = 0.5;
  auto G = ReferenceDistribution::dirac((VectorXd(2) << 0.0, 0.0).finished());
  SaveResult base = save_evaluate(ds, p, constant, G, cfg, bspline_factory(cfg));

  // relabel original trajectory i as perm[i]; passing perm as the order makes
  // position pos select label perm[pos], i.e. the original trajectory pos
  std::vector<int> perm = trajectory_permutation(16, 123);
  std::vector<TransitionRecord> recs = ds.records;
  for (auto& r : recs) r.traj_id = perm[static_cast<size_t>(r.traj_id)];
  TrajectoryDataset relabeled = TrajectoryDataset::from_records(std::move(recs), ds.m);
  SaveResult res = save_evaluate(relabeled, p, constant, G, cfg, bspline_factory(cfg), perm);
  CHECK(res.aggregate.estimate == doctest::Approx(base.aggregate.estimate).epsilon(1e-6));
  CHECK(res.aggregate.std_err == doctest::Approx(base.aggregate.std_err).epsilon(1e-6));
}
