#pragma once

#include <functional>

#include "saveci/sieve.hpp"

namespace saveci {

// One partition cell: trajectories [i_lo, i_hi) crossed with times [t_lo, t_hi).
struct Block {
  int kn = 0, kt = 0;
  int i_lo = 0, i_hi = 0;
  int t_lo = 0, t_hi = 0;
  long size() const { return static_cast<long>(i_hi - i_lo) * (t_hi - t_lo); }
};

// Ordered blocks I(1,1), I(2,1), ..., I(K_n,1), I(1,2), ..., I(K_n,K_T).
// For every k, each (i2,t2) in block k+1 and each (i1,t1) in blocks 1..k
// satisfy t2 > t1 or i2 > i1. Remainders when n or T are not divisible are
// absorbed into the last block along each axis.
struct BlockPartition {
  int K_n = 0, K_T = 0;
  int n_min = 0, T_min = 0;
  int n = 0, T = 0;
  std::vector<Block> blocks;
  int K() const { return static_cast<int>(blocks.size()); }
};

BlockPartition make_partition(int n, int T, int n_min, int T_min);

// Record indices belonging to a block. traj_order maps position -> traj_id
// (identity when empty); a seeded permutation supports ordering sensitivity
// analysis.
std::vector<int> block_records(const TrajectoryDataset& ds, const Block& block,
                               const std::vector<int>& traj_order = {});

std::vector<int> trajectory_permutation(int n, std::uint64_t permute_seed);

// Chooses the basis for a block-local fit from the block's own records.
using FeatureMapFactory =
    std::function<std::shared_ptr<const FeatureMap>(const TrajectoryDataset& block_ds)>;

// Default: tensor-product cubic B-spline with L from choose_L on the block size.
FeatureMapFactory bspline_factory(const EvalConfig& cfg);

// Fits the sieve system on the block records only and returns the
// integrated-value interval with N = |block|.
ValueInterval block_fit_and_eval(const TrajectoryDataset& ds, const std::vector<int>& record_idx,
                                 const Policy& pi, const FeatureMapFactory& fmf,
                                 const EvalConfig& cfg, const ReferenceDistribution& G);

// V-tilde = (sum V_k/sigma_k) / (sum 1/sigma_k); sigma-tilde = (K-1) / sum 1/sigma_k.
std::pair<double, double> aggregate_inverse_sigma(const std::vector<double>& values,
                                                  const std::vector<double>& sigmas);

using Learner = std::function<Policy(const TrajectoryDataset& prefix)>;

struct SaveResult {
  struct PerBlock {
    int block_id = 0;  // 1-based index of the evaluated block
    std::string policy_tag;
    ValueInterval interval;
  };
  std::vector<PerBlock> per_block;
  ValueInterval aggregate;
  int K = 0;
};

// The SAVE loop: for k = 1..K-1 fit the policy on blocks 1..k and evaluate it
// on block k+1; aggregate with inverse-sigma weights. Requires equal T_i.
SaveResult save_evaluate(const TrajectoryDataset& ds, const BlockPartition& partition,
                         const Learner& learner, const ReferenceDistribution& G,
                         const EvalConfig& cfg, const FeatureMapFactory& fmf,
                         const std::vector<int>& traj_order = {});

}  // namespace saveci
