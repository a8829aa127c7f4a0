#include "saveci/save.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace saveci {

BlockPartition make_partition(int n, int T, int n_min, int T_min) {
  if (n_min < 1 || n_min > n) throw InputError("make_partition: need 1 <= n_min <= n");
  if (T_min < 1 || T_min > T) throw InputError("make_partition: need 1 <= T_min <= T");
  BlockPartition p;
  p.n = n;
  p.T = T;
  p.n_min = n_min;
  p.T_min = T_min;
  p.K_n = n / n_min;
  p.K_T = T / T_min;
  if (p.K_n * p.K_T < 2)
    throw PartitionError("make_partition: SAVE needs at least 2 blocks (K_n*K_T >= 2)");
  for (int kt = 1; kt <= p.K_T; ++kt) {
    for (int kn = 1; kn <= p.K_n; ++kn) {
      Block b;
      b.kn = kn;
      b.kt = kt;
      b.i_lo = (kn - 1) * n_min;
      b.i_hi = kn == p.K_n ? n : kn * n_min;
      b.t_lo = (kt - 1) * T_min;
      b.t_hi = kt == p.K_T ? T : kt * T_min;
      p.blocks.push_back(b);
    }
  }
  // Ordering rule: any cell of a later block beats any earlier cell in time
  // or in trajectory index. Checked on block corners (extremes suffice).
  for (size_t k = 0; k + 1 < p.blocks.size(); ++k) {
    const Block& late = p.blocks[k + 1];
    for (size_t j = 0; j <= k; ++j) {
      const Block& early = p.blocks[j];
      bool ok = late.t_lo >= early.t_hi || late.i_lo >= early.i_hi;
      if (!ok) throw PartitionError("make_partition: ordering rule violated");
    }
  }
  return p;
}

std::vector<int> trajectory_permutation(int n, std::uint64_t permute_seed) {
  std::vector<int> order(static_cast<size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  Rng rng(permute_seed);
  for (int i = n - 1; i > 0; --i) {
    int j = rng.uniform_int(i + 1);
    std::swap(order[static_cast<size_t>(i)], order[static_cast<size_t>(j)]);
  }
  return order;
}

std::vector<int> block_records(const TrajectoryDataset& ds, const Block& block,
                               const std::vector<int>& traj_order) {
  // position of record (traj position, t): records are sorted by traj, time
  std::vector<long> traj_start(ds.lengths.size() + 1, 0);
  for (size_t i = 0; i < ds.lengths.size(); ++i)
    traj_start[i + 1] = traj_start[i] + ds.lengths[i];
  std::vector<int> out;
  out.reserve(static_cast<size_t>(block.size()));
  for (int pos = block.i_lo; pos < block.i_hi; ++pos) {
    int traj = traj_order.empty() ? pos : traj_order[static_cast<size_t>(pos)];
    long base = traj_start[static_cast<size_t>(traj)];
    int len = ds.lengths[static_cast<size_t>(traj)];
    for (int t = block.t_lo; t < block.t_hi && t < len; ++t)
      out.push_back(static_cast<int>(base + t));
  }
  return out;
}

FeatureMapFactory bspline_factory(const EvalConfig& cfg) {
  return [cfg](const TrajectoryDataset& block_ds) {
    int per_dim;
    if (cfg.L_override) {
      per_dim = static_cast<int>(std::llround(
          std::pow(static_cast<double>(*cfg.L_override), 1.0 / block_ds.d)));
      per_dim = std::max(per_dim, 4);
    } else {
      per_dim = choose_L(block_ds.total_transitions(), cfg.eta, block_ds.d).first;
    }
    return FeatureMap::tensor_bspline(build_knots(block_ds, per_dim));
  };
}

ValueInterval block_fit_and_eval(const TrajectoryDataset& ds, const std::vector<int>& record_idx,
                                 const Policy& pi, const FeatureMapFactory& fmf,
                                 const EvalConfig& cfg, const ReferenceDistribution& G) {
  if (record_idx.empty()) throw InputError("block_fit_and_eval: empty block");
  TrajectoryDataset block_ds = ds.subset(record_idx);
  auto fm = fmf(block_ds);
  SieveFit fit = fit_q(block_ds, all_records(block_ds), fm, pi, cfg);
  return value_integrated(fit, G, pi, cfg.alpha, cfg.g_draws, cfg.seed);
}

std::pair<double, double> aggregate_inverse_sigma(const std::vector<double>& values,
                                                  const std::vector<double>& sigmas) {
  if (values.empty() || values.size() != sigmas.size())
    throw InputError("aggregate_inverse_sigma: need equal-length nonempty lists");
  double sum_inv = 0.0, sum_v = 0.0;
  for (size_t k = 0; k < values.size(); ++k) {
    if (!(sigmas[k] > 0.0)) throw InputError("aggregate_inverse_sigma: sigma must be > 0");
    sum_inv += 1.0 / sigmas[k];
    sum_v += values[k] / sigmas[k];
  }
  const double v_tilde = sum_v / sum_inv;
  const double sigma_tilde = static_cast<double>(values.size()) / sum_inv;
  return {v_tilde, sigma_tilde};
}

SaveResult save_evaluate(const TrajectoryDataset& ds, const BlockPartition& partition,
                         const Learner& learner, const ReferenceDistribution& G,
                         const EvalConfig& cfg, const FeatureMapFactory& fmf,
                         const std::vector<int>& traj_order) {
  cfg.validate();
  const int T = ds.common_length();  // SAVE requires equal T_i
  if (partition.n != ds.n || partition.T != T)
    throw InputError("save_evaluate: partition does not match dataset shape");
  const int K = partition.K();
  if (K < 2) throw PartitionError("save_evaluate: K must be >= 2");
  SaveResult res;
  res.K = K;
  std::vector<int> prefix_idx;
  std::vector<double> values, sigmas;
  for (int k = 0; k < K - 1; ++k) {
    std::vector<int> cur = block_records(ds, partition.blocks[static_cast<size_t>(k)], traj_order);
    prefix_idx.insert(prefix_idx.end(), cur.begin(), cur.end());
    std::vector<int> eval_idx =
        block_records(ds, partition.blocks[static_cast<size_t>(k + 1)], traj_order);
    Policy pi_k;
    ValueInterval vi;
    try {
      // The learner sees only the cumulative prefix, never the evaluated block.
      pi_k = learner(ds.subset(prefix_idx));
      vi = block_fit_and_eval(ds, eval_idx, pi_k, fmf, cfg, G);
    } catch (const SingularSystemError& e) {
      throw SingularSystemError(e.rcond(), "SAVE step k=" + std::to_string(k + 1));
    }
    vi.meta["block"] = k + 2;
    values.push_back(vi.estimate);
    sigmas.push_back(vi.std_err);
    res.per_block.push_back({k + 2, pi_k.tag(), vi});
  }
  auto [v_tilde, sigma_tilde] = aggregate_inverse_sigma(values, sigmas);
  const double n_eff =
      static_cast<double>(ds.total_transitions()) * (K - 1) / static_cast<double>(K);
  res.aggregate = make_interval(v_tilde, sigma_tilde, n_eff, cfg.alpha);
  res.aggregate.meta["K"] = K;
  return res;
}

}  // namespace saveci
