#pragma once

#include "saveci/envs.hpp"
#include "saveci/save.hpp"

namespace saveci {

struct OnPolicySchedule {
  int K = 2;
  std::vector<int> T_sched;  // T(1..K) batch lengths
  double epsilon = 0.2;
  int n = 1;  // trajectories advanced in parallel

  void validate() const {
    if (K < 2) throw InputError("OnPolicySchedule: K must be >= 2");
    if (static_cast<int>(T_sched.size()) != K)
      throw InputError("OnPolicySchedule: T_sched must have K entries");
    for (int t : T_sched)
      if (t < 1) throw InputError("OnPolicySchedule: all T(k) must be >= 1");
    if (!(epsilon >= 0.0 && epsilon <= 1.0))
      throw InputError("OnPolicySchedule: epsilon must be in [0,1]");
    if (n < 1) throw InputError("OnPolicySchedule: n must be >= 1");
  }
};

// sqrt(T)-weighted aggregation of the evaluated batches: returns
// (V_tilde, sigma_tilde, half_width_scale) where the CI half-width equals
// z_{alpha/2} * sigma_tilde * half_width_scale / sqrt(n). Each evaluated
// batch is weighted by the length of the batch it was evaluated on, in both
// the estimate and sigma_tilde.
std::tuple<double, double, double> aggregate_sqrtT(const std::vector<double>& values,
                                                   const std::vector<double>& sigmas,
                                                   const std::vector<int>& T_list);

struct OnPolicyResult {
  std::vector<SaveResult::PerBlock> per_batch;
  ValueInterval aggregate;
  TrajectoryDataset data;
  int K = 0;
};

// Alternates batch generation and policy updates: batch 1 under uniform
// random actions; for k = 1..K-1 fit the policy on everything observed so
// far, continue the same n trajectories for T(k+1) steps under the
// epsilon-greedy behavior, and evaluate the new batch under the pre-batch
// policy estimate. Aggregates with sqrt(T) weights.
OnPolicyResult onpolicy_run(const Environment& env, const OnPolicySchedule& schedule,
                            const Learner& learner, const ReferenceDistribution& G,
                            const EvalConfig& cfg, const FeatureMapFactory& fmf,
                            std::uint64_t seed);

}  // namespace saveci
