#pragma once

#include <optional>

#include "saveci/save.hpp"

namespace saveci {

// Sieve regression of action indicators on state features: b-hat(a|x) =
// Phi_L(x)' alpha_a, clamped into [1e-6, 1] at evaluation time. Clamping
// events are counted (shared across copies) and reported.
struct BehaviorFit {
  MatrixXd alpha_coefs;  // L x m, column a = alpha-hat_a
  std::shared_ptr<const FeatureMap> fm;
  MatrixXd psi_mat;                          // Psi-hat = (1/W) sum_w phi phi'
  Eigen::PartialPivLU<MatrixXd> psi_solver;  // LU of Psi-hat
  std::shared_ptr<long> clamp_count = std::make_shared<long>(0);

  // Clamped probability estimates at x (not renormalized).
  VectorXd probs(const VectorXd& x) const;
  long clamps() const { return *clamp_count; }
};

BehaviorFit fit_behavior_policy(const TrajectoryDataset& ds, const std::vector<int>& idx,
                                std::shared_ptr<const FeatureMap> fm,
                                const std::vector<double>* weights = nullptr);

// Subset of idx whose records carry next_action (the last transition of each
// trajectory does not).
std::vector<int> records_with_next_action(const TrajectoryDataset& ds,
                                          const std::vector<int>& idx);

// Behavior-policy sieve fit: Sigma_b = (1/W) sum_w xi_t (xi_t - gamma xi_{t+1})'
// with xi_{t+1} = xi(next_state, next_action); only records with next_action
// are usable. Throws InputError when none are. weights runs parallel to idx;
// entries for unusable records are dropped along with them.
SieveFit fit_q_behavior(const TrajectoryDataset& ds, const std::vector<int>& idx,
                        std::shared_ptr<const FeatureMap> fm, const EvalConfig& cfg,
                        const std::vector<double>* weights = nullptr);

// Value-difference point estimate and CI at state x:
//   VD-hat = V-hat(pi;x) - sum_a b-hat(a|x) Phi(x)' beta_{b,a},
// with sigma-hat* the root mean square of the plug-in influence values
// psi-hat combining the pi-fit martingale term, the behavior-fit martingale
// term, and the behavior-estimation term. The psi sum runs over the records
// in idx that carry next_action. All three fits must share fm and dataset.
ValueInterval vd_point(const TrajectoryDataset& ds, const std::vector<int>& idx,
                       const SieveFit& fit_pi, const Policy& pi, const SieveFit& fit_b,
                       const BehaviorFit& bfit, const VectorXd& x, double alpha,
                       const std::vector<double>* weights = nullptr);

// Default truncation level: 0.5 * N^{-1/6} * sd(rewards).
double default_vd_delta(const TrajectoryDataset& ds);

// SAVE loop for the value difference at state x: per evaluated block the
// statistic is vd_point under the prefix-fit policy, aggregated with the
// truncated weights max{sigma-hat*_k, delta}. delta defaults to
// default_vd_delta(ds) when absent.
SaveResult save_vd(const TrajectoryDataset& ds, const BlockPartition& partition,
                   const Learner& learner, const VectorXd& x, std::optional<double> delta,
                   const EvalConfig& cfg, const FeatureMapFactory& fmf,
                   const std::vector<int>& traj_order = {});

}  // namespace saveci
