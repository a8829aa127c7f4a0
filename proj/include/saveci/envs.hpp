#pragma once

#include <memory>
#include <utility>

#include "saveci/core.hpp"

namespace saveci {

// Stateless simulator interface: environments are immutable specs; all
// randomness flows through the caller-supplied Rng.
class Environment {
 public:
  virtual ~Environment() = default;
  virtual int state_dim() const = 0;
  virtual int action_count() const = 0;
  virtual VectorXd initial_state(Rng& rng) const = 0;
  virtual std::pair<VectorXd, double> step(const VectorXd& x, int a, Rng& rng) const = 0;
  // The built-in behavior policy used when generating observational data.
  virtual int behavior_action(const VectorXd& x, Rng& rng) const = 0;
};

// Linear-Gaussian dynamics: variants A and B share
//   X' = diag(0.75*(2a-1), 0.75*(1-2a)) X + z,  z ~ N(0, I/4),
//   Y  = 2*X'_1 + X'_2 - 0.25*(2a-1),
// and differ in the behavior policy (A: Bernoulli(0.5); B: state-dependent
// sigmoid mixture). Variant D removes the action from dynamics and reward.
class LinearEnv : public Environment {
 public:
  enum class Variant { A, B, D };
  explicit LinearEnv(Variant v) : variant_(v) {}

  Variant variant() const { return variant_; }
  int state_dim() const override { return 2; }
  int action_count() const override { return 2; }
  VectorXd initial_state(Rng& rng) const override;
  std::pair<VectorXd, double> step(const VectorXd& x, int a, Rng& rng) const override;
  int behavior_action(const VectorXd& x, Rng& rng) const override;

 private:
  Variant variant_;
};

// The target policy used with the linear environments: action 0 when both
// coordinates are positive, action 1 otherwise.
Policy linear_target_policy();

// 4 x 12 Cliff Walking grid, episodic with instant reset to start on cliff
// or goal entry, encoded as a continuing chain. States are single-coordinate
// integer cell ids (row * 12 + col, row 0 at the top, start at (3,0), goal at
// (3,11), cliff at (3,1..10)). Rewards are -1 (-100 on cliff entry) plus
// N(0, reward_noise_sd^2) noise. The built-in behavior policy is a 50-50
// mixture of the optimal policy and the uniform policy.
class CliffEnv : public Environment {
 public:
  static constexpr int kRows = 4;
  static constexpr int kCols = 12;
  static constexpr int kStart = 36;
  static constexpr int kGoal = 47;

  explicit CliffEnv(double gamma = 0.5, double reward_noise_sd = 1.0);

  int state_dim() const override { return 1; }
  int action_count() const override { return 4; }  // up, down, left, right
  VectorXd initial_state(Rng&) const override;
  std::pair<VectorXd, double> step(const VectorXd& x, int a, Rng& rng) const override;
  int behavior_action(const VectorXd& x, Rng& rng) const override;

  // Deterministic step on the noiseless grid.
  struct StepResult {
    int next_cell;
    double reward_mean;
    bool reset;
  };
  static StepResult cliff_step(int cell, int a);

  const Policy& optimal_policy() const { return optimal_; }
  std::vector<VectorXd> cell_states() const;  // 48 one-dim states for the indicator basis
  double reward_noise_sd() const { return reward_noise_sd_; }

 private:
  double reward_noise_sd_;
  Policy optimal_;
};

// Finite MDP used by the exact oracles.
struct TabularMDP {
  int S = 0;
  int m = 0;
  std::vector<MatrixXd> P;  // P[a](s, s')
  std::vector<VectorXd> r;  // r[a](s)

  void validate() const;
  static TabularMDP random(int S, int m, Rng& rng);
};

// Wraps a TabularMDP as a simulation environment with a given behavior policy.
class TabularEnv : public Environment {
 public:
  TabularEnv(TabularMDP mdp, Policy behavior, VectorXd init_probs);
  int state_dim() const override { return 1; }
  int action_count() const override { return mdp_.m; }
  VectorXd initial_state(Rng& rng) const override;
  std::pair<VectorXd, double> step(const VectorXd& x, int a, Rng& rng) const override;
  int behavior_action(const VectorXd& x, Rng& rng) const override;
  const TabularMDP& mdp() const { return mdp_; }

 private:
  TabularMDP mdp_;
  Policy behavior_;
  VectorXd init_probs_;
};

// Exact policy Q-table via the linear solve Q = r + gamma * P (Pi Q);
// Bellman residual below 1e-10 by construction (asserted).
MatrixXd tabular_exact_q(const TabularMDP& mdp, const Policy& pi, double gamma);

// Optimal Q-table by value iteration to sup-norm tolerance tol.
MatrixXd tabular_optimal_q(const TabularMDP& mdp, double gamma, double tol = 1e-12);

// n trajectories of length T under the given behavior (built-in when null),
// fully determined by the seed.
TrajectoryDataset simulate_dataset(const Environment& env, const Policy* behavior, int n, int T,
                                   std::uint64_t seed);

struct MCValue {
  double value = 0.0;
  double std_error = 0.0;
  bool horizon_warning = false;  // gamma^horizon not negligible
};

// Monte Carlo value of pi over initial draws from G: mean of
// sum_{t<horizon} gamma^t Y_t across N_reps rollouts.
MCValue mc_true_value(const Environment& env, const Policy& pi, const ReferenceDistribution& G,
                      double gamma, int n_reps, int horizon, std::uint64_t seed);

// Index of Glycemic Control reward transform of a blood-glucose reading.
double igc_reward(double glucose);

// Weighted transitions enumerating the full outcome space of a finite MDP:
// one record per (s, a, s') with weight sa_weights(s,a) * P(s'|s,a) and reward
// r(s,a). When next_behavior is given, records are further split over next
// actions a' with weight multiplied by b(a'|s') and next_action = a'.
std::pair<std::vector<TransitionRecord>, std::vector<double>> population_transitions(
    const TabularMDP& mdp, const MatrixXd& sa_weights, const Policy* next_behavior = nullptr);

}  // namespace saveci
