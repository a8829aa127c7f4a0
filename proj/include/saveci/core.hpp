#pragma once

#include <Eigen/Dense>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "saveci/common.hpp"

namespace saveci {

using Eigen::MatrixXd;
using Eigen::VectorXd;

// ---------------------------------------------------------------------------
// Trajectory data
// ---------------------------------------------------------------------------

// One observed tuple (X, A, Y, X'). next_action is the action taken at t+1
// when the same trajectory continues, so behavior-policy Q-fits never need a
// cross-record lookup; it is absent on the last transition of a trajectory.
struct TransitionRecord {
  int traj_id = 0;
  int t = 0;
  VectorXd state;
  int action = 0;
  double reward = 0.0;
  VectorXd next_state;
  std::optional<int> next_action;
};

struct TrajectoryDataset {
  std::vector<TransitionRecord> records;
  int n = 0;  // number of trajectories
  int d = 0;  // state dimension
  int m = 0;  // action count
  std::vector<int> lengths;  // transitions per trajectory, indexed by position in traj order

  // Builds a dataset from records, sorting by (traj_id, t) and computing the
  // bookkeeping fields. Does not validate invariants; see validate_dataset.
  static TrajectoryDataset from_records(std::vector<TransitionRecord> recs, int m);

  long total_transitions() const { return static_cast<long>(records.size()); }
  bool equal_lengths() const;
  int common_length() const;  // throws InputError unless equal_lengths()

  // Copies the selected records into a new dataset (n/d/lengths recomputed).
  // The subset need not be time-contiguous.
  TrajectoryDataset subset(const std::vector<int>& record_idx) const;
};

struct Violation {
  std::string kind;
  int traj_id = -1;
  int t = -1;
  std::string detail;
};

// Reports invariant violations; never throws. Empty result iff valid.
std::vector<Violation> validate_dataset(const TrajectoryDataset& ds);

// ---------------------------------------------------------------------------
// Policies
// ---------------------------------------------------------------------------

enum class PolicyKind {
  DeterministicRule,
  TabularProbabilities,
  GreedyFromQ,
  EpsilonGreedy,
  Uniform,
};

class Policy {
 public:
  Policy() = default;

  int action_count() const { return m_; }
  PolicyKind kind() const { return kind_; }
  const std::string& tag() const { return tag_; }

  // Probability vector over actions at state x. Sums to 1 within 1e-12.
  VectorXd probs(const VectorXd& x) const;

  int sample(const VectorXd& x, Rng& rng) const;

  static Policy uniform(int m);
  static Policy deterministic(std::function<int(const VectorXd&)> rule, int m,
                              std::string tag = "deterministic");
  static Policy from_probs(std::function<VectorXd(const VectorXd&)> fn, int m,
                           PolicyKind kind, std::string tag);

 private:
  std::function<VectorXd(const VectorXd&)> fn_;
  int m_ = 0;
  PolicyKind kind_ = PolicyKind::Uniform;
  std::string tag_;
};

inline VectorXd policy_probs(const Policy& pi, const VectorXd& x) { return pi.probs(x); }

// ---------------------------------------------------------------------------
// Reference distributions over initial states
// ---------------------------------------------------------------------------

class ReferenceDistribution {
 public:
  enum class Kind { Dirac, SampleSet, Sampler };

  static ReferenceDistribution dirac(VectorXd x0);
  static ReferenceDistribution sample_set(std::vector<VectorXd> states);
  static ReferenceDistribution sampler(std::function<VectorXd(Rng&)> gen, int draws,
                                       std::uint64_t seed, std::string tag = "sampler");

  Kind kind() const { return kind_; }
  const std::string& tag() const { return tag_; }

  // Mean of f over the distribution: exact for dirac, sample mean for
  // sample_set, seeded Monte Carlo (g_draws draws) for sampler kinds.
  VectorXd mean(const std::function<VectorXd(const VectorXd&)>& f, int out_dim,
                int g_draws, std::uint64_t seed) const;

  // One draw (used by rollout oracles).
  VectorXd draw(Rng& rng) const;

  int default_draws() const { return draws_; }
  std::uint64_t default_seed() const { return seed_; }

 private:
  Kind kind_ = Kind::Dirac;
  VectorXd x0_;
  std::vector<VectorXd> states_;
  std::function<VectorXd(Rng&)> gen_;
  int draws_ = 1;
  std::uint64_t seed_ = 0;
  std::string tag_;
};

// ---------------------------------------------------------------------------
// Evaluation configuration
// ---------------------------------------------------------------------------

struct EvalConfig {
  double gamma = 0.5;
  double alpha = 0.05;
  double eta = 3.0 / 7.0;
  std::optional<int> L_override;
  double ridge_lambda = 0.0;
  int g_draws = 10000;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(gamma >= 0.0 && gamma < 1.0)) throw InputError("gamma must be in [0,1)");
    if (!(alpha > 0.0 && alpha < 1.0)) throw InputError("alpha must be in (0,1)");
    if (!(eta > 0.0 && eta < 1.0)) throw InputError("eta must be in (0,1)");
    if (ridge_lambda < 0.0) throw InputError("ridge_lambda must be >= 0");
    if (g_draws < 1) throw InputError("g_draws must be >= 1");
  }
};

// Chains next_state/next_action pointers within each trajectory of a
// record list sorted by (traj_id, t). Fills next_action from the following
// record; leaves it absent on the last transition.
void chain_next_actions(std::vector<TransitionRecord>& records);

}  // namespace saveci
