#pragma once

#include <json.hpp>

#include "saveci/envs.hpp"
#include "saveci/onpolicy.hpp"
#include "saveci/policy_learning.hpp"
#include "saveci/value_diff.hpp"

namespace saveci {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Trajectory CSV I/O
// ---------------------------------------------------------------------------

// Header `traj_id,t,state_0,...,state_{d-1},action,reward`; one row per
// transition plus an optional terminal row per trajectory (action and reward
// empty) carrying the final next_state. Without the terminal row the last
// transition of the trajectory is dropped with a warning on stderr.
// next_state/next_action are rebuilt by chaining consecutive rows. m is
// inferred as max(action)+1 unless given.
TrajectoryDataset load_trajectories_csv(const std::string& path, int m = -1);

// Doubles are written with enough digits for a bit-exact round trip.
void write_trajectories_csv(const TrajectoryDataset& ds, const std::string& path);

// ---------------------------------------------------------------------------
// Replication experiments
// ---------------------------------------------------------------------------

struct RepRecord {
  int rep = 0;
  double estimate = 0.0;
  double se = 0.0;
  double ci_lo = 0.0;
  double ci_hi = 0.0;
  bool covered = false;
  double truth = 0.0;
};

struct ExperimentReport {
  std::vector<RepRecord> reps;
  double ecp = 0.0;
  double al = 0.0;       // average CI length
  double log_mse = 0.0;  // natural log of mean squared error vs truth
  double truth = 0.0;
  json config_echo;

  void finalize();  // fills the summary fields from reps
  json to_json() const;
  std::string to_text() const;
};

// Runs fn(rep) for rep = 0..reps-1 on `workers` threads (hardware concurrency
// when workers <= 0). Results are ordered by rep, independent of scheduling.
std::vector<RepRecord> run_replications(int reps, int workers,
                                        const std::function<RepRecord(int)>& fn);

// Deterministic per-replication seed stream.
inline std::uint64_t rep_seed(std::uint64_t master, int rep) {
  return splitmix64(master) ^ splitmix64(static_cast<std::uint64_t>(rep) + 0x9e37ULL);
}

// ---------------------------------------------------------------------------
// Config-driven construction
// ---------------------------------------------------------------------------

std::unique_ptr<Environment> make_environment(const json& config);
Policy make_policy(const json& config, const Environment& env);
// Closed-form behavior policy matching the environment's built-in one.
Policy make_behavior_policy(const json& config, const Environment& env);
ReferenceDistribution make_reference(const json& config, const Environment& env);
EvalConfig make_eval_config(const json& config);
FQIConfig make_fqi_config(const json& config);
FeatureMapFactory make_feature_factory(const json& config, const Environment& env,
                                       const EvalConfig& cfg);
Learner make_fqi_learner(double gamma, const FeatureMapFactory& fmf, const FQIConfig& fqi);

// Monte Carlo truth with an in-memory cache keyed by the serialized key.
double cached_mc_truth(const json& key, const std::function<double()>& compute);

// ---------------------------------------------------------------------------
// Commands (resolved-config JSON in, report out)
// ---------------------------------------------------------------------------

ExperimentReport cmd_evaluate_fixed(const json& config);
ExperimentReport cmd_evaluate_optimal(const json& config);
ExperimentReport cmd_onpolicy(const json& config);
ExperimentReport cmd_value_diff(const json& config);
void cmd_simulate(const json& config);  // writes a trajectory CSV to config["out"]

}  // namespace saveci
