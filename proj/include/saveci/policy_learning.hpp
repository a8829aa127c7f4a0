#pragma once

#include <memory>

#include "saveci/basis.hpp"
#include "saveci/core.hpp"

namespace saveci {

// Smallest action index among exact maximizers (ties at floating equality).
int sargmax(const VectorXd& q_values);

// Per-action Q-coefficients over an attached feature map.
struct QParams {
  MatrixXd theta;  // L x m; column a holds theta_a
  std::shared_ptr<const FeatureMap> fm;
  bool converged = true;
  int iterations = 0;

  VectorXd q_all(const VectorXd& x) const { return theta.transpose() * fm->eval(x); }
  double q(const VectorXd& x, int a) const { return fm->eval(x).dot(theta.col(a)); }
};

struct FQIConfig {
  int max_iter = 200;
  double tol = 1e-6;  // sup-norm change of coefficients
  double ridge_lambda = 1e-9;
  std::uint64_t seed = 0;

  void validate() const {
    if (max_iter < 1) throw InputError("FQIConfig: max_iter must be >= 1");
    if (!(tol > 0.0)) throw InputError("FQIConfig: tol must be > 0");
    if (ridge_lambda < 0.0) throw InputError("FQIConfig: ridge_lambda must be >= 0");
  }
};

// Double fitted Q-iteration with two coefficient sets theta_A/theta_B,
// zero-initialized; each builds its targets with the other's value estimate
// and the final estimate is the average of the two.
QParams double_fqi(const TrajectoryDataset& ds, const std::vector<int>& idx,
                   std::shared_ptr<const FeatureMap> fm, double gamma, const FQIConfig& cfg);

inline QParams double_fqi(const TrajectoryDataset& ds, std::shared_ptr<const FeatureMap> fm,
                          double gamma, const FQIConfig& cfg) {
  std::vector<int> idx(ds.records.size());
  for (size_t i = 0; i < idx.size(); ++i) idx[i] = static_cast<int>(i);
  return double_fqi(ds, idx, std::move(fm), gamma, cfg);
}

// Deterministic greedy policy selecting the smallest maximizer of Q(x, .).
Policy greedy_policy(const QParams& q);
Policy greedy_policy(std::function<VectorXd(const VectorXd&)> q_fn, int m,
                     std::string tag = "greedy");

// (1-eps) * base + eps/m at every state.
Policy epsilon_greedy(const Policy& base, double epsilon, int m);

}  // namespace saveci
