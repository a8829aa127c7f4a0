#pragma once

#include <Eigen/Dense>
#include <map>
#include <memory>

#include "saveci/basis.hpp"
#include "saveci/core.hpp"

namespace saveci {

// Point estimate with sandwich standard error and a two-sided normal CI.
// std_err stores sigma-hat on the asymptotic scale, so the CI half-width is
// z_{alpha/2} * std_err / sqrt(n_obs). n_obs is a real number because block
// aggregates carry an effective sample size nT(K-1)/K.
struct ValueInterval {
  double estimate = 0.0;
  double std_err = 0.0;
  double ci_lower = 0.0;
  double ci_upper = 0.0;
  double alpha = 0.05;
  double n_obs = 0.0;
  std::map<std::string, double> meta;
  std::string policy_tag;
};

ValueInterval make_interval(double estimate, double sigma, double n_obs, double alpha);

// Conservative reciprocal-condition estimate for a PartialPivLU factorization.
// Eigen's rcond() can report nonsense (even 1.0) for exactly singular inputs,
// so this also folds in the LU pivot ratio, which catches zero pivots.
double lu_rcond(const Eigen::PartialPivLU<MatrixXd>& lu);

// Fitted linear-sieve Q-model for a target policy: coefficients beta (length
// m*L, stacked per action), the un-ridged system matrix Sigma, and the meat
// matrix Omega. Solves use (Sigma + lambda*I) on both sides of the sandwich.
struct SieveFit {
  VectorXd beta;
  MatrixXd sigma_mat;
  MatrixXd omega_mat;
  double n_obs = 0.0;  // sum of record weights (= record count for unit weights)
  double gamma = 0.0;
  double ridge_lambda = 0.0;
  int m = 0;
  std::shared_ptr<const FeatureMap> fm;
  Eigen::PartialPivLU<MatrixXd> solver;  // LU of sigma_mat + lambda*I

  // u' (Sigma+lambda I)^{-1} Omega (Sigma+lambda I)^{-T} u, clipped at 0.
  double sandwich_variance(const VectorXd& u) const;
};

// All-record index helper.
std::vector<int> all_records(const TrajectoryDataset& ds);

// Sigma-hat = (1/W) sum_w xi (xi - gamma U_pi(x'))', b-hat = (1/W) sum_w xi Y,
// over the indexed records (W = total weight; unit weights when null).
std::pair<MatrixXd, VectorXd> assemble_system(const TrajectoryDataset& ds,
                                              const std::vector<int>& idx, const FeatureMap& fm,
                                              const Policy& pi, double gamma,
                                              const std::vector<double>* weights = nullptr);

SieveFit fit_q(const TrajectoryDataset& ds, const std::vector<int>& idx,
               std::shared_ptr<const FeatureMap> fm, const Policy& pi, const EvalConfig& cfg,
               const std::vector<double>* weights = nullptr);

// One temporal-difference residual per indexed record, in index order:
// eps = Y + gamma * U_pi(x')' beta - xi' beta.
std::vector<double> residuals(const SieveFit& fit, const TrajectoryDataset& ds,
                              const std::vector<int>& idx, const Policy& pi);

MatrixXd assemble_omega(const SieveFit& fit, const TrajectoryDataset& ds,
                        const std::vector<int>& idx, const Policy& pi,
                        const std::vector<double>& eps,
                        const std::vector<double>* weights = nullptr);

ValueInterval value_point(const SieveFit& fit, const VectorXd& x, const Policy& pi, double alpha);

ValueInterval value_integrated(const SieveFit& fit, const ReferenceDistribution& G,
                               const Policy& pi, double alpha, int g_draws, std::uint64_t seed);

}  // namespace saveci
