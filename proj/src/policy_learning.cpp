#include "saveci/policy_learning.hpp"

#include <Eigen/Dense>

#include "saveci/sieve.hpp"

namespace saveci {

int sargmax(const VectorXd& q_values) {
  if (q_values.size() == 0) throw InputError("sargmax: empty vector");
  int best = 0;
  for (int a = 1; a < q_values.size(); ++a)
    if (q_values[a] > q_values[best]) best = a;
  return best;
}

QParams double_fqi(const TrajectoryDataset& ds, const std::vector<int>& idx,
                   std::shared_ptr<const FeatureMap> fm, double gamma, const FQIConfig& cfg) {
  cfg.validate();
  if (idx.empty()) throw InputError("double_fqi: empty dataset");
  if (!(gamma >= 0.0 && gamma < 1.0)) throw InputError("double_fqi: gamma must be in [0,1)");
  const int L = fm->size();
  const int m = ds.m;
  const long N = static_cast<long>(idx.size());

  // Cache features once; the per-action Gram matrices are iteration-invariant.
  MatrixXd phi(N, L), phi_next(N, L);
  VectorXd y(N);
  std::vector<int> action(static_cast<size_t>(N));
  for (long k = 0; k < N; ++k) {
    const auto& r = ds.records[static_cast<size_t>(idx[static_cast<size_t>(k)])];
    phi.row(k) = fm->eval(r.state).transpose();
    phi_next.row(k) = fm->eval(r.next_state).transpose();
    y[k] = r.reward;
    action[static_cast<size_t>(k)] = r.action;
  }
  std::vector<Eigen::PartialPivLU<MatrixXd>> gram_lu(static_cast<size_t>(m));
  std::vector<std::vector<long>> rows_of(static_cast<size_t>(m));
  for (long k = 0; k < N; ++k) rows_of[static_cast<size_t>(action[static_cast<size_t>(k)])].push_back(k);
  for (int a = 0; a < m; ++a) {
    MatrixXd gram = MatrixXd::Zero(L, L);
    for (long k : rows_of[static_cast<size_t>(a)]) gram += phi.row(k).transpose() * phi.row(k);
    const double na = std::max<double>(1.0, static_cast<double>(rows_of[static_cast<size_t>(a)].size()));
    gram += cfg.ridge_lambda * na * MatrixXd::Identity(L, L);
    gram_lu[static_cast<size_t>(a)].compute(gram);
    if (cfg.ridge_lambda == 0.0 && !(lu_rcond(gram_lu[static_cast<size_t>(a)]) > 1e-12))
      throw SingularSystemError(lu_rcond(gram_lu[static_cast<size_t>(a)]), "double_fqi gram matrix");
  }

  MatrixXd theta_a = MatrixXd::Zero(L, m);
  MatrixXd theta_b = MatrixXd::Zero(L, m);
  QParams out;
  out.fm = fm;
  out.converged = false;
  auto update = [&](const MatrixXd& argmax_theta, const MatrixXd& value_theta) {
    // targets: Y + gamma * Q(x', sargmax_a Q(x',a; argmax_theta); value_theta)
    MatrixXd q_sel = phi_next * argmax_theta;  // N x m
    MatrixXd q_val = phi_next * value_theta;
    VectorXd target(N);
    for (long k = 0; k < N; ++k) {
      int a_star = sargmax(q_sel.row(k).transpose());
      target[k] = y[k] + gamma * q_val(k, a_star);
    }
    MatrixXd theta_new(L, m);
    for (int a = 0; a < m; ++a) {
      VectorXd rhs = VectorXd::Zero(L);
      for (long k : rows_of[static_cast<size_t>(a)]) rhs += phi.row(k).transpose() * target[k];
      theta_new.col(a) = gram_lu[static_cast<size_t>(a)].solve(rhs);
    }
    return theta_new;
  };

  for (int it = 1; it <= cfg.max_iter; ++it) {
    MatrixXd new_a = update(theta_a, theta_b);
    MatrixXd new_b = update(theta_b, theta_a);
    double delta = std::max((new_a - theta_a).cwiseAbs().maxCoeff(),
                            (new_b - theta_b).cwiseAbs().maxCoeff());
    theta_a = std::move(new_a);
    theta_b = std::move(new_b);
    out.iterations = it;
    if (delta < cfg.tol) {
      out.converged = true;
      break;
    }
  }
  out.theta = 0.5 * (theta_a + theta_b);
  return out;
}

Policy greedy_policy(const QParams& q) {
  auto qp = std::make_shared<QParams>(q);
  const int m = static_cast<int>(q.theta.cols());
  return Policy::deterministic([qp](const VectorXd& x) { return sargmax(qp->q_all(x)); }, m,
                               "greedy_fqi");
}

Policy greedy_policy(std::function<VectorXd(const VectorXd&)> q_fn, int m, std::string tag) {
  return Policy::deterministic(
      [q_fn = std::move(q_fn)](const VectorXd& x) { return sargmax(q_fn(x)); }, m, std::move(tag));
}

Policy epsilon_greedy(const Policy& base, double epsilon, int m) {
  if (!(epsilon >= 0.0 && epsilon <= 1.0)) throw InputError("epsilon must be in [0,1]");
  if (base.action_count() != m) throw InputError("epsilon_greedy: action count mismatch");
  return Policy::from_probs(
      [base, epsilon, m](const VectorXd& x) -> VectorXd {
        return (1.0 - epsilon) * base.probs(x) + VectorXd::Constant(m, epsilon / m);
      },
      m, PolicyKind::EpsilonGreedy, "eps_greedy(" + base.tag() + ")");
}

}  // namespace saveci
