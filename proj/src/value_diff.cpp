#include "saveci/value_diff.hpp"

#include <cmath>

namespace saveci {

namespace {

constexpr double kProbFloor = 1e-6;
constexpr double kRcondThreshold = 1e-12;

double weight_at(const std::vector<double>* weights, size_t k) {
  return weights ? (*weights)[k] : 1.0;
}

}  // namespace

VectorXd BehaviorFit::probs(const VectorXd& x) const {
  VectorXd phi = fm->eval(x);
  VectorXd p = alpha_coefs.transpose() * phi;
  for (int a = 0; a < p.size(); ++a) {
    if (p[a] < kProbFloor || p[a] > 1.0) {
      p[a] = std::min(std::max(p[a], kProbFloor), 1.0);
      ++*clamp_count;
    }
  }
  return p;
}

BehaviorFit fit_behavior_policy(const TrajectoryDataset& ds, const std::vector<int>& idx,
                                std::shared_ptr<const FeatureMap> fm,
                                const std::vector<double>* weights) {
  if (idx.empty()) throw InputError("fit_behavior_policy: empty record set");
  if (weights && weights->size() != idx.size())
    throw InputError("fit_behavior_policy: weights/index size mismatch");
  const int L = fm->size();
  const int m = ds.m;
  MatrixXd psi = MatrixXd::Zero(L, L);
  MatrixXd rhs = MatrixXd::Zero(L, m);
  double W = 0.0;
  for (size_t k = 0; k < idx.size(); ++k) {
    const auto& r = ds.records[static_cast<size_t>(idx[k])];
    const double w = weight_at(weights, k);
    W += w;
    VectorXd phi = fm->eval(r.state);
    psi.selfadjointView<Eigen::Lower>().rankUpdate(phi, w);
    rhs.col(r.action) += w * phi;
  }
  psi = psi.selfadjointView<Eigen::Lower>();
  psi /= W;
  rhs /= W;
  BehaviorFit fit;
  fit.fm = std::move(fm);
  fit.psi_mat = psi;
  fit.psi_solver.compute(psi);
  const double rc = lu_rcond(fit.psi_solver);
  if (!(rc > kRcondThreshold) || !std::isfinite(rc))
    throw SingularSystemError(rc, "fit_behavior_policy design matrix");
  fit.alpha_coefs = fit.psi_solver.solve(rhs);
  if (!fit.alpha_coefs.allFinite())
    throw SingularSystemError(rc, "fit_behavior_policy produced non-finite coefficients");
  return fit;
}

std::vector<int> records_with_next_action(const TrajectoryDataset& ds,
                                          const std::vector<int>& idx) {
  std::vector<int> out;
  out.reserve(idx.size());
  for (int i : idx)
    if (ds.records[static_cast<size_t>(i)].next_action) out.push_back(i);
  return out;
}

SieveFit fit_q_behavior(const TrajectoryDataset& ds, const std::vector<int>& idx,
                        std::shared_ptr<const FeatureMap> fm, const EvalConfig& cfg,
                        const std::vector<double>* weights) {
  cfg.validate();
  if (weights && weights->size() != idx.size())
    throw InputError("fit_q_behavior: weights/index size mismatch");
  std::vector<int> usable;
  std::vector<double> usable_w;
  for (size_t k = 0; k < idx.size(); ++k) {
    if (!ds.records[static_cast<size_t>(idx[k])].next_action) continue;
    usable.push_back(idx[k]);
    if (weights) usable_w.push_back((*weights)[k]);
  }
  if (usable.empty())
    throw InputError("fit_q_behavior: no record carries next_action");

  const int L = fm->size();
  const int m = ds.m;
  const int p = m * L;
  MatrixXd sigma = MatrixXd::Zero(p, p);
  VectorXd b = VectorXd::Zero(p);
  double W = 0.0;
  for (size_t k = 0; k < usable.size(); ++k) {
    const auto& r = ds.records[static_cast<size_t>(usable[k])];
    const double w = weights ? usable_w[k] : 1.0;
    W += w;
    VectorXd phi = fm->eval(r.state);
    VectorXd phi_next = fm->eval(r.next_state);
    VectorXd rhs = VectorXd::Zero(p);
    rhs.segment(static_cast<long>(r.action) * L, L) = phi;
    rhs.segment(static_cast<long>(*r.next_action) * L, L) -= cfg.gamma * phi_next;
    const int row0 = r.action * L;
    for (int j = 0; j < L; ++j) {
      if (phi[j] == 0.0) continue;
      const double lw = w * phi[j];
      b[row0 + j] += lw * r.reward;
      sigma.row(row0 + j) += lw * rhs.transpose();
    }
  }
  sigma /= W;
  b /= W;

  SieveFit fit;
  fit.sigma_mat = std::move(sigma);
  fit.gamma = cfg.gamma;
  fit.ridge_lambda = cfg.ridge_lambda;
  fit.m = m;
  fit.fm = fm;
  MatrixXd sys = fit.sigma_mat;
  if (cfg.ridge_lambda > 0.0)
    sys += cfg.ridge_lambda * MatrixXd::Identity(p, p);
  fit.solver.compute(sys);
  const double rc = lu_rcond(fit.solver);
  if (cfg.ridge_lambda == 0.0 && (!(rc > kRcondThreshold) || !std::isfinite(rc)))
    throw SingularSystemError(rc, "fit_q_behavior system matrix");
  fit.beta = fit.solver.solve(b);
  if (!fit.beta.allFinite())
    throw SingularSystemError(rc, "fit_q_behavior produced non-finite beta");
  fit.n_obs = W;

  // Omega with the behavior temporal-difference residuals.
  MatrixXd omega = MatrixXd::Zero(p, p);
  for (size_t k = 0; k < usable.size(); ++k) {
    const auto& r = ds.records[static_cast<size_t>(usable[k])];
    const double w = weights ? usable_w[k] : 1.0;
    VectorXd phi = fit.fm->eval(r.state);
    VectorXd phi_next = fit.fm->eval(r.next_state);
    const double q_sa = phi.dot(fit.beta.segment(static_cast<long>(r.action) * L, L));
    const double q_next =
        phi_next.dot(fit.beta.segment(static_cast<long>(*r.next_action) * L, L));
    const double eps = r.reward + cfg.gamma * q_next - q_sa;
    const double e2w = w * eps * eps;
    const int row0 = r.action * L;
    for (int a = 0; a < L; ++a)
      for (int c = 0; c < L; ++c)
        omega(row0 + a, row0 + c) += e2w * phi[a] * phi[c];
  }
  fit.omega_mat = omega / W;
  return fit;
}

ValueInterval vd_point(const TrajectoryDataset& ds, const std::vector<int>& idx,
                       const SieveFit& fit_pi, const Policy& pi, const SieveFit& fit_b,
                       const BehaviorFit& bfit, const VectorXd& x, double alpha,
                       const std::vector<double>* weights) {
  if (fit_pi.fm != fit_b.fm || fit_pi.fm != bfit.fm)
    throw InputError("vd_point: fits must share the feature map");
  const auto& fm = *fit_pi.fm;
  const int L = fm.size();
  const int m = fit_pi.m;

  VectorXd phi_x = fm.eval(x);
  VectorXd u_pi_x = fm.policy_features(x, pi);
  VectorXd b_x = bfit.probs(x);
  VectorXd q_b_x(m);
  for (int a = 0; a < m; ++a)
    q_b_x[a] = phi_x.dot(fit_b.beta.segment(static_cast<long>(a) * L, L));
  const double v_pi = u_pi_x.dot(fit_pi.beta);
  const double v_b = b_x.dot(q_b_x);
  const double vd_hat = v_pi - v_b;

  VectorXd u_b_x = VectorXd::Zero(static_cast<long>(m) * L);
  for (int a = 0; a < m; ++a)
    u_b_x.segment(static_cast<long>(a) * L, L) = b_x[a] * phi_x;
  VectorXd w_pi = fit_pi.solver.transpose().solve(u_pi_x);
  VectorXd w_b = fit_b.solver.transpose().solve(u_b_x);
  VectorXd w_psi = bfit.psi_solver.transpose().solve(phi_x);

  const long clamps_before = bfit.clamps();
  std::vector<int> usable;
  std::vector<double> usable_w;
  for (size_t k = 0; k < idx.size(); ++k) {
    if (!ds.records[static_cast<size_t>(idx[k])].next_action) continue;
    usable.push_back(idx[k]);
    if (weights) usable_w.push_back((*weights)[k]);
  }
  if (usable.empty()) throw InputError("vd_point: no record carries next_action");

  double sum_psi2 = 0.0, W = 0.0;
  for (size_t k = 0; k < usable.size(); ++k) {
    const auto& r = ds.records[static_cast<size_t>(usable[k])];
    const double w = weights ? usable_w[k] : 1.0;
    W += w;
    VectorXd phi = fm.eval(r.state);
    VectorXd phi_next = fm.eval(r.next_state);
    const long blk = static_cast<long>(r.action) * L;
    const double q_pi_sa = phi.dot(fit_pi.beta.segment(blk, L));
    const double eps_pi =
        r.reward + fit_pi.gamma * fm.policy_features(r.next_state, pi).dot(fit_pi.beta) - q_pi_sa;
    const double q_b_sa = phi.dot(fit_b.beta.segment(blk, L));
    const double q_b_next =
        phi_next.dot(fit_b.beta.segment(static_cast<long>(*r.next_action) * L, L));
    const double eps_b = r.reward + fit_b.gamma * q_b_next - q_b_sa;
    VectorXd b_i = bfit.probs(r.state);
    const double term1 = w_pi.segment(blk, L).dot(phi) * eps_pi;
    const double term2 = w_b.segment(blk, L).dot(phi) * eps_b;
    const double term3 = w_psi.dot(phi) * (q_b_x[r.action] - q_b_x.dot(b_i));
    const double psi = term1 - term2 - term3;
    sum_psi2 += w * psi * psi;
  }
  const double sigma_star = std::sqrt(sum_psi2 / W);
  ValueInterval vi = make_interval(vd_hat, sigma_star, W, alpha);
  vi.policy_tag = pi.tag();
  vi.meta["L"] = L;
  vi.meta["gamma"] = fit_pi.gamma;
  vi.meta["clamp_count"] = static_cast<double>(bfit.clamps() - clamps_before);
  return vi;
}

double default_vd_delta(const TrajectoryDataset& ds) {
  const long N = ds.total_transitions();
  if (N < 2) throw InputError("default_vd_delta: need at least 2 transitions");
  double mean = 0.0;
  for (const auto& r : ds.records) mean += r.reward;
  mean /= static_cast<double>(N);
  double ss = 0.0;
  for (const auto& r : ds.records) ss += (r.reward - mean) * (r.reward - mean);
  const double sd = std::sqrt(ss / static_cast<double>(N - 1));
  return 0.5 * std::pow(static_cast<double>(N), -1.0 / 6.0) * sd;
}

SaveResult save_vd(const TrajectoryDataset& ds, const BlockPartition& partition,
                   const Learner& learner, const VectorXd& x, std::optional<double> delta,
                   const EvalConfig& cfg, const FeatureMapFactory& fmf,
                   const std::vector<int>& traj_order) {
  cfg.validate();
  const int T = ds.common_length();
  if (partition.n != ds.n || partition.T != T)
    throw InputError("save_vd: partition does not match dataset shape");
  const double d = delta ? *delta : default_vd_delta(ds);
  if (!(d > 0.0)) throw InputError("save_vd: delta must be > 0");
  const int K = partition.K();
  if (K < 2) throw PartitionError("save_vd: K must be >= 2");

  SaveResult res;
  res.K = K;
  std::vector<int> prefix_idx;
  double sum_inv = 0.0, sum_v = 0.0;
  long clamps = 0;
  int truncated = 0;
  for (int k = 0; k < K - 1; ++k) {
    std::vector<int> cur = block_records(ds, partition.blocks[static_cast<size_t>(k)], traj_order);
    prefix_idx.insert(prefix_idx.end(), cur.begin(), cur.end());
    std::vector<int> eval_idx =
        block_records(ds, partition.blocks[static_cast<size_t>(k + 1)], traj_order);
    Policy pi_k;
    ValueInterval vi;
    try {
      pi_k = learner(ds.subset(prefix_idx));
      TrajectoryDataset block_ds = ds.subset(eval_idx);
      auto fm = fmf(block_ds);
      std::vector<int> all_idx = all_records(block_ds);
      SieveFit fpi = fit_q(block_ds, all_idx, fm, pi_k, cfg);
      BehaviorFit bfit = fit_behavior_policy(block_ds, all_idx, fm);
      SieveFit fb = fit_q_behavior(block_ds, all_idx, fm, cfg);
      vi = vd_point(block_ds, all_idx, fpi, pi_k, fb, bfit, x, cfg.alpha);
      clamps += static_cast<long>(vi.meta["clamp_count"]);
    } catch (const SingularSystemError& e) {
      throw SingularSystemError(e.rcond(), "SAVE-VD step k=" + std::to_string(k + 1));
    }
    vi.meta["block"] = k + 2;
    const double sigma_trunc = std::max(vi.std_err, d);
    if (vi.std_err < d) ++truncated;
    sum_inv += 1.0 / sigma_trunc;
    sum_v += vi.estimate / sigma_trunc;
    res.per_block.push_back({k + 2, pi_k.tag(), vi});
  }
  const double v_tilde = sum_v / sum_inv;
  const double sigma_tilde = static_cast<double>(K - 1) / sum_inv;
  const double n_eff =
      static_cast<double>(ds.total_transitions()) * (K - 1) / static_cast<double>(K);
  res.aggregate = make_interval(v_tilde, sigma_tilde, n_eff, cfg.alpha);
  res.aggregate.meta["K"] = K;
  res.aggregate.meta["delta"] = d;
  res.aggregate.meta["truncated_blocks"] = truncated;
  res.aggregate.meta["clamp_count"] = static_cast<double>(clamps);
  return res;
}

}  // namespace saveci
