#include "saveci/sieve.hpp"

#include <cmath>
#include <numeric>

namespace saveci {

namespace {

constexpr double kRcondThreshold = 1e-12;

struct SparseVec {
  std::vector<int> idx;
  std::vector<double> val;
  void from_dense(const VectorXd& v, int offset = 0) {
    idx.clear();
    val.clear();
    for (int i = 0; i < v.size(); ++i) {
      if (v[i] != 0.0) {
        idx.push_back(i + offset);
        val.push_back(v[i]);
      }
    }
  }
};

}  // namespace

double lu_rcond(const Eigen::PartialPivLU<MatrixXd>& lu) {
  const VectorXd piv = lu.matrixLU().diagonal().cwiseAbs();
  const double pmax = piv.maxCoeff();
  const double pivot_ratio = pmax > 0.0 ? piv.minCoeff() / pmax : 0.0;
  return std::min(lu.rcond(), pivot_ratio);
}

ValueInterval make_interval(double estimate, double sigma, double n_obs, double alpha) {
  ValueInterval vi;
  vi.estimate = estimate;
  vi.std_err = sigma;
  vi.alpha = alpha;
  vi.n_obs = n_obs;
  const double half = z_quantile(alpha) * sigma / std::sqrt(n_obs);
  vi.ci_lower = estimate - half;
  vi.ci_upper = estimate + half;
  return vi;
}

double SieveFit::sandwich_variance(const VectorXd& u) const {
  VectorXd w = solver.transpose().solve(u);  // (Sigma + lambda I)^{-T} u
  double var = w.dot(omega_mat * w);
  return var > 0.0 ? var : 0.0;
}

std::vector<int> all_records(const TrajectoryDataset& ds) {
  std::vector<int> idx(ds.records.size());
  std::iota(idx.begin(), idx.end(), 0);
  return idx;
}

std::pair<MatrixXd, VectorXd> assemble_system(const TrajectoryDataset& ds,
                                              const std::vector<int>& idx, const FeatureMap& fm,
                                              const Policy& pi, double gamma,
                                              const std::vector<double>* weights) {
  if (idx.empty()) throw InputError("assemble_system: empty record set");
  if (weights && weights->size() != idx.size())
    throw InputError("assemble_system: weights/index size mismatch");
  const int L = fm.size();
  const int m = ds.m;
  const int p = m * L;
  MatrixXd sigma = MatrixXd::Zero(p, p);
  VectorXd b = VectorXd::Zero(p);
  SparseVec phi_nz, rhs_nz;
  double W = 0.0;
  for (size_t k = 0; k < idx.size(); ++k) {
    const auto& r = ds.records[static_cast<size_t>(idx[k])];
    const double w = weights ? (*weights)[k] : 1.0;
    W += w;
    VectorXd phi = fm.eval(r.state);
    VectorXd u_next = fm.policy_features(r.next_state, pi);
    // row vector xi - gamma*U: xi places phi in block `action`
    VectorXd rhs = -gamma * u_next;
    rhs.segment(static_cast<long>(r.action) * L, L) += phi;
    phi_nz.from_dense(phi);
    rhs_nz.from_dense(rhs);
    const int row0 = r.action * L;
    for (size_t a = 0; a < phi_nz.idx.size(); ++a) {
      const double lw = w * phi_nz.val[a];
      const int row = row0 + phi_nz.idx[a];
      b[row] += lw * r.reward;
      for (size_t c = 0; c < rhs_nz.idx.size(); ++c)
        sigma(row, rhs_nz.idx[c]) += lw * rhs_nz.val[c];
    }
  }
  sigma /= W;
  b /= W;
  return {sigma, b};
}

SieveFit fit_q(const TrajectoryDataset& ds, const std::vector<int>& idx,
               std::shared_ptr<const FeatureMap> fm, const Policy& pi, const EvalConfig& cfg,
               const std::vector<double>* weights) {
  cfg.validate();
  auto [sigma, b] = assemble_system(ds, idx, *fm, pi, cfg.gamma, weights);
  SieveFit fit;
  fit.sigma_mat = std::move(sigma);
  fit.gamma = cfg.gamma;
  fit.ridge_lambda = cfg.ridge_lambda;
  fit.m = ds.m;
  fit.fm = fm;
  MatrixXd sys = fit.sigma_mat;
  if (cfg.ridge_lambda > 0.0)
    sys += cfg.ridge_lambda * MatrixXd::Identity(sys.rows(), sys.cols());
  fit.solver.compute(sys);
  const double rc = lu_rcond(fit.solver);
  if (cfg.ridge_lambda == 0.0 && (!(rc > kRcondThreshold) || !std::isfinite(rc)))
    throw SingularSystemError(rc, "fit_q system matrix");
  fit.beta = fit.solver.solve(b);
  if (!fit.beta.allFinite()) throw SingularSystemError(rc, "fit_q produced non-finite beta");
  double W = 0.0;
  if (weights)
    for (double w : *weights) W += w;
  else
    W = static_cast<double>(idx.size());
  fit.n_obs = W;
  std::vector<double> eps = residuals(fit, ds, idx, pi);
  fit.omega_mat = assemble_omega(fit, ds, idx, pi, eps, weights);
  return fit;
}

std::vector<double> residuals(const SieveFit& fit, const TrajectoryDataset& ds,
                              const std::vector<int>& idx, const Policy& pi) {
  const int L = fit.fm->size();
  std::vector<double> eps;
  eps.reserve(idx.size());
  for (int i : idx) {
    const auto& r = ds.records[static_cast<size_t>(i)];
    VectorXd phi = fit.fm->eval(r.state);
    VectorXd u_next = fit.fm->policy_features(r.next_state, pi);
    double q_sa = phi.dot(fit.beta.segment(static_cast<long>(r.action) * L, L));
    eps.push_back(r.reward + fit.gamma * u_next.dot(fit.beta) - q_sa);
  }
  return eps;
}

MatrixXd assemble_omega(const SieveFit& fit, const TrajectoryDataset& ds,
                        const std::vector<int>& idx, const Policy& pi,
                        const std::vector<double>& eps, const std::vector<double>* weights) {
  (void)pi;
  const int L = fit.fm->size();
  const int p = fit.m * L;
  MatrixXd omega = MatrixXd::Zero(p, p);
  SparseVec phi_nz;
  double W = 0.0;
  for (size_t k = 0; k < idx.size(); ++k) {
    const auto& r = ds.records[static_cast<size_t>(idx[k])];
    const double w = weights ? (*weights)[k] : 1.0;
    W += w;
    VectorXd phi = fit.fm->eval(r.state);
    phi_nz.from_dense(phi, r.action * L);
    const double e2w = w * eps[k] * eps[k];
    for (size_t a = 0; a < phi_nz.idx.size(); ++a)
      for (size_t c = 0; c < phi_nz.idx.size(); ++c)
        omega(phi_nz.idx[a], phi_nz.idx[c]) += e2w * phi_nz.val[a] * phi_nz.val[c];
  }
  return omega / W;
}

ValueInterval value_point(const SieveFit& fit, const VectorXd& x, const Policy& pi, double alpha) {
  VectorXd u = fit.fm->policy_features(x, pi);
  ValueInterval vi = make_interval(u.dot(fit.beta), std::sqrt(fit.sandwich_variance(u)),
                                   fit.n_obs, alpha);
  vi.policy_tag = pi.tag();
  vi.meta["L"] = fit.fm->size();
  vi.meta["gamma"] = fit.gamma;
  return vi;
}

ValueInterval value_integrated(const SieveFit& fit, const ReferenceDistribution& G,
                               const Policy& pi, double alpha, int g_draws, std::uint64_t seed) {
  const int p = fit.m * fit.fm->size();
  VectorXd ubar = G.mean([&](const VectorXd& x) { return fit.fm->policy_features(x, pi); }, p,
                         g_draws, seed);
  ValueInterval vi = make_interval(ubar.dot(fit.beta), std::sqrt(fit.sandwich_variance(ubar)),
                                   fit.n_obs, alpha);
  vi.policy_tag = pi.tag();
  vi.meta["L"] = fit.fm->size();
  vi.meta["gamma"] = fit.gamma;
  return vi;
}

}  // namespace saveci
