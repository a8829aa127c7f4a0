#include "saveci/basis.hpp"

#include <algorithm>
#include <cmath>
#include <set>

namespace saveci {

VectorXd transform_state(const VectorXd& x) {
  VectorXd u(x.size());
  for (int j = 0; j < x.size(); ++j) {
    if (!std::isfinite(x[j])) throw InputError("transform_state: non-finite coordinate");
    double v = normal_cdf(x[j]);
    // erfc underflow far in the tails; keep the output strictly inside (0,1)
    u[j] = std::min(std::max(v, 1e-300), 1.0 - 1e-16);
  }
  return u;
}

std::pair<int, long> choose_L(long total_transitions, double eta, int d, int degree) {
  if (total_transitions < 1) throw InputError("choose_L: total_transitions must be >= 1");
  if (!(eta > 0.0 && eta < 1.0)) throw InputError("choose_L: eta must be in (0,1)");
  long budget = static_cast<long>(std::floor(std::pow(static_cast<double>(total_transitions), eta)));
  int k = degree + 1;
  auto pow_ld = [](long base, int exp) {
    long r = 1;
    for (int i = 0; i < exp; ++i) {
      if (r > (1L << 40)) return (1L << 41);
      r *= base;
    }
    return r;
  };
  while (pow_ld(k + 1, d) <= budget) ++k;
  if (pow_ld(k, d) > budget) k = degree + 1;  // minimum-basis fallback
  return {k, pow_ld(k, d)};
}

namespace {

// Empirical quantile with linear interpolation between order statistics.
double sample_quantile(const std::vector<double>& sorted, double p) {
  const size_t n = sorted.size();
  if (n == 1) return sorted[0];
  double h = p * static_cast<double>(n - 1);
  size_t lo = static_cast<size_t>(std::floor(h));
  size_t hi = std::min(lo + 1, n - 1);
  double w = h - static_cast<double>(lo);
  return (1.0 - w) * sorted[lo] + w * sorted[hi];
}

std::vector<double> clamped_knot_vector(const std::vector<double>& interior, int degree) {
  std::vector<double> kv;
  kv.reserve(interior.size() + 2 * static_cast<size_t>(degree + 1));
  for (int i = 0; i <= degree; ++i) kv.push_back(0.0);
  kv.insert(kv.end(), interior.begin(), interior.end());
  for (int i = 0; i <= degree; ++i) kv.push_back(1.0);
  return kv;
}

}  // namespace

KnotSet build_knots(const std::vector<const VectorXd*>& states, int d, int per_dim_count,
                    int degree) {
  if (per_dim_count < degree + 1) throw InputError("build_knots: per_dim_count < degree+1");
  if (states.empty()) throw InputError("build_knots: no sample states");
  KnotSet ks;
  ks.degree = degree;
  ks.interior.resize(static_cast<size_t>(d));
  ks.counts.resize(static_cast<size_t>(d));
  const int n_interior = per_dim_count - degree - 1;
  for (int j = 0; j < d; ++j) {
    std::vector<double> u;
    u.reserve(states.size());
    for (const VectorXd* x : states) u.push_back(transform_state(*x)[j]);
    std::sort(u.begin(), u.end());
    if (n_interior > 0) {
      std::set<double> distinct(u.begin(), u.end());
      if (static_cast<int>(distinct.size()) < n_interior + 1)
        throw DegenerateDataError("build_knots: fewer distinct sample values than interior knots");
    }
    std::vector<double> interior;
    for (int q = 1; q <= n_interior; ++q) {
      double knot = sample_quantile(u, static_cast<double>(q) / (per_dim_count - degree));
      knot = std::min(std::max(knot, 1e-12), 1.0 - 1e-12);
      // collapse quantile ties; repeated interior knots would lose smoothness
      if (interior.empty() || knot > interior.back()) {
        interior.push_back(knot);
      } else {
        ks.collapsed_ties = true;
      }
    }
    ks.interior[static_cast<size_t>(j)] = interior;
    ks.counts[static_cast<size_t>(j)] = static_cast<int>(interior.size()) + degree + 1;
  }
  return ks;
}

KnotSet build_knots(const TrajectoryDataset& ds, int per_dim_count, int degree) {
  std::vector<const VectorXd*> states;
  states.reserve(ds.records.size());
  for (const auto& r : ds.records) states.push_back(&r.state);
  return build_knots(states, ds.d, per_dim_count, degree);
}

VectorXd bspline_basis(const std::vector<double>& kv, int degree, int count, double u) {
  // Cox-de Boor over the full basis set; clamped ends handled by the
  // half-open span convention with u == 1 mapped into the last span.
  const int n_knots = static_cast<int>(kv.size());
  std::vector<double> N(static_cast<size_t>(n_knots - 1), 0.0);
  for (int i = 0; i + 1 < n_knots; ++i) {
    bool last_span = (kv[static_cast<size_t>(i)] < 1.0 && kv[static_cast<size_t>(i + 1)] >= 1.0);
    if ((u >= kv[static_cast<size_t>(i)] && u < kv[static_cast<size_t>(i + 1)]) ||
        (u >= 1.0 && last_span))
      N[static_cast<size_t>(i)] = 1.0;
  }
  for (int p = 1; p <= degree; ++p) {
    for (int i = 0; i + p + 1 < n_knots; ++i) {
      double left = 0.0, right = 0.0;
      double den1 = kv[static_cast<size_t>(i + p)] - kv[static_cast<size_t>(i)];
      double den2 = kv[static_cast<size_t>(i + p + 1)] - kv[static_cast<size_t>(i + 1)];
      if (den1 > 0.0) left = (u - kv[static_cast<size_t>(i)]) / den1 * N[static_cast<size_t>(i)];
      if (den2 > 0.0)
        right = (kv[static_cast<size_t>(i + p + 1)] - u) / den2 * N[static_cast<size_t>(i + 1)];
      N[static_cast<size_t>(i)] = left + right;
    }
  }
  VectorXd out(count);
  for (int i = 0; i < count; ++i) out[i] = N[static_cast<size_t>(i)];
  return out;
}

std::shared_ptr<const FeatureMap> FeatureMap::tensor_bspline(KnotSet knots) {
  auto fm = std::make_shared<FeatureMap>();
  fm->kind_ = Kind::TensorBspline;
  fm->d_ = static_cast<int>(knots.counts.size());
  fm->L_ = 1;
  for (int c : knots.counts) fm->L_ *= c;
  for (const auto& interior : knots.interior)
    fm->knot_vectors_.push_back(clamped_knot_vector(interior, knots.degree));
  fm->knots_ = std::move(knots);
  return fm;
}

std::shared_ptr<const FeatureMap> FeatureMap::indicator(std::vector<VectorXd> states) {
  if (states.empty()) throw InputError("indicator basis needs a non-empty state list");
  auto fm = std::make_shared<FeatureMap>();
  fm->kind_ = Kind::Indicator;
  fm->d_ = static_cast<int>(states.front().size());
  fm->L_ = static_cast<int>(states.size());
  for (int i = 0; i < fm->L_; ++i) {
    std::vector<double> key(states[static_cast<size_t>(i)].data(),
                            states[static_cast<size_t>(i)].data() + states[static_cast<size_t>(i)].size());
    fm->state_index_[key] = i;
  }
  fm->states_ = std::move(states);
  return fm;
}

VectorXd FeatureMap::eval(const VectorXd& x) const {
  if (static_cast<int>(x.size()) != d_) throw InputError("eval_features: dimension mismatch");
  if (kind_ == Kind::Indicator) {
    std::vector<double> key(x.data(), x.data() + x.size());
    auto it = state_index_.find(key);
    if (it == state_index_.end()) throw InputError("indicator basis: unknown state");
    VectorXd out = VectorXd::Zero(L_);
    out[it->second] = 1.0;
    return out;
  }
  VectorXd u = transform_state(x);
  std::vector<VectorXd> per_dim(static_cast<size_t>(d_));
  for (int j = 0; j < d_; ++j)
    per_dim[static_cast<size_t>(j)] = bspline_basis(knot_vectors_[static_cast<size_t>(j)],
                                                    knots_.degree,
                                                    knots_.counts[static_cast<size_t>(j)], u[j]);
  VectorXd out(L_);
  std::vector<int> idx(static_cast<size_t>(d_), 0);
  for (int flat = 0; flat < L_; ++flat) {
    double v = 1.0;
    for (int j = 0; j < d_; ++j) v *= per_dim[static_cast<size_t>(j)][idx[static_cast<size_t>(j)]];
    out[flat] = v;
    for (int j = 0; j < d_; ++j) {
      if (++idx[static_cast<size_t>(j)] < knots_.counts[static_cast<size_t>(j)]) break;
      idx[static_cast<size_t>(j)] = 0;
    }
  }
  return out;
}

VectorXd FeatureMap::xi(const VectorXd& x, int a, int m) const {
  if (a < 0 || a >= m) throw InputError("eval_xi: action out of range");
  VectorXd out = VectorXd::Zero(static_cast<long>(m) * L_);
  out.segment(static_cast<long>(a) * L_, L_) = eval(x);
  return out;
}

VectorXd FeatureMap::policy_features(const VectorXd& x, const Policy& pi) const {
  const int m = pi.action_count();
  VectorXd phi = eval(x);
  VectorXd p = pi.probs(x);
  VectorXd out(static_cast<long>(m) * L_);
  for (int a = 0; a < m; ++a) out.segment(static_cast<long>(a) * L_, L_) = phi * p[a];
  return out;
}

}  // namespace saveci
