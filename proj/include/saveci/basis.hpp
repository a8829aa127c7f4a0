#pragma once

#include <map>
#include <memory>
#include <vector>

#include "saveci/core.hpp"

namespace saveci {

// Clamped knot configuration for tensor-product B-splines on [0,1]^d.
// Boundary knots at 0 and 1 are repeated degree+1 times; interior knots are
// strictly increasing in (0,1). counts[j] is the number of one-dimensional
// basis functions for coordinate j (= interior[j].size() + degree + 1).
struct KnotSet {
  std::vector<std::vector<double>> interior;
  std::vector<int> counts;
  int degree = 3;
  bool collapsed_ties = false;  // set when duplicate quantile knots were merged
};

// Evaluates the L-dimensional sieve basis Phi_L(x): either a tensor-product
// cubic B-spline over normal-CDF-transformed coordinates, or an indicator
// basis over a finite state list.
class FeatureMap {
 public:
  enum class Kind { TensorBspline, Indicator };

  static std::shared_ptr<const FeatureMap> tensor_bspline(KnotSet knots);
  static std::shared_ptr<const FeatureMap> indicator(std::vector<VectorXd> states);

  Kind kind() const { return kind_; }
  int dim() const { return d_; }
  int size() const { return L_; }  // L
  const KnotSet& knots() const { return knots_; }
  const std::vector<VectorXd>& state_list() const { return states_; }

  // Phi_L(x). Tensor ordering is dimension-major: the flat index is
  // sum_j i_j * prod_{j'<j} counts[j'], so coordinate 0 varies fastest.
  VectorXd eval(const VectorXd& x) const;

  // Action-blocked features xi(x,a): Phi_L(x) in block a, zeros elsewhere.
  VectorXd xi(const VectorXd& x, int a, int m) const;

  // Policy-averaged features U_pi(x): block a holds Phi_L(x) * pi(a|x).
  VectorXd policy_features(const VectorXd& x, const Policy& pi) const;

 private:
  Kind kind_ = Kind::TensorBspline;
  int d_ = 0;
  int L_ = 0;
  KnotSet knots_;
  std::vector<std::vector<double>> knot_vectors_;  // per-dim full clamped vectors
  std::vector<VectorXd> states_;
  std::map<std::vector<double>, int> state_index_;
};

// Per-coordinate standard normal CDF transform; output strictly in (0,1)
// for finite inputs.
VectorXd transform_state(const VectorXd& x);

// Largest tensor grid fitting under floor(total^eta): returns (per_dim_count,
// L = per_dim_count^d) with per_dim_count >= degree+1 (minimum-basis fallback).
std::pair<int, long> choose_L(long total_transitions, double eta, int d, int degree = 3);

// Interior knots at equally spaced sample quantiles of the transformed states.
KnotSet build_knots(const std::vector<const VectorXd*>& states, int d, int per_dim_count,
                    int degree = 3);
KnotSet build_knots(const TrajectoryDataset& ds, int per_dim_count, int degree = 3);

// Values of all `count` clamped B-spline basis functions at u in [0,1].
VectorXd bspline_basis(const std::vector<double>& knot_vector, int degree, int count, double u);

inline VectorXd eval_features(const FeatureMap& fm, const VectorXd& x) { return fm.eval(x); }
inline VectorXd eval_xi(const FeatureMap& fm, const VectorXd& x, int a, int m) {
  return fm.xi(x, a, m);
}
inline VectorXd eval_U(const FeatureMap& fm, const VectorXd& x, const Policy& pi) {
  return fm.policy_features(x, pi);
}

}  // namespace saveci
