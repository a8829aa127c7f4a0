#include "saveci/envs.hpp"

#include <cassert>
#include <cmath>

#include "saveci/policy_learning.hpp"

namespace saveci {

// ---------------------------------------------------------------------------
// LinearEnv
// ---------------------------------------------------------------------------

VectorXd LinearEnv::initial_state(Rng& rng) const {
  VectorXd x(2);
  x << rng.normal(), rng.normal();
  return x;
}

std::pair<VectorXd, double> LinearEnv::step(const VectorXd& x, int a, Rng& rng) const {
  if (a < 0 || a > 1) throw InputError("LinearEnv: action must be 0 or 1");
  VectorXd z(2);
  z << 0.5 * rng.normal(), 0.5 * rng.normal();  // N(0, I/4)
  VectorXd next(2);
  double y;
  if (variant_ == Variant::D) {
    next[0] = -0.75 * x[0] + z[0];
    next[1] = 0.75 * x[1] + z[1];
    y = 2.0 * next[0] + next[1];
  } else {
    const double s = 2.0 * a - 1.0;
    next[0] = 0.75 * s * x[0] + z[0];
    next[1] = -0.75 * s * x[1] + z[1];
    y = 2.0 * next[0] + next[1] - 0.25 * s;
  }
  return {next, y};
}

int LinearEnv::behavior_action(const VectorXd& x, Rng& rng) const {
  if (variant_ == Variant::B) {
    auto sigmoid = [](double v) { return 1.0 / (1.0 + std::exp(-v)); };
    double p1 = 0.5 * sigmoid(x[0]) + 0.5 * sigmoid(x[1]);
    return rng.bernoulli(p1) ? 1 : 0;
  }
  return rng.bernoulli(0.5) ? 1 : 0;
}

Policy linear_target_policy() {
  return Policy::deterministic(
      [](const VectorXd& x) { return (x[0] > 0.0 && x[1] > 0.0) ? 0 : 1; }, 2, "linear_target");
}

// ---------------------------------------------------------------------------
// CliffEnv
// ---------------------------------------------------------------------------

CliffEnv::StepResult CliffEnv::cliff_step(int cell, int a) {
  int row = cell / kCols;
  int col = cell % kCols;
  switch (a) {
    case 0: row = std::max(0, row - 1); break;          // up
    case 1: row = std::min(kRows - 1, row + 1); break;  // down
    case 2: col = std::max(0, col - 1); break;          // left
    case 3: col = std::min(kCols - 1, col + 1); break;  // right
    default: throw InputError("CliffEnv: action must be in 0..3");
  }
  int next = row * kCols + col;
  bool is_cliff = row == kRows - 1 && col >= 1 && col <= kCols - 2;
  if (is_cliff) return {kStart, -100.0, true};
  if (next == kGoal) return {kStart, -1.0, true};
  return {next, -1.0, false};
}

namespace {

// Planning MDP for the episodic task: reaching the goal terminates the
// episode, modeled as an absorbing zero-reward goal state. Without this the
// data-generating reset-to-start dynamics make every cliff-avoiding policy
// equally optimal (all safe Q values tie at -1/(1-gamma)) and value iteration
// cannot recover the shortest path.
TabularMDP cliff_tabular() {
  TabularMDP mdp;
  mdp.S = CliffEnv::kRows * CliffEnv::kCols;
  mdp.m = 4;
  mdp.P.assign(4, MatrixXd::Zero(mdp.S, mdp.S));
  mdp.r.assign(4, VectorXd::Zero(mdp.S));
  for (int s = 0; s < mdp.S; ++s) {
    for (int a = 0; a < 4; ++a) {
      if (s == CliffEnv::kGoal) {
        mdp.P[static_cast<size_t>(a)](s, s) = 1.0;
        continue;
      }
      auto sr = CliffEnv::cliff_step(s, a);
      int row = s / CliffEnv::kCols;
      int col = s % CliffEnv::kCols;
      switch (a) {
        case 0: row = std::max(0, row - 1); break;
        case 1: row = std::min(CliffEnv::kRows - 1, row + 1); break;
        case 2: col = std::max(0, col - 1); break;
        case 3: col = std::min(CliffEnv::kCols - 1, col + 1); break;
        default: break;
      }
      const int raw_next = row * CliffEnv::kCols + col;
      const int next = raw_next == CliffEnv::kGoal ? CliffEnv::kGoal : sr.next_cell;
      mdp.P[static_cast<size_t>(a)](s, next) = 1.0;
      mdp.r[static_cast<size_t>(a)][s] = sr.reward_mean;
    }
  }
  return mdp;
}

}  // namespace

CliffEnv::CliffEnv(double gamma, double reward_noise_sd) : reward_noise_sd_(reward_noise_sd) {
  MatrixXd q_opt = tabular_optimal_q(cliff_tabular(), gamma);
  optimal_ = Policy::deterministic(
      [q_opt](const VectorXd& x) {
        int s = static_cast<int>(std::llround(x[0]));
        return sargmax(q_opt.row(s).transpose());
      },
      4, "cliff_optimal");
}

VectorXd CliffEnv::initial_state(Rng&) const {
  VectorXd x(1);
  x << static_cast<double>(kStart);
  return x;
}

std::pair<VectorXd, double> CliffEnv::step(const VectorXd& x, int a, Rng& rng) const {
  int cell = static_cast<int>(std::llround(x[0]));
  if (cell < 0 || cell >= kRows * kCols) throw InputError("CliffEnv: cell out of range");
  auto sr = cliff_step(cell, a);
  VectorXd next(1);
  next << static_cast<double>(sr.next_cell);
  double y = sr.reward_mean + reward_noise_sd_ * rng.normal();
  return {next, y};
}

int CliffEnv::behavior_action(const VectorXd& x, Rng& rng) const {
  if (rng.bernoulli(0.5)) return optimal_.sample(x, rng);
  return rng.uniform_int(4);
}

std::vector<VectorXd> CliffEnv::cell_states() const {
  std::vector<VectorXd> states;
  for (int s = 0; s < kRows * kCols; ++s) {
    VectorXd x(1);
    x << static_cast<double>(s);
    states.push_back(x);
  }
  return states;
}

// ---------------------------------------------------------------------------
// TabularMDP
// ---------------------------------------------------------------------------

void TabularMDP::validate() const {
  if (S < 1 || m < 1) throw InputError("TabularMDP: need S >= 1, m >= 1");
  if (static_cast<int>(P.size()) != m || static_cast<int>(r.size()) != m)
    throw InputError("TabularMDP: P/r arity mismatch");
  for (int a = 0; a < m; ++a) {
    for (int s = 0; s < S; ++s) {
      double sum = P[static_cast<size_t>(a)].row(s).sum();
      if (std::fabs(sum - 1.0) > 1e-12 || P[static_cast<size_t>(a)].row(s).minCoeff() < 0.0)
        throw InputError("TabularMDP: P[s][a] is not a probability vector");
    }
  }
}

TabularMDP TabularMDP::random(int S, int m, Rng& rng) {
  TabularMDP mdp;
  mdp.S = S;
  mdp.m = m;
  mdp.P.assign(static_cast<size_t>(m), MatrixXd::Zero(S, S));
  mdp.r.assign(static_cast<size_t>(m), VectorXd::Zero(S));
  for (int a = 0; a < m; ++a) {
    for (int s = 0; s < S; ++s) {
      VectorXd row(S);
      for (int s2 = 0; s2 < S; ++s2) row[s2] = -std::log(1.0 - rng.uniform());
      mdp.P[static_cast<size_t>(a)].row(s) = (row / row.sum()).transpose();
      mdp.r[static_cast<size_t>(a)][s] = 2.0 * rng.uniform() - 1.0;
    }
  }
  return mdp;
}

TabularEnv::TabularEnv(TabularMDP mdp, Policy behavior, VectorXd init_probs)
    : mdp_(std::move(mdp)), behavior_(std::move(behavior)), init_probs_(std::move(init_probs)) {
  mdp_.validate();
}

VectorXd TabularEnv::initial_state(Rng& rng) const {
  double u = rng.uniform(), acc = 0.0;
  int s = mdp_.S - 1;
  for (int i = 0; i < mdp_.S; ++i) {
    acc += init_probs_[i];
    if (u < acc) {
      s = i;
      break;
    }
  }
  VectorXd x(1);
  x << static_cast<double>(s);
  return x;
}

std::pair<VectorXd, double> TabularEnv::step(const VectorXd& x, int a, Rng& rng) const {
  int s = static_cast<int>(std::llround(x[0]));
  double u = rng.uniform(), acc = 0.0;
  int s2 = mdp_.S - 1;
  for (int i = 0; i < mdp_.S; ++i) {
    acc += mdp_.P[static_cast<size_t>(a)](s, i);
    if (u < acc) {
      s2 = i;
      break;
    }
  }
  VectorXd next(1);
  next << static_cast<double>(s2);
  return {next, mdp_.r[static_cast<size_t>(a)][s]};
}

int TabularEnv::behavior_action(const VectorXd& x, Rng& rng) const {
  return behavior_.sample(x, rng);
}

MatrixXd tabular_exact_q(const TabularMDP& mdp, const Policy& pi, double gamma) {
  mdp.validate();
  if (!(gamma >= 0.0 && gamma < 1.0)) throw InputError("tabular_exact_q: gamma must be in [0,1)");
  const int S = mdp.S, m = mdp.m, n = S * m;
  // Unknowns Q(s,a) stacked as q[a*S + s]; system (I - gamma P Pi) q = r.
  MatrixXd A = MatrixXd::Identity(n, n);
  VectorXd rhs(n);
  for (int a = 0; a < m; ++a) {
    for (int s = 0; s < S; ++s) {
      const int row = a * S + s;
      rhs[row] = mdp.r[static_cast<size_t>(a)][s];
      for (int s2 = 0; s2 < S; ++s2) {
        VectorXd xs(1);
        xs << static_cast<double>(s2);
        VectorXd probs = pi.probs(xs);
        for (int a2 = 0; a2 < m; ++a2)
          A(row, a2 * S + s2) -= gamma * mdp.P[static_cast<size_t>(a)](s, s2) * probs[a2];
      }
    }
  }
  VectorXd q = A.partialPivLu().solve(rhs);
  MatrixXd Q(S, m);
  for (int a = 0; a < m; ++a) Q.col(a) = q.segment(a * S, S);
  // Bellman residual self-check
  double resid = (A * q - rhs).cwiseAbs().maxCoeff();
  assert(resid <= 1e-10 * std::max(1.0, rhs.cwiseAbs().maxCoeff()));
  (void)resid;
  return Q;
}

MatrixXd tabular_optimal_q(const TabularMDP& mdp, double gamma, double tol) {
  mdp.validate();
  MatrixXd Q = MatrixXd::Zero(mdp.S, mdp.m);
  for (int it = 0; it < 100000; ++it) {
    VectorXd vmax = Q.rowwise().maxCoeff();
    MatrixXd Qn(mdp.S, mdp.m);
    for (int a = 0; a < mdp.m; ++a)
      Qn.col(a) = mdp.r[static_cast<size_t>(a)] + gamma * mdp.P[static_cast<size_t>(a)] * vmax;
    double delta = (Qn - Q).cwiseAbs().maxCoeff();
    Q = std::move(Qn);
    if (delta < tol) break;
  }
  return Q;
}

// ---------------------------------------------------------------------------
// Simulation and oracles
// ---------------------------------------------------------------------------

TrajectoryDataset simulate_dataset(const Environment& env, const Policy* behavior, int n, int T,
                                   std::uint64_t seed) {
  if (n < 1 || T < 1) throw InputError("simulate_dataset: need n, T >= 1");
  std::vector<TransitionRecord> records;
  records.reserve(static_cast<size_t>(n) * static_cast<size_t>(T));
  for (int i = 0; i < n; ++i) {
    Rng rng = Rng::derive(seed, static_cast<std::uint64_t>(i));
    VectorXd x = env.initial_state(rng);
    for (int t = 0; t < T; ++t) {
      int a = behavior ? behavior->sample(x, rng) : env.behavior_action(x, rng);
      auto [next, y] = env.step(x, a, rng);
      TransitionRecord rec;
      rec.traj_id = i;
      rec.t = t;
      rec.state = x;
      rec.action = a;
      rec.reward = y;
      rec.next_state = next;
      records.push_back(std::move(rec));
      x = next;
    }
  }
  chain_next_actions(records);
  return TrajectoryDataset::from_records(std::move(records), env.action_count());
}

MCValue mc_true_value(const Environment& env, const Policy& pi, const ReferenceDistribution& G,
                      double gamma, int n_reps, int horizon, std::uint64_t seed) {
  if (!(gamma >= 0.0 && gamma < 1.0)) throw InputError("mc_true_value: gamma must be in [0,1)");
  MCValue out;
  out.horizon_warning = gamma > 0.0 && std::pow(gamma, horizon) > 1e-8 * (1.0 - gamma);
  double sum = 0.0, sum_sq = 0.0;
  for (int rep = 0; rep < n_reps; ++rep) {
    Rng rng = Rng::derive(seed, static_cast<std::uint64_t>(rep) + 0x4d4f4e5445ULL);
    VectorXd x = G.draw(rng);
    double ret = 0.0, disc = 1.0;
    for (int t = 0; t < horizon; ++t) {
      int a = pi.sample(x, rng);
      auto [next, y] = env.step(x, a, rng);
      ret += disc * y;
      disc *= gamma;
      if (disc < 1e-14) break;
      x = next;
    }
    sum += ret;
    sum_sq += ret * ret;
  }
  out.value = sum / n_reps;
  double var = std::max(0.0, sum_sq / n_reps - out.value * out.value);
  out.std_error = std::sqrt(var / n_reps);
  return out;
}

double igc_reward(double glucose) {
  if (!std::isfinite(glucose)) throw InputError("igc_reward: non-finite glucose");
  if (glucose < 80.0) return -(80.0 - glucose) * (80.0 - glucose) / 30.0;
  if (glucose < 140.0) return 0.0;
  return -std::pow(glucose - 140.0, 1.35) / 30.0;
}

std::pair<std::vector<TransitionRecord>, std::vector<double>> population_transitions(
    const TabularMDP& mdp, const MatrixXd& sa_weights, const Policy* next_behavior) {
  mdp.validate();
  std::vector<TransitionRecord> records;
  std::vector<double> weights;
  auto state_vec = [](int s) {
    VectorXd x(1);
    x << static_cast<double>(s);
    return x;
  };
  for (int s = 0; s < mdp.S; ++s) {
    for (int a = 0; a < mdp.m; ++a) {
      double w_sa = sa_weights(s, a);
      if (w_sa <= 0.0) continue;
      for (int s2 = 0; s2 < mdp.S; ++s2) {
        double p = mdp.P[static_cast<size_t>(a)](s, s2);
        if (p <= 0.0) continue;
        TransitionRecord rec;
        rec.traj_id = 0;
        rec.t = static_cast<int>(records.size());
        rec.state = state_vec(s);
        rec.action = a;
        rec.reward = mdp.r[static_cast<size_t>(a)][s];
        rec.next_state = state_vec(s2);
        if (next_behavior) {
          VectorXd bp = next_behavior->probs(rec.next_state);
          for (int a2 = 0; a2 < mdp.m; ++a2) {
            if (bp[a2] <= 0.0) continue;
            TransitionRecord rec2 = rec;
            rec2.t = static_cast<int>(records.size());
            rec2.next_action = a2;
            records.push_back(rec2);
            weights.push_back(w_sa * p * bp[a2]);
          }
        } else {
          records.push_back(rec);
          weights.push_back(w_sa * p);
        }
      }
    }
  }
  return {records, weights};
}

}  // namespace saveci
