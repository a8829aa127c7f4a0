#include "saveci/onpolicy.hpp"

#include <cmath>

#include "saveci/policy_learning.hpp"

namespace saveci {

std::tuple<double, double, double> aggregate_sqrtT(const std::vector<double>& values,
                                                   const std::vector<double>& sigmas,
                                                   const std::vector<int>& T_list) {
  if (values.empty() || values.size() != sigmas.size() || values.size() != T_list.size())
    throw InputError("aggregate_sqrtT: need equal-length nonempty lists");
  const auto J = static_cast<double>(values.size());
  double sum_w = 0.0, sum_wv = 0.0, sum_ws = 0.0;
  for (size_t k = 0; k < values.size(); ++k) {
    if (!(sigmas[k] > 0.0)) throw InputError("aggregate_sqrtT: sigma must be > 0");
    if (T_list[k] < 1) throw InputError("aggregate_sqrtT: T(k) must be >= 1");
    const double w = std::sqrt(static_cast<double>(T_list[k]));
    sum_w += w;
    sum_wv += w * values[k] / sigmas[k];
    sum_ws += w / sigmas[k];
  }
  const double v_tilde = sum_wv / sum_ws;
  const double sigma_tilde = sum_w / sum_ws;
  // Delta-method scale of v_tilde: sd(V_k) ~ sigma_k / sqrt(n T_k) per batch
  // gives sd(v_tilde) = sigma_tilde * sqrt(J) / (sqrt(n) * sum_k sqrt(T_k)).
  const double half_width_scale = std::sqrt(J) / sum_w;
  return {v_tilde, sigma_tilde, half_width_scale};
}

OnPolicyResult onpolicy_run(const Environment& env, const OnPolicySchedule& schedule,
                            const Learner& learner, const ReferenceDistribution& G,
                            const EvalConfig& cfg, const FeatureMapFactory& fmf,
                            std::uint64_t seed) {
  schedule.validate();
  cfg.validate();
  const int m = env.action_count();
  const int n = schedule.n;

  // Persistent per-trajectory streams keep the run reproducible regardless of
  // how many steps earlier batches consumed.
  std::vector<Rng> rngs;
  rngs.reserve(static_cast<size_t>(n));
  std::vector<VectorXd> states(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) {
    rngs.emplace_back(Rng::derive(seed, static_cast<std::uint64_t>(i)));
    states[static_cast<size_t>(i)] = env.initial_state(rngs.back());
  }

  std::vector<TransitionRecord> all;
  std::vector<std::pair<size_t, size_t>> batch_spans;  // [lo, hi) into `all`
  int t_global = 0;

  auto generate_batch = [&](const Policy& behavior, int batch_len, int batch_index) {
    const size_t lo = all.size();
    for (int step = 0; step < batch_len; ++step) {
      for (int i = 0; i < n; ++i) {
        auto& rng = rngs[static_cast<size_t>(i)];
        VectorXd& x = states[static_cast<size_t>(i)];
        int a;
        std::pair<VectorXd, double> out;
        try {
          a = behavior.sample(x, rng);
          out = env.step(x, a, rng);
        } catch (const std::exception& e) {
          throw RunError("onpolicy_run: environment failure in batch " +
                         std::to_string(batch_index) + ": " + e.what());
        }
        TransitionRecord rec;
        rec.traj_id = i;
        rec.t = t_global + step;
        rec.state = x;
        rec.action = a;
        rec.reward = out.second;
        rec.next_state = out.first;
        all.push_back(std::move(rec));
        x = out.first;
      }
    }
    t_global += batch_len;
    batch_spans.emplace_back(lo, all.size());
  };

  generate_batch(Policy::uniform(m), schedule.T_sched[0], 1);

  OnPolicyResult res;
  res.K = schedule.K;
  std::vector<double> values, sigmas;
  std::vector<int> T_eval;
  for (int k = 1; k < schedule.K; ++k) {
    Policy pi_k = learner(TrajectoryDataset::from_records(all, m));
    Policy b_k = epsilon_greedy(pi_k, schedule.epsilon, m);
    generate_batch(b_k, schedule.T_sched[static_cast<size_t>(k)], k + 1);

    const auto [lo, hi] = batch_spans.back();
    std::vector<TransitionRecord> batch_recs(all.begin() + static_cast<long>(lo),
                                             all.begin() + static_cast<long>(hi));
    TrajectoryDataset batch_ds = TrajectoryDataset::from_records(std::move(batch_recs), m);
    auto fm = fmf(batch_ds);
    ValueInterval vi;
    try {
      SieveFit fit = fit_q(batch_ds, all_records(batch_ds), fm, pi_k, cfg);
      vi = value_integrated(fit, G, pi_k, cfg.alpha, cfg.g_draws, cfg.seed);
    } catch (const SingularSystemError& e) {
      throw SingularSystemError(e.rcond(), "on-policy batch " + std::to_string(k + 1));
    }
    vi.meta["batch"] = k + 1;
    values.push_back(vi.estimate);
    sigmas.push_back(vi.std_err);
    T_eval.push_back(schedule.T_sched[static_cast<size_t>(k)]);
    res.per_batch.push_back({k + 1, pi_k.tag(), vi});
  }

  auto [v_tilde, sigma_tilde, scale] = aggregate_sqrtT(values, sigmas, T_eval);
  // make_interval divides by sqrt(n_obs); fold the aggregation scale into an
  // effective sample size so the half-width equals z * sigma_tilde * scale / sqrt(n).
  const double n_eff = static_cast<double>(n) / (scale * scale);
  res.aggregate = make_interval(v_tilde, sigma_tilde, n_eff, cfg.alpha);
  res.aggregate.meta["K"] = schedule.K;
  res.data = TrajectoryDataset::from_records(std::move(all), m);
  chain_next_actions(res.data.records);
  return res;
}

}  // namespace saveci
