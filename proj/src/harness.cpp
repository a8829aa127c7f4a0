#include "saveci/harness.hpp"

#include <atomic>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <mutex>
#include <sstream>
#include <thread>

namespace saveci {

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      fields.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  fields.push_back(cur);
  return fields;
}

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

double parse_double(const std::string& s, const std::string& path, int lineno) {
  try {
    size_t pos = 0;
    double v = std::stod(s, &pos);
    if (pos != s.size()) throw std::invalid_argument("trailing characters");
    return v;
  } catch (const std::exception&) {
    throw InputError(path + ":" + std::to_string(lineno) + ": cannot parse number '" + s + "'");
  }
}

int parse_int(const std::string& s, const std::string& path, int lineno) {
  try {
    size_t pos = 0;
    int v = std::stoi(s, &pos);
    if (pos != s.size()) throw std::invalid_argument("trailing characters");
    return v;
  } catch (const std::exception&) {
    throw InputError(path + ":" + std::to_string(lineno) + ": cannot parse integer '" + s + "'");
  }
}

}  // namespace

TrajectoryDataset load_trajectories_csv(const std::string& path, int m) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open file: " + path);
  std::string line;
  if (!std::getline(in, line)) throw InputError(path + ": empty file");
  std::vector<std::string> header = split_csv_line(line);
  if (header.size() < 4 || header[0] != "traj_id" || header[1] != "t" ||
      header[header.size() - 2] != "action" || header.back() != "reward")
    throw InputError(path + ":1: expected header traj_id,t,state_0,...,action,reward");
  const int d = static_cast<int>(header.size()) - 4;
  if (d < 1) throw InputError(path + ":1: no state columns");
  for (int j = 0; j < d; ++j)
    if (header[static_cast<size_t>(j) + 2] != "state_" + std::to_string(j))
      throw InputError(path + ":1: state columns must be state_0..state_" + std::to_string(d - 1));

  struct Row {
    int t;
    VectorXd state;
    bool terminal;
    int action;
    double reward;
    int lineno;
  };
  std::map<int, std::vector<Row>> trajs;  // keyed by traj_id, file order within
  std::vector<int> traj_order;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> f = split_csv_line(line);
    if (static_cast<int>(f.size()) != d + 4)
      throw InputError(path + ":" + std::to_string(lineno) + ": expected " +
                       std::to_string(d + 4) + " fields, got " + std::to_string(f.size()));
    Row row;
    row.lineno = lineno;
    int traj = parse_int(f[0], path, lineno);
    row.t = parse_int(f[1], path, lineno);
    row.state = VectorXd(d);
    for (int j = 0; j < d; ++j) row.state[j] = parse_double(f[static_cast<size_t>(j) + 2], path, lineno);
    const std::string& act = f[f.size() - 2];
    const std::string& rew = f.back();
    row.terminal = act.empty() && rew.empty();
    if (!row.terminal && (act.empty() || rew.empty()))
      throw InputError(path + ":" + std::to_string(lineno) +
                       ": action and reward must both be present or both empty");
    row.action = row.terminal ? -1 : parse_int(act, path, lineno);
    row.reward = row.terminal ? 0.0 : parse_double(rew, path, lineno);
    if (trajs.find(traj) == trajs.end()) traj_order.push_back(traj);
    trajs[traj].push_back(std::move(row));
  }

  std::vector<TransitionRecord> recs;
  int max_action = -1;
  for (int traj : traj_order) {
    const auto& rows = trajs[traj];
    for (size_t r = 0; r + 1 < rows.size(); ++r) {
      if (rows[r].terminal)
        throw ValidationError(path + ":" + std::to_string(rows[r].lineno) +
                              ": terminal row (empty action/reward) before end of trajectory " +
                              std::to_string(traj));
      if (rows[r + 1].t <= rows[r].t)
        throw ValidationError(path + ":" + std::to_string(rows[r + 1].lineno) +
                              ": out-of-order time index within trajectory " +
                              std::to_string(traj));
      TransitionRecord rec;
      rec.traj_id = traj;
      rec.t = rows[r].t;
      rec.state = rows[r].state;
      rec.action = rows[r].action;
      rec.reward = rows[r].reward;
      rec.next_state = rows[r + 1].state;
      max_action = std::max(max_action, rec.action);
      recs.push_back(std::move(rec));
    }
    if (!rows.empty() && !rows.back().terminal)
      std::cerr << "warning: " << path << ": trajectory " << traj
                << " has no terminal state row; dropping its last transition\n";
  }
  if (recs.empty()) throw InputError(path + ": no usable transitions");
  if (m < 0) m = max_action + 1;
  TrajectoryDataset ds = TrajectoryDataset::from_records(std::move(recs), m);
  chain_next_actions(ds.records);
  std::vector<Violation> viol = validate_dataset(ds);
  if (!viol.empty()) {
    std::string msg = path + ": dataset invariant violations:";
    for (const auto& v : viol)
      msg += "\n  [" + v.kind + "] traj " + std::to_string(v.traj_id) + " t=" +
             std::to_string(v.t) + ": " + v.detail;
    throw ValidationError(msg);
  }
  return ds;
}

void write_trajectories_csv(const TrajectoryDataset& ds, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw InputError("cannot open file for writing: " + path);
  out << "traj_id,t";
  for (int j = 0; j < ds.d; ++j) out << ",state_" << j;
  out << ",action,reward\n";
  for (size_t i = 0; i < ds.records.size(); ++i) {
    const auto& r = ds.records[i];
    out << r.traj_id << "," << r.t;
    for (int j = 0; j < ds.d; ++j) out << "," << fmt_double(r.state[j]);
    out << "," << r.action << "," << fmt_double(r.reward) << "\n";
    const bool last_of_traj =
        i + 1 == ds.records.size() || ds.records[i + 1].traj_id != r.traj_id;
    if (last_of_traj) {
      out << r.traj_id << "," << (r.t + 1);
      for (int j = 0; j < ds.d; ++j) out << "," << fmt_double(r.next_state[j]);
      out << ",,\n";
    }
  }
  if (!out) throw InputError("write failed: " + path);
}

// ---------------------------------------------------------------------------
// Reports and replication running
// ---------------------------------------------------------------------------

void ExperimentReport::finalize() {
  if (reps.empty()) return;
  double cov = 0.0, len = 0.0, mse = 0.0;
  for (const auto& r : reps) {
    cov += r.covered ? 1.0 : 0.0;
    len += r.ci_hi - r.ci_lo;
    mse += (r.estimate - r.truth) * (r.estimate - r.truth);
  }
  const auto R = static_cast<double>(reps.size());
  ecp = cov / R;
  al = len / R;
  log_mse = std::log(mse / R);
  truth = reps.front().truth;
}

json ExperimentReport::to_json() const {
  json j;
  j["summary"] = {{"ecp", ecp},
                  {"al", al},
                  {"log_mse", log_mse},
                  {"truth", truth},
                  {"replications", reps.size()}};
  json rl = json::array();
  for (const auto& r : reps)
    rl.push_back({{"rep", r.rep},
                  {"estimate", r.estimate},
                  {"se", r.se},
                  {"ci_lo", r.ci_lo},
                  {"ci_hi", r.ci_hi},
                  {"covered", r.covered},
                  {"truth", r.truth}});
  j["replication_records"] = rl;
  j["config"] = config_echo;
  return j;
}

std::string ExperimentReport::to_text() const {
  char buf[256];
  std::string s;
  std::snprintf(buf, sizeof(buf), "%-8s %10.4f\n", "ECP", ecp);
  s += buf;
  std::snprintf(buf, sizeof(buf), "%-8s %10.4f\n", "AL", al);
  s += buf;
  std::snprintf(buf, sizeof(buf), "%-8s %10.4f\n", "logMSE", log_mse);
  s += buf;
  std::snprintf(buf, sizeof(buf), "%-8s %10.6f\n", "truth", truth);
  s += buf;
  std::snprintf(buf, sizeof(buf), "%-8s %10zu\n", "reps", reps.size());
  s += buf;
  return s;
}

std::vector<RepRecord> run_replications(int reps, int workers,
                                        const std::function<RepRecord(int)>& fn) {
  if (reps < 1) throw InputError("run_replications: reps must be >= 1");
  if (workers <= 0) workers = static_cast<int>(std::thread::hardware_concurrency());
  workers = std::max(1, std::min(workers, reps));
  std::vector<RepRecord> out(static_cast<size_t>(reps));
  std::atomic<int> next(0);
  std::exception_ptr first_error;
  std::mutex err_mu;
  auto work = [&]() {
    for (;;) {
      int r = next.fetch_add(1);
      if (r >= reps) return;
      try {
        out[static_cast<size_t>(r)] = fn(r);
      } catch (...) {
        std::lock_guard<std::mutex> lock(err_mu);
        if (!first_error) first_error = std::current_exception();
        next.store(reps);
        return;
      }
    }
  };
  std::vector<std::thread> pool;
  pool.reserve(static_cast<size_t>(workers));
  for (int w = 0; w < workers; ++w) pool.emplace_back(work);
  for (auto& th : pool) th.join();
  if (first_error) std::rethrow_exception(first_error);
  return out;
}

// ---------------------------------------------------------------------------
// Config-driven construction
// ---------------------------------------------------------------------------

std::unique_ptr<Environment> make_environment(const json& config) {
  const json env = config.value("env", json::object());
  const std::string kind = env.value("kind", "linear");
  if (kind == "linear") {
    const std::string v = env.value("variant", "A");
    LinearEnv::Variant variant;
    if (v == "A")
      variant = LinearEnv::Variant::A;
    else if (v == "B")
      variant = LinearEnv::Variant::B;
    else if (v == "D")
      variant = LinearEnv::Variant::D;
    else
      throw InputError("unknown linear variant: " + v);
    return std::make_unique<LinearEnv>(variant);
  }
  if (kind == "cliff") {
    const double gamma = env.value("gamma", config.value("estimator", json::object())
                                                .value("gamma", 0.5));
    const double noise = env.value("reward_noise_sd", 1.0);
    return std::make_unique<CliffEnv>(gamma, noise);
  }
  throw InputError("unknown environment kind: " + kind);
}

Policy make_policy(const json& config, const Environment& env) {
  const std::string kind = config.value("policy", json::object()).value("kind", "linear_target");
  if (kind == "linear_target") return linear_target_policy();
  if (kind == "uniform") return Policy::uniform(env.action_count());
  if (kind == "cliff_optimal") {
    const auto* cliff = dynamic_cast<const CliffEnv*>(&env);
    if (!cliff) throw InputError("policy kind cliff_optimal requires a cliff environment");
    return cliff->optimal_policy();
  }
  throw InputError("unknown policy kind: " + kind);
}

Policy make_behavior_policy(const json& config, const Environment& env) {
  const json ecfg = config.value("env", json::object());
  const std::string kind = ecfg.value("kind", "linear");
  if (kind == "linear") {
    const std::string v = ecfg.value("variant", "A");
    if (v == "B") {
      return Policy::from_probs(
          [](const VectorXd& x) {
            auto sig = [](double z) { return 1.0 / (1.0 + std::exp(-z)); };
            const double p1 = 0.5 * sig(x[0]) + 0.5 * sig(x[1]);
            VectorXd p(2);
            p << 1.0 - p1, p1;
            return p;
          },
          2, PolicyKind::TabularProbabilities, "sigmoid_behavior");
    }
    return Policy::uniform(2);
  }
  if (kind == "cliff") {
    const auto* cliff = dynamic_cast<const CliffEnv*>(&env);
    if (!cliff) throw InputError("behavior policy: environment mismatch");
    Policy opt = cliff->optimal_policy();
    const int m = env.action_count();
    return Policy::from_probs(
        [opt, m](const VectorXd& x) {
          VectorXd p = 0.5 * opt.probs(x);
          p.array() += 0.5 / m;
          return p;
        },
        m, PolicyKind::TabularProbabilities, "cliff_behavior");
  }
  throw InputError("unknown environment kind: " + kind);
}

ReferenceDistribution make_reference(const json& config, const Environment& env) {
  const json exp = config.value("experiment", json::object());
  const json g = exp.value("G", json::object());
  std::string kind = g.value("kind", "");
  if (kind.empty()) kind = dynamic_cast<const CliffEnv*>(&env) ? "start" : "normal";
  if (kind == "normal") {
    const int d = env.state_dim();
    const int draws = config.value("estimator", json::object()).value("g_draws", 10000);
    const std::uint64_t seed = exp.value("seed", 1ULL) ^ 0x5245464449535452ULL;
    return ReferenceDistribution::sampler(
        [d](Rng& rng) {
          VectorXd x(d);
          for (int j = 0; j < d; ++j) x[j] = rng.normal();
          return x;
        },
        draws, seed, "standard_normal");
  }
  if (kind == "dirac") {
    if (!g.contains("x")) throw InputError("reference kind dirac requires x");
    std::vector<double> xv = g["x"].get<std::vector<double>>();
    VectorXd x = Eigen::Map<VectorXd>(xv.data(), static_cast<long>(xv.size()));
    return ReferenceDistribution::dirac(x);
  }
  if (kind == "start") {
    Rng rng(0);
    return ReferenceDistribution::dirac(env.initial_state(rng));
  }
  throw InputError("unknown reference distribution kind: " + kind);
}

EvalConfig make_eval_config(const json& config) {
  const json est = config.value("estimator", json::object());
  const json exp = config.value("experiment", json::object());
  EvalConfig cfg;
  cfg.gamma = est.value("gamma", 0.5);
  cfg.alpha = est.value("alpha", 0.05);
  cfg.eta = est.value("eta", 3.0 / 7.0);
  if (est.contains("L") && !est["L"].is_null()) cfg.L_override = est["L"].get<int>();
  cfg.ridge_lambda = est.value("ridge", 0.0);
  cfg.g_draws = est.value("g_draws", 10000);
  cfg.seed = exp.value("seed", 1ULL);
  cfg.validate();
  return cfg;
}

FQIConfig make_fqi_config(const json& config) {
  const json f = config.value("fqi", json::object());
  FQIConfig cfg;
  cfg.max_iter = f.value("max_iter", 200);
  cfg.tol = f.value("tol", 1e-6);
  cfg.ridge_lambda = f.value("ridge", 1e-9);
  cfg.validate();
  return cfg;
}

FeatureMapFactory make_feature_factory(const json& config, const Environment& env,
                                       const EvalConfig& cfg) {
  const json est = config.value("estimator", json::object());
  std::string basis = est.value("basis", "");
  if (basis.empty()) basis = dynamic_cast<const CliffEnv*>(&env) ? "indicator" : "bspline";
  if (basis == "bspline") return bspline_factory(cfg);
  if (basis == "indicator") {
    const auto* cliff = dynamic_cast<const CliffEnv*>(&env);
    if (!cliff) throw InputError("indicator basis from config requires a cliff environment");
    auto fm = FeatureMap::indicator(cliff->cell_states());
    return [fm](const TrajectoryDataset&) { return fm; };
  }
  throw InputError("unknown basis kind: " + basis);
}

Learner make_fqi_learner(double gamma, const FeatureMapFactory& fmf, const FQIConfig& fqi) {
  return [gamma, fmf, fqi](const TrajectoryDataset& prefix) {
    auto fm = fmf(prefix);
    QParams qp = double_fqi(prefix, fm, gamma, fqi);
    return greedy_policy(qp);
  };
}

double cached_mc_truth(const json& key, const std::function<double()>& compute) {
  static std::map<std::string, double> cache;
  static std::mutex mu;
  const std::string k = key.dump();
  {
    std::lock_guard<std::mutex> lock(mu);
    auto it = cache.find(k);
    if (it != cache.end()) return it->second;
  }
  const double v = compute();
  std::lock_guard<std::mutex> lock(mu);
  cache.emplace(k, v);
  return v;
}

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

namespace {

struct ExperimentCommon {
  std::unique_ptr<Environment> env;
  EvalConfig cfg;
  ReferenceDistribution G = ReferenceDistribution::dirac(VectorXd::Zero(1));
  FeatureMapFactory fmf;
  int n = 0, T = 0, reps = 1, workers = 0;
  std::uint64_t seed = 1;
  json truth_cfg;

  explicit ExperimentCommon(const json& config) {
    env = make_environment(config);
    cfg = make_eval_config(config);
    G = make_reference(config, *env);
    fmf = make_feature_factory(config, *env, cfg);
    const json data = config.value("data", json::object());
    n = data.value("n", 25);
    T = data.value("T", 30);
    const json exp = config.value("experiment", json::object());
    reps = exp.value("reps", 1);
    workers = exp.value("workers", 0);
    seed = exp.value("seed", 1ULL);
    truth_cfg = exp.value("truth", json::object());
  }

  int truth_reps() const { return truth_cfg.value("reps", 10000); }
  int truth_horizon() const { return truth_cfg.value("horizon", 500); }
  std::uint64_t truth_seed() const { return truth_cfg.value("seed", 0x54525554ULL); }
  std::optional<double> truth_override() const {
    if (truth_cfg.contains("value") && !truth_cfg["value"].is_null())
      return truth_cfg["value"].get<double>();
    return std::nullopt;
  }
};

RepRecord to_rep_record(int rep, const ValueInterval& vi, double truth) {
  RepRecord r;
  r.rep = rep;
  r.estimate = vi.estimate;
  r.se = vi.std_err / std::sqrt(vi.n_obs);
  r.ci_lo = vi.ci_lower;
  r.ci_hi = vi.ci_upper;
  r.truth = truth;
  r.covered = std::isfinite(truth) && vi.ci_lower <= truth && truth <= vi.ci_upper;
  return r;
}

}  // namespace

ExperimentReport cmd_evaluate_fixed(const json& config) {
  ExperimentCommon c(config);
  Policy pi = make_policy(config, *c.env);
  double truth;
  if (auto tv = c.truth_override()) {
    truth = *tv;
  } else {
    json key = {{"cmd", "evaluate-fixed"},
                {"env", config.value("env", json::object())},
                {"policy", pi.tag()},
                {"gamma", c.cfg.gamma},
                {"G", c.G.tag()},
                {"reps", c.truth_reps()},
                {"horizon", c.truth_horizon()},
                {"seed", c.truth_seed()}};
    truth = cached_mc_truth(key, [&] {
      return mc_true_value(*c.env, pi, c.G, c.cfg.gamma, c.truth_reps(), c.truth_horizon(),
                           c.truth_seed())
          .value;
    });
  }

  ExperimentReport report;
  report.config_echo = config;
  report.config_echo["resolved_truth"] = truth;
  const json data = config.value("data", json::object());
  if (data.value("source", "simulate") == "file") {
    TrajectoryDataset ds = load_trajectories_csv(data.value("path", ""));
    auto fm = c.fmf(ds);
    SieveFit fit = fit_q(ds, all_records(ds), fm, pi, c.cfg);
    ValueInterval vi = value_integrated(fit, c.G, pi, c.cfg.alpha, c.cfg.g_draws, c.cfg.seed);
    report.reps.push_back(to_rep_record(0, vi, truth));
  } else {
    report.reps = run_replications(c.reps, c.workers, [&](int rep) {
      TrajectoryDataset ds =
          simulate_dataset(*c.env, nullptr, c.n, c.T, rep_seed(c.seed, rep));
      auto fm = c.fmf(ds);
      SieveFit fit = fit_q(ds, all_records(ds), fm, pi, c.cfg);
      ValueInterval vi = value_integrated(fit, c.G, pi, c.cfg.alpha, c.cfg.g_draws, c.cfg.seed);
      return to_rep_record(rep, vi, truth);
    });
  }
  report.finalize();
  return report;
}

ExperimentReport cmd_evaluate_optimal(const json& config) {
  ExperimentCommon c(config);
  const json exp = config.value("experiment", json::object());
  const int K_n = exp.value("K_n", 2);
  const int K_T = exp.value("K_T", 2);
  FQIConfig fqi = make_fqi_config(config);
  Learner learner = make_fqi_learner(c.cfg.gamma, c.fmf, fqi);

  double truth;
  if (auto tv = c.truth_override()) {
    truth = *tv;
  } else {
    const int ref_n = c.truth_cfg.value("n", 1000);
    const int ref_T = c.truth_cfg.value("T", std::max(c.T, 30));
    json key = {{"cmd", "evaluate-optimal"},
                {"env", config.value("env", json::object())},
                {"gamma", c.cfg.gamma},
                {"G", c.G.tag()},
                {"ref_n", ref_n},
                {"ref_T", ref_T},
                {"reps", c.truth_reps()},
                {"horizon", c.truth_horizon()},
                {"seed", c.truth_seed()}};
    truth = cached_mc_truth(key, [&] {
      TrajectoryDataset big =
          simulate_dataset(*c.env, nullptr, ref_n, ref_T, c.truth_seed() ^ 0xA5A5ULL);
      Policy pi_ref = learner(big);
      return mc_true_value(*c.env, pi_ref, c.G, c.cfg.gamma, c.truth_reps(), c.truth_horizon(),
                           c.truth_seed())
          .value;
    });
  }

  std::optional<std::uint64_t> permute_seed;
  if (exp.contains("permute_seed") && !exp["permute_seed"].is_null())
    permute_seed = exp["permute_seed"].get<std::uint64_t>();

  ExperimentReport report;
  report.config_echo = config;
  report.config_echo["resolved_truth"] = truth;
  BlockPartition partition = make_partition(c.n, c.T, c.n / K_n, c.T / K_T);
  report.reps = run_replications(c.reps, c.workers, [&](int rep) {
    TrajectoryDataset ds = simulate_dataset(*c.env, nullptr, c.n, c.T, rep_seed(c.seed, rep));
    std::vector<int> order;
    if (permute_seed) order = trajectory_permutation(c.n, *permute_seed + rep);
    SaveResult sr = save_evaluate(ds, partition, learner, c.G, c.cfg, c.fmf, order);
    return to_rep_record(rep, sr.aggregate, truth);
  });
  report.finalize();
  return report;
}

ExperimentReport cmd_onpolicy(const json& config) {
  ExperimentCommon c(config);
  const json exp = config.value("experiment", json::object());
  OnPolicySchedule sched;
  sched.K = exp.value("K", 4);
  sched.epsilon = exp.value("epsilon", 0.2);
  sched.n = c.n;
  if (exp.contains("T_sched") && !exp["T_sched"].is_null()) {
    sched.T_sched = exp["T_sched"].get<std::vector<int>>();
    sched.K = static_cast<int>(sched.T_sched.size());
  } else {
    // T is the per-batch trajectory length; every batch uses the same T.
    if (c.T < 1) throw InputError("cmd_onpolicy: T must be positive");
    sched.T_sched.assign(static_cast<size_t>(sched.K), c.T);
  }
  sched.validate();
  FQIConfig fqi = make_fqi_config(config);
  Learner learner = make_fqi_learner(c.cfg.gamma, c.fmf, fqi);

  double truth;
  if (auto tv = c.truth_override()) {
    truth = *tv;
  } else {
    const int ref_n = c.truth_cfg.value("n", 1000);
    int total_T = 0;
    for (int t : sched.T_sched) total_T += t;
    const int ref_T = c.truth_cfg.value("T", total_T);
    json key = {{"cmd", "onpolicy"},
                {"env", config.value("env", json::object())},
                {"gamma", c.cfg.gamma},
                {"G", c.G.tag()},
                {"ref_n", ref_n},
                {"ref_T", ref_T},
                {"reps", c.truth_reps()},
                {"horizon", c.truth_horizon()},
                {"seed", c.truth_seed()}};
    truth = cached_mc_truth(key, [&] {
      Policy uniform = Policy::uniform(c.env->action_count());
      TrajectoryDataset big =
          simulate_dataset(*c.env, &uniform, ref_n, ref_T, c.truth_seed() ^ 0x3C3CULL);
      FQIConfig fqi_ref = fqi;
      Policy pi_ref = make_fqi_learner(c.cfg.gamma, c.fmf, fqi_ref)(big);
      return mc_true_value(*c.env, pi_ref, c.G, c.cfg.gamma, c.truth_reps(), c.truth_horizon(),
                           c.truth_seed())
          .value;
    });
  }

  ExperimentReport report;
  report.config_echo = config;
  report.config_echo["resolved_truth"] = truth;
  report.reps = run_replications(c.reps, c.workers, [&](int rep) {
    OnPolicyResult res =
        onpolicy_run(*c.env, sched, learner, c.G, c.cfg, c.fmf, rep_seed(c.seed, rep));
    return to_rep_record(rep, res.aggregate, truth);
  });
  report.finalize();
  return report;
}

ExperimentReport cmd_value_diff(const json& config) {
  ExperimentCommon c(config);
  const json exp = config.value("experiment", json::object());
  const int K_n = exp.value("K_n", 2);
  const int K_T = exp.value("K_T", 2);
  std::vector<double> xv = exp.value("x", std::vector<double>(
                                              static_cast<size_t>(c.env->state_dim()), 0.0));
  VectorXd x = Eigen::Map<VectorXd>(xv.data(), static_cast<long>(xv.size()));
  std::optional<double> delta;
  if (exp.contains("delta") && !exp["delta"].is_null()) delta = exp["delta"].get<double>();
  FQIConfig fqi = make_fqi_config(config);
  Learner learner = make_fqi_learner(c.cfg.gamma, c.fmf, fqi);

  double truth;
  if (auto tv = c.truth_override()) {
    truth = *tv;
  } else {
    const int ref_n = c.truth_cfg.value("n", 1000);
    const int ref_T = c.truth_cfg.value("T", std::max(c.T, 30));
    json key = {{"cmd", "value-diff"},
                {"env", config.value("env", json::object())},
                {"gamma", c.cfg.gamma},
                {"x", xv},
                {"ref_n", ref_n},
                {"ref_T", ref_T},
                {"reps", c.truth_reps()},
                {"horizon", c.truth_horizon()},
                {"seed", c.truth_seed()}};
    truth = cached_mc_truth(key, [&] {
      TrajectoryDataset big =
          simulate_dataset(*c.env, nullptr, ref_n, ref_T, c.truth_seed() ^ 0xBEEFULL);
      Policy pi_ref = learner(big);
      Policy behavior = make_behavior_policy(config, *c.env);
      ReferenceDistribution at_x = ReferenceDistribution::dirac(x);
      const double v_pi = mc_true_value(*c.env, pi_ref, at_x, c.cfg.gamma, c.truth_reps(),
                                        c.truth_horizon(), c.truth_seed())
                              .value;
      const double v_b = mc_true_value(*c.env, behavior, at_x, c.cfg.gamma, c.truth_reps(),
                                       c.truth_horizon(), c.truth_seed() ^ 0x77ULL)
                             .value;
      return v_pi - v_b;
    });
  }

  ExperimentReport report;
  report.config_echo = config;
  report.config_echo["resolved_truth"] = truth;
  BlockPartition partition = make_partition(c.n, c.T, c.n / K_n, c.T / K_T);
  report.reps = run_replications(c.reps, c.workers, [&](int rep) {
    TrajectoryDataset ds = simulate_dataset(*c.env, nullptr, c.n, c.T, rep_seed(c.seed, rep));
    SaveResult sr = save_vd(ds, partition, learner, x, delta, c.cfg, c.fmf);
    return to_rep_record(rep, sr.aggregate, truth);
  });
  report.finalize();
  return report;
}

void cmd_simulate(const json& config) {
  std::unique_ptr<Environment> env = make_environment(config);
  const json data = config.value("data", json::object());
  const json exp = config.value("experiment", json::object());
  const int n = data.value("n", 1);
  const int T = data.value("T", 10);
  const std::uint64_t seed = exp.value("seed", 1ULL);
  const std::string out = config.value("out", "");
  if (out.empty()) throw InputError("cmd_simulate: config requires an output path");
  TrajectoryDataset ds = simulate_dataset(*env, nullptr, n, T, seed);
  write_trajectories_csv(ds, out);
}

}  // namespace saveci
