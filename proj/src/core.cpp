#include "saveci/core.hpp"

#include <algorithm>
#include <map>
#include <set>

namespace saveci {

TrajectoryDataset TrajectoryDataset::from_records(std::vector<TransitionRecord> recs, int m) {
  std::stable_sort(recs.begin(), recs.end(), [](const TransitionRecord& a, const TransitionRecord& b) {
    return a.traj_id != b.traj_id ? a.traj_id < b.traj_id : a.t < b.t;
  });
  TrajectoryDataset ds;
  ds.records = std::move(recs);
  ds.m = m;
  ds.d = ds.records.empty() ? 0 : static_cast<int>(ds.records.front().state.size());
  int last_traj = -1;
  for (const auto& r : ds.records) {
    if (r.traj_id != last_traj) {
      ds.lengths.push_back(0);
      last_traj = r.traj_id;
      ++ds.n;
    }
    ++ds.lengths.back();
  }
  return ds;
}

bool TrajectoryDataset::equal_lengths() const {
  for (int len : lengths)
    if (len != lengths.front()) return false;
  return true;
}

int TrajectoryDataset::common_length() const {
  if (lengths.empty()) throw InputError("empty dataset");
  if (!equal_lengths()) throw InputError("dataset has unequal trajectory lengths");
  return lengths.front();
}

TrajectoryDataset TrajectoryDataset::subset(const std::vector<int>& record_idx) const {
  std::vector<TransitionRecord> recs;
  recs.reserve(record_idx.size());
  for (int i : record_idx) recs.push_back(records.at(static_cast<size_t>(i)));
  return from_records(std::move(recs), m);
}

std::vector<Violation> validate_dataset(const TrajectoryDataset& ds) {
  std::vector<Violation> out;
  if (ds.records.empty()) {
    out.push_back({"empty dataset", -1, -1, "total_transitions must be > 0"});
    return out;
  }
  for (size_t i = 0; i < ds.records.size(); ++i) {
    const auto& r = ds.records[i];
    if (r.action < 0 || r.action >= ds.m)
      out.push_back({"action out of range", r.traj_id, r.t,
                     "action=" + std::to_string(r.action)});
    if (r.next_action && (*r.next_action < 0 || *r.next_action >= ds.m))
      out.push_back({"next_action out of range", r.traj_id, r.t,
                     "next_action=" + std::to_string(*r.next_action)});
    if (static_cast<int>(r.state.size()) != ds.d ||
        static_cast<int>(r.next_state.size()) != ds.d)
      out.push_back({"state dimension mismatch", r.traj_id, r.t, ""});
  }
  // Per-trajectory time indices must be exactly 0..T_i-1 and chained.
  size_t pos = 0;
  for (int len : ds.lengths) {
    for (int t = 0; t < len; ++t) {
      const auto& r = ds.records[pos + static_cast<size_t>(t)];
      if (r.t != t) {
        out.push_back({"time index gap", r.traj_id, r.t,
                       "expected t=" + std::to_string(t)});
        continue;
      }
      if (t + 1 < len) {
        const auto& nxt = ds.records[pos + static_cast<size_t>(t) + 1];
        if (r.next_state.size() == nxt.state.size() && r.next_state != nxt.state)
          out.push_back({"chain break", r.traj_id, r.t,
                         "next_state != state at t+1"});
        if (!r.next_action || *r.next_action != nxt.action)
          out.push_back({"chain break", r.traj_id, r.t,
                         "next_action != action at t+1"});
      } else if (r.next_action) {
        out.push_back({"dangling next_action", r.traj_id, r.t, ""});
      }
    }
    pos += static_cast<size_t>(len);
  }
  return out;
}

void chain_next_actions(std::vector<TransitionRecord>& records) {
  for (size_t i = 0; i + 1 < records.size(); ++i) {
    if (records[i].traj_id == records[i + 1].traj_id &&
        records[i + 1].t == records[i].t + 1) {
      records[i].next_action = records[i + 1].action;
    }
  }
}

// ---------------------------------------------------------------------------
// Policy
// ---------------------------------------------------------------------------

VectorXd Policy::probs(const VectorXd& x) const {
  if (!fn_) throw InputError("uninitialized policy");
  VectorXd p = fn_(x);
  if (static_cast<int>(p.size()) != m_) throw InputError("policy returned wrong arity");
  double s = p.sum();
  if (p.minCoeff() < -1e-12 || std::fabs(s - 1.0) > 1e-12)
    throw InputError("policy probabilities invalid (sum=" + std::to_string(s) + ")");
  return p;
}

int Policy::sample(const VectorXd& x, Rng& rng) const {
  VectorXd p = probs(x);
  double u = rng.uniform();
  double acc = 0.0;
  for (int a = 0; a < m_; ++a) {
    acc += p[a];
    if (u < acc) return a;
  }
  return m_ - 1;
}

Policy Policy::uniform(int m) {
  Policy pi;
  pi.m_ = m;
  pi.kind_ = PolicyKind::Uniform;
  pi.tag_ = "uniform";
  pi.fn_ = [m](const VectorXd&) { return VectorXd::Constant(m, 1.0 / m); };
  return pi;
}

Policy Policy::deterministic(std::function<int(const VectorXd&)> rule, int m, std::string tag) {
  Policy pi;
  pi.m_ = m;
  pi.kind_ = PolicyKind::DeterministicRule;
  pi.tag_ = std::move(tag);
  pi.fn_ = [rule = std::move(rule), m](const VectorXd& x) {
    int a = rule(x);
    if (a < 0 || a >= m) throw InputError("deterministic rule returned action out of range");
    VectorXd p = VectorXd::Zero(m);
    p[a] = 1.0;
    return p;
  };
  return pi;
}

Policy Policy::from_probs(std::function<VectorXd(const VectorXd&)> fn, int m, PolicyKind kind,
                          std::string tag) {
  Policy pi;
  pi.m_ = m;
  pi.kind_ = kind;
  pi.tag_ = std::move(tag);
  pi.fn_ = std::move(fn);
  return pi;
}

// ---------------------------------------------------------------------------
// ReferenceDistribution
// ---------------------------------------------------------------------------

ReferenceDistribution ReferenceDistribution::dirac(VectorXd x0) {
  ReferenceDistribution g;
  g.kind_ = Kind::Dirac;
  g.x0_ = std::move(x0);
  g.tag_ = "dirac";
  return g;
}

ReferenceDistribution ReferenceDistribution::sample_set(std::vector<VectorXd> states) {
  if (states.empty()) throw InputError("sample_set must be non-empty");
  ReferenceDistribution g;
  g.kind_ = Kind::SampleSet;
  g.states_ = std::move(states);
  g.tag_ = "sample_set";
  return g;
}

ReferenceDistribution ReferenceDistribution::sampler(std::function<VectorXd(Rng&)> gen, int draws,
                                                     std::uint64_t seed, std::string tag) {
  if (draws < 1) throw InputError("sampler draws must be >= 1");
  ReferenceDistribution g;
  g.kind_ = Kind::Sampler;
  g.gen_ = std::move(gen);
  g.draws_ = draws;
  g.seed_ = seed;
  g.tag_ = std::move(tag);
  return g;
}

VectorXd ReferenceDistribution::mean(const std::function<VectorXd(const VectorXd&)>& f,
                                     int out_dim, int g_draws, std::uint64_t seed) const {
  switch (kind_) {
    case Kind::Dirac:
      return f(x0_);
    case Kind::SampleSet: {
      VectorXd acc = VectorXd::Zero(out_dim);
      for (const auto& x : states_) acc += f(x);
      return acc / static_cast<double>(states_.size());
    }
    case Kind::Sampler: {
      Rng rng(seed);
      VectorXd acc = VectorXd::Zero(out_dim);
      for (int i = 0; i < g_draws; ++i) acc += f(gen_(rng));
      return acc / static_cast<double>(g_draws);
    }
  }
  throw InputError("unknown reference distribution kind");
}

VectorXd ReferenceDistribution::draw(Rng& rng) const {
  switch (kind_) {
    case Kind::Dirac:
      return x0_;
    case Kind::SampleSet:
      return states_[static_cast<size_t>(rng.uniform_int(static_cast<int>(states_.size())))];
    case Kind::Sampler:
      return gen_(rng);
  }
  throw InputError("unknown reference distribution kind");
}

}  // namespace saveci
