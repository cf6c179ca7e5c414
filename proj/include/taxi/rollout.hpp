#pragma once

#include <algorithm>
#include <cstdint>
#include <limits>
#include <span>
#include <stdexcept>
#include <vector>

#include "taxi/demand.hpp"
#include "taxi/dynamics.hpp"
#include "taxi/policy.hpp"
#include "taxi/rng.hpp"
#include "taxi/street_graph.hpp"

namespace taxi {

struct RolloutConfig {
  int trajectories_per_leaf = 5000;
  int truncation_steps = 10;  // t: base-policy steps before the terminal estimate

  void validate() const {
    if (trajectories_per_leaf < 1 || truncation_steps < 1)
      throw std::invalid_argument("rollout config values must be positive");
  }
};

// Source of the lookahead's imagined future arrivals. Distinct from
// ArrivalSource on purpose: trajectory sampling is keyed by an explicit
// per-trajectory stream so candidate controls share sample paths (common
// random numbers), while the episode's real arrivals live on an unrelated
// stream the policy cannot peek at.
class FutureModel {
 public:
  virtual ~FutureModel() = default;
  virtual std::vector<Request> sample(std::uint64_t traj_seed, int minute) = 0;
};

class DemandFuture final : public FutureModel {
 public:
  explicit DemandFuture(const DemandModel& dm) : dm_(&dm) {}
  std::vector<Request> sample(std::uint64_t traj_seed, int minute) override {
    Rng rng(derive_seed(traj_seed, static_cast<std::uint64_t>(minute)));
    return sample_minute(*dm_, rng, minute);
  }

 private:
  const DemandModel* dm_;
};

// Deterministic future: every trajectory replays the same script. Used by
// the DP-equivalence tests, where the expectation must be exhaustive.
class ScriptedFuture final : public FutureModel {
 public:
  ScriptedFuture(const std::vector<Request>& requests, int horizon) {
    per_minute_.assign(horizon + 1, {});
    for (const Request& r : requests) {
      if (r.arrival_minute < 1 || r.arrival_minute > horizon)
        throw std::invalid_argument("scripted request outside minutes 1.." +
                                    std::to_string(horizon));
      per_minute_[r.arrival_minute].push_back(r);
    }
  }
  std::vector<Request> sample(std::uint64_t, int minute) override {
    if (minute < 0 || minute >= static_cast<int>(per_minute_.size())) return {};
    return per_minute_[minute];
  }

 private:
  std::vector<std::vector<Request>> per_minute_;
};

struct RolloutStats {
  long long leaf_evaluations = 0;     // candidates scored, singletons included
  long long trajectories_simulated = 0;
  std::vector<long long> stage_leaves;  // per joint decision: sum of |U^l|
  // Trajectory stream seeds consumed per candidate of the most recent
  // per-agent decision (first few only); equal rows certify common random
  // numbers across candidates.
  std::vector<std::vector<std::uint64_t>> last_candidate_streams;

  void begin_stage() { stage_leaves.push_back(0); }
};

// True when a pickup by `agent` is still jointly feasible: the preceding
// agents' pickups at the same node have not already claimed every request
// waiting there. Pickup surplus is the only way a per-agent feasible
// control can be jointly infeasible.
inline bool pickup_unclaimed(const SystemState& s, int agent,
                             std::span<const Control> preceding) {
  NodeId at = s.locations[agent];
  int waiting = 0;
  for (const Request& r : s.outstanding)
    if (r.pickup == at) ++waiting;
  int claimed = 0;
  for (std::size_t j = 0; j < preceding.size(); ++j)
    if (preceding[j].kind == Control::Kind::Pickup &&
        s.locations[static_cast<int>(j)] == at)
      ++claimed;
  return waiting > claimed;
}

// The per-agent lookahead minimization. `s` is the stage-k state after the
// stage's arrivals; `preceding` holds the controls already fixed for agents
// 0..agent-1 this stage. For each candidate control the remaining agents
// are filled with the base policy's controls at the current state, the
// stage completes, and the candidate's score is the stage cost plus the
// average over trajectories of: t truncated base-policy steps' costs plus
// the terminal estimate |r_bar| right after the following minute's
// arrivals. Scores are integer sums, so the argmin is exact; ties resolve
// to the earliest candidate in control_set order (Pickup, Moves ascending,
// Stay). A Pickup candidate whose request is already claimed by a preceding
// agent still counts as a leaf but scores unreachable, so it is never
// chosen and never simulated.
inline Control one_at_a_time_rollout_control(
    const SystemState& s, int agent, std::span<const Control> preceding,
    Policy& base, const RolloutConfig& cfg, FutureModel& future,
    const StreetGraph& g, int horizon, std::uint64_t decision_seed,
    RolloutStats* stats = nullptr) {
  cfg.validate();
  if (static_cast<int>(preceding.size()) != agent)
    throw std::invalid_argument("preceding controls must cover agents before " +
                                std::to_string(agent + 1));
  const int k = s.minute;
  if (k < 1 || k > horizon)
    throw std::invalid_argument("rollout queried outside stages 1..N");

  std::vector<Control> candidates = control_set(s, agent, g);
  if (stats) {
    if (stats->stage_leaves.empty()) stats->begin_stage();
    stats->stage_leaves.back() += static_cast<long long>(candidates.size());
    stats->leaf_evaluations += static_cast<long long>(candidates.size());
    stats->last_candidate_streams.assign(candidates.size(), {});
  }
  if (candidates.size() == 1) return candidates[0];  // forced: no simulation

  const int m = s.agent_count();
  const int tt = std::min(cfg.truncation_steps, horizon - k);

  // Complete each jointly feasible candidate into its post-decision state.
  struct Leaf {
    std::size_t ci;
    SystemState completed;
    long long score;
  };
  std::vector<Leaf> leaves;
  std::vector<Control> u(m);
  for (std::size_t ci = 0; ci < candidates.size(); ++ci) {
    if (candidates[ci].kind == Control::Kind::Pickup &&
        !pickup_unclaimed(s, agent, preceding))
      continue;
    std::copy(preceding.begin(), preceding.end(), u.begin());
    u[agent] = candidates[ci];
    for (int j = agent + 1; j < m; ++j)
      u[j] = base.control(s, j, std::span<const Control>(u.data(), j));
    ApplyResult completed = apply_controls(s, u, g);
    long long stage = stage_cost(completed.state);
    leaves.push_back(
        {ci, std::move(completed.state), stage * cfg.trajectories_per_leaf});
  }
  if (leaves.empty())
    throw std::logic_error("no jointly feasible candidate control");

  auto* batched = dynamic_cast<BatchPolicy*>(&base);
  if (tt > 0 && batched == nullptr) {
    for (Leaf& leaf : leaves) {
      for (int traj = 0; traj < cfg.trajectories_per_leaf; ++traj) {
        std::uint64_t traj_seed =
            derive_seed(decision_seed, static_cast<std::uint64_t>(traj));
        if (stats && traj < 8)
          stats->last_candidate_streams[leaf.ci].push_back(traj_seed);

        SystemState sim = leaf.completed;
        for (int step = 1; step <= tt; ++step) {
          sim = add_arrivals(sim, future.sample(traj_seed, k + step));
          std::vector<Control> ub;
          ub.reserve(m);
          for (int j = 0; j < m; ++j)
            ub.push_back(base.control(sim, j, ub));
          sim = apply_controls(sim, ub, g).state;
          leaf.score += stage_cost(sim);
        }
        if (k + tt < horizon) {
          sim = add_arrivals(sim, future.sample(traj_seed, k + tt + 1));
          leaf.score += static_cast<long long>(sim.outstanding.size());
        }
        if (stats) ++stats->trajectories_simulated;
      }
    }
  } else if (tt > 0) {
    // Lockstep variant: every (leaf, trajectory) pair advances together so
    // the base policy answers each stage with a handful of batched queries.
    // Scores and trajectory streams are identical to the per-leaf loop
    // because FutureModel::sample is a pure function of (stream, minute).
    const int trajectories = cfg.trajectories_per_leaf;
    std::vector<std::uint64_t> seeds(trajectories);
    for (int traj = 0; traj < trajectories; ++traj)
      seeds[traj] = derive_seed(decision_seed, static_cast<std::uint64_t>(traj));
    if (stats)
      for (const Leaf& leaf : leaves)
        for (int traj = 0; traj < std::min(trajectories, 8); ++traj)
          stats->last_candidate_streams[leaf.ci].push_back(seeds[traj]);

    std::vector<SystemState> sims;
    sims.reserve(leaves.size() * trajectories);
    for (const Leaf& leaf : leaves)
      for (int traj = 0; traj < trajectories; ++traj) sims.push_back(leaf.completed);
    const std::size_t pairs = sims.size();
    std::vector<std::vector<Control>> ubs(pairs);
    for (auto& ub : ubs) ub.reserve(m);
    std::vector<StageQuery> queries(pairs);
    std::vector<Control> outs(pairs);

    for (int step = 1; step <= tt; ++step) {
      for (std::size_t p = 0; p < pairs; ++p) {
        sims[p] = add_arrivals(sims[p], future.sample(seeds[p % trajectories], k + step));
        ubs[p].clear();
      }
      for (int j = 0; j < m; ++j) {
        for (std::size_t p = 0; p < pairs; ++p)
          queries[p] = {&sims[p], std::span<const Control>(ubs[p])};
        batched->control_batch(j, queries, outs);
        for (std::size_t p = 0; p < pairs; ++p) ubs[p].push_back(outs[p]);
      }
      for (std::size_t p = 0; p < pairs; ++p) {
        sims[p] = apply_controls(sims[p], ubs[p], g).state;
        leaves[p / trajectories].score += stage_cost(sims[p]);
      }
    }
    if (k + tt < horizon)
      for (std::size_t p = 0; p < pairs; ++p) {
        sims[p] =
            add_arrivals(sims[p], future.sample(seeds[p % trajectories], k + tt + 1));
        leaves[p / trajectories].score +=
            static_cast<long long>(sims[p].outstanding.size());
      }
    if (stats) stats->trajectories_simulated += static_cast<long long>(pairs);
  }

  const Leaf* best = &leaves[0];
  for (const Leaf& leaf : leaves)
    if (leaf.score < best->score) best = &leaf;
  return candidates[best->ci];
}

// Policy wrapper: one-agent-at-a-time rollout over a base policy. The same
// class implements online play — hand it a trained approximator as base.
// Decision streams derive from (episode seed, minute, agent), so a decision
// is a pure function of the queried state.
class RolloutPolicy final : public Policy {
 public:
  RolloutPolicy(Policy& base, RolloutConfig cfg, FutureModel& future,
                const StreetGraph& g)
      : base_(base), cfg_(cfg), future_(future), g_(g) {
    cfg_.validate();
  }

  void begin_episode(std::uint64_t seed, int horizon) override {
    seed_ = seed;
    horizon_ = horizon;
    base_.begin_episode(derive_seed(seed, 0x62617365ULL), horizon);
  }

  Control control(const SystemState& s, int agent,
                  std::span<const Control> preceding) override {
    if (horizon_ < 1) throw std::logic_error("begin_episode was never called");
    if (stats_ && agent == 0) stats_->begin_stage();
    std::uint64_t decision_seed =
        derive_seed(seed_, static_cast<std::uint64_t>(s.minute),
                    static_cast<std::uint64_t>(agent));
    return one_at_a_time_rollout_control(s, agent, preceding, base_, cfg_, future_,
                                         g_, horizon_, decision_seed, stats_);
  }

  void attach_stats(RolloutStats* stats) { stats_ = stats; }

 private:
  Policy& base_;
  RolloutConfig cfg_;
  FutureModel& future_;
  const StreetGraph& g_;
  std::uint64_t seed_ = 0;
  int horizon_ = 0;
  RolloutStats* stats_ = nullptr;
};

}  // namespace taxi
