#pragma once

// Operations-research comparison policies: instantaneous assignment of
// free taxis to outstanding requests (iterative greedy matching in the
// broadcast-of-local-eligibility style, or exact min-cost behind a flag)
// and a two-step stochastic variant that also weighs sampled next-minute
// requests.

#include <algorithm>
#include <cstdint>
#include <limits>
#include <map>
#include <span>
#include <stdexcept>
#include <vector>

#include "taxi/demand.hpp"
#include "taxi/dynamics.hpp"
#include "taxi/policy.hpp"
#include "taxi/rng.hpp"
#include "taxi/street_graph.hpp"

namespace taxi {

struct AssignmentResult {
  std::vector<int> row_to_col;  // -1 when unmatched (only if rows > cols)
  long long total = 0;
};

// Min-cost maximal assignment (Hungarian with potentials). Matches
// min(rows, cols) pairs; costs must be finite and nonnegative.
inline AssignmentResult min_cost_assignment(
    const std::vector<std::vector<long long>>& cost) {
  const int rows = static_cast<int>(cost.size());
  if (rows == 0) return {{}, 0};
  const int cols = static_cast<int>(cost[0].size());
  for (const auto& row : cost)
    if (static_cast<int>(row.size()) != cols)
      throw std::invalid_argument("ragged cost matrix");
  if (cols == 0) return {std::vector<int>(rows, -1), 0};

  if (rows > cols) {  // transpose so every row can be matched
    std::vector<std::vector<long long>> t(cols, std::vector<long long>(rows));
    for (int r = 0; r < rows; ++r)
      for (int c = 0; c < cols; ++c) t[c][r] = cost[r][c];
    AssignmentResult tr = min_cost_assignment(t);
    AssignmentResult out{std::vector<int>(rows, -1), tr.total};
    for (int c = 0; c < cols; ++c)
      if (tr.row_to_col[c] >= 0) out.row_to_col[tr.row_to_col[c]] = c;
    return out;
  }

  const long long kInf = std::numeric_limits<long long>::max() / 4;
  std::vector<long long> u(rows + 1, 0), v(cols + 1, 0);
  std::vector<int> p(cols + 1, 0), way(cols + 1, 0);
  for (int i = 1; i <= rows; ++i) {
    p[0] = i;
    int j0 = 0;
    std::vector<long long> minv(cols + 1, kInf);
    std::vector<char> used(cols + 1, 0);
    do {
      used[j0] = 1;
      int i0 = p[j0], j1 = 0;
      long long delta = kInf;
      for (int j = 1; j <= cols; ++j) {
        if (used[j]) continue;
        long long cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= cols; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      int j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }

  AssignmentResult out{std::vector<int>(rows, -1), 0};
  for (int j = 1; j <= cols; ++j)
    if (p[j] != 0) {
      out.row_to_col[p[j] - 1] = j - 1;
      out.total += cost[p[j] - 1][j - 1];
    }
  return out;
}

namespace detail {

// Requests consumed by preceding Pickups this stage, oldest-first per
// node, mirroring the transition's matching.
inline std::vector<char> claimed_by_preceding(const SystemState& s,
                                              std::span<const Control> preceding) {
  std::vector<char> claimed(s.outstanding.size(), 0);
  for (std::size_t j = 0; j < preceding.size(); ++j) {
    if (preceding[j].kind != Control::Kind::Pickup) continue;
    for (std::size_t i = 0; i < s.outstanding.size(); ++i)
      if (!claimed[i] && s.outstanding[i].pickup == s.locations[j]) {
        claimed[i] = 1;
        break;
      }
  }
  return claimed;
}

// Stage-plan cache key. busy_targets are omitted on purpose: busy agents
// bypass the cached plan (their forced move is recomputed from the queried
// state) and matching depends only on locations, timers, and requests.
inline bool same_state(const SystemState& a, const SystemState& b) {
  if (a.minute != b.minute || a.locations != b.locations || a.timers != b.timers ||
      a.outstanding.size() != b.outstanding.size())
    return false;
  for (std::size_t r = 0; r < a.outstanding.size(); ++r)
    if (a.outstanding[r].pickup != b.outstanding[r].pickup ||
        a.outstanding[r].dropoff != b.outstanding[r].dropoff ||
        a.outstanding[r].arrival_minute != b.outstanding[r].arrival_minute)
      return false;
  return true;
}

// A preceding deviation from the cached plan can invalidate a planned
// Pickup; it downgrades to Stay when every request at the agent's node is
// already claimed.
inline Control guard_pickup(Control planned, const SystemState& s, int agent,
                            std::span<const Control> preceding) {
  if (planned.kind != Control::Kind::Pickup) return planned;
  std::vector<char> claimed = claimed_by_preceding(s, preceding);
  for (std::size_t r = 0; r < s.outstanding.size(); ++r)
    if (!claimed[r] && s.outstanding[r].pickup == s.locations[agent])
      return planned;
  return stay();
}

// Iterative greedy matching: repeatedly take the (free agent, open
// request) pair with the smallest pickup distance; ties prefer the lower
// agent index, then earlier arrival, then lower pickup node, then request
// order. Returns a request index per agent, -1 when unmatched.
inline std::vector<int> ble_matching(const SystemState& s,
                                     const std::vector<int>& free_agents,
                                     std::vector<char> open, const StreetGraph& g) {
  std::vector<int> match(s.agent_count(), -1);
  std::vector<char> taken(free_agents.size(), 0);
  const std::size_t pairs = std::min(
      free_agents.size(),
      static_cast<std::size_t>(std::count(open.begin(), open.end(), 1)));
  for (std::size_t round = 0; round < pairs; ++round) {
    int best_agent = -1, best_request = -1, best_dist = 0;
    for (std::size_t f = 0; f < free_agents.size(); ++f) {
      if (taken[f]) continue;
      for (std::size_t r = 0; r < s.outstanding.size(); ++r) {
        if (!open[r]) continue;
        int d = g.distance(s.locations[free_agents[f]], s.outstanding[r].pickup);
        if (best_agent < 0 || d < best_dist ||
            (d == best_dist &&
             (s.outstanding[r].arrival_minute <
                  s.outstanding[best_request].arrival_minute ||
              (s.outstanding[r].arrival_minute ==
                   s.outstanding[best_request].arrival_minute &&
               s.outstanding[r].pickup < s.outstanding[best_request].pickup)))) {
          best_agent = static_cast<int>(f);
          best_request = static_cast<int>(r);
          best_dist = d;
        }
      }
    }
    taken[best_agent] = 1;
    open[best_request] = 0;
    match[free_agents[best_agent]] = best_request;
  }
  return match;
}

// Exact variant of the same matching problem.
inline std::vector<int> optimal_matching(const SystemState& s,
                                         const std::vector<int>& free_agents,
                                         const std::vector<char>& open,
                                         const StreetGraph& g) {
  std::vector<int> open_requests;
  for (std::size_t r = 0; r < s.outstanding.size(); ++r)
    if (open[r]) open_requests.push_back(static_cast<int>(r));
  std::vector<int> match(s.agent_count(), -1);
  if (free_agents.empty() || open_requests.empty()) return match;
  std::vector<std::vector<long long>> cost(free_agents.size());
  for (std::size_t f = 0; f < free_agents.size(); ++f)
    for (int r : open_requests)
      cost[f].push_back(
          g.distance(s.locations[free_agents[f]], s.outstanding[r].pickup));
  AssignmentResult res = min_cost_assignment(cost);
  for (std::size_t f = 0; f < free_agents.size(); ++f)
    if (res.row_to_col[f] >= 0)
      match[free_agents[f]] = open_requests[res.row_to_col[f]];
  return match;
}

inline Control realize_assignment(const SystemState& s, int agent, int request,
                                  const StreetGraph& g) {
  if (s.busy(agent))
    return move_to(g.next_hop(s.locations[agent], s.busy_targets[agent]));
  if (request < 0) return stay();
  NodeId target = s.outstanding[request].pickup;
  if (s.locations[agent] == target) return pickup();
  return move_to(g.next_hop(s.locations[agent], target));
}

}  // namespace detail

// Assigns free agents to outstanding requests by iterative greedy matching
// (or exact min-cost when `optimal`), recomputed from scratch every stage;
// assigned agents head for their pickup, everyone else stays.
inline std::vector<Control> instantaneous_assignment_control(const SystemState& s,
                                                             const StreetGraph& g,
                                                             bool optimal = false) {
  std::vector<int> free_agents;
  for (int l = 0; l < s.agent_count(); ++l)
    if (!s.busy(l)) free_agents.push_back(l);
  std::vector<char> open(s.outstanding.size(), 1);
  std::vector<int> match = optimal
                               ? detail::optimal_matching(s, free_agents, open, g)
                               : detail::ble_matching(s, free_agents, open, g);
  std::vector<Control> u;
  u.reserve(s.agent_count());
  for (int l = 0; l < s.agent_count(); ++l)
    u.push_back(detail::realize_assignment(s, l, match[l], g));
  return u;
}

// Per-agent wrapper. One joint plan is computed per queried state and
// cached, so all agents of a stage execute a single consistent assignment;
// a planned Pickup is downgraded if preceding deviations claimed the node.
class InstantAssignmentPolicy final : public Policy {
 public:
  explicit InstantAssignmentPolicy(const StreetGraph& g, bool optimal = false)
      : g_(g), optimal_(optimal) {}

  void begin_episode(std::uint64_t /*seed*/, int /*horizon*/) override {
    cached_for_ = SystemState{};
    plan_.clear();
  }

  Control control(const SystemState& s, int agent,
                  std::span<const Control> preceding) override {
    if (s.busy(agent))
      return move_to(g_.next_hop(s.locations[agent], s.busy_targets[agent]));
    if (plan_.empty() || !detail::same_state(s, cached_for_)) {
      plan_ = instantaneous_assignment_control(s, g_, optimal_);
      cached_for_ = s;
    }
    return detail::guard_pickup(plan_[agent], s, agent, preceding);
  }

 private:
  const StreetGraph& g_;
  bool optimal_;
  SystemState cached_for_;
  std::vector<Control> plan_;
};

struct TssConfig {
  int sample_sets = 1000;
  int exhaustive_limit = 6;  // largest "smaller side" enumerated exhaustively
  int restricted_candidates = 3;  // nearest requests per agent beyond that

  void validate() const {
    if (sample_sets < 1 || exhaustive_limit < 1 || restricted_candidates < 1)
      throw std::invalid_argument("two-stage config values must be positive");
  }
};

// Two-step stochastic assignment. Enumerates first-stage matchings of free
// agents to outstanding requests (exhaustively while min(agents, requests)
// stays within exhaustive_limit, otherwise over each agent's nearest
// requests), scoring each by its travel total plus the average over
// sampled next-minute request sets of the optimal second-stage matching
// cost of the agents it leaves unmatched. Prefers more matches, then the
// lower score, then enumeration order; realization mirrors instantaneous
// assignment. Deterministic given the seed.
inline std::vector<Control> tss_control(const SystemState& s, const StreetGraph& g,
                                        const DemandModel& dm, const TssConfig& cfg,
                                        std::uint64_t seed) {
  cfg.validate();
  std::vector<int> free_agents;
  for (int l = 0; l < s.agent_count(); ++l)
    if (!s.busy(l)) free_agents.push_back(l);
  const int agents = static_cast<int>(free_agents.size());
  const int requests = static_cast<int>(s.outstanding.size());

  std::vector<Control> u(s.agent_count());
  if (agents == 0 || requests == 0) {
    for (int l = 0; l < s.agent_count(); ++l)
      u[l] = detail::realize_assignment(s, l, -1, g);
    return u;
  }

  std::vector<std::vector<Request>> sampled(cfg.sample_sets);
  for (int t = 0; t < cfg.sample_sets; ++t) {
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(t)));
    sampled[t] = sample_minute(dm, rng, s.minute + 1);
  }

  // Second-stage cost depends only on which agents stay unmatched (they
  // hold their positions), so it caches by that subset.
  std::map<std::uint64_t, double> second_stage;
  auto second_cost = [&](std::uint64_t unmatched_mask) {
    auto it = second_stage.find(unmatched_mask);
    if (it != second_stage.end()) return it->second;
    std::vector<int> idle;
    for (int f = 0; f < agents; ++f)
      if (unmatched_mask & (1ull << f)) idle.push_back(free_agents[f]);
    double total = 0.0;
    if (!idle.empty()) {
      for (const std::vector<Request>& set : sampled) {
        if (set.empty()) continue;
        std::vector<std::vector<long long>> cost(idle.size());
        for (std::size_t f = 0; f < idle.size(); ++f)
          for (const Request& r : set)
            cost[f].push_back(g.distance(s.locations[idle[f]], r.pickup));
        total += static_cast<double>(min_cost_assignment(cost).total);
      }
    }
    double avg = total / static_cast<double>(cfg.sample_sets);
    second_stage.emplace(unmatched_mask, avg);
    return avg;
  };

  // Candidate request lists per free agent.
  std::vector<std::vector<int>> candidates(agents);
  const bool exhaustive = std::min(agents, requests) <= cfg.exhaustive_limit;
  for (int f = 0; f < agents; ++f) {
    std::vector<int> all(requests);
    for (int r = 0; r < requests; ++r) all[r] = r;
    if (!exhaustive) {
      std::stable_sort(all.begin(), all.end(), [&](int a, int b) {
        int da = g.distance(s.locations[free_agents[f]], s.outstanding[a].pickup);
        int db = g.distance(s.locations[free_agents[f]], s.outstanding[b].pickup);
        if (da != db) return da < db;
        if (s.outstanding[a].arrival_minute != s.outstanding[b].arrival_minute)
          return s.outstanding[a].arrival_minute < s.outstanding[b].arrival_minute;
        return a < b;
      });
      all.resize(std::min<std::size_t>(all.size(), cfg.restricted_candidates));
      std::sort(all.begin(), all.end());
    }
    candidates[f] = std::move(all);
  }

  std::vector<int> pick(agents, -1), best_pick;
  std::vector<char> used(requests, 0);
  int best_matched = -1;
  double best_score = 0.0;
  long long travel = 0;
  auto run = [&](auto&& self, int f, int matched) -> void {
    if (f == agents) {
      std::uint64_t unmatched_mask = 0;
      for (int i = 0; i < agents; ++i)
        if (pick[i] < 0) unmatched_mask |= 1ull << i;
      double score = static_cast<double>(travel) + second_cost(unmatched_mask);
      if (matched > best_matched ||
          (matched == best_matched && score < best_score)) {
        best_matched = matched;
        best_score = score;
        best_pick = pick;
      }
      return;
    }
    for (int r : candidates[f]) {
      if (used[r]) continue;
      used[r] = 1;
      pick[f] = r;
      long long d = g.distance(s.locations[free_agents[f]], s.outstanding[r].pickup);
      travel += d;
      self(self, f + 1, matched + 1);
      travel -= d;
      pick[f] = -1;
      used[r] = 0;
    }
    pick[f] = -1;  // leave agent f unmatched
    self(self, f + 1, matched);
  };
  run(run, 0, 0);

  std::vector<int> match(s.agent_count(), -1);
  for (int f = 0; f < agents; ++f) match[free_agents[f]] = best_pick[f];
  for (int l = 0; l < s.agent_count(); ++l)
    u[l] = detail::realize_assignment(s, l, match[l], g);
  return u;
}

// Per-agent wrapper; the joint plan is recomputed whenever the queried
// state differs from the one it was cached for, so sequential queries
// within a stage pay for one plan.
class TssPolicy final : public Policy {
 public:
  TssPolicy(const StreetGraph& g, const DemandModel& dm, TssConfig cfg)
      : g_(g), dm_(dm), cfg_(cfg) {
    cfg_.validate();
  }

  void begin_episode(std::uint64_t seed, int /*horizon*/) override {
    seed_ = seed;
    cached_for_ = SystemState{};
    plan_.clear();
  }

  Control control(const SystemState& s, int agent,
                  std::span<const Control> preceding) override {
    if (s.busy(agent))
      return move_to(g_.next_hop(s.locations[agent], s.busy_targets[agent]));
    if (plan_.empty() || !detail::same_state(s, cached_for_)) {
      plan_ = tss_control(s, g_, dm_, cfg_,
                          derive_seed(seed_, static_cast<std::uint64_t>(s.minute)));
      cached_for_ = s;
    }
    return detail::guard_pickup(plan_[agent], s, agent, preceding);
  }

 private:
  const StreetGraph& g_;
  const DemandModel& dm_;
  TssConfig cfg_;
  std::uint64_t seed_ = 0;
  SystemState cached_for_;
  std::vector<Control> plan_;
};

}  // namespace taxi
