#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "taxi/dynamics.hpp"
#include "taxi/street_graph.hpp"

namespace taxi {

// Decision interface. Within a stage, agents are queried in fixed index
// order 0..m-1; `preceding` holds the controls already chosen for agents
// 0..agent-1 this stage (so preceding.size() == agent). The driver calls
// begin_episode once before stage 1 with the episode's policy seed and the
// horizon N.
class Policy {
 public:
  virtual ~Policy() = default;
  virtual void begin_episode(std::uint64_t /*seed*/, int /*horizon*/) {}
  virtual Control control(const SystemState& s, int agent,
                          std::span<const Control> preceding) = 0;
};

// One state in a batched query; `prefix` holds that state's controls
// already fixed for agents 0..agent-1 this stage.
struct StageQuery {
  const SystemState* state;
  std::span<const Control> prefix;
};

// Optional capability: answer many control queries for the same agent
// index at once. The rollout lookahead probes for it with dynamic_cast
// and, when found, advances all sampled trajectories in lockstep so
// network forward passes amortize into a few matrix products per step.
// Must agree with Policy::control query by query.
class BatchPolicy {
 public:
  virtual ~BatchPolicy() = default;
  virtual void control_batch(int agent, std::span<const StageQuery> queries,
                             std::span<Control> out) = 0;
};

// Greedy base policy: head for the nearest outstanding request. Ties
// resolve by earliest arrival, then lowest pickup node index; an agent
// standing on a request's node picks it up; with no requests at all the
// agent stays put. Routing ignores other agents entirely, but requests
// already claimed by a preceding agent's Pickup this stage are off the
// table — otherwise two colocated agents would both grab one request and
// the joint control would be infeasible.
inline Control greedy_control(const SystemState& s, int agent, const StreetGraph& g,
                              std::span<const Control> preceding = {}) {
  if (s.busy(agent))
    return move_to(g.next_hop(s.locations[agent], s.busy_targets[agent]));
  if (s.outstanding.empty()) return stay();

  // Mark requests consumed by preceding Pickups, oldest-first per node,
  // mirroring the matching the transition will perform.
  std::vector<char> claimed(s.outstanding.size(), 0);
  for (std::size_t j = 0; j < preceding.size(); ++j) {
    if (preceding[j].kind != Control::Kind::Pickup) continue;
    for (std::size_t i = 0; i < s.outstanding.size(); ++i)
      if (!claimed[i] && s.outstanding[i].pickup == s.locations[j]) {
        claimed[i] = 1;
        break;
      }
  }

  const Request* best = nullptr;
  int best_dist = 0;
  for (std::size_t i = 0; i < s.outstanding.size(); ++i) {
    if (claimed[i]) continue;
    const Request& r = s.outstanding[i];
    int d = g.distance(s.locations[agent], r.pickup);
    if (!best || d < best_dist ||
        (d == best_dist && (r.arrival_minute < best->arrival_minute ||
                            (r.arrival_minute == best->arrival_minute &&
                             r.pickup < best->pickup)))) {
      best = &r;
      best_dist = d;
    }
  }
  if (!best) return stay();
  if (best_dist == 0) return pickup();
  return move_to(g.next_hop(s.locations[agent], best->pickup));
}

class GreedyPolicy final : public Policy {
 public:
  explicit GreedyPolicy(const StreetGraph& g) : g_(g) {}
  Control control(const SystemState& s, int agent,
                  std::span<const Control> preceding) override {
    return greedy_control(s, agent, g_, preceding);
  }

 private:
  const StreetGraph& g_;
};

// Queries the policy agent by agent, feeding chosen controls forward.
inline std::vector<Control> joint_control(Policy& policy, const SystemState& s) {
  std::vector<Control> u;
  u.reserve(s.agent_count());
  for (int l = 0; l < s.agent_count(); ++l)
    u.push_back(policy.control(s, l, u));
  return u;
}

}  // namespace taxi
