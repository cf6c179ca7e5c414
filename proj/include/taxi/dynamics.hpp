#pragma once

#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "taxi/street_graph.hpp"

namespace taxi {

// A trip request. `assigned` is the paper's phi flag: it stays false while
// the request waits in the outstanding list and flips exactly once, at
// physical pickup (dispatch decisions by themselves never set it).
struct Request {
  NodeId pickup = -1;
  NodeId dropoff = -1;
  int arrival_minute = 0;
  bool assigned = false;

  bool operator==(const Request&) const = default;
};

struct Control {
  enum class Kind { Pickup, Move, Stay };
  Kind kind = Kind::Stay;
  NodeId target = -1;  // Move destination; -1 for Pickup/Stay

  bool operator==(const Control&) const = default;
};

inline Control stay() { return {Control::Kind::Stay, -1}; }
inline Control move_to(NodeId t) { return {Control::Kind::Move, t}; }
inline Control pickup() { return {Control::Kind::Pickup, -1}; }

inline std::string to_string(const Control& c) {
  switch (c.kind) {
    case Control::Kind::Pickup: return "Pickup";
    case Control::Kind::Move: return "Move(" + std::to_string(c.target + 1) + ")";
    default: return "Stay";
  }
}

// The DP state x_k = (nu, tau, r_bar). minute counts completed stages: a
// freshly constructed state is at minute 0, and the state after the stage-k
// arrivals (and after the stage-k controls) is at minute k. busy_targets
// carries the dropoff of the trip in progress so the forced next hop is
// computable; -1 marks a free agent.
struct SystemState {
  int minute = 0;
  std::vector<NodeId> locations;
  std::vector<int> timers;
  std::vector<NodeId> busy_targets;
  std::vector<Request> outstanding;

  int agent_count() const { return static_cast<int>(locations.size()); }
  bool busy(int agent) const { return timers[agent] > 0; }
};

inline SystemState make_initial_state(std::vector<NodeId> locations) {
  SystemState s;
  s.timers.assign(locations.size(), 0);
  s.busy_targets.assign(locations.size(), -1);
  s.locations = std::move(locations);
  return s;
}

// Structural invariants; throws std::logic_error on violation. Used by the
// fuzz suite after every step, not on the hot path.
inline void validate_state(const SystemState& s, const StreetGraph& g) {
  const std::size_t m = s.locations.size();
  if (s.timers.size() != m || s.busy_targets.size() != m)
    throw std::logic_error("state field lengths disagree");
  for (std::size_t l = 0; l < m; ++l) {
    if (s.timers[l] < 0) throw std::logic_error("negative timer");
    if ((s.timers[l] == 0) != (s.busy_targets[l] == -1))
      throw std::logic_error("timer/busy_target mismatch");
    if (s.timers[l] > 0 &&
        g.distance(s.locations[l], s.busy_targets[l]) != s.timers[l])
      throw std::logic_error("busy agent timer disagrees with trip distance");
  }
  for (const Request& r : s.outstanding) {
    if (r.assigned) throw std::logic_error("assigned request in outstanding list");
    if (r.pickup == r.dropoff) throw std::logic_error("zero-length request");
  }
}

// Per-agent control set U_k^l(x_k), returned in the deterministic
// tie-break order used by every argmin in the engine: Pickup first (when a
// request waits at the agent's node), then Moves by ascending target, then
// Stay. Busy agents get the singleton forced move toward their dropoff.
inline std::vector<Control> control_set(const SystemState& s, int agent,
                                        const StreetGraph& g) {
  if (s.busy(agent))
    return {move_to(g.next_hop(s.locations[agent], s.busy_targets[agent]))};
  std::vector<Control> out;
  for (const Request& r : s.outstanding)
    if (r.pickup == s.locations[agent]) {
      out.push_back(pickup());
      break;
    }
  for (NodeId v : g.neighbors(s.locations[agent])) out.push_back(move_to(v));
  out.push_back(stay());
  return out;
}

namespace detail {

[[noreturn]] inline void infeasible(const SystemState& s, int agent,
                                    const std::string& why) {
  throw std::runtime_error("infeasible control for agent " +
                           std::to_string(agent + 1) + " at minute " +
                           std::to_string(s.minute) + ": " + why);
}

// Matches Pickup controls to outstanding requests: requests at a node are
// consumed in arrival (list) order, one per Pickup. Returns the consumed
// indices into s.outstanding; throws when a Pickup has no request left.
inline std::vector<int> match_pickups(const SystemState& s,
                                      std::span<const Control> controls) {
  if (static_cast<int>(controls.size()) != s.agent_count())
    throw std::runtime_error("joint control size does not match agent count");
  std::vector<int> taken;
  std::vector<char> used(s.outstanding.size(), 0);
  for (int l = 0; l < s.agent_count(); ++l) {
    if (controls[l].kind != Control::Kind::Pickup) continue;
    if (s.busy(l)) infeasible(s, l, "busy agent cannot pick up");
    bool found = false;
    for (std::size_t i = 0; i < s.outstanding.size(); ++i)
      if (!used[i] && s.outstanding[i].pickup == s.locations[l]) {
        used[i] = 1;
        taken.push_back(static_cast<int>(i));
        found = true;
        break;
      }
    if (!found) infeasible(s, l, "Pickup with no outstanding request at node " +
                                     std::to_string(s.locations[l] + 1));
  }
  return taken;
}

}  // namespace detail

// psi(x_k, u_k): how many outstanding requests the joint control services.
inline int count_serviced(const SystemState& s, std::span<const Control> controls) {
  return static_cast<int>(detail::match_pickups(s, controls).size());
}

struct PickupEvent {
  int minute = 0;  // stage at which the pickup happened
  int agent = 0;
  Request request;
};

struct ApplyResult {
  SystemState state;
  int serviced = 0;
  std::vector<PickupEvent> pickups;
};

// First half of the stage transition: executes the joint control. Pickup
// keeps the agent at the pickup node for this stage and starts a trip of
// tau = dist(pickup, dropoff); busy agents advance one forced hop. The
// minute field is not touched — arrivals own the increment.
inline ApplyResult apply_controls(const SystemState& s,
                                  std::span<const Control> controls,
                                  const StreetGraph& g) {
  std::vector<int> taken = detail::match_pickups(s, controls);
  ApplyResult out{s, static_cast<int>(taken.size()), {}};
  SystemState& n = out.state;

  std::size_t next_taken = 0;
  for (int l = 0; l < s.agent_count(); ++l) {
    const Control& c = controls[l];
    if (s.busy(l)) {
      Control forced = move_to(g.next_hop(s.locations[l], s.busy_targets[l]));
      if (c != forced)
        detail::infeasible(s, l, "busy agent must play " + to_string(forced) +
                                     ", got " + to_string(c));
      n.locations[l] = forced.target;
      if (--n.timers[l] == 0) n.busy_targets[l] = -1;
      continue;
    }
    switch (c.kind) {
      case Control::Kind::Stay:
        break;
      case Control::Kind::Move: {
        const auto& nbrs = g.neighbors(s.locations[l]);
        if (std::find(nbrs.begin(), nbrs.end(), c.target) == nbrs.end())
          detail::infeasible(s, l, "Move target " + std::to_string(c.target + 1) +
                                       " is not a neighbor of node " +
                                       std::to_string(s.locations[l] + 1));
        n.locations[l] = c.target;
        break;
      }
      case Control::Kind::Pickup: {
        // match_pickups walked agents in the same order, so the next taken
        // index belongs to this agent.
        const Request& r = s.outstanding[taken[next_taken++]];
        n.timers[l] = g.distance(r.pickup, r.dropoff);
        n.busy_targets[l] = r.dropoff;
        Request served = r;
        served.assigned = true;
        out.pickups.push_back({s.minute, l, served});
        break;
      }
    }
  }

  if (!taken.empty()) {
    std::vector<char> drop(s.outstanding.size(), 0);
    for (int i : taken) drop[i] = 1;
    n.outstanding.clear();
    for (std::size_t i = 0; i < s.outstanding.size(); ++i)
      if (!drop[i]) n.outstanding.push_back(s.outstanding[i]);
  }
  return out;
}

// Second half of the stage transition: appends the next minute's arrivals
// and advances the clock. Every request must carry arrival_minute equal to
// the new minute.
inline SystemState add_arrivals(const SystemState& s, std::span<const Request> arrivals) {
  SystemState n = s;
  n.minute = s.minute + 1;
  for (const Request& r : arrivals) {
    if (r.arrival_minute != n.minute)
      throw std::runtime_error("request list with wrong minute: got " +
                               std::to_string(r.arrival_minute) + ", expected " +
                               std::to_string(n.minute));
    if (r.pickup == r.dropoff)
      throw std::runtime_error("request with identical pickup and dropoff");
    n.outstanding.push_back(r);
  }
  return n;
}

// x_{k+1} = f_k(x_k, u_k, arrivals): controls apply first, then the next
// minute's requests join the outstanding list. The episode driver charges
// the stage cost between the two halves (after controls, before the next
// arrivals), which is what makes |r_bar_1| = |r_1| under the convention
// that the stage-1 policy already sees the stage-1 arrivals.
inline SystemState transition(const SystemState& s, std::span<const Control> controls,
                              std::span<const Request> new_requests,
                              const StreetGraph& g) {
  return add_arrivals(apply_controls(s, controls, g).state, new_requests);
}

// Stage cost g_k: the number of requests still outstanding after the stage-k
// controls. Episode cost is the sum of these over k = 1..N.
inline int stage_cost(const SystemState& s_after) {
  return static_cast<int>(s_after.outstanding.size());
}

}  // namespace taxi
