#pragma once

// Full-knowledge lower bound: given the complete realized request sequence,
// branch-and-bound over per-vehicle service orders finds the minimum total
// waiting time any causal policy could have achieved on that realization.

#include <algorithm>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "taxi/dynamics.hpp"
#include "taxi/street_graph.hpp"

namespace taxi {

struct OracleResult {
  long long cost = 0;
  bool exact = true;  // false when the node budget ran out first
  long long nodes_expanded = 0;
};

namespace detail {

struct OracleVehicle {
  int free_stage;  // earliest stage at which it can act on a new request
  NodeId position;
};

struct OracleSearch {
  const StreetGraph* g;
  std::vector<Request> requests;
  int horizon;
  long long budget;
  long long best = 0;
  long long nodes = 0;
  bool exact = true;

  // Pickup stage when `v` heads straight for request `r` next: travel plus
  // waiting for the arrival if it gets there early.
  int earliest_pickup(const OracleVehicle& v, const Request& r) const {
    int reach = v.free_stage + g->distance(v.position, r.pickup);
    return std::max(reach, r.arrival_minute);
  }

  long long unserved_cost(const Request& r) const {
    return static_cast<long long>(horizon) + 1 - r.arrival_minute;
  }

  // Admissible: each pending request is served no earlier than the best
  // open vehicle could reach it right now, or never.
  long long lower_bound(std::uint64_t served, const std::vector<OracleVehicle>& vehicles,
                        std::size_t open_from) const {
    long long bound = 0;
    for (std::size_t r = 0; r < requests.size(); ++r) {
      if (served & (1ull << r)) continue;
      long long waited = unserved_cost(requests[r]);
      for (std::size_t v = open_from; v < vehicles.size(); ++v) {
        int p = earliest_pickup(vehicles[v], requests[r]);
        if (p <= horizon)
          waited = std::min(waited,
                            static_cast<long long>(p - requests[r].arrival_minute));
      }
      bound += waited;
    }
    return bound;
  }

  // Vehicles commit in index order: vehicle `v` either closes (takes no
  // further requests) or appends one pending request to its route.
  void dfs(std::size_t v, std::vector<OracleVehicle>& vehicles, std::uint64_t served,
           long long accrued) {
    if (++nodes > budget) {
      exact = false;
      return;
    }
    if (accrued + lower_bound(served, vehicles, v) >= best) return;
    if (v == vehicles.size()) {
      long long total = accrued;
      for (std::size_t r = 0; r < requests.size(); ++r)
        if (!(served & (1ull << r))) total += unserved_cost(requests[r]);
      best = std::min(best, total);
      return;
    }

    // Serve next the requests this vehicle can still reach, nearest first;
    // good routes early tighten the incumbent for the rest of the search.
    std::vector<std::pair<int, std::size_t>> options;
    for (std::size_t r = 0; r < requests.size(); ++r) {
      if (served & (1ull << r)) continue;
      int p = earliest_pickup(vehicles[v], requests[r]);
      if (p <= horizon) options.push_back({p, r});
    }
    std::sort(options.begin(), options.end());
    for (const auto& [p, r] : options) {
      OracleVehicle saved = vehicles[v];
      vehicles[v].free_stage =
          p + g->distance(requests[r].pickup, requests[r].dropoff) + 1;
      vehicles[v].position = requests[r].dropoff;
      dfs(v, vehicles, served | (1ull << r),
          accrued + (p - requests[r].arrival_minute));
      vehicles[v] = saved;
      if (!exact) return;
    }
    dfs(v + 1, vehicles, served, accrued);
  }

  // Cheap feasible schedule: repeatedly commit the (vehicle, request) pair
  // with the earliest pickup. Seeds the incumbent.
  long long greedy_schedule(std::vector<OracleVehicle> vehicles) const {
    std::uint64_t served = 0;
    long long total = 0;
    for (;;) {
      int best_p = horizon + 1;
      std::size_t best_v = 0, best_r = 0;
      bool found = false;
      for (std::size_t v = 0; v < vehicles.size(); ++v)
        for (std::size_t r = 0; r < requests.size(); ++r) {
          if (served & (1ull << r)) continue;
          int p = earliest_pickup(vehicles[v], requests[r]);
          if (p <= horizon && p < best_p) {
            best_p = p;
            best_v = v;
            best_r = r;
            found = true;
          }
        }
      if (!found) break;
      total += best_p - requests[best_r].arrival_minute;
      vehicles[best_v].free_stage =
          best_p + g->distance(requests[best_r].pickup, requests[best_r].dropoff) + 1;
      vehicles[best_v].position = requests[best_r].dropoff;
      served |= 1ull << best_r;
    }
    for (std::size_t r = 0; r < requests.size(); ++r)
      if (!(served & (1ull << r))) total += unserved_cost(requests[r]);
    return total;
  }
};

}  // namespace detail

// Minimum total wait achievable on the given realization: the initial
// outstanding requests plus every scripted arrival, served by vehicles
// that may pre-position before arrivals. Exact unless the node budget runs
// out, in which case the best schedule found so far is returned (still an
// achievable cost, hence an upper bound on the true optimum) with `exact`
// cleared.
inline OracleResult oracle_cost(const SystemState& initial,
                                const std::vector<Request>& script,
                                const StreetGraph& g, int horizon,
                                long long node_budget = 50'000'000) {
  if (horizon < 1) throw std::invalid_argument("horizon must be >= 1");
  if (node_budget < 1) throw std::invalid_argument("node budget must be >= 1");

  detail::OracleSearch search;
  search.g = &g;
  search.horizon = horizon;
  search.budget = node_budget;
  for (Request r : initial.outstanding) {
    // Waiting is only accounted within the episode's stages, matching the
    // simulator's cost; pre-episode waiting of carried-over requests is
    // sunk. Pickup timing is unaffected (no vehicle acts earlier anyway).
    r.arrival_minute = std::max(r.arrival_minute, initial.minute + 1);
    search.requests.push_back(r);
  }
  for (const Request& r : script) {
    if (r.arrival_minute <= initial.minute || r.arrival_minute > horizon)
      throw std::invalid_argument("scripted request outside stages " +
                                  std::to_string(initial.minute + 1) + ".." +
                                  std::to_string(horizon));
    search.requests.push_back(r);
  }
  if (search.requests.size() > 62)
    throw std::invalid_argument("oracle supports at most 62 requests");

  std::vector<detail::OracleVehicle> vehicles;
  for (int l = 0; l < initial.agent_count(); ++l) {
    detail::OracleVehicle v;
    v.free_stage = initial.minute + 1 + initial.timers[l];
    v.position = initial.busy(l) ? initial.busy_targets[l] : initial.locations[l];
    vehicles.push_back(v);
  }
  if (vehicles.empty()) throw std::invalid_argument("no vehicles");

  search.best = search.greedy_schedule(vehicles);
  search.dfs(0, vehicles, 0, 0);
  return {search.best, search.exact, search.nodes};
}

}  // namespace taxi
