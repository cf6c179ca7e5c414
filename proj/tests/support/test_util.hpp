#pragma once

// Shared fixtures for the test suite: small graph builders and helpers that
// are deliberately independent of the production shortest-path code.

#include <utility>
#include <vector>

#include "taxi/demand.hpp"
#include "taxi/street_graph.hpp"

namespace taxi::testutil {

// Demand model with the given per-minute count distribution and uniform
// pickup/dropoff over all nodes.
inline DemandModel uniform_demand(int nodes, std::vector<int> eta_support,
                                  std::vector<double> eta_probs) {
  DemandModel dm;
  dm.eta.support = std::move(eta_support);
  dm.eta.probs = std::move(eta_probs);
  for (int v = 0; v < nodes; ++v) {
    dm.pickup.support.push_back(v);
    dm.pickup.probs.push_back(1.0 / nodes);
    dm.dropoff.support.push_back(v);
    dm.dropoff.probs.push_back(1.0 / nodes);
  }
  dm.label = "test";
  return dm;
}

using Edge = std::pair<NodeId, NodeId>;

// Bidirectional line 0-1-2-...-(n-1).
inline std::vector<Edge> line_edges(int n) {
  std::vector<Edge> e;
  for (int i = 0; i + 1 < n; ++i) {
    e.push_back({i, i + 1});
    e.push_back({i + 1, i});
  }
  return e;
}

// Directed cycle 0 -> 1 -> ... -> n-1 -> 0.
inline std::vector<Edge> cycle_edges(int n) {
  std::vector<Edge> e;
  for (int i = 0; i < n; ++i) e.push_back({i, (i + 1) % n});
  return e;
}

// Four-neighbor bidirectional grid, row-major node order.
inline std::vector<Edge> grid_edges(int width, int height) {
  std::vector<Edge> e;
  auto id = [width](int r, int c) { return r * width + c; };
  for (int r = 0; r < height; ++r)
    for (int c = 0; c < width; ++c) {
      if (c + 1 < width) {
        e.push_back({id(r, c), id(r, c + 1)});
        e.push_back({id(r, c + 1), id(r, c)});
      }
      if (r + 1 < height) {
        e.push_back({id(r, c), id(r + 1, c)});
        e.push_back({id(r + 1, c), id(r, c)});
      }
    }
  return e;
}

inline StreetGraph line_graph(int n) { return StreetGraph(n, line_edges(n)); }
inline StreetGraph cycle_graph(int n) { return StreetGraph(n, cycle_edges(n)); }
inline StreetGraph grid_graph(int w, int h) { return StreetGraph(w * h, grid_edges(w, h)); }

// Plain queue-based BFS used as the shortest-path oracle. Returns -1 for
// unreachable nodes.
inline std::vector<int> bfs_distances(int n, const std::vector<Edge>& edges, NodeId src) {
  std::vector<std::vector<NodeId>> adj(n);
  for (const auto& [a, b] : edges) adj[a].push_back(b);
  std::vector<int> dist(n, -1);
  std::vector<NodeId> queue;
  dist[src] = 0;
  queue.push_back(src);
  for (std::size_t head = 0; head < queue.size(); ++head) {
    NodeId v = queue[head];
    for (NodeId w : adj[v])
      if (dist[w] == -1) {
        dist[w] = dist[v] + 1;
        queue.push_back(w);
      }
  }
  return dist;
}

}  // namespace taxi::testutil
