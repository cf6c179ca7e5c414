#pragma once

// Exact transportation-problem oracle for the scalar optimal-transport
// tests. Solves min-cost flow on the bipartite atom graph with integer
// masses via successive shortest paths, sharing no reasoning with the
// production cumulative-distribution formula. Sized for test instances
// (tens of atoms, masses up to a few million).

#include <climits>
#include <cstdlib>
#include <stdexcept>
#include <vector>

namespace taxi::testutil {

class MinCostFlow {
 public:
  explicit MinCostFlow(int nodes) : adj_(nodes) {}

  void add_edge(int from, int to, long long cap, long long cost) {
    adj_[from].push_back({to, cap, cost, static_cast<int>(adj_[to].size())});
    adj_[to].push_back({from, 0, -cost, static_cast<int>(adj_[from].size()) - 1});
  }

  // Total cost of a maximum flow from s to t. Bellman-Ford shortest paths
  // tolerate the negative residual costs.
  long long max_flow_min_cost(int s, int t) {
    long long total = 0;
    const long long kInf = LLONG_MAX;
    for (;;) {
      std::vector<long long> dist(adj_.size(), kInf);
      std::vector<int> prev_node(adj_.size(), -1), prev_edge(adj_.size(), -1);
      dist[s] = 0;
      bool changed = true;
      while (changed) {
        changed = false;
        for (int v = 0; v < static_cast<int>(adj_.size()); ++v) {
          if (dist[v] == kInf) continue;
          for (int i = 0; i < static_cast<int>(adj_[v].size()); ++i) {
            const Edge& e = adj_[v][i];
            if (e.cap > 0 && dist[v] + e.cost < dist[e.to]) {
              dist[e.to] = dist[v] + e.cost;
              prev_node[e.to] = v;
              prev_edge[e.to] = i;
              changed = true;
            }
          }
        }
      }
      if (dist[t] == kInf) break;
      long long push = kInf;
      for (int v = t; v != s; v = prev_node[v])
        push = std::min(push, adj_[prev_node[v]][prev_edge[v]].cap);
      for (int v = t; v != s; v = prev_node[v]) {
        Edge& e = adj_[prev_node[v]][prev_edge[v]];
        e.cap -= push;
        adj_[v][e.rev].cap += push;
      }
      total += push * dist[t];
    }
    return total;
  }

 private:
  struct Edge {
    int to;
    long long cap;
    long long cost;
    int rev;
  };
  std::vector<std::vector<Edge>> adj_;
};

// Minimum cost of moving the integer masses on atoms_p onto atoms_r, with
// |a - b| unit cost. Both mass vectors must total the same amount; divide
// the result by that total to get the distance between the normalized
// distributions.
inline long long transport_cost(const std::vector<int>& atoms_p,
                                const std::vector<long long>& mass_p,
                                const std::vector<int>& atoms_r,
                                const std::vector<long long>& mass_r) {
  if (atoms_p.size() != mass_p.size() || atoms_r.size() != mass_r.size())
    throw std::invalid_argument("atom/mass length mismatch");
  long long total_p = 0, total_r = 0;
  for (long long m : mass_p) total_p += m;
  for (long long m : mass_r) total_r += m;
  if (total_p != total_r) throw std::invalid_argument("mass totals differ");

  const int np = static_cast<int>(atoms_p.size());
  const int nr = static_cast<int>(atoms_r.size());
  MinCostFlow flow(np + nr + 2);
  const int source = np + nr, sink = np + nr + 1;
  for (int i = 0; i < np; ++i) flow.add_edge(source, i, mass_p[i], 0);
  for (int j = 0; j < nr; ++j) flow.add_edge(np + j, sink, mass_r[j], 0);
  for (int i = 0; i < np; ++i)
    for (int j = 0; j < nr; ++j)
      flow.add_edge(i, np + j, total_p,
                    std::llabs(static_cast<long long>(atoms_p[i]) - atoms_r[j]));
  return flow.max_flow_min_cost(source, sink);
}

}  // namespace taxi::testutil
