#pragma once

#include <algorithm>
#include <fstream>
#include <istream>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace taxi {

using NodeId = int;

// Directed street topology with unit travel time (1 minute) per edge.
//
// Node ids are 0-based everywhere in memory; the edge-list file format is
// 1-based and the loader converts (this is the one place the convention is
// documented — every other file format follows the same rule). All-pairs
// shortest paths and first hops are precomputed at construction because the
// lookahead policies issue millions of distance queries per episode.
class StreetGraph {
 public:
  // Edges are 0-based ordered pairs, duplicates allowed (collapsed).
  // Throws std::invalid_argument on self-loops, out-of-range endpoints, or
  // a graph that is not strongly connected; the message names the first
  // unreachable pair in 1-based ids to match the file format.
  StreetGraph(int node_count, const std::vector<std::pair<NodeId, NodeId>>& edges)
      : n_(node_count) {
    if (n_ <= 0) throw std::invalid_argument("graph needs at least one node");
    adj_.assign(n_, {});
    std::set<std::pair<NodeId, NodeId>> seen;
    for (const auto& [a, b] : edges) {
      if (a < 0 || a >= n_ || b < 0 || b >= n_)
        throw std::invalid_argument("edge endpoint outside node range: " +
                                    std::to_string(a + 1) + " " + std::to_string(b + 1));
      if (a == b)
        throw std::invalid_argument("self-loop edge at node " + std::to_string(a + 1));
      if (seen.insert({a, b}).second) adj_[a].push_back(b);
    }
    for (auto& list : adj_) std::sort(list.begin(), list.end());

    const int kUnreached = -1;
    dist_.assign(static_cast<std::size_t>(n_) * n_, kUnreached);
    std::vector<NodeId> queue(n_);
    for (NodeId src = 0; src < n_; ++src) {
      int* d = &dist_[idx(src, 0)];
      d[src] = 0;
      int head = 0, tail = 0;
      queue[tail++] = src;
      while (head < tail) {
        NodeId v = queue[head++];
        for (NodeId w : adj_[v])
          if (d[w] == kUnreached) {
            d[w] = d[v] + 1;
            queue[tail++] = w;
          }
      }
      for (NodeId j = 0; j < n_; ++j)
        if (d[j] == kUnreached)
          throw std::invalid_argument(
              "not strongly connected: node " + std::to_string(j + 1) +
              " is unreachable from node " + std::to_string(src + 1));
    }

    // next_hop[i][j] = lowest-index neighbor of i that lies on a shortest
    // path to j. Neighbor lists are sorted, so the first hit wins.
    next_.assign(static_cast<std::size_t>(n_) * n_, -1);
    for (NodeId i = 0; i < n_; ++i)
      for (NodeId j = 0; j < n_; ++j) {
        if (i == j) continue;
        for (NodeId v : adj_[i])
          if (dist_[idx(v, j)] == dist_[idx(i, j)] - 1) {
            next_[idx(i, j)] = v;
            break;
          }
      }
  }

  int node_count() const { return n_; }

  const std::vector<NodeId>& neighbors(NodeId i) const {
    check_node(i);
    return adj_[i];
  }

  // Shortest-path travel time in minutes (hop count).
  int distance(NodeId i, NodeId j) const {
    check_node(i);
    check_node(j);
    return dist_[idx(i, j)];
  }

  // First node after i on a shortest path toward j; requires i != j.
  NodeId next_hop(NodeId i, NodeId j) const {
    check_node(i);
    check_node(j);
    if (i == j) throw std::invalid_argument("next_hop undefined for i == j");
    return next_[idx(i, j)];
  }

 private:
  void check_node(NodeId i) const {
    if (i < 0 || i >= n_)
      throw std::out_of_range("node index " + std::to_string(i) +
                              " outside 0.." + std::to_string(n_ - 1));
  }
  std::size_t idx(NodeId i, NodeId j) const {
    return static_cast<std::size_t>(i) * n_ + j;
  }

  int n_;
  std::vector<std::vector<NodeId>> adj_;
  std::vector<int> dist_;
  std::vector<NodeId> next_;
};

// Parses the edge-list text format: one "i j" pair per line, 1-based,
// whitespace-separated; '#' starts a comment; blank lines ignored. Node
// count is the largest index mentioned. Duplicate edges are collapsed with
// a warning appended to *warnings (when given).
inline StreetGraph load_graph(std::istream& in,
                              std::vector<std::string>* warnings = nullptr) {
  std::vector<std::pair<NodeId, NodeId>> edges;
  std::set<std::pair<NodeId, NodeId>> seen;
  int max_node = 0;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (auto pos = line.find('#'); pos != std::string::npos) line.resize(pos);
    std::istringstream ls(line);
    long a, b;
    if (!(ls >> a)) continue;  // blank or comment-only line
    std::string extra;
    if (!(ls >> b) || (ls >> extra))
      throw std::invalid_argument("edge list line " + std::to_string(line_no) +
                                  ": expected exactly two node indices");
    if (a < 1 || b < 1)
      throw std::invalid_argument("edge list line " + std::to_string(line_no) +
                                  ": node indices are 1-based positive integers");
    auto e = std::make_pair(static_cast<NodeId>(a - 1), static_cast<NodeId>(b - 1));
    if (!seen.insert(e).second) {
      if (warnings)
        warnings->push_back("duplicate edge " + std::to_string(a) + " " +
                            std::to_string(b) + " ignored");
      continue;
    }
    edges.push_back(e);
    max_node = std::max(max_node, static_cast<int>(std::max(a, b)));
  }
  if (edges.empty()) throw std::invalid_argument("edge list holds no edges");
  return StreetGraph(max_node, edges);
}

inline StreetGraph load_graph_file(const std::string& path,
                                   std::vector<std::string>* warnings = nullptr) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open graph file: " + path);
  return load_graph(in, warnings);
}

}  // namespace taxi
