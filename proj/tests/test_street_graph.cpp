#include "taxi/street_graph.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <set>
#include <sstream>

#include "support/test_util.hpp"
#include "taxi/rng.hpp"

namespace taxi {
namespace {

using testutil::Edge;

TEST(StreetGraph, TwoNodeCycleDistances) {
  StreetGraph g(2, {{0, 1}, {1, 0}});
  EXPECT_EQ(g.distance(0, 1), 1);
  EXPECT_EQ(g.distance(1, 0), 1);
  EXPECT_EQ(g.distance(0, 0), 0);
}

TEST(StreetGraph, DirectedThreeCycle) {
  // 1 -> 2 -> 3 -> 1 in file ids; frozen BFS-by-hand values.
  StreetGraph g = testutil::cycle_graph(3);
  EXPECT_EQ(g.distance(0, 2), 2);
  EXPECT_EQ(g.next_hop(0, 2), 1);
  EXPECT_EQ(g.distance(2, 1), 2);
}

TEST(StreetGraph, FourNodeBidirectionalPath) {
  StreetGraph g = testutil::line_graph(4);
  EXPECT_EQ(g.distance(0, 3), 3);
  EXPECT_EQ(g.distance(3, 0), 3);
  EXPECT_EQ(g.next_hop(0, 3), 1);
}

TEST(StreetGraph, SameNodeDistanceZero) {
  StreetGraph g = testutil::grid_graph(3, 2);
  EXPECT_EQ(g.distance(4, 4), 0);
}

TEST(StreetGraph, RejectsNotStronglyConnected) {
  try {
    StreetGraph g(2, {{0, 1}});
    FAIL() << "expected rejection";
  } catch (const std::invalid_argument& err) {
    EXPECT_NE(std::string(err.what()).find("not strongly connected"), std::string::npos);
    // Offending pair in 1-based ids: node 1 unreachable from node 2.
    EXPECT_NE(std::string(err.what()).find("node 1"), std::string::npos);
    EXPECT_NE(std::string(err.what()).find("node 2"), std::string::npos);
  }
}

TEST(StreetGraph, RejectsSelfLoop) {
  EXPECT_THROW(StreetGraph(2, {{0, 1}, {1, 0}, {1, 1}}), std::invalid_argument);
}

TEST(StreetGraph, RejectsOutOfRangeQueries) {
  StreetGraph g = testutil::line_graph(3);
  EXPECT_THROW(g.distance(0, 3), std::out_of_range);
  EXPECT_THROW(g.distance(-1, 0), std::out_of_range);
  EXPECT_THROW(g.neighbors(5), std::out_of_range);
}

TEST(StreetGraph, NextHopUndefinedOnDiagonal) {
  StreetGraph g = testutil::line_graph(3);
  EXPECT_THROW(g.next_hop(1, 1), std::invalid_argument);
}

TEST(StreetGraph, NextHopPrefersLowestIndexNeighbor) {
  // Square 0-1-3-2-0, all bidirectional: two shortest paths 0->3; the tie
  // must resolve through neighbor 1, not 2.
  StreetGraph g(4, {{0, 1}, {1, 0}, {1, 3}, {3, 1}, {0, 2}, {2, 0}, {2, 3}, {3, 2}});
  EXPECT_EQ(g.distance(0, 3), 2);
  EXPECT_EQ(g.next_hop(0, 3), 1);
}

TEST(StreetGraphLoader, ParsesOneBasedEdgeListWithComments) {
  std::istringstream in(
      "# sample map\n"
      "1 2\n"
      "2 1  # back edge\n"
      "\n"
      "2 3\n"
      "3 1\n");
  StreetGraph g = load_graph(in);
  EXPECT_EQ(g.node_count(), 3);
  EXPECT_EQ(g.distance(0, 2), 2);  // 1 -> 2 -> 3 in file ids
  EXPECT_EQ(g.distance(2, 0), 1);
}

TEST(StreetGraphLoader, WarnsAndDedupesDuplicateEdges) {
  std::istringstream in("1 2\n2 1\n1 2\n");
  std::vector<std::string> warnings;
  StreetGraph g = load_graph(in, &warnings);
  ASSERT_EQ(warnings.size(), 1u);
  EXPECT_NE(warnings[0].find("duplicate edge 1 2"), std::string::npos);
  EXPECT_EQ(g.neighbors(0).size(), 1u);
}

TEST(StreetGraphLoader, RejectsMalformedLines) {
  std::istringstream one_token("1\n");
  EXPECT_THROW(load_graph(one_token), std::invalid_argument);
  std::istringstream three_tokens("1 2 3\n");
  EXPECT_THROW(load_graph(three_tokens), std::invalid_argument);
  std::istringstream zero_based("0 1\n");
  EXPECT_THROW(load_graph(zero_based), std::invalid_argument);
  std::istringstream empty("# nothing\n");
  EXPECT_THROW(load_graph(empty), std::invalid_argument);
}

// Random strongly connected digraph: a permutation cycle over all nodes plus
// extra random edges.
std::vector<Edge> random_strongly_connected(int n, int extra, Rng& rng) {
  std::vector<NodeId> perm(n);
  for (int i = 0; i < n; ++i) perm[i] = i;
  for (int i = n - 1; i > 0; --i)
    std::swap(perm[i], perm[rng.next_below(i + 1)]);
  std::set<Edge> edges;
  for (int i = 0; i < n; ++i) edges.insert({perm[i], perm[(i + 1) % n]});
  int target = std::min(n + extra, n * (n - 1));
  while (static_cast<int>(edges.size()) < target) {
    NodeId a = static_cast<NodeId>(rng.next_below(n));
    NodeId b = static_cast<NodeId>(rng.next_below(n));
    if (a != b) edges.insert({a, b});
  }
  return {edges.begin(), edges.end()};
}

TEST(StreetGraphProperties, MatchesBfsOracleOnRandomGraphs) {
  Rng rng(20260814);
  for (int trial = 0; trial < 40; ++trial) {
    int n = 2 + static_cast<int>(rng.next_below(49));
    auto edges = random_strongly_connected(n, static_cast<int>(rng.next_below(3 * n)), rng);
    StreetGraph g(n, edges);
    for (NodeId src = 0; src < n; ++src) {
      auto oracle = testutil::bfs_distances(n, edges, src);
      for (NodeId dst = 0; dst < n; ++dst)
        ASSERT_EQ(g.distance(src, dst), oracle[dst])
            << "trial " << trial << " pair " << src << "," << dst;
    }
  }
}

TEST(StreetGraphProperties, NextHopWalkReachesInExactlyDistSteps) {
  Rng rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    int n = 2 + static_cast<int>(rng.next_below(30));
    StreetGraph g(n, random_strongly_connected(n, static_cast<int>(rng.next_below(2 * n)), rng));
    for (NodeId i = 0; i < n; ++i)
      for (NodeId j = 0; j < n; ++j) {
        if (i == j) continue;
        NodeId at = i;
        int steps = 0;
        while (at != j) {
          NodeId nxt = g.next_hop(at, j);
          ASSERT_EQ(g.distance(nxt, j), g.distance(at, j) - 1);
          at = nxt;
          ++steps;
          ASSERT_LE(steps, n);
        }
        ASSERT_EQ(steps, g.distance(i, j));
      }
  }
}

TEST(StreetGraphProperties, TriangleInequality) {
  Rng rng(99);
  StreetGraph g(12, random_strongly_connected(12, 20, rng));
  for (NodeId i = 0; i < 12; ++i)
    for (NodeId j = 0; j < 12; ++j)
      for (NodeId k = 0; k < 12; ++k)
        ASSERT_LE(g.distance(i, k), g.distance(i, j) + g.distance(j, k));
}

}  // namespace
}  // namespace taxi
