#include "taxi/gnn.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <sstream>
#include <vector>

#include "support/test_util.hpp"
#include "taxi/dynamics.hpp"
#include "taxi/features.hpp"
#include "taxi/rng.hpp"

using namespace taxi;
using namespace taxi::testutil;

namespace {

// Random but realistic sample: encoded from a random state, labeled with an
// arbitrary feasible control.
TrainingSample random_sample(Rng& rng, const StreetGraph& g, int m,
                             bool force_move = false) {
  const int n = g.node_count();
  std::vector<NodeId> locs;
  for (int j = 0; j < m; ++j)
    locs.push_back(static_cast<NodeId>(rng.next_below(static_cast<std::uint64_t>(n))));
  SystemState s = make_initial_state(locs);
  s.minute = 1;
  int requests = static_cast<int>(rng.next_below(4));
  for (int r = 0; r < requests; ++r) {
    int p = static_cast<int>(rng.next_below(static_cast<std::uint64_t>(n)));
    int d = static_cast<int>(rng.next_below(static_cast<std::uint64_t>(n - 1)));
    if (d >= p) ++d;
    s.outstanding.push_back({p, d, 1, false});
  }
  int agent = static_cast<int>(rng.next_below(static_cast<std::uint64_t>(m)));
  std::vector<Control> others;
  for (int j = 0; j < agent; ++j) {
    const auto& nb = g.neighbors(s.locations[j]);
    others.push_back(move_to(nb[rng.next_below(nb.size())]));
  }

  TrainingSample sample;
  sample.features = encode(s, agent, others, g);
  sample.agent = agent;
  sample.agent_node = s.locations[agent];
  sample.feasible_moves = feasible_move_targets(g, sample.agent_node);
  bool colocated = false;
  for (const Request& r : s.outstanding) colocated |= r.pickup == sample.agent_node;
  if (!force_move && colocated && rng.next_double() < 0.5) {
    sample.pickup = true;
    sample.move_target = -1;
  } else {
    sample.pickup = false;
    sample.move_target =
        sample.feasible_moves[rng.next_below(sample.feasible_moves.size())];
  }
  return sample;
}

double relative_error(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-3});
}

}  // namespace

TEST(NormalizedAdjacency, HandValuesOnThreeNodePath) {
  StreetGraph g = line_graph(3);  // degrees with self-loop: 2, 3, 2
  SparseAdjacency a = normalized_adjacency(g);
  Eigen::MatrixXd dense = Eigen::MatrixXd(a);
  EXPECT_NEAR(dense(0, 0), 0.5, 1e-12);
  EXPECT_NEAR(dense(0, 1), 1.0 / std::sqrt(6.0), 1e-12);
  EXPECT_NEAR(dense(1, 0), 1.0 / std::sqrt(6.0), 1e-12);
  EXPECT_NEAR(dense(1, 1), 1.0 / 3.0, 1e-12);
  EXPECT_NEAR(dense(1, 2), 1.0 / std::sqrt(6.0), 1e-12);
  EXPECT_NEAR(dense(2, 2), 0.5, 1e-12);
  EXPECT_NEAR(dense(0, 2), 0.0, 1e-12);
  EXPECT_NEAR(dense(2, 0), 0.0, 1e-12);
}

TEST(NormalizedAdjacency, BlockStackIsBlockDiagonal) {
  StreetGraph g = line_graph(3);
  SparseAdjacency a = normalized_adjacency(g);
  SparseAdjacency stacked = block_adjacency(a, 3);
  ASSERT_EQ(stacked.rows(), 9);
  Eigen::MatrixXd full = Eigen::MatrixXd(stacked);
  Eigen::MatrixXd single = Eigen::MatrixXd(a);
  for (int b = 0; b < 3; ++b)
    EXPECT_TRUE(full.block(3 * b, 3 * b, 3, 3).isApprox(single, 1e-15));
  EXPECT_NEAR(full.block(0, 3, 3, 3).cwiseAbs().maxCoeff(), 0.0, 1e-15);
  EXPECT_NEAR(full.block(3, 0, 3, 3).cwiseAbs().maxCoeff(), 0.0, 1e-15);
}

TEST(Forward, ZeroWeightsGiveZeroLogits) {
  StreetGraph g = grid_graph(2, 2);
  Rng rng(5);
  GcnNet pickup = make_pickup_net(2, 8, rng);
  GcnNet move = make_move_net(2, 8, rng);
  for (GcnNet* net : {&pickup, &move})
    for (Layer& layer : net->layers) {
      layer.W.setZero();
      layer.b.setZero();
    }
  SparseAdjacency a = normalized_adjacency(g);
  SystemState s = make_initial_state({0, 3});
  s.minute = 1;
  s.outstanding.push_back({2, 1, 1, false});
  FeatureEncoding enc = encode(s, 0, {}, g);
  Eigen::Vector2d logits = pickup_logits_single(pickup, a, enc, 0);
  EXPECT_DOUBLE_EQ(logits(0), 0.0);
  EXPECT_DOUBLE_EQ(logits(1), 0.0);
  std::vector<int> mask = feasible_move_targets(g, 0);
  Eigen::VectorXd move_logits = move_logits_masked(move, a, enc, 0, mask);
  EXPECT_DOUBLE_EQ(move_logits.cwiseAbs().maxCoeff(), 0.0);
}

// Single node, width 1 everywhere: the whole pickup net collapses to a
// scalar chain that is recomputed here with plain arithmetic.
TEST(Forward, HandComputedScalarChain) {
  StreetGraph g(1, {});
  SparseAdjacency a = normalized_adjacency(g);
  ASSERT_NEAR(Eigen::MatrixXd(a)(0, 0), 1.0, 1e-15);

  Rng rng(1);
  GcnNet net = make_pickup_net(1, 1, rng);  // feature width 3, hidden width 1
  net.layers[0].W << 0.5, -0.25, 0.125;     // 3x1
  net.layers[0].b << 0.0625;
  net.layers[1].W << -0.75;
  net.layers[1].b << 0.5;
  net.layers[2].W << 1.5;
  net.layers[2].b << -0.125;
  net.layers[3].W << 0.25, -0.5;  // readout [h | tau] is 1x2
  net.layers[3].b << 0.375;
  net.layers[4].W << 2.0;
  net.layers[4].b << 0.0;
  net.layers[5].W << 1.0, -1.0;  // 1x2 logits
  net.layers[5].b << 0.25, -0.25;

  FeatureEncoding enc;
  enc.node_features = Eigen::MatrixXd(1, 3);
  enc.node_features << 1.0, 0.0, 2.0;  // presence, next-move flag, two pickups
  enc.global_features = Eigen::VectorXd(1);
  enc.global_features << 3.0;

  auto relu = [](double z) { return z > 0.0 ? z : 0.0; };
  double h1 = relu(1.0 * 0.5 + 0.0 * -0.25 + 2.0 * 0.125 + 0.0625);
  double h2 = relu(h1 * -0.75 + 0.5);
  double h3 = relu(h2 * 1.5 - 0.125);
  double r1 = relu(h3 * 0.25 + 3.0 * -0.5 + 0.375);
  double r2 = relu(r1 * 2.0);
  double l0 = r2 * 1.0 + 0.25;
  double l1 = r2 * -1.0 - 0.25;

  Eigen::Vector2d logits = pickup_logits_single(net, a, enc, 0);
  EXPECT_NEAR(logits(0), l0, 1e-12);
  EXPECT_NEAR(logits(1), l1, 1e-12);
}

TEST(Forward, ConvStackIsPermutationEquivariant) {
  const int n = 9;
  std::vector<Edge> edges = grid_edges(3, 3);
  StreetGraph g(n, edges);

  std::vector<int> perm = {4, 7, 0, 2, 8, 1, 5, 3, 6};
  std::vector<Edge> permuted;
  for (const auto& [u, v] : edges) permuted.push_back({perm[u], perm[v]});
  StreetGraph gp(n, permuted);

  Rng rng(33);
  GcnNet net = make_move_net(2, 8, rng);
  Eigen::MatrixXd x(n, 4);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < 4; ++j) x(i, j) = 2.0 * rng.next_double() - 1.0;
  Eigen::MatrixXd xp(n, 4);
  for (int i = 0; i < n; ++i) xp.row(perm[i]) = x.row(i);

  ConvCache cache;
  Eigen::MatrixXd h = conv_forward(net, normalized_adjacency(g), x, cache);
  Eigen::MatrixXd hp = conv_forward(net, normalized_adjacency(gp), xp, cache);
  for (int i = 0; i < n; ++i)
    EXPECT_TRUE(hp.row(perm[i]).isApprox(h.row(i), 1e-12)) << "node " << i;
}

TEST(Forward, NodeRelabelingPermutesMoveLogitsAndFixesPickupLogits) {
  const int n = 9;
  std::vector<Edge> edges = grid_edges(3, 3);
  StreetGraph g(n, edges);
  std::vector<int> perm = {3, 0, 6, 1, 8, 5, 2, 7, 4};
  std::vector<Edge> permuted_edges;
  for (const auto& [u, v] : edges) permuted_edges.push_back({perm[u], perm[v]});
  StreetGraph gp(n, permuted_edges);

  SystemState s = make_initial_state({2, 5});
  s.minute = 1;
  s.timers[1] = g.distance(5, 0);
  s.busy_targets[1] = 0;
  s.outstanding.push_back({2, 7, 1, false});
  s.outstanding.push_back({4, 1, 1, false});
  SystemState sp = s;
  for (int j = 0; j < 2; ++j) {
    sp.locations[j] = perm[s.locations[j]];
    if (s.busy_targets[j] != -1) sp.busy_targets[j] = perm[s.busy_targets[j]];
  }
  for (std::size_t r = 0; r < s.outstanding.size(); ++r) {
    sp.outstanding[r].pickup = perm[s.outstanding[r].pickup];
    sp.outstanding[r].dropoff = perm[s.outstanding[r].dropoff];
  }

  Rng rng(2718);
  GcnNet pickup_net = make_pickup_net(2, 8, rng);
  GcnNet move_net = make_move_net(2, 8, rng);
  SparseAdjacency a = normalized_adjacency(g);
  SparseAdjacency ap = normalized_adjacency(gp);
  FeatureEncoding enc = encode(s, 0, {}, g);
  FeatureEncoding encp = encode(sp, 0, {}, gp);

  Eigen::Vector2d logits = pickup_logits_single(pickup_net, a, enc, s.locations[0]);
  Eigen::Vector2d logitsp =
      pickup_logits_single(pickup_net, ap, encp, sp.locations[0]);
  EXPECT_NEAR((logits - logitsp).cwiseAbs().maxCoeff(), 0.0, 1e-12);

  std::vector<int> all(n), allp(n);
  for (int v = 0; v < n; ++v) all[v] = v, allp[v] = v;
  Eigen::VectorXd full = move_logits_masked(move_net, a, enc, s.locations[0], all);
  Eigen::VectorXd fullp =
      move_logits_masked(move_net, ap, encp, sp.locations[0], allp);
  for (int v = 0; v < n; ++v) EXPECT_NEAR(full(v), fullp(perm[v]), 1e-12);
}

TEST(Gradients, PickupNetMatchesCentralFiniteDifferences) {
  StreetGraph g = line_graph(5);
  const int m = 2, batch = 5;
  Rng rng(424243);
  GcnNet net = make_pickup_net(m, 4, rng);
  SparseAdjacency a = normalized_adjacency(g);

  std::vector<TrainingSample> samples;
  for (int i = 0; i < batch; ++i) samples.push_back(random_sample(rng, g, m));

  const int n = g.node_count();
  Eigen::MatrixXd x(batch * n, m + 2), globals(batch, m);
  std::vector<int> agent_rows(batch), labels(batch);
  for (int i = 0; i < batch; ++i) {
    x.middleRows(i * n, n) = samples[i].features.node_features;
    globals.row(i) = samples[i].features.global_features.transpose();
    agent_rows[i] = i * n + samples[i].agent_node;
    labels[i] = i % 2;
  }
  SparseAdjacency ab = block_adjacency(a, batch);
  SparseAdjacency abt = SparseAdjacency(ab.transpose());

  std::vector<Layer> grads = make_zero_grads(net);
  pickup_batch_pass(net, ab, abt, x, agent_rows, globals, labels, &grads);

  const double h = 1e-5;
  auto loss_at = [&] {
    return pickup_batch_pass(net, ab, abt, x, agent_rows, globals, labels, nullptr);
  };
  int checked = 0;
  for (std::size_t layer = 0; layer < net.layers.size(); ++layer) {
    for (int i = 0; i < net.layers[layer].W.rows(); ++i)
      for (int j = 0; j < net.layers[layer].W.cols(); ++j) {
        double saved = net.layers[layer].W(i, j);
        net.layers[layer].W(i, j) = saved + h;
        double up = loss_at();
        net.layers[layer].W(i, j) = saved - h;
        double down = loss_at();
        net.layers[layer].W(i, j) = saved;
        double fd = (up - down) / (2.0 * h);
        EXPECT_LT(relative_error(grads[layer].W(i, j), fd), 1e-4)
            << "layer " << layer << " W(" << i << "," << j << ")";
        ++checked;
      }
    for (int j = 0; j < net.layers[layer].b.cols(); ++j) {
      double saved = net.layers[layer].b(j);
      net.layers[layer].b(j) = saved + h;
      double up = loss_at();
      net.layers[layer].b(j) = saved - h;
      double down = loss_at();
      net.layers[layer].b(j) = saved;
      double fd = (up - down) / (2.0 * h);
      EXPECT_LT(relative_error(grads[layer].b(j), fd), 1e-4)
          << "layer " << layer << " b(" << j << ")";
      ++checked;
    }
  }
  EXPECT_GT(checked, 100);  // every parameter of every layer was exercised
}

TEST(Gradients, MoveNetMatchesCentralFiniteDifferences) {
  StreetGraph g = line_graph(5);
  const int m = 2, batch = 5;
  Rng rng(777001);
  GcnNet net = make_move_net(m, 4, rng);
  SparseAdjacency a = normalized_adjacency(g);

  std::vector<TrainingSample> samples;
  for (int i = 0; i < batch; ++i) samples.push_back(random_sample(rng, g, m, true));

  const int n = g.node_count();
  Eigen::MatrixXd x(batch * n, m + 2), globals(batch, m);
  std::vector<int> agent_rows(batch), row_nodes, row_offsets{0}, label_rows(batch);
  for (int i = 0; i < batch; ++i) {
    x.middleRows(i * n, n) = samples[i].features.node_features;
    globals.row(i) = samples[i].features.global_features.transpose();
    agent_rows[i] = i * n + samples[i].agent_node;
    for (int v : samples[i].feasible_moves) {
      if (v == samples[i].move_target)
        label_rows[i] = static_cast<int>(row_nodes.size());
      row_nodes.push_back(v);
    }
    row_offsets.push_back(static_cast<int>(row_nodes.size()));
  }
  SparseAdjacency ab = block_adjacency(a, batch);
  SparseAdjacency abt = SparseAdjacency(ab.transpose());

  std::vector<Layer> grads = make_zero_grads(net);
  move_batch_pass(net, ab, abt, x, agent_rows, globals, n, row_nodes, row_offsets,
                  label_rows, &grads);

  const double h = 1e-5;
  auto loss_at = [&] {
    return move_batch_pass(net, ab, abt, x, agent_rows, globals, n, row_nodes,
                           row_offsets, label_rows, nullptr);
  };
  for (std::size_t layer = 0; layer < net.layers.size(); ++layer) {
    for (int i = 0; i < net.layers[layer].W.rows(); ++i)
      for (int j = 0; j < net.layers[layer].W.cols(); ++j) {
        double saved = net.layers[layer].W(i, j);
        net.layers[layer].W(i, j) = saved + h;
        double up = loss_at();
        net.layers[layer].W(i, j) = saved - h;
        double down = loss_at();
        net.layers[layer].W(i, j) = saved;
        double fd = (up - down) / (2.0 * h);
        EXPECT_LT(relative_error(grads[layer].W(i, j), fd), 1e-4)
            << "layer " << layer << " W(" << i << "," << j << ")";
      }
    for (int j = 0; j < net.layers[layer].b.cols(); ++j) {
      double saved = net.layers[layer].b(j);
      net.layers[layer].b(j) = saved + h;
      double up = loss_at();
      net.layers[layer].b(j) = saved - h;
      double down = loss_at();
      net.layers[layer].b(j) = saved;
      double fd = (up - down) / (2.0 * h);
      EXPECT_LT(relative_error(grads[layer].b(j), fd), 1e-4)
          << "layer " << layer << " b(" << j << ")";
    }
  }
}

TEST(Training, MemorizesARepeatedSample) {
  StreetGraph g = line_graph(4);
  Rng rng(99);
  TrainingSample sample = random_sample(rng, g, 2, true);
  TrainingSet set(10, sample);

  TrainConfig cfg;
  cfg.epochs = 200;
  cfg.batch_size = 4;
  cfg.hidden = 8;
  cfg.seed = 7;
  TrainResult result = train_nets(set, g, 2, cfg);
  ASSERT_EQ(result.pickup_loss.size(), 200u);
  EXPECT_LT(result.pickup_loss.back(), 0.01);
  ASSERT_EQ(result.move_loss.size(), 200u);
  EXPECT_LT(result.move_loss.back(), 0.01);
}

TEST(Training, DeterministicGivenSeed) {
  StreetGraph g = grid_graph(2, 3);
  Rng rng(1234);
  TrainingSet set;
  for (int i = 0; i < 24; ++i) set.push_back(random_sample(rng, g, 2));

  TrainConfig cfg;
  cfg.epochs = 5;
  cfg.batch_size = 8;
  cfg.hidden = 8;
  cfg.seed = 31;
  TrainResult a = train_nets(set, g, 2, cfg);
  TrainResult b = train_nets(set, g, 2, cfg);
  ASSERT_EQ(a.pickup_loss.size(), b.pickup_loss.size());
  for (std::size_t i = 0; i < a.pickup_loss.size(); ++i)
    EXPECT_EQ(a.pickup_loss[i], b.pickup_loss[i]);
  for (std::size_t i = 0; i < a.nets.move.layers.size(); ++i) {
    EXPECT_EQ(
        (a.nets.move.layers[i].W - b.nets.move.layers[i].W).cwiseAbs().maxCoeff(),
        0.0);
    EXPECT_EQ(
        (a.nets.pickup.layers[i].W - b.nets.pickup.layers[i].W).cwiseAbs().maxCoeff(),
        0.0);
  }
}

TEST(Training, AbortsOnNonFiniteLoss) {
  StreetGraph g = line_graph(3);
  Rng rng(4);
  TrainingSet set;
  for (int i = 0; i < 4; ++i) set.push_back(random_sample(rng, g, 1));
  set[0].features.node_features(0, 0) = std::numeric_limits<double>::quiet_NaN();

  TrainConfig cfg;
  cfg.epochs = 2;
  cfg.batch_size = 4;
  cfg.hidden = 4;
  EXPECT_THROW(train_nets(set, g, 1, cfg), std::runtime_error);
}

TEST(Training, RejectsBadSamplesAndEmptySets) {
  StreetGraph g = line_graph(3);
  TrainConfig cfg;
  cfg.hidden = 4;
  EXPECT_THROW(train_nets({}, g, 1, cfg), std::invalid_argument);

  Rng rng(8);
  TrainingSet set{random_sample(rng, g, 1, true)};
  set[0].move_target = 99;  // outside the mask
  EXPECT_THROW(train_nets(set, g, 1, cfg), std::invalid_argument);

  TrainingSet wrong_shape{random_sample(rng, g, 1, true)};
  wrong_shape[0].features.node_features.resize(7, 3);
  EXPECT_THROW(train_nets(wrong_shape, g, 1, cfg), std::invalid_argument);
}

TEST(WeightsFile, RoundTripsBitExact) {
  Rng rng(2025);
  NetPair nets;
  nets.pickup = make_pickup_net(2, 8, rng);
  nets.move = make_move_net(2, 8, rng);
  nets.node_count = 9;
  nets.agent_count = 2;
  nets.hidden = 8;

  std::stringstream buffer;
  save_weights(buffer, nets);
  NetPair loaded = load_weights(buffer);
  EXPECT_EQ(loaded.node_count, 9);
  EXPECT_EQ(loaded.agent_count, 2);
  EXPECT_EQ(loaded.hidden, 8);
  for (std::size_t i = 0; i < nets.pickup.layers.size(); ++i) {
    EXPECT_EQ((loaded.pickup.layers[i].W - nets.pickup.layers[i].W)
                  .cwiseAbs()
                  .maxCoeff(),
              0.0);
    EXPECT_EQ(
        (loaded.move.layers[i].b - nets.move.layers[i].b).cwiseAbs().maxCoeff(), 0.0);
  }
}

TEST(WeightsFile, RefusesMismatchedGraphAndGarbage) {
  Rng rng(6);
  NetPair nets;
  nets.pickup = make_pickup_net(2, 4, rng);
  nets.move = make_move_net(2, 4, rng);
  nets.node_count = 9;
  nets.agent_count = 2;
  nets.hidden = 4;

  StreetGraph other = grid_graph(2, 2);
  EXPECT_THROW(require_compatible(nets, other, 2), std::invalid_argument);
  StreetGraph nine = grid_graph(3, 3);
  EXPECT_THROW(require_compatible(nets, nine, 3), std::invalid_argument);
  EXPECT_NO_THROW(require_compatible(nets, nine, 2));

  std::stringstream garbage("not a weights file at all");
  EXPECT_THROW(load_weights(garbage), std::invalid_argument);

  std::stringstream truncated;
  save_weights(truncated, nets);
  std::string bytes = truncated.str();
  std::stringstream cut(bytes.substr(0, bytes.size() / 2));
  EXPECT_THROW(load_weights(cut), std::invalid_argument);
}

TEST(Inference, MaskedArgmaxAgreesWithFullReadout) {
  StreetGraph g = grid_graph(3, 3);
  Rng rng(555);
  GcnNet net = make_move_net(2, 8, rng);
  SparseAdjacency a = normalized_adjacency(g);

  for (int trial = 0; trial < 20; ++trial) {
    TrainingSample sample = random_sample(rng, g, 2, true);
    std::vector<int> mask = feasible_move_targets(g, sample.agent_node);
    int chosen = best_move_target(net, a, sample.features, sample.agent_node, mask);
    EXPECT_NE(std::find(mask.begin(), mask.end(), chosen), mask.end());

    std::vector<int> all_nodes(g.node_count());
    for (int v = 0; v < g.node_count(); ++v) all_nodes[v] = v;
    Eigen::VectorXd full =
        move_logits_masked(net, a, sample.features, sample.agent_node, all_nodes);
    int best_in_mask = mask[0];
    for (int v : mask)
      if (full(v) > full(best_in_mask)) best_in_mask = v;
    EXPECT_EQ(chosen, best_in_mask);
  }
}
