#pragma once

// Graph-convolution policy networks with from-scratch reverse-mode
// gradients. Two nets share the building blocks: a pickup net (3 conv + 3
// dense layers, 2-way output read from the deciding agent's node embedding)
// and a move net (2 conv + 4 dense layers applied per node with shared
// weights, one logit per node, masked to the agent's neighborhood).
// Training is plain batched Adam on cross-entropy; batches stack sample
// graphs into one block-diagonal system so a whole batch is a single
// conv pass.

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <limits>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "taxi/features.hpp"
#include "taxi/rng.hpp"
#include "taxi/street_graph.hpp"

namespace taxi {

using SparseAdjacency = Eigen::SparseMatrix<double>;

// Kipf-style normalization: with A_tilde = A + I and row degrees d_i =
// sum_j A_tilde_ij, entry (i,j) becomes A_tilde_ij / sqrt(d_i d_j).
inline SparseAdjacency normalized_adjacency(const StreetGraph& g) {
  const int n = g.node_count();
  std::vector<double> degree(n, 1.0);
  for (NodeId i = 0; i < n; ++i) degree[i] += static_cast<double>(g.neighbors(i).size());
  std::vector<Eigen::Triplet<double>> entries;
  for (NodeId i = 0; i < n; ++i) {
    entries.emplace_back(i, i, 1.0 / std::sqrt(degree[i] * degree[i]));
    for (NodeId j : g.neighbors(i))
      entries.emplace_back(i, j, 1.0 / std::sqrt(degree[i] * degree[j]));
  }
  SparseAdjacency a(n, n);
  a.setFromTriplets(entries.begin(), entries.end());
  a.makeCompressed();
  return a;
}

// Block-diagonal stack of `copies` adjacency blocks: one conv pass over the
// stacked node features runs every sample in a batch at once.
inline SparseAdjacency block_adjacency(const SparseAdjacency& a, int copies) {
  const int n = static_cast<int>(a.rows());
  std::vector<Eigen::Triplet<double>> entries;
  entries.reserve(static_cast<std::size_t>(a.nonZeros()) * copies);
  for (int b = 0; b < copies; ++b)
    for (int col = 0; col < n; ++col)
      for (SparseAdjacency::InnerIterator it(a, col); it; ++it)
        entries.emplace_back(b * n + static_cast<int>(it.row()), b * n + col,
                             it.value());
  SparseAdjacency stacked(static_cast<long>(n) * copies, static_cast<long>(n) * copies);
  stacked.setFromTriplets(entries.begin(), entries.end());
  stacked.makeCompressed();
  return stacked;
}

struct Layer {
  Eigen::MatrixXd W;
  Eigen::RowVectorXd b;
};

// conv_count leading layers are graph convolutions H' = relu(A H W + b);
// the rest form the dense readout (relu between, linear logits).
struct GcnNet {
  int conv_count = 0;
  std::vector<Layer> layers;

  int hidden_width() const { return static_cast<int>(layers[0].W.cols()); }
};

inline Layer make_layer(int in, int out, Rng& rng) {
  Layer layer;
  layer.W.resize(in, out);
  const double scale = 1.0 / std::sqrt(static_cast<double>(in));
  for (int i = 0; i < in; ++i)
    for (int j = 0; j < out; ++j)
      layer.W(i, j) = (2.0 * rng.next_double() - 1.0) * scale;
  layer.b = Eigen::RowVectorXd::Zero(out);
  return layer;
}

inline GcnNet make_pickup_net(int agent_count, int hidden, Rng& rng) {
  GcnNet net;
  net.conv_count = 3;
  net.layers.push_back(make_layer(agent_count + 2, hidden, rng));
  net.layers.push_back(make_layer(hidden, hidden, rng));
  net.layers.push_back(make_layer(hidden, hidden, rng));
  net.layers.push_back(make_layer(hidden + agent_count, hidden, rng));
  net.layers.push_back(make_layer(hidden, hidden, rng));
  net.layers.push_back(make_layer(hidden, 2, rng));
  return net;
}

inline GcnNet make_move_net(int agent_count, int hidden, Rng& rng) {
  GcnNet net;
  net.conv_count = 2;
  net.layers.push_back(make_layer(agent_count + 2, hidden, rng));
  net.layers.push_back(make_layer(hidden, hidden, rng));
  net.layers.push_back(make_layer(2 * hidden + agent_count, hidden, rng));
  net.layers.push_back(make_layer(hidden, hidden, rng));
  net.layers.push_back(make_layer(hidden, hidden, rng));
  net.layers.push_back(make_layer(hidden, 1, rng));
  return net;
}

// --- forward / backward ---------------------------------------------------

struct ConvCache {
  std::vector<Eigen::MatrixXd> P;  // A * H_in per conv layer, reused for dW
  std::vector<Eigen::MatrixXd> H;  // H[0] = X, H[c+1] = post-relu output
};

inline const Eigen::MatrixXd& conv_forward(const GcnNet& net, const SparseAdjacency& a,
                                           const Eigen::MatrixXd& x, ConvCache& cache) {
  cache.P.resize(net.conv_count);
  cache.H.resize(net.conv_count + 1);
  cache.H[0] = x;
  for (int c = 0; c < net.conv_count; ++c) {
    cache.P[c] = a * cache.H[c];
    cache.H[c + 1] =
        ((cache.P[c] * net.layers[c].W).rowwise() + net.layers[c].b).cwiseMax(0.0);
  }
  return cache.H.back();
}

// d_h is the loss gradient w.r.t. the conv stack's output; grads must match
// the net's layer shapes. a_t is the transpose of the adjacency used
// forward (they differ on directed graphs).
inline void conv_backward(const GcnNet& net, const SparseAdjacency& a_t,
                          const ConvCache& cache, Eigen::MatrixXd d_h,
                          std::vector<Layer>& grads) {
  for (int c = net.conv_count - 1; c >= 0; --c) {
    Eigen::MatrixXd d_z =
        d_h.cwiseProduct((cache.H[c + 1].array() > 0.0).cast<double>().matrix());
    grads[c].W.noalias() += cache.P[c].transpose() * d_z;
    grads[c].b += d_z.colwise().sum();
    if (c > 0) d_h.noalias() = a_t * (d_z * net.layers[c].W.transpose());
  }
}

struct DenseCache {
  std::vector<Eigen::MatrixXd> R;  // R[0] = input rows, R.back() = logits
};

inline const Eigen::MatrixXd& dense_forward(const GcnNet& net,
                                            const Eigen::MatrixXd& input,
                                            DenseCache& cache) {
  const int first = net.conv_count;
  const int count = static_cast<int>(net.layers.size()) - first;
  cache.R.resize(count + 1);
  cache.R[0] = input;
  for (int k = 0; k < count; ++k) {
    const Layer& layer = net.layers[first + k];
    Eigen::MatrixXd z = (cache.R[k] * layer.W).rowwise() + layer.b;
    cache.R[k + 1] = k + 1 == count ? std::move(z) : z.cwiseMax(0.0).eval();
  }
  return cache.R.back();
}

// Returns the gradient w.r.t. the readout input rows.
inline Eigen::MatrixXd dense_backward(const GcnNet& net, const DenseCache& cache,
                                      Eigen::MatrixXd d_logits,
                                      std::vector<Layer>& grads) {
  const int first = net.conv_count;
  const int count = static_cast<int>(net.layers.size()) - first;
  Eigen::MatrixXd g = std::move(d_logits);
  for (int k = count - 1; k >= 0; --k) {
    if (k != count - 1)
      g = g.cwiseProduct((cache.R[k + 1].array() > 0.0).cast<double>().matrix());
    grads[first + k].W.noalias() += cache.R[k].transpose() * g;
    grads[first + k].b += g.colwise().sum();
    g = (g * net.layers[first + k].W.transpose()).eval();
  }
  return g;
}

// Mean cross-entropy over logit rows; writes softmax-minus-onehot into
// d_logits (already divided by rows). Row max subtracted for stability.
inline double softmax_cross_entropy(const Eigen::MatrixXd& logits,
                                    const std::vector<int>& labels,
                                    Eigen::MatrixXd& d_logits) {
  const int rows = static_cast<int>(logits.rows());
  d_logits.resize(logits.rows(), logits.cols());
  double loss = 0.0;
  for (int i = 0; i < rows; ++i) {
    double peak = logits.row(i).maxCoeff();
    Eigen::RowVectorXd p = (logits.row(i).array() - peak).exp();
    p /= p.sum();
    loss -= std::log(std::max(p(labels[i]), 1e-300));
    d_logits.row(i) = p;
    d_logits(i, labels[i]) -= 1.0;
  }
  d_logits /= static_cast<double>(rows);
  return loss / static_cast<double>(rows);
}

// --- optimizer --------------------------------------------------------------

struct AdamState {
  std::vector<Layer> m, v;
  long long t = 0;
};

inline AdamState make_adam_state(const GcnNet& net) {
  AdamState state;
  for (const Layer& layer : net.layers) {
    state.m.push_back({Eigen::MatrixXd::Zero(layer.W.rows(), layer.W.cols()),
                       Eigen::RowVectorXd::Zero(layer.b.cols())});
    state.v.push_back({Eigen::MatrixXd::Zero(layer.W.rows(), layer.W.cols()),
                       Eigen::RowVectorXd::Zero(layer.b.cols())});
  }
  return state;
}

inline std::vector<Layer> make_zero_grads(const GcnNet& net) {
  std::vector<Layer> grads;
  for (const Layer& layer : net.layers)
    grads.push_back({Eigen::MatrixXd::Zero(layer.W.rows(), layer.W.cols()),
                     Eigen::RowVectorXd::Zero(layer.b.cols())});
  return grads;
}

// Standard Adam; L2 decay applies to weights only, not biases.
inline void adam_step(GcnNet& net, const std::vector<Layer>& grads, double lr,
                      double l2, AdamState& state) {
  const double b1 = 0.9, b2 = 0.999, eps = 1e-8;
  ++state.t;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(state.t));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(state.t));
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    Eigen::MatrixXd gw = grads[i].W + l2 * net.layers[i].W;
    state.m[i].W = b1 * state.m[i].W + (1.0 - b1) * gw;
    state.v[i].W = b2 * state.v[i].W + (1.0 - b2) * gw.cwiseProduct(gw);
    net.layers[i].W.array() -=
        lr * (state.m[i].W / c1).array() /
        ((state.v[i].W / c2).array().sqrt() + eps);
    Eigen::RowVectorXd gb = grads[i].b;
    state.m[i].b = b1 * state.m[i].b + (1.0 - b1) * gb;
    state.v[i].b = b2 * state.v[i].b + (1.0 - b2) * gb.cwiseProduct(gb);
    net.layers[i].b.array() -=
        lr * (state.m[i].b / c1).array() /
        ((state.v[i].b / c2).array().sqrt() + eps);
  }
}

// --- batched loss passes ----------------------------------------------------

// One pickup-net pass over a batch: X stacks the samples' node features,
// agent_rows holds each sample's deciding-agent row in the stacked system,
// G stacks global features. Returns mean cross-entropy; accumulates grads.
inline double pickup_batch_pass(const GcnNet& net, const SparseAdjacency& a_block,
                                const SparseAdjacency& a_block_t,
                                const Eigen::MatrixXd& x,
                                const std::vector<int>& agent_rows,
                                const Eigen::MatrixXd& g,
                                const std::vector<int>& labels,
                                std::vector<Layer>* grads) {
  const int batch = static_cast<int>(agent_rows.size());
  const int hidden = net.hidden_width();
  ConvCache conv;
  const Eigen::MatrixXd& h = conv_forward(net, a_block, x, conv);
  Eigen::MatrixXd readout(batch, hidden + g.cols());
  for (int i = 0; i < batch; ++i) {
    readout.row(i).head(hidden) = h.row(agent_rows[i]);
    readout.row(i).tail(g.cols()) = g.row(i);
  }
  DenseCache dense;
  const Eigen::MatrixXd& logits = dense_forward(net, readout, dense);
  Eigen::MatrixXd d_logits;
  double loss = softmax_cross_entropy(logits, labels, d_logits);
  if (grads) {
    Eigen::MatrixXd d_readout = dense_backward(net, dense, std::move(d_logits), *grads);
    Eigen::MatrixXd d_h = Eigen::MatrixXd::Zero(h.rows(), h.cols());
    for (int i = 0; i < batch; ++i)
      d_h.row(agent_rows[i]) += d_readout.row(i).head(hidden);
    conv_backward(net, a_block_t, conv, std::move(d_h), *grads);
  }
  return loss;
}

// Move-net readout rows are (sample, candidate node) pairs; only nodes in a
// sample's feasibility mask are materialized, so masked-out nodes get
// exactly zero probability by construction. row_offsets[i]..row_offsets[i+1]
// delimit sample i's rows; label_rows[i] indexes its correct row.
inline double move_batch_pass(const GcnNet& net, const SparseAdjacency& a_block,
                              const SparseAdjacency& a_block_t,
                              const Eigen::MatrixXd& x,
                              const std::vector<int>& agent_rows,
                              const Eigen::MatrixXd& g, int node_count,
                              const std::vector<int>& row_nodes,
                              const std::vector<int>& row_offsets,
                              const std::vector<int>& label_rows,
                              std::vector<Layer>* grads) {
  const int batch = static_cast<int>(agent_rows.size());
  const int rows = static_cast<int>(row_nodes.size());
  const int hidden = net.hidden_width();
  ConvCache conv;
  const Eigen::MatrixXd& h = conv_forward(net, a_block, x, conv);
  Eigen::MatrixXd readout(rows, 2 * hidden + g.cols());
  for (int i = 0; i < batch; ++i)
    for (int r = row_offsets[i]; r < row_offsets[i + 1]; ++r) {
      readout.row(r).head(hidden) = h.row(i * node_count + row_nodes[r]);
      readout.row(r).segment(hidden, hidden) = h.row(agent_rows[i]);
      readout.row(r).tail(g.cols()) = g.row(i);
    }
  DenseCache dense;
  const Eigen::MatrixXd& logits = dense_forward(net, readout, dense);

  double loss = 0.0;
  Eigen::MatrixXd d_logits = Eigen::MatrixXd::Zero(rows, 1);
  for (int i = 0; i < batch; ++i) {
    const int begin = row_offsets[i], end = row_offsets[i + 1];
    double peak = -std::numeric_limits<double>::infinity();
    for (int r = begin; r < end; ++r) peak = std::max(peak, logits(r, 0));
    double z = 0.0;
    for (int r = begin; r < end; ++r) z += std::exp(logits(r, 0) - peak);
    for (int r = begin; r < end; ++r) {
      double p = std::exp(logits(r, 0) - peak) / z;
      d_logits(r, 0) = p / static_cast<double>(batch);
    }
    loss -= std::log(std::max(std::exp(logits(label_rows[i], 0) - peak) / z, 1e-300));
    d_logits(label_rows[i], 0) -= 1.0 / static_cast<double>(batch);
  }
  loss /= static_cast<double>(batch);

  if (grads) {
    Eigen::MatrixXd d_readout = dense_backward(net, dense, std::move(d_logits), *grads);
    Eigen::MatrixXd d_h = Eigen::MatrixXd::Zero(h.rows(), h.cols());
    for (int i = 0; i < batch; ++i)
      for (int r = row_offsets[i]; r < row_offsets[i + 1]; ++r) {
        d_h.row(i * node_count + row_nodes[r]) += d_readout.row(r).head(hidden);
        d_h.row(agent_rows[i]) += d_readout.row(r).segment(hidden, hidden);
      }
    conv_backward(net, a_block_t, conv, std::move(d_h), *grads);
  }
  return loss;
}

// --- training ---------------------------------------------------------------

struct TrainConfig {
  int epochs = 100;
  int batch_size = 128;
  double lr_pickup = 0.005;
  double lr_move = 0.002;
  double l2 = 1e-5;
  int hidden = 32;
  std::uint64_t seed = 1;

  void validate() const {
    if (epochs < 1 || batch_size < 1 || hidden < 1)
      throw std::invalid_argument("epochs, batch size, and width must be positive");
    if (lr_pickup <= 0.0 || lr_move <= 0.0 || l2 < 0.0)
      throw std::invalid_argument("learning rates must be positive, l2 nonnegative");
  }
};

// A trained pair is bound to the graph it was trained on.
struct NetPair {
  GcnNet pickup;
  GcnNet move;
  int node_count = 0;
  int agent_count = 0;
  int hidden = 0;

  void validate() const {
    if (pickup.conv_count != 3 || pickup.layers.size() != 6 ||
        move.conv_count != 2 || move.layers.size() != 6)
      throw std::invalid_argument("unexpected network layout");
    for (const GcnNet* net : {&pickup, &move}) {
      for (std::size_t i = 0; i + 1 < net->layers.size(); ++i)
        if (!net->layers[i].W.allFinite() || !net->layers[i].b.allFinite())
          throw std::invalid_argument("non-finite network parameter");
      if (!net->layers.back().W.allFinite() || !net->layers.back().b.allFinite())
        throw std::invalid_argument("non-finite network parameter");
    }
    if (pickup.layers[0].W.rows() != agent_count + 2 ||
        move.layers[0].W.rows() != agent_count + 2 ||
        pickup.layers[0].W.cols() != hidden || move.layers[0].W.cols() != hidden ||
        pickup.layers[3].W.rows() != hidden + agent_count ||
        move.layers[2].W.rows() != 2 * hidden + agent_count ||
        pickup.layers.back().W.cols() != 2 || move.layers.back().W.cols() != 1)
      throw std::invalid_argument("network shapes do not chain");
  }
};

inline void require_compatible(const NetPair& nets, const StreetGraph& g,
                               int agent_count) {
  if (nets.node_count != g.node_count())
    throw std::invalid_argument("weights were trained for a " +
                                std::to_string(nets.node_count) +
                                "-node graph, got " + std::to_string(g.node_count()));
  if (nets.agent_count != agent_count)
    throw std::invalid_argument("weights were trained for " +
                                std::to_string(nets.agent_count) + " agents, got " +
                                std::to_string(agent_count));
}

struct TrainResult {
  NetPair nets;
  std::vector<double> pickup_loss;  // per-epoch mean cross-entropy
  std::vector<double> move_loss;
};

namespace detail {

inline void check_finite_loss(double loss, const char* net_name, int epoch, int batch) {
  if (!std::isfinite(loss))
    throw std::runtime_error(std::string("training diverged: non-finite loss in ") +
                             net_name + " net at epoch " + std::to_string(epoch + 1) +
                             ", batch " + std::to_string(batch + 1));
}

inline void shuffle_indices(std::vector<int>& idx, Rng& rng) {
  for (std::size_t i = idx.size(); i > 1; --i)
    std::swap(idx[i - 1], idx[rng.next_below(i)]);
}

}  // namespace detail

inline TrainResult train_nets(const TrainingSet& data, const StreetGraph& g,
                              int agent_count, const TrainConfig& cfg) {
  cfg.validate();
  if (data.empty()) throw std::invalid_argument("empty training set");
  const int n = g.node_count();
  const int width = agent_count + 2;
  for (const TrainingSample& s : data) {
    if (s.features.node_features.rows() != n ||
        s.features.node_features.cols() != width ||
        s.features.global_features.size() != agent_count)
      throw std::invalid_argument("sample feature shape does not match graph");
    if (!s.pickup) {
      bool found = false;
      for (int v : s.feasible_moves) found = found || v == s.move_target;
      if (!found) throw std::invalid_argument("move label outside feasibility mask");
    }
  }

  SparseAdjacency a = normalized_adjacency(g);
  Rng init_rng(derive_seed(cfg.seed, 0));
  TrainResult result;
  result.nets.pickup = make_pickup_net(agent_count, cfg.hidden, init_rng);
  result.nets.move = make_move_net(agent_count, cfg.hidden, init_rng);
  result.nets.node_count = n;
  result.nets.agent_count = agent_count;
  result.nets.hidden = cfg.hidden;

  // Block systems are cached per batch size (full batches plus the tail).
  std::vector<SparseAdjacency> a_cache(cfg.batch_size + 1), at_cache(cfg.batch_size + 1);
  auto blocks_for = [&](int b) -> std::pair<const SparseAdjacency&, const SparseAdjacency&> {
    if (a_cache[b].rows() == 0) {
      a_cache[b] = block_adjacency(a, b);
      at_cache[b] = SparseAdjacency(a_cache[b].transpose());
    }
    return {a_cache[b], at_cache[b]};
  };

  auto stack_features = [&](const std::vector<int>& idx, int begin, int count,
                            Eigen::MatrixXd& x, std::vector<int>& agent_rows,
                            Eigen::MatrixXd& globals) {
    x.resize(static_cast<long>(count) * n, width);
    globals.resize(count, agent_count);
    agent_rows.resize(count);
    for (int i = 0; i < count; ++i) {
      const TrainingSample& s = data[idx[begin + i]];
      x.middleRows(static_cast<long>(i) * n, n) = s.features.node_features;
      globals.row(i) = s.features.global_features.transpose();
      agent_rows[i] = i * n + s.agent_node;
    }
  };

  // Pickup head: every sample carries a pickup/move bit.
  {
    std::vector<int> idx(data.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = static_cast<int>(i);
    Rng shuffle_rng(derive_seed(cfg.seed, 1));
    AdamState adam = make_adam_state(result.nets.pickup);
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
      detail::shuffle_indices(idx, shuffle_rng);
      double epoch_loss = 0.0;
      int batches = 0;
      for (int begin = 0; begin < static_cast<int>(idx.size());
           begin += cfg.batch_size, ++batches) {
        int count = std::min(cfg.batch_size, static_cast<int>(idx.size()) - begin);
        Eigen::MatrixXd x, globals;
        std::vector<int> agent_rows;
        stack_features(idx, begin, count, x, agent_rows, globals);
        std::vector<int> labels(count);
        for (int i = 0; i < count; ++i) labels[i] = data[idx[begin + i]].pickup ? 1 : 0;
        auto [ab, abt] = blocks_for(count);
        std::vector<Layer> grads = make_zero_grads(result.nets.pickup);
        double loss = pickup_batch_pass(result.nets.pickup, ab, abt, x, agent_rows,
                                        globals, labels, &grads);
        detail::check_finite_loss(loss, "pickup", epoch, batches);
        adam_step(result.nets.pickup, grads, cfg.lr_pickup, cfg.l2, adam);
        epoch_loss += loss;
      }
      result.pickup_loss.push_back(epoch_loss / batches);
    }
  }

  // Move head: trained on the samples whose label was a move or stay.
  {
    std::vector<int> idx;
    for (std::size_t i = 0; i < data.size(); ++i)
      if (!data[i].pickup) idx.push_back(static_cast<int>(i));
    Rng shuffle_rng(derive_seed(cfg.seed, 2));
    AdamState adam = make_adam_state(result.nets.move);
    for (int epoch = 0; epoch < cfg.epochs && !idx.empty(); ++epoch) {
      detail::shuffle_indices(idx, shuffle_rng);
      double epoch_loss = 0.0;
      int batches = 0;
      for (int begin = 0; begin < static_cast<int>(idx.size());
           begin += cfg.batch_size, ++batches) {
        int count = std::min(cfg.batch_size, static_cast<int>(idx.size()) - begin);
        Eigen::MatrixXd x, globals;
        std::vector<int> agent_rows;
        stack_features(idx, begin, count, x, agent_rows, globals);
        std::vector<int> row_nodes, row_offsets{0}, label_rows(count);
        for (int i = 0; i < count; ++i) {
          const TrainingSample& s = data[idx[begin + i]];
          for (int v : s.feasible_moves) {
            if (v == s.move_target) label_rows[i] = static_cast<int>(row_nodes.size());
            row_nodes.push_back(v);
          }
          row_offsets.push_back(static_cast<int>(row_nodes.size()));
        }
        auto [ab, abt] = blocks_for(count);
        std::vector<Layer> grads = make_zero_grads(result.nets.move);
        double loss = move_batch_pass(result.nets.move, ab, abt, x, agent_rows,
                                      globals, n, row_nodes, row_offsets, label_rows,
                                      &grads);
        detail::check_finite_loss(loss, "move", epoch, batches);
        adam_step(result.nets.move, grads, cfg.lr_move, cfg.l2, adam);
        epoch_loss += loss;
      }
      result.move_loss.push_back(epoch_loss / batches);
    }
  }

  result.nets.validate();
  return result;
}

// --- weight file ------------------------------------------------------------
// Binary, little-endian: magic, then node count / agent count / hidden
// width, then both nets as (conv count, layer count, and per layer the W
// shape, W row-major, then b). Loading against a different graph is
// refused via require_compatible.

namespace detail {

constexpr char kWeightsMagic[8] = {'G', 'C', 'N', 'W', 'T', 'S', '1', '\n'};

inline void write_u32(std::ostream& out, std::uint32_t v) {
  char buf[4];
  std::memcpy(buf, &v, 4);
  out.write(buf, 4);
}

inline std::uint32_t read_u32(std::istream& in) {
  char buf[4];
  if (!in.read(buf, 4)) throw std::invalid_argument("weights file truncated");
  std::uint32_t v;
  std::memcpy(&v, buf, 4);
  return v;
}

inline void write_f64s(std::ostream& out, const double* data, std::size_t count) {
  out.write(reinterpret_cast<const char*>(data),
            static_cast<std::streamsize>(count * sizeof(double)));
}

inline void read_f64s(std::istream& in, double* data, std::size_t count) {
  if (!in.read(reinterpret_cast<char*>(data),
               static_cast<std::streamsize>(count * sizeof(double))))
    throw std::invalid_argument("weights file truncated");
}

inline void write_net(std::ostream& out, const GcnNet& net) {
  write_u32(out, static_cast<std::uint32_t>(net.conv_count));
  write_u32(out, static_cast<std::uint32_t>(net.layers.size()));
  for (const Layer& layer : net.layers) {
    write_u32(out, static_cast<std::uint32_t>(layer.W.rows()));
    write_u32(out, static_cast<std::uint32_t>(layer.W.cols()));
    for (int i = 0; i < layer.W.rows(); ++i) {
      Eigen::RowVectorXd row = layer.W.row(i);
      write_f64s(out, row.data(), static_cast<std::size_t>(row.size()));
    }
    Eigen::RowVectorXd b = layer.b;
    write_f64s(out, b.data(), static_cast<std::size_t>(b.size()));
  }
}

inline GcnNet read_net(std::istream& in) {
  GcnNet net;
  net.conv_count = static_cast<int>(read_u32(in));
  std::uint32_t layer_count = read_u32(in);
  if (net.conv_count < 1 || layer_count < 2 || layer_count > 64 ||
      net.conv_count >= static_cast<int>(layer_count))
    throw std::invalid_argument("weights file has an implausible layer layout");
  for (std::uint32_t k = 0; k < layer_count; ++k) {
    std::uint32_t rows = read_u32(in), cols = read_u32(in);
    if (rows < 1 || cols < 1 || rows > 100000 || cols > 100000)
      throw std::invalid_argument("weights file has an implausible layer shape");
    Layer layer;
    layer.W.resize(rows, cols);
    for (std::uint32_t i = 0; i < rows; ++i) {
      Eigen::RowVectorXd row(cols);
      read_f64s(in, row.data(), cols);
      layer.W.row(i) = row;
    }
    Eigen::RowVectorXd b(cols);
    read_f64s(in, b.data(), cols);
    layer.b = b;
    net.layers.push_back(std::move(layer));
  }
  return net;
}

}  // namespace detail

inline void save_weights(std::ostream& out, const NetPair& nets) {
  nets.validate();
  out.write(detail::kWeightsMagic, sizeof(detail::kWeightsMagic));
  detail::write_u32(out, static_cast<std::uint32_t>(nets.node_count));
  detail::write_u32(out, static_cast<std::uint32_t>(nets.agent_count));
  detail::write_u32(out, static_cast<std::uint32_t>(nets.hidden));
  detail::write_net(out, nets.pickup);
  detail::write_net(out, nets.move);
  if (!out) throw std::runtime_error("failed writing weights");
}

inline NetPair load_weights(std::istream& in) {
  char magic[sizeof(detail::kWeightsMagic)];
  if (!in.read(magic, sizeof(magic)) ||
      std::memcmp(magic, detail::kWeightsMagic, sizeof(magic)) != 0)
    throw std::invalid_argument("not a network weights file");
  NetPair nets;
  nets.node_count = static_cast<int>(detail::read_u32(in));
  nets.agent_count = static_cast<int>(detail::read_u32(in));
  nets.hidden = static_cast<int>(detail::read_u32(in));
  nets.pickup = detail::read_net(in);
  nets.move = detail::read_net(in);
  nets.validate();
  return nets;
}

inline void save_weights_file(const std::string& path, const NetPair& nets) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  save_weights(out, nets);
}

inline NetPair load_weights_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  return load_weights(in);
}

// --- single-state inference ---------------------------------------------------

// Pickup-head logits for one state; index 1 means "pick up".
inline Eigen::Vector2d pickup_logits_single(const GcnNet& net, const SparseAdjacency& a,
                                            const FeatureEncoding& enc, int agent_node) {
  ConvCache conv;
  const Eigen::MatrixXd& h = conv_forward(net, a, enc.node_features, conv);
  const int hidden = net.hidden_width();
  Eigen::MatrixXd readout(1, hidden + enc.global_features.size());
  readout.row(0).head(hidden) = h.row(agent_node);
  readout.row(0).tail(enc.global_features.size()) = enc.global_features.transpose();
  DenseCache dense;
  const Eigen::MatrixXd& logits = dense_forward(net, readout, dense);
  return logits.row(0).transpose();
}

// Move-head logits for the given candidate nodes only; rows align with
// `targets`. Masked-out nodes are never evaluated.
inline Eigen::VectorXd move_logits_masked(const GcnNet& net, const SparseAdjacency& a,
                                          const FeatureEncoding& enc, int agent_node,
                                          std::span<const int> targets) {
  ConvCache conv;
  const Eigen::MatrixXd& h = conv_forward(net, a, enc.node_features, conv);
  const int hidden = net.hidden_width();
  Eigen::MatrixXd readout(static_cast<long>(targets.size()),
                          2 * hidden + enc.global_features.size());
  for (std::size_t r = 0; r < targets.size(); ++r) {
    readout.row(static_cast<long>(r)).head(hidden) = h.row(targets[r]);
    readout.row(static_cast<long>(r)).segment(hidden, hidden) = h.row(agent_node);
    readout.row(static_cast<long>(r)).tail(enc.global_features.size()) =
        enc.global_features.transpose();
  }
  DenseCache dense;
  return dense_forward(net, readout, dense).col(0);
}

// Argmax over the masked move logits; ties keep the earliest target, so
// with ascending targets the choice is deterministic.
inline int best_move_target(const GcnNet& net, const SparseAdjacency& a,
                            const FeatureEncoding& enc, int agent_node,
                            std::span<const int> targets) {
  if (targets.empty()) throw std::invalid_argument("empty move mask");
  Eigen::VectorXd logits = move_logits_masked(net, a, enc, agent_node, targets);
  int best = 0;
  for (int r = 1; r < logits.size(); ++r)
    if (logits(r) > logits(best)) best = r;
  return targets[static_cast<std::size_t>(best)];
}

// --- batched inference --------------------------------------------------------

// Pickup-head logits for a batch; row i answers sample i. Inputs use the
// same stacked layout as pickup_batch_pass.
inline Eigen::MatrixXd pickup_logits_batch(const GcnNet& net,
                                           const SparseAdjacency& a_block,
                                           const Eigen::MatrixXd& x,
                                           const std::vector<int>& agent_rows,
                                           const Eigen::MatrixXd& g) {
  ConvCache conv;
  const Eigen::MatrixXd& h = conv_forward(net, a_block, x, conv);
  const int hidden = net.hidden_width();
  Eigen::MatrixXd readout(static_cast<long>(agent_rows.size()), hidden + g.cols());
  for (std::size_t i = 0; i < agent_rows.size(); ++i) {
    readout.row(static_cast<long>(i)).head(hidden) = h.row(agent_rows[i]);
    readout.row(static_cast<long>(i)).tail(g.cols()) = g.row(static_cast<long>(i));
  }
  DenseCache dense;
  return dense_forward(net, readout, dense);
}

// Move-head logits for a batch of masked readouts, concatenated in
// row_nodes order (same layout as move_batch_pass).
inline Eigen::VectorXd move_logits_batch(const GcnNet& net,
                                         const SparseAdjacency& a_block,
                                         const Eigen::MatrixXd& x,
                                         const std::vector<int>& agent_rows,
                                         const Eigen::MatrixXd& g, int node_count,
                                         const std::vector<int>& row_nodes,
                                         const std::vector<int>& row_offsets) {
  const int batch = static_cast<int>(agent_rows.size());
  const int rows = static_cast<int>(row_nodes.size());
  const int hidden = net.hidden_width();
  ConvCache conv;
  const Eigen::MatrixXd& h = conv_forward(net, a_block, x, conv);
  Eigen::MatrixXd readout(rows, 2 * hidden + g.cols());
  for (int i = 0; i < batch; ++i)
    for (int r = row_offsets[i]; r < row_offsets[i + 1]; ++r) {
      readout.row(r).head(hidden) = h.row(i * node_count + row_nodes[r]);
      readout.row(r).segment(hidden, hidden) = h.row(agent_rows[i]);
      readout.row(r).tail(g.cols()) = g.row(i);
    }
  DenseCache dense;
  return dense_forward(net, readout, dense).col(0);
}

}  // namespace taxi
