#pragma once

// Online policy around a trained net pair, and the label-generation
// pipeline that distills one-at-a-time rollout decisions into training
// samples for those nets.

#include <cstdint>
#include <map>
#include <span>
#include <stdexcept>
#include <utility>
#include <vector>

#include "taxi/demand.hpp"
#include "taxi/dynamics.hpp"
#include "taxi/features.hpp"
#include "taxi/gnn.hpp"
#include "taxi/policy.hpp"
#include "taxi/rng.hpp"
#include "taxi/rollout.hpp"
#include "taxi/street_graph.hpp"

namespace taxi {

// Plays the trained nets directly. Busy agents take their forced move
// without touching the nets. A free agent consults the pickup head only
// when standing on a request no preceding agent has claimed (anywhere else
// a Pickup would be infeasible, so the repair to the best masked move is
// folded into the gate); otherwise the move head picks the best feasible
// target, own node meaning Stay. Scalar queries route through the batched
// path with a batch of one, so both entry points always agree.
class ApproximatorPolicy final : public Policy, public BatchPolicy {
 public:
  ApproximatorPolicy(NetPair nets, const StreetGraph& g)
      : nets_(std::move(nets)), g_(&g), a_(normalized_adjacency(g)) {
    nets_.validate();
    require_compatible(nets_, g, nets_.agent_count);
  }

  Control control(const SystemState& s, int agent,
                  std::span<const Control> preceding) override {
    StageQuery query{&s, preceding};
    Control out = stay();
    control_batch(agent, std::span<const StageQuery>(&query, 1),
                  std::span<Control>(&out, 1));
    return out;
  }

  void control_batch(int agent, std::span<const StageQuery> queries,
                     std::span<Control> out) override {
    if (queries.size() != out.size())
      throw std::invalid_argument("query and output spans differ in size");
    const int m = nets_.agent_count;
    std::vector<std::size_t> gated;      // pickup head decides first
    std::vector<std::size_t> undecided;  // move head decides
    for (std::size_t i = 0; i < queries.size(); ++i) {
      const SystemState& s = *queries[i].state;
      if (s.agent_count() != m)
        throw std::invalid_argument("state has " + std::to_string(s.agent_count()) +
                                    " agents but the nets were trained for " +
                                    std::to_string(m));
      if (s.busy(agent)) {
        out[i] = move_to(g_->next_hop(s.locations[agent], s.busy_targets[agent]));
      } else if (pickup_unclaimed(s, agent, queries[i].prefix)) {
        gated.push_back(i);
      } else {
        undecided.push_back(i);
      }
    }

    if (!gated.empty()) {
      Batch b = stack(queries, gated, agent);
      Eigen::MatrixXd logits =
          pickup_logits_batch(nets_.pickup, block(gated.size()), b.x, b.agent_rows, b.g);
      for (std::size_t k = 0; k < gated.size(); ++k) {
        if (logits(static_cast<long>(k), 1) > logits(static_cast<long>(k), 0))
          out[gated[k]] = pickup();
        else
          undecided.push_back(gated[k]);
      }
    }

    if (!undecided.empty()) {
      Batch b = stack(queries, undecided, agent);
      const int n = g_->node_count();
      std::vector<int> row_nodes, row_offsets{0};
      for (std::size_t i : undecided) {
        for (int v : feasible_move_targets(*g_, queries[i].state->locations[agent]))
          row_nodes.push_back(v);
        row_offsets.push_back(static_cast<int>(row_nodes.size()));
      }
      Eigen::VectorXd logits =
          move_logits_batch(nets_.move, block(undecided.size()), b.x, b.agent_rows,
                            b.g, n, row_nodes, row_offsets);
      for (std::size_t k = 0; k < undecided.size(); ++k) {
        int begin = row_offsets[k], end = row_offsets[k + 1];
        int best = begin;
        for (int r = begin + 1; r < end; ++r)
          if (logits(r) > logits(best)) best = r;
        NodeId at = queries[undecided[k]].state->locations[agent];
        out[undecided[k]] = row_nodes[best] == at ? stay() : move_to(row_nodes[best]);
      }
    }
  }

  const NetPair& nets() const { return nets_; }

 private:
  struct Batch {
    Eigen::MatrixXd x;
    Eigen::MatrixXd g;
    std::vector<int> agent_rows;
  };

  Batch stack(std::span<const StageQuery> queries,
              const std::vector<std::size_t>& indices, int agent) const {
    const int n = g_->node_count();
    const int m = nets_.agent_count;
    Batch b;
    b.x.resize(static_cast<long>(indices.size()) * n, m + 2);
    b.g.resize(static_cast<long>(indices.size()), m);
    b.agent_rows.resize(indices.size());
    for (std::size_t k = 0; k < indices.size(); ++k) {
      const StageQuery& q = queries[indices[k]];
      FeatureEncoding enc = encode(*q.state, agent, q.prefix, *g_);
      b.x.middleRows(static_cast<long>(k) * n, n) = enc.node_features;
      b.g.row(static_cast<long>(k)) = enc.global_features.transpose();
      b.agent_rows[k] = static_cast<int>(k) * n + q.state->locations[agent];
    }
    return b;
  }

  const SparseAdjacency& block(std::size_t copies) {
    auto it = blocks_.find(copies);
    if (it == blocks_.end())
      it = blocks_.emplace(copies, block_adjacency(a_, static_cast<int>(copies))).first;
    return it->second;
  }

  NetPair nets_;
  const StreetGraph* g_;
  SparseAdjacency a_;
  std::map<std::size_t, SparseAdjacency> blocks_;
};

struct LabelGenConfig {
  RolloutConfig rollout;
  int agents = 1;
  int horizon = 60;
  int warmup_max = 5;  // outstanding requests accumulate over up to this many minutes

  void validate() const {
    rollout.validate();
    if (agents < 1) throw std::invalid_argument("label generation needs agents >= 1");
    if (horizon < 1) throw std::invalid_argument("label generation needs horizon >= 1");
    if (warmup_max < 0) throw std::invalid_argument("negative warm-up window");
  }
};

// Draws `count` random states (uniform agent locations, a uniform minute in
// 1..horizon, outstanding requests accumulated by sampling the demand model
// over a warm-up window ending at that minute with no one serving), then
// labels each agent in index order with the one-at-a-time rollout control,
// feeding chosen controls forward. All agents are free in these states, so
// every state yields exactly `agents` samples.
inline TrainingSet generate_training_set(const DemandModel& dm, const StreetGraph& g,
                                         Policy& base, const LabelGenConfig& cfg,
                                         int count, std::uint64_t seed) {
  cfg.validate();
  dm.validate_for_graph(g.node_count());
  if (count < 0) throw std::invalid_argument("negative sample count");

  TrainingSet set;
  set.reserve(static_cast<std::size_t>(count) * cfg.agents);
  DemandFuture future(dm);
  for (int i = 0; i < count; ++i) {
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(i)));
    std::vector<NodeId> locations;
    for (int l = 0; l < cfg.agents; ++l)
      locations.push_back(
          static_cast<NodeId>(rng.next_below(static_cast<std::uint64_t>(g.node_count()))));
    SystemState s = make_initial_state(std::move(locations));
    s.minute = 1 + static_cast<int>(rng.next_below(static_cast<std::uint64_t>(cfg.horizon)));
    int warmup = static_cast<int>(rng.next_below(static_cast<std::uint64_t>(cfg.warmup_max) + 1));
    for (int minute = std::max(1, s.minute - warmup); minute <= s.minute; ++minute)
      for (Request& r : sample_minute(dm, rng, minute)) s.outstanding.push_back(r);

    base.begin_episode(derive_seed(seed, static_cast<std::uint64_t>(i), 0x62617365ULL),
                       cfg.horizon);
    std::vector<Control> chosen;
    for (int l = 0; l < cfg.agents; ++l) {
      std::uint64_t decision_seed =
          derive_seed(seed, static_cast<std::uint64_t>(i), static_cast<std::uint64_t>(l));
      Control c = one_at_a_time_rollout_control(s, l, chosen, base, cfg.rollout,
                                                future, g, cfg.horizon, decision_seed);
      TrainingSample sample;
      sample.features = encode(s, l, chosen, g);
      sample.agent = l;
      sample.agent_node = s.locations[l];
      sample.feasible_moves = feasible_move_targets(g, sample.agent_node);
      if (c.kind == Control::Kind::Pickup) {
        sample.pickup = true;
        sample.move_target = -1;
      } else {
        sample.pickup = false;
        sample.move_target = c.kind == Control::Kind::Stay ? sample.agent_node : c.target;
      }
      set.push_back(std::move(sample));
      chosen.push_back(c);
    }
  }
  return set;
}

}  // namespace taxi
