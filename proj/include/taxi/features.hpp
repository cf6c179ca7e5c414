#pragma once

// Feature encoding consumed by the policy-approximation networks, plus the
// labeled-sample container and its text file format. A sample is the
// feature view one agent had at a decision, tagged with the lookahead
// policy's chosen control split into a pickup bit and a move target.

#include <Eigen/Dense>
#include <algorithm>
#include <istream>
#include <ostream>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "taxi/dynamics.hpp"
#include "taxi/street_graph.hpp"

namespace taxi {

// node_features: n x (m+2). Columns 0..m-1 flag each agent's node, column m
// flags nodes other agents' already-chosen Move controls head to, column
// m+1 counts outstanding pickups per node (sums to |r_bar|).
// global_features: the m trip timers.
struct FeatureEncoding {
  Eigen::MatrixXd node_features;
  Eigen::VectorXd global_features;
};

// `others_controls` holds tentative controls for a prefix of agents (in the
// sequential scheme: those decided before `agent`); an entry for `agent`
// itself is ignored if present.
inline FeatureEncoding encode(const SystemState& s, int agent,
                              std::span<const Control> others_controls,
                              const StreetGraph& g) {
  if (agent < 0 || agent >= s.agent_count())
    throw std::out_of_range("agent index out of range");
  const int n = g.node_count();
  const int m = s.agent_count();
  FeatureEncoding enc;
  enc.node_features = Eigen::MatrixXd::Zero(n, m + 2);
  enc.global_features = Eigen::VectorXd::Zero(m);
  for (int j = 0; j < m; ++j) {
    enc.node_features(s.locations[j], j) = 1.0;
    enc.global_features(j) = static_cast<double>(s.timers[j]);
  }
  for (std::size_t j = 0; j < others_controls.size(); ++j) {
    if (static_cast<int>(j) == agent) continue;
    if (others_controls[j].kind == Control::Kind::Move)
      enc.node_features(others_controls[j].target, m) = 1.0;
  }
  for (const Request& r : s.outstanding) enc.node_features(r.pickup, m + 1) += 1.0;
  return enc;
}

// Move-head label/output space: the agent's neighbors plus its own node
// (staying in place), ascending. Everything else is masked off.
inline std::vector<int> feasible_move_targets(const StreetGraph& g, NodeId at) {
  std::vector<int> targets(g.neighbors(at).begin(), g.neighbors(at).end());
  targets.insert(std::lower_bound(targets.begin(), targets.end(), at), at);
  return targets;
}

struct TrainingSample {
  FeatureEncoding features;
  int agent = 0;
  int agent_node = 0;
  bool pickup = false;  // pickup-head label
  int move_target = -1;  // move-head label: target node, own node = stay; -1 when pickup
  std::vector<int> feasible_moves;  // mask for the move head

  // The label re-expressed as a control.
  Control label_control() const {
    if (pickup) return taxi::pickup();
    if (move_target == agent_node) return stay();
    return move_to(move_target);
  }
};

using TrainingSet = std::vector<TrainingSample>;

// Text label file. Node features are written sparsely; ids and matrix
// indices are 1-based in the file.
inline void save_labels(std::ostream& out, const TrainingSet& set, int node_count,
                        int agent_count) {
  out << "LABELS 1\n";
  out << "GRAPH " << node_count << ' ' << agent_count << '\n';
  for (const TrainingSample& sample : set) {
    out << "SAMPLE " << sample.agent + 1 << ' ' << sample.agent_node + 1 << ' '
        << (sample.pickup ? 1 : 0) << ' '
        << (sample.pickup ? 0 : sample.move_target + 1) << '\n';
    out << "G";
    for (int j = 0; j < sample.features.global_features.size(); ++j)
      out << ' ' << sample.features.global_features(j);
    out << '\n';
    for (int v = 0; v < sample.features.node_features.rows(); ++v)
      for (int c = 0; c < sample.features.node_features.cols(); ++c)
        if (sample.features.node_features(v, c) != 0.0)
          out << "N " << v + 1 << ' ' << c + 1 << ' '
              << sample.features.node_features(v, c) << '\n';
    out << "F";
    for (int v : sample.feasible_moves) out << ' ' << v + 1;
    out << '\n';
  }
  out << "END\n";
}

struct LabelFile {
  int node_count = 0;
  int agent_count = 0;
  TrainingSet samples;
};

inline LabelFile load_labels(std::istream& in) {
  std::string line;
  auto fail = [](int line_no, const std::string& why) {
    throw std::invalid_argument("label file line " + std::to_string(line_no) + ": " +
                                why);
  };
  int line_no = 0;
  auto next_line = [&](std::string& into) {
    while (std::getline(in, into)) {
      ++line_no;
      if (!into.empty() && into.back() == '\r') into.pop_back();
      if (!into.empty()) return true;
    }
    return false;
  };

  LabelFile file;
  if (!next_line(line) || line.rfind("LABELS ", 0) != 0)
    fail(line_no, "expected LABELS header");
  if (!next_line(line)) fail(line_no, "missing GRAPH line");
  {
    std::istringstream fields(line);
    std::string tag;
    if (!(fields >> tag >> file.node_count >> file.agent_count) || tag != "GRAPH" ||
        file.node_count < 1 || file.agent_count < 1)
      fail(line_no, "malformed GRAPH line");
  }

  TrainingSample* current = nullptr;
  bool ended = false;
  while (next_line(line)) {
    std::istringstream fields(line);
    std::string tag;
    fields >> tag;
    if (tag == "END") {
      ended = true;
      break;
    }
    if (tag == "SAMPLE") {
      int agent = 0, node = 0, pickup_bit = 0, move = 0;
      if (!(fields >> agent >> node >> pickup_bit >> move))
        fail(line_no, "malformed SAMPLE line");
      TrainingSample sample;
      sample.agent = agent - 1;
      sample.agent_node = node - 1;
      sample.pickup = pickup_bit != 0;
      sample.move_target = sample.pickup ? -1 : move - 1;
      sample.features.node_features =
          Eigen::MatrixXd::Zero(file.node_count, file.agent_count + 2);
      sample.features.global_features = Eigen::VectorXd::Zero(file.agent_count);
      if (sample.agent < 0 || sample.agent >= file.agent_count)
        fail(line_no, "agent index out of range");
      if (sample.agent_node < 0 || sample.agent_node >= file.node_count)
        fail(line_no, "agent node out of range");
      file.samples.push_back(std::move(sample));
      current = &file.samples.back();
      continue;
    }
    if (current == nullptr) fail(line_no, "record before first SAMPLE");
    if (tag == "G") {
      for (int j = 0; j < file.agent_count; ++j)
        if (!(fields >> current->features.global_features(j)))
          fail(line_no, "expected " + std::to_string(file.agent_count) + " timers");
    } else if (tag == "N") {
      int row = 0, col = 0;
      double value = 0.0;
      if (!(fields >> row >> col >> value)) fail(line_no, "malformed N line");
      if (row < 1 || row > file.node_count || col < 1 || col > file.agent_count + 2)
        fail(line_no, "feature index out of range");
      current->features.node_features(row - 1, col - 1) = value;
    } else if (tag == "F") {
      int v = 0;
      while (fields >> v) {
        if (v < 1 || v > file.node_count) fail(line_no, "feasible node out of range");
        current->feasible_moves.push_back(v - 1);
      }
      if (current->feasible_moves.empty()) fail(line_no, "empty feasible set");
    } else {
      fail(line_no, "unknown record tag `" + tag + "`");
    }
  }
  if (!ended) fail(line_no, "missing END marker");
  return file;
}

}  // namespace taxi
