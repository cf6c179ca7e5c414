#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "taxi/dynamics.hpp"
#include "taxi/rng.hpp"
#include "taxi/street_graph.hpp"

namespace taxi {

// Discrete distribution over integer atoms (request counts, or node ids).
struct CategoricalDistribution {
  std::vector<int> support;   // distinct, ascending
  std::vector<double> probs;  // nonnegative, sums to 1 within 1e-9

  void validate() const {
    if (support.empty()) throw std::invalid_argument("empty support");
    if (support.size() != probs.size())
      throw std::invalid_argument("support/probs length mismatch");
    double sum = 0;
    for (std::size_t i = 0; i < support.size(); ++i) {
      if (i > 0 && support[i] <= support[i - 1])
        throw std::invalid_argument("support atoms must be distinct and ascending");
      if (!(probs[i] >= 0.0))
        throw std::invalid_argument("negative or NaN probability");
      sum += probs[i];
    }
    if (std::abs(sum - 1.0) > 1e-9)
      throw std::invalid_argument("probabilities sum to " + std::to_string(sum) +
                                  ", not 1");
  }

  double prob_of(int atom) const {
    for (std::size_t i = 0; i < support.size(); ++i)
      if (support[i] == atom) return probs[i];
    return 0.0;
  }

  // Inverse-CDF draw; the explicit walk keeps sampling identical across
  // platforms. Rounding leftovers fall to the last positive atom.
  int sample(Rng& rng) const {
    double u = rng.next_double();
    double cum = 0;
    int last_positive = support.front();
    for (std::size_t i = 0; i < support.size(); ++i) {
      if (probs[i] <= 0.0) continue;
      last_positive = support[i];
      cum += probs[i];
      if (u < cum) return support[i];
    }
    return last_positive;
  }
};

// The demand triple: request count per minute (eta), pickup node, dropoff
// node. Labels identify the profile ("low", "high", ...) in reports and in
// the model-library manifest.
struct DemandModel {
  CategoricalDistribution eta;
  CategoricalDistribution pickup;
  CategoricalDistribution dropoff;
  std::string label;

  void validate() const {
    eta.validate();
    pickup.validate();
    dropoff.validate();
    if (eta.support.front() < 0)
      throw std::invalid_argument("negative request count in eta support");
  }

  // Stricter check used when the model is paired with a graph: location
  // supports must cover every node with positive probability.
  void validate_for_graph(int node_count) const {
    validate();
    for (const auto* d : {&pickup, &dropoff}) {
      if (static_cast<int>(d->support.size()) != node_count)
        throw std::invalid_argument("location distribution does not cover all nodes");
      for (std::size_t i = 0; i < d->support.size(); ++i) {
        if (d->support[i] != static_cast<int>(i))
          throw std::invalid_argument("location support must be exactly the node set");
        if (d->probs[i] <= 0.0)
          throw std::invalid_argument("node " + std::to_string(i + 1) +
                                      " has zero probability");
      }
    }
  }
};

struct RequestLog {
  struct Entry {
    int minute = 0;  // 1-based stage index
    NodeId pickup = -1;
    NodeId dropoff = -1;
  };
  std::vector<Entry> entries;  // nondecreasing minutes after load
};

// CSV "minute,pickup,dropoff" with 1-based nodes; '#' comments, blank lines
// and a textual header line are skipped. Entries are stably sorted by minute.
inline RequestLog load_request_log(std::istream& in) {
  RequestLog log;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (auto pos = line.find('#'); pos != std::string::npos) line.resize(pos);
    auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos) continue;
    if (!std::isdigit(static_cast<unsigned char>(line[first]))) {
      if (line_no == 1) continue;  // header row
      throw std::invalid_argument("request log line " + std::to_string(line_no) +
                                  ": expected minute,pickup,dropoff");
    }
    long minute, p, d;
    char c1, c2;
    std::istringstream ls(line);
    if (!(ls >> minute >> c1 >> p >> c2 >> d) || c1 != ',' || c2 != ',')
      throw std::invalid_argument("request log line " + std::to_string(line_no) +
                                  ": expected minute,pickup,dropoff");
    if (minute < 1 || p < 1 || d < 1)
      throw std::invalid_argument("request log line " + std::to_string(line_no) +
                                  ": minute and 1-based nodes must be positive");
    log.entries.push_back({static_cast<int>(minute), static_cast<NodeId>(p - 1),
                           static_cast<NodeId>(d - 1)});
  }
  std::stable_sort(log.entries.begin(), log.entries.end(),
                   [](const auto& a, const auto& b) { return a.minute < b.minute; });
  return log;
}

inline RequestLog load_request_log_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open request log: " + path);
  return load_request_log(in);
}

// Empirical per-minute arrival-count distribution over 0..max_count.
// Minutes absent from the log count as zero arrivals. A minute with more
// than max_count arrivals is rejected (truncating would quietly shrink the
// support diameter the ambiguity radius depends on).
inline CategoricalDistribution estimate_eta(const RequestLog& log, int horizon_minutes,
                                            int max_count) {
  if (horizon_minutes < 1) throw std::invalid_argument("horizon must be >= 1");
  if (max_count < 0) throw std::invalid_argument("max_count must be >= 0");
  std::map<int, int> per_minute;
  for (const auto& e : log.entries) {
    if (e.minute > horizon_minutes)
      throw std::invalid_argument("log entry at minute " + std::to_string(e.minute) +
                                  " lies beyond horizon " +
                                  std::to_string(horizon_minutes));
    ++per_minute[e.minute];
  }
  std::vector<int> occupancy(max_count + 1, 0);
  for (const auto& [minute, count] : per_minute) {
    if (count > max_count)
      throw std::invalid_argument("minute " + std::to_string(minute) + " has " +
                                  std::to_string(count) + " arrivals, above the cap " +
                                  std::to_string(max_count));
    ++occupancy[count];
  }
  occupancy[0] += horizon_minutes - static_cast<int>(per_minute.size());

  CategoricalDistribution out;
  for (int x = 0; x <= max_count; ++x) {
    out.support.push_back(x);
    out.probs.push_back(static_cast<double>(occupancy[x]) / horizon_minutes);
  }
  out.validate();
  return out;
}

enum class LocationColumn { Pickup, Dropoff };

// Additively smoothed node frequency: p(y) = (s_y + 1/n) / (1 + sum s).
// Every node keeps strictly positive probability, even on an empty log.
inline CategoricalDistribution estimate_location_dist(const RequestLog& log,
                                                      const StreetGraph& g,
                                                      LocationColumn which) {
  const int n = g.node_count();
  std::vector<long> counts(n, 0);
  long total = 0;
  for (const auto& e : log.entries) {
    NodeId y = which == LocationColumn::Pickup ? e.pickup : e.dropoff;
    if (y < 0 || y >= n)
      throw std::invalid_argument("log references node " + std::to_string(y + 1) +
                                  " outside the graph");
    ++counts[y];
    ++total;
  }
  CategoricalDistribution out;
  for (NodeId y = 0; y < n; ++y) {
    out.support.push_back(y);
    out.probs.push_back((counts[y] + 1.0 / n) / (1.0 + total));
  }
  out.validate();
  return out;
}

// Draws one minute of requests: count from eta, then independent pickup and
// dropoff nodes per request. A dropoff equal to its pickup is redrawn (the
// dynamics have no zero-length trips); 100 failures abort.
inline std::vector<Request> sample_minute(const DemandModel& dm, Rng& rng, int minute) {
  int count = dm.eta.sample(rng);
  std::vector<Request> out;
  out.reserve(count);
  for (int i = 0; i < count; ++i) {
    NodeId p = static_cast<NodeId>(dm.pickup.sample(rng));
    NodeId d = static_cast<NodeId>(dm.dropoff.sample(rng));
    int attempts = 0;
    while (d == p) {
      if (++attempts > 100)
        throw std::runtime_error(
            "dropoff resampling exhausted 100 attempts at minute " +
            std::to_string(minute) + "; dropoff distribution too degenerate");
      d = static_cast<NodeId>(dm.dropoff.sample(rng));
    }
    out.push_back({p, d, minute, false});
  }
  return out;
}

namespace detail {

inline void write_distribution(std::ostream& os, const std::string& name,
                               const CategoricalDistribution& d, int atom_offset) {
  os << name << "\n";
  char buf[64];
  for (std::size_t i = 0; i < d.support.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%d %.17g", d.support[i] + atom_offset, d.probs[i]);
    os << buf << "\n";
  }
}

}  // namespace detail

// Text model format, sections in fixed order:
//   MODEL <label>
//   ETA      — lines "count probability"
//   PICKUP   — lines "node probability", nodes 1-based as in every file
//   DROPOFF  — same
//   END
// Probabilities carry 17 significant digits, so a round trip is bit-exact.
inline void save_model(const DemandModel& dm, std::ostream& os) {
  os << "MODEL " << dm.label << "\n";
  detail::write_distribution(os, "ETA", dm.eta, 0);
  detail::write_distribution(os, "PICKUP", dm.pickup, 1);
  detail::write_distribution(os, "DROPOFF", dm.dropoff, 1);
  os << "END\n";
}

inline DemandModel load_model(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line.rfind("MODEL", 0) != 0)
    throw std::invalid_argument("model file must start with a MODEL line");
  DemandModel dm;
  dm.label = line.size() > 6 ? line.substr(6) : "";

  auto read_section = [&](const std::string& name, int atom_offset)
      -> CategoricalDistribution {
    if (!std::getline(in, line) || line != name)
      throw std::invalid_argument("expected section " + name);
    CategoricalDistribution d;
    while (in.peek() != EOF) {
      if (!std::isdigit(in.peek()) && in.peek() != '-') break;  // next section
      if (!std::getline(in, line)) break;
      std::istringstream ls(line);
      long atom;
      double prob;
      if (!(ls >> atom >> prob))
        throw std::invalid_argument("malformed line in section " + name + ": " + line);
      d.support.push_back(static_cast<int>(atom - atom_offset));
      d.probs.push_back(prob);
    }
    d.validate();
    if (atom_offset > 0 && d.support.front() < 0)
      throw std::invalid_argument("node atoms in section " + name + " are 1-based");
    return d;
  };

  dm.eta = read_section("ETA", 0);
  dm.pickup = read_section("PICKUP", 1);
  dm.dropoff = read_section("DROPOFF", 1);
  if (!std::getline(in, line) || line != "END")
    throw std::invalid_argument("model file missing END marker");
  dm.validate();
  return dm;
}

inline void save_model_file(const DemandModel& dm, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write model file: " + path);
  save_model(dm, os);
}

inline DemandModel load_model_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open model file: " + path);
  return load_model(in);
}

// The three reference demand profiles used across the experiments: low,
// medium, high per-minute request-count distributions, with pickup and
// dropoff locations uniform over the graph.
inline DemandModel make_reference_model(const std::string& label, int node_count) {
  DemandModel dm;
  dm.label = label;
  if (label == "low")
    dm.eta = {{0, 1, 2, 3, 4, 5, 6}, {0.95, 0.05, 0, 0, 0, 0, 0}};
  else if (label == "medium")
    dm.eta = {{0, 1, 2, 3, 4, 5, 6}, {0.85, 0.15, 0, 0, 0, 0, 0}};
  else if (label == "high")
    dm.eta = {{0, 1, 2, 3, 4, 5, 6}, {0.82, 0.06, 0.06, 0.02, 0.02, 0, 0.02}};
  else
    throw std::invalid_argument("unknown reference profile: " + label);
  CategoricalDistribution uniform;
  for (NodeId v = 0; v < node_count; ++v) {
    uniform.support.push_back(v);
    uniform.probs.push_back(1.0 / node_count);
  }
  dm.pickup = uniform;
  dm.dropoff = uniform;
  dm.validate_for_graph(node_count);
  return dm;
}

}  // namespace taxi
