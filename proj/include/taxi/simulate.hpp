#pragma once

#include <cstdint>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <tuple>
#include <vector>

#include "taxi/demand.hpp"
#include "taxi/dynamics.hpp"
#include "taxi/policy.hpp"
#include "taxi/rng.hpp"
#include "taxi/street_graph.hpp"

namespace taxi {

// Where a stage's arrivals come from. Implementations must be pure per
// minute: the same minute always yields the same list, no matter how often
// or in which order minutes are queried. That property is what makes paired
// policy comparisons and trace replay exact.
class ArrivalSource {
 public:
  virtual ~ArrivalSource() = default;
  virtual std::vector<Request> arrivals(int minute) = 0;
};

class SampledArrivals final : public ArrivalSource {
 public:
  SampledArrivals(const DemandModel& dm, std::uint64_t seed) : dm_(&dm), seed_(seed) {}
  std::vector<Request> arrivals(int minute) override {
    Rng rng(derive_seed(seed_, static_cast<std::uint64_t>(minute)));
    return sample_minute(*dm_, rng, minute);
  }

 private:
  const DemandModel* dm_;
  std::uint64_t seed_;
};

class ScriptedArrivals final : public ArrivalSource {
 public:
  // per_minute[k] is the list for minute k; index 0 is unused.
  explicit ScriptedArrivals(std::vector<std::vector<Request>> per_minute)
      : per_minute_(std::move(per_minute)) {}

  static ScriptedArrivals from_requests(const std::vector<Request>& requests,
                                        int horizon) {
    std::vector<std::vector<Request>> buckets(horizon + 1);
    for (const Request& r : requests) {
      if (r.arrival_minute < 1 || r.arrival_minute > horizon)
        throw std::invalid_argument("scripted request outside minutes 1.." +
                                    std::to_string(horizon));
      buckets[r.arrival_minute].push_back(r);
    }
    return ScriptedArrivals(std::move(buckets));
  }

  std::vector<Request> arrivals(int minute) override {
    if (minute < 0 || minute >= static_cast<int>(per_minute_.size())) return {};
    return per_minute_[minute];
  }

 private:
  std::vector<std::vector<Request>> per_minute_;
};

struct TraceStage {
  int minute = 0;
  std::vector<Control> controls;
  int arrivals = 0;           // eta(k)
  int serviced = 0;           // psi(x_k, u_k)
  int outstanding_after = 0;  // |r_bar_k|, the stage cost
};

// Everything needed to replay and independently re-account an episode.
struct EpisodeTrace {
  int horizon = 0;
  int agent_count = 0;
  std::uint64_t seed = 0;
  std::vector<NodeId> initial_locations;
  std::vector<Request> arrivals;
  std::vector<PickupEvent> pickups;
  std::vector<TraceStage> stages;
  long long total_cost = 0;
};

struct EpisodeResult {
  long long total_cost = 0;
  EpisodeTrace trace;
  SystemState final_state;  // resume point: run_episode continues from here
};

// Simulates stages initial.minute+1 .. horizon. Each stage: arrivals join
// the outstanding list, the policy is queried agent by agent on the
// post-arrival state, controls apply, and the stage cost |r_bar_k| accrues.
// Deterministic given (initial, policy determinism, arrival source, seed).
inline EpisodeResult run_episode(const SystemState& initial, Policy& policy,
                                 ArrivalSource& source, const StreetGraph& g,
                                 int horizon, std::uint64_t seed) {
  if (horizon < 1) throw std::invalid_argument("horizon must be >= 1");
  EpisodeResult out;
  EpisodeTrace& t = out.trace;
  t.horizon = horizon;
  t.agent_count = initial.agent_count();
  t.seed = seed;
  t.initial_locations = initial.locations;

  SystemState s = initial;
  policy.begin_episode(seed, horizon);
  for (int k = s.minute + 1; k <= horizon; ++k) {
    std::vector<Request> arr = source.arrivals(k);
    s = add_arrivals(s, arr);
    t.arrivals.insert(t.arrivals.end(), arr.begin(), arr.end());

    std::vector<Control> u = joint_control(policy, s);
    ApplyResult res = apply_controls(s, u, g);
    s = std::move(res.state);

    t.pickups.insert(t.pickups.end(), res.pickups.begin(), res.pickups.end());
    out.total_cost += stage_cost(s);
    t.stages.push_back({k, std::move(u), static_cast<int>(arr.size()),
                        res.serviced, stage_cost(s)});
  }
  t.total_cost = out.total_cost;
  out.final_state = std::move(s);
  return out;
}

// Convenience wrapper sampling arrivals from a demand model; arrival and
// policy randomness run on disjoint derived streams of `seed`.
inline EpisodeResult run_episode(const SystemState& initial, Policy& policy,
                                 const DemandModel& dm, const StreetGraph& g,
                                 int horizon, std::uint64_t seed) {
  SampledArrivals source(dm, derive_seed(seed, 1));
  return run_episode(initial, policy, source, g, horizon, derive_seed(seed, 2));
}

struct AuditReport {
  bool ok = false;
  long long stage_total = 0;      // sum of per-stage |r_bar_k|
  long long recomputed_total = 0; // sum of per-request waiting minutes
  std::string detail;             // first divergence when !ok
};

// Independent dual accounting over a trace. Recomputes each stage's
// outstanding count from arrival/pickup events alone, checks the recursion
// |r_bar_k| = |r_bar_{k-1}| + eta(k) - psi(k), and recomputes total cost as
// the sum over requests of min(pickup_minute, N+1) - arrival_minute. All
// three views must agree with the simulator's numbers.
inline AuditReport audit_trace(const EpisodeTrace& t) {
  AuditReport rep;
  std::map<int, int> arrivals_at, pickups_at;
  for (const Request& r : t.arrivals) ++arrivals_at[r.arrival_minute];
  for (const PickupEvent& p : t.pickups) ++pickups_at[p.minute];

  long long outstanding = 0;
  int prev = 0;
  for (const TraceStage& st : t.stages) {
    int eta = arrivals_at.count(st.minute) ? arrivals_at[st.minute] : 0;
    int psi = pickups_at.count(st.minute) ? pickups_at[st.minute] : 0;
    if (eta != st.arrivals || psi != st.serviced) {
      rep.detail = "minute " + std::to_string(st.minute) +
                   ": event counts disagree with stage record";
      return rep;
    }
    int recomputed = prev + eta - psi;
    if (recomputed != st.outstanding_after) {
      rep.detail = "minute " + std::to_string(st.minute) + ": recursion gives " +
                   std::to_string(recomputed) + " outstanding, trace records " +
                   std::to_string(st.outstanding_after);
      return rep;
    }
    prev = recomputed;
    rep.stage_total += recomputed;
  }

  // Wait-time accounting: served requests pay pickup - arrival, requests
  // still outstanding at the horizon pay N+1 - arrival.
  std::map<std::tuple<int, NodeId, NodeId>, int> unserved;
  for (const Request& r : t.arrivals)
    ++unserved[{r.arrival_minute, r.pickup, r.dropoff}];
  for (const PickupEvent& p : t.pickups) {
    auto key = std::make_tuple(p.request.arrival_minute, p.request.pickup,
                               p.request.dropoff);
    auto it = unserved.find(key);
    if (it == unserved.end() || it->second == 0) {
      rep.detail = "pickup at minute " + std::to_string(p.minute) +
                   " has no matching arrival";
      return rep;
    }
    --it->second;
    rep.recomputed_total += p.minute - p.request.arrival_minute;
  }
  for (const auto& [key, count] : unserved)
    rep.recomputed_total +=
        static_cast<long long>(count) * (t.horizon + 1 - std::get<0>(key));

  if (rep.stage_total != t.total_cost) {
    rep.detail = "stage costs sum to " + std::to_string(rep.stage_total) +
                 ", trace total is " + std::to_string(t.total_cost);
    return rep;
  }
  if (rep.recomputed_total != t.total_cost) {
    rep.detail = "per-request waits sum to " + std::to_string(rep.recomputed_total) +
                 ", trace total is " + std::to_string(t.total_cost);
    return rep;
  }
  rep.ok = true;
  return rep;
}

// Line-oriented trace format (all ids 1-based, one record per line):
//   H,<horizon>,<agents>,<seed>
//   I,<agent>,<node>
//   A,<minute>,<pickup>,<dropoff>
//   U,<minute>,<agent>,<P|M|S>,<move target or 0>
//   P,<pickup minute>,<agent>,<arrival minute>,<pickup>,<dropoff>
//   C,<minute>,<arrivals>,<serviced>,<outstanding after>
//   T,<total cost>
inline void write_trace(const EpisodeTrace& t, std::ostream& os) {
  os << "H," << t.horizon << "," << t.agent_count << "," << t.seed << "\n";
  for (std::size_t l = 0; l < t.initial_locations.size(); ++l)
    os << "I," << l + 1 << "," << t.initial_locations[l] + 1 << "\n";
  std::size_t ai = 0, pi = 0;
  for (const TraceStage& st : t.stages) {
    while (ai < t.arrivals.size() && t.arrivals[ai].arrival_minute == st.minute) {
      os << "A," << st.minute << "," << t.arrivals[ai].pickup + 1 << ","
         << t.arrivals[ai].dropoff + 1 << "\n";
      ++ai;
    }
    for (std::size_t l = 0; l < st.controls.size(); ++l) {
      const Control& c = st.controls[l];
      char kind = c.kind == Control::Kind::Pickup ? 'P'
                  : c.kind == Control::Kind::Move ? 'M'
                                                  : 'S';
      os << "U," << st.minute << "," << l + 1 << "," << kind << ","
         << (c.kind == Control::Kind::Move ? c.target + 1 : 0) << "\n";
    }
    while (pi < t.pickups.size() && t.pickups[pi].minute == st.minute) {
      const PickupEvent& p = t.pickups[pi];
      os << "P," << p.minute << "," << p.agent + 1 << ","
         << p.request.arrival_minute << "," << p.request.pickup + 1 << ","
         << p.request.dropoff + 1 << "\n";
      ++pi;
    }
    os << "C," << st.minute << "," << st.arrivals << "," << st.serviced << ","
       << st.outstanding_after << "\n";
  }
  os << "T," << t.total_cost << "\n";
}

inline EpisodeTrace read_trace(std::istream& in) {
  EpisodeTrace t;
  std::string line;
  bool saw_header = false, saw_total = false;
  int line_no = 0;
  auto fail = [&](const std::string& why) {
    throw std::invalid_argument("trace line " + std::to_string(line_no) + ": " + why);
  };
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    std::string field;
    std::vector<std::string> fields;
    while (std::getline(ls, field, ',')) fields.push_back(field);
    if (fields.empty()) continue;
    auto num = [&](std::size_t i) -> long long {
      if (i >= fields.size()) fail("missing field");
      return std::stoll(fields[i]);
    };
    switch (fields[0][0]) {
      case 'H':
        t.horizon = static_cast<int>(num(1));
        t.agent_count = static_cast<int>(num(2));
        t.seed = static_cast<std::uint64_t>(std::stoull(fields.at(3)));
        saw_header = true;
        break;
      case 'I':
        t.initial_locations.push_back(static_cast<NodeId>(num(2) - 1));
        break;
      case 'A':
        t.arrivals.push_back({static_cast<NodeId>(num(2) - 1),
                              static_cast<NodeId>(num(3) - 1),
                              static_cast<int>(num(1)), false});
        break;
      case 'U': {
        int minute = static_cast<int>(num(1));
        if (t.stages.empty() || t.stages.back().minute != minute)
          t.stages.push_back({minute, {}, 0, 0, 0});
        Control c;
        if (fields.at(3) == "P") c = pickup();
        else if (fields.at(3) == "M") c = move_to(static_cast<NodeId>(num(4) - 1));
        else if (fields.at(3) == "S") c = stay();
        else fail("unknown control kind " + fields.at(3));
        t.stages.back().controls.push_back(c);
        break;
      }
      case 'P': {
        PickupEvent p;
        p.minute = static_cast<int>(num(1));
        p.agent = static_cast<int>(num(2) - 1);
        p.request = {static_cast<NodeId>(num(4) - 1), static_cast<NodeId>(num(5) - 1),
                     static_cast<int>(num(3)), true};
        t.pickups.push_back(p);
        break;
      }
      case 'C': {
        int minute = static_cast<int>(num(1));
        if (t.stages.empty() || t.stages.back().minute != minute)
          t.stages.push_back({minute, {}, 0, 0, 0});
        t.stages.back().arrivals = static_cast<int>(num(2));
        t.stages.back().serviced = static_cast<int>(num(3));
        t.stages.back().outstanding_after = static_cast<int>(num(4));
        break;
      }
      case 'T':
        t.total_cost = num(1);
        saw_total = true;
        break;
      default:
        fail("unknown record tag " + fields[0]);
    }
  }
  if (!saw_header) throw std::invalid_argument("trace has no H header line");
  if (!saw_total) throw std::invalid_argument("trace has no T total line");
  return t;
}

inline void write_trace_file(const EpisodeTrace& t, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write trace file: " + path);
  write_trace(t, os);
}

inline EpisodeTrace read_trace_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open trace file: " + path);
  return read_trace(in);
}

}  // namespace taxi
