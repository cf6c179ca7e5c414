#pragma once

// Experiment orchestration: key=value run configuration, paired policy
// evaluation with min-max normalized summaries, and model-switching runs
// that review the active approximator against the ambiguity regions once
// per estimation window.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <iomanip>
#include <istream>
#include <map>
#include <memory>
#include <ostream>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "taxi/ambiguity.hpp"
#include "taxi/approx.hpp"
#include "taxi/benchmarks.hpp"
#include "taxi/demand.hpp"
#include "taxi/dynamics.hpp"
#include "taxi/gnn.hpp"
#include "taxi/oracle.hpp"
#include "taxi/policy.hpp"
#include "taxi/rng.hpp"
#include "taxi/rollout.hpp"
#include "taxi/simulate.hpp"
#include "taxi/street_graph.hpp"

namespace taxi {

namespace detail {

inline std::string trim(const std::string& s) {
  auto first = s.find_first_not_of(" \t\r");
  if (first == std::string::npos) return "";
  auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

template <typename T>
inline T parse_number(const std::string& key, const std::string& value,
                      T (*convert)(const std::string&, std::size_t*)) {
  std::size_t consumed = 0;
  T parsed{};
  try {
    parsed = convert(value, &consumed);
  } catch (const std::exception&) {
    throw std::invalid_argument("config key " + key + ": cannot parse `" + value + "`");
  }
  if (consumed != value.size())
    throw std::invalid_argument("config key " + key + ": trailing characters in `" +
                                value + "`");
  return parsed;
}

inline int parse_int(const std::string& key, const std::string& value) {
  return parse_number<int>(key, value,
                           [](const std::string& s, std::size_t* c) { return std::stoi(s, c); });
}

inline long long parse_i64(const std::string& key, const std::string& value) {
  return parse_number<long long>(
      key, value, [](const std::string& s, std::size_t* c) { return std::stoll(s, c); });
}

inline std::uint64_t parse_u64(const std::string& key, const std::string& value) {
  return parse_number<std::uint64_t>(key, value, [](const std::string& s, std::size_t* c) {
    return static_cast<std::uint64_t>(std::stoull(s, c));
  });
}

inline double parse_double(const std::string& key, const std::string& value) {
  return parse_number<double>(
      key, value, [](const std::string& s, std::size_t* c) { return std::stod(s, c); });
}

inline std::vector<std::string> split_list(const std::string& value) {
  std::vector<std::string> items;
  std::string item;
  for (char c : value) {
    if (c == ',' || c == ' ' || c == '\t') {
      if (!item.empty()) items.push_back(std::move(item));
      item.clear();
    } else {
      item.push_back(c);
    }
  }
  if (!item.empty()) items.push_back(std::move(item));
  return items;
}

}  // namespace detail

// Plain `key = value` lines; '#' starts a comment, blank lines are skipped,
// repeated keys keep the last assignment.
inline std::map<std::string, std::string> parse_key_values(std::istream& in) {
  std::map<std::string, std::string> out;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (auto pos = line.find('#'); pos != std::string::npos) line.resize(pos);
    std::string trimmed = detail::trim(line);
    if (trimmed.empty()) continue;
    auto eq = trimmed.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("config line " + std::to_string(line_no) +
                                  ": expected key = value");
    std::string key = detail::trim(trimmed.substr(0, eq));
    std::string value = detail::trim(trimmed.substr(eq + 1));
    if (key.empty())
      throw std::invalid_argument("config line " + std::to_string(line_no) +
                                  ": empty key");
    out[key] = value;
  }
  return out;
}

// One experiment run as written in a config file: input paths plus every
// knob the evaluation commands accept. Path existence is checked by
// whoever opens them.
struct ExperimentConfig {
  std::string graph;
  std::string demand;
  std::string weights;  // approximator weights, required by approx/online rows
  std::vector<std::string> policies = {"greedy", "assign", "tss", "rollout", "oracle"};
  int horizon = 60;
  int agents = 3;
  int episodes = 50;
  std::uint64_t seed = 1;
  int trajectories = 128;
  int truncation = 5;
  int tss_samples = 200;
  double q = 0.54;
  long long radius_samples = 5000;
  int max_count = 6;
  RadiusLogBase log_base = RadiusLogBase::Base10;
  std::string output;  // directory for CSV artifacts; empty = stdout only

  void validate() const {
    if (graph.empty()) throw std::invalid_argument("config: graph path is required");
    if (demand.empty()) throw std::invalid_argument("config: demand path is required");
    if (policies.empty()) throw std::invalid_argument("config: empty policy list");
    if (horizon < 1 || agents < 1 || episodes < 1)
      throw std::invalid_argument("config: horizon, agents, episodes must be >= 1");
    if (trajectories < 1 || truncation < 1 || tss_samples < 1)
      throw std::invalid_argument("config: lookahead knobs must be >= 1");
    if (!(q > 0.0 && q < 1.0)) throw std::invalid_argument("config: q must lie in (0,1)");
    if (radius_samples < 1 || max_count < 0)
      throw std::invalid_argument("config: radius_samples must be >= 1, max_count >= 0");
  }

  static ExperimentConfig from_stream(std::istream& in) {
    ExperimentConfig cfg;
    for (const auto& [key, value] : parse_key_values(in)) {
      if (key == "graph") cfg.graph = value;
      else if (key == "demand") cfg.demand = value;
      else if (key == "weights") cfg.weights = value;
      else if (key == "policies") cfg.policies = detail::split_list(value);
      else if (key == "horizon") cfg.horizon = detail::parse_int(key, value);
      else if (key == "agents") cfg.agents = detail::parse_int(key, value);
      else if (key == "episodes") cfg.episodes = detail::parse_int(key, value);
      else if (key == "seed") cfg.seed = detail::parse_u64(key, value);
      else if (key == "trajectories") cfg.trajectories = detail::parse_int(key, value);
      else if (key == "truncation") cfg.truncation = detail::parse_int(key, value);
      else if (key == "tss_samples") cfg.tss_samples = detail::parse_int(key, value);
      else if (key == "q") cfg.q = detail::parse_double(key, value);
      else if (key == "radius_samples") cfg.radius_samples = detail::parse_i64(key, value);
      else if (key == "max_count") cfg.max_count = detail::parse_int(key, value);
      else if (key == "log_base") {
        if (value == "base10") cfg.log_base = RadiusLogBase::Base10;
        else if (value == "natural") cfg.log_base = RadiusLogBase::Natural;
        else throw std::invalid_argument("config key log_base: expected base10 or natural");
      } else if (key == "output") cfg.output = value;
      else throw std::invalid_argument("unknown config key: " + key);
    }
    cfg.validate();
    return cfg;
  }
};

// Whole-horizon arrival realization drawn on the same per-minute streams
// SampledArrivals uses, so replaying the script reproduces a live sampled
// episode seed for seed.
inline std::vector<Request> sample_script(const DemandModel& dm, int horizon,
                                          std::uint64_t seed) {
  std::vector<Request> script;
  for (int k = 1; k <= horizon; ++k) {
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(k)));
    for (const Request& r : sample_minute(dm, rng, k)) script.push_back(r);
  }
  return script;
}

// A runnable policy and the object graph backing it. The oracle entry has
// no policy; its cost is computed directly from the realized script.
struct BuiltPolicy {
  std::string name;
  std::shared_ptr<void> keepalive;
  Policy* policy = nullptr;
  bool is_oracle = false;
};

inline BuiltPolicy build_policy(const std::string& name, const StreetGraph& g,
                                const DemandModel& dm, const RolloutConfig& rollout,
                                const TssConfig& tss, const NetPair* nets) {
  auto require_nets = [&]() -> const NetPair& {
    if (!nets)
      throw std::invalid_argument("policy " + name +
                                  " needs trained approximator weights");
    return *nets;
  };
  if (name == "greedy") {
    auto p = std::make_shared<GreedyPolicy>(g);
    return {name, p, p.get(), false};
  }
  if (name == "assign") {
    auto p = std::make_shared<InstantAssignmentPolicy>(g, false);
    return {name, p, p.get(), false};
  }
  if (name == "assign-opt") {
    auto p = std::make_shared<InstantAssignmentPolicy>(g, true);
    return {name, p, p.get(), false};
  }
  if (name == "tss") {
    auto p = std::make_shared<TssPolicy>(g, dm, tss);
    return {name, p, p.get(), false};
  }
  if (name == "rollout") {
    struct Bundle {
      GreedyPolicy base;
      DemandFuture future;
      RolloutPolicy policy;
      Bundle(const StreetGraph& g, const DemandModel& dm, RolloutConfig cfg)
          : base(g), future(dm), policy(base, cfg, future, g) {}
    };
    auto b = std::make_shared<Bundle>(g, dm, rollout);
    return {name, b, &b->policy, false};
  }
  if (name == "approx") {
    auto p = std::make_shared<ApproximatorPolicy>(require_nets(), g);
    return {name, p, p.get(), false};
  }
  if (name == "online") {
    struct Bundle {
      ApproximatorPolicy base;
      DemandFuture future;
      RolloutPolicy policy;
      Bundle(const NetPair& nets, const StreetGraph& g, const DemandModel& dm,
             RolloutConfig cfg)
          : base(nets, g), future(dm), policy(base, cfg, future, g) {}
    };
    auto b = std::make_shared<Bundle>(require_nets(), g, dm, rollout);
    return {name, b, &b->policy, false};
  }
  if (name == "oracle") return {name, nullptr, nullptr, true};
  throw std::invalid_argument(
      "unknown policy name: " + name +
      " (expected greedy, assign, assign-opt, tss, rollout, approx, online, oracle)");
}

struct PolicyRow {
  std::string name;
  std::vector<long long> episode_costs;  // raw minutes, one entry per episode
  double mean_minutes = 0.0;
  double std_error = 0.0;
  double normalized = 0.0;  // 0 best .. 1 worst; 0 when normalization undefined
  int inexact_oracle_episodes = 0;  // oracle rows: node budget exhaustions
};

struct ResultTable {
  std::vector<PolicyRow> rows;
  double min_minutes = 0.0;  // over row means
  double max_minutes = 0.0;
  bool normalization_defined = false;  // false for one row or all-equal means
  int episodes = 0;
  int horizon = 0;
  int agents = 0;
};

namespace detail {

inline void summarize_rows(ResultTable& table) {
  for (PolicyRow& row : table.rows) {
    const auto n = static_cast<double>(row.episode_costs.size());
    double sum = 0.0;
    for (long long c : row.episode_costs) sum += static_cast<double>(c);
    row.mean_minutes = sum / n;
    double sq = 0.0;
    for (long long c : row.episode_costs) {
      double d = static_cast<double>(c) - row.mean_minutes;
      sq += d * d;
    }
    row.std_error = n > 1 ? std::sqrt(sq / (n - 1) / n) : 0.0;
  }
  table.min_minutes = table.max_minutes = table.rows.front().mean_minutes;
  for (const PolicyRow& row : table.rows) {
    table.min_minutes = std::min(table.min_minutes, row.mean_minutes);
    table.max_minutes = std::max(table.max_minutes, row.mean_minutes);
  }
  table.normalization_defined =
      table.rows.size() > 1 && table.max_minutes > table.min_minutes;
  for (PolicyRow& row : table.rows)
    row.normalized = table.normalization_defined
                         ? (row.mean_minutes - table.min_minutes) /
                               (table.max_minutes - table.min_minutes)
                         : 0.0;
}

}  // namespace detail

struct EvalOptions {
  int horizon = 60;
  int agents = 3;
  int episodes = 50;
  std::uint64_t seed = 1;
  long long oracle_node_budget = 50'000'000;  // per episode; exhaustion marks the row inexact

  void validate() const {
    if (horizon < 1 || agents < 1 || episodes < 1)
      throw std::invalid_argument("horizon, agents, episodes must be >= 1");
    if (oracle_node_budget < 1)
      throw std::invalid_argument("oracle node budget must be >= 1");
  }
};

// Paired evaluation: every episode draws one random starting state and one
// arrival realization that all policies consume bit-identically; the oracle
// row prices the same realization with full knowledge. Each simulated trace
// is audited against per-request accounting before its cost is accepted.
inline ResultTable run_experiment(const StreetGraph& g, const DemandModel& dm,
                                  const EvalOptions& opt,
                                  std::span<BuiltPolicy> policies) {
  opt.validate();
  dm.validate_for_graph(g.node_count());
  if (policies.empty()) throw std::invalid_argument("no policies to evaluate");

  ResultTable table;
  table.episodes = opt.episodes;
  table.horizon = opt.horizon;
  table.agents = opt.agents;
  for (const BuiltPolicy& bp : policies) table.rows.push_back({bp.name, {}, 0, 0, 0, 0});

  for (int e = 0; e < opt.episodes; ++e) {
    const auto episode = static_cast<std::uint64_t>(e);
    Rng locs_rng(derive_seed(opt.seed, episode, 0));
    std::vector<NodeId> locs;
    for (int l = 0; l < opt.agents; ++l)
      locs.push_back(static_cast<NodeId>(locs_rng.next_below(g.node_count())));
    SystemState initial = make_initial_state(std::move(locs));
    std::vector<Request> script =
        sample_script(dm, opt.horizon, derive_seed(opt.seed, episode, 1));
    std::uint64_t policy_seed = derive_seed(opt.seed, episode, 2);

    for (std::size_t i = 0; i < policies.size(); ++i) {
      long long cost = 0;
      if (policies[i].is_oracle) {
        OracleResult res =
            oracle_cost(initial, script, g, opt.horizon, opt.oracle_node_budget);
        if (!res.exact) ++table.rows[i].inexact_oracle_episodes;
        cost = res.cost;
      } else {
        ScriptedArrivals source = ScriptedArrivals::from_requests(script, opt.horizon);
        EpisodeResult run =
            run_episode(initial, *policies[i].policy, source, g, opt.horizon, policy_seed);
        AuditReport audit = audit_trace(run.trace);
        if (!audit.ok)
          throw std::logic_error("trace audit failed for " + policies[i].name +
                                 " episode " + std::to_string(e) + ": " + audit.detail);
        cost = run.total_cost;
      }
      table.rows[i].episode_costs.push_back(cost);
    }
  }

  detail::summarize_rows(table);
  return table;
}

inline std::string format_result_table(const ResultTable& t) {
  std::ostringstream os;
  os << std::left << std::setw(12) << "policy" << std::right << std::setw(12)
     << "mean-wait" << std::setw(10) << "std-err" << std::setw(12) << "normalized"
     << "\n";
  os << std::fixed;
  for (const PolicyRow& row : t.rows) {
    os << std::left << std::setw(12) << row.name << std::right << std::setprecision(2)
       << std::setw(12) << row.mean_minutes << std::setw(10) << row.std_error;
    if (t.normalization_defined)
      os << std::setprecision(3) << std::setw(12) << row.normalized;
    else
      os << std::setw(12) << "n/a";
    if (row.inexact_oracle_episodes > 0)
      os << "  [" << row.inexact_oracle_episodes << " inexact]";
    os << "\n";
  }
  os << std::setprecision(2) << "min " << t.min_minutes << "  max " << t.max_minutes
     << "  (" << t.episodes << " episodes, horizon " << t.horizon << ", " << t.agents
     << " agents)\n";
  return os.str();
}

inline void write_summary_csv(std::ostream& os, const ResultTable& t) {
  os << "policy,mean_minutes,std_error,normalized,inexact_episodes\n";
  os << std::fixed << std::setprecision(6);
  for (const PolicyRow& row : t.rows) {
    os << row.name << ',' << row.mean_minutes << ',' << row.std_error << ',';
    if (t.normalization_defined) os << row.normalized;
    os << ',' << row.inexact_oracle_episodes << "\n";
  }
}

inline void write_episode_csv(std::ostream& os, const ResultTable& t) {
  os << "policy,episode,total_wait\n";
  for (const PolicyRow& row : t.rows)
    for (std::size_t e = 0; e < row.episode_costs.size(); ++e)
      os << row.name << ',' << e << ',' << row.episode_costs[e] << "\n";
}

// Piecewise-constant demand over the horizon: entry i applies from
// start_minutes[i] until the next entry begins. The first entry must cover
// minute 1.
class DemandSchedule {
 public:
  DemandSchedule(std::vector<int> start_minutes, std::vector<DemandModel> models)
      : starts_(std::move(start_minutes)), models_(std::move(models)) {
    if (starts_.empty() || starts_.size() != models_.size())
      throw std::invalid_argument("schedule needs one start minute per model");
    if (starts_.front() != 1)
      throw std::invalid_argument("schedule must start at minute 1");
    for (std::size_t i = 1; i < starts_.size(); ++i)
      if (starts_[i] <= starts_[i - 1])
        throw std::invalid_argument("schedule start minutes must increase");
    for (const DemandModel& dm : models_) dm.validate();
  }

  static DemandSchedule constant(DemandModel dm) {
    std::vector<DemandModel> models;
    models.push_back(std::move(dm));
    return DemandSchedule({1}, std::move(models));
  }

  const DemandModel& at(int minute) const {
    if (minute < starts_.front())
      throw std::out_of_range("minute precedes the schedule");
    std::size_t i = 0;
    while (i + 1 < starts_.size() && starts_[i + 1] <= minute) ++i;
    return models_[i];
  }

 private:
  std::vector<int> starts_;
  std::vector<DemandModel> models_;
};

inline std::vector<Request> sample_script(const DemandSchedule& schedule, int horizon,
                                          std::uint64_t seed) {
  std::vector<Request> script;
  for (int k = 1; k <= horizon; ++k) {
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(k)));
    for (const Request& r : sample_minute(schedule.at(k), rng, k)) script.push_back(r);
  }
  return script;
}

// One model-library row: a demand reference and the approximator trained
// for it.
struct LibraryEntry {
  std::string label;
  DemandModel demand;
  NetPair nets;
};

// Online-play base that can swap which library approximator answers, both
// scalar and batched, without disturbing the surrounding rollout.
class SwitchableApproximator final : public Policy, public BatchPolicy {
 public:
  SwitchableApproximator(std::span<const LibraryEntry> library, const StreetGraph& g) {
    if (library.empty()) throw std::invalid_argument("empty model library");
    for (const LibraryEntry& e : library)
      models_.push_back(std::make_unique<ApproximatorPolicy>(e.nets, g));
  }

  void set_active(std::size_t index) {
    if (index >= models_.size()) throw std::out_of_range("library entry out of range");
    active_ = index;
  }
  std::size_t active() const { return active_; }

  void begin_episode(std::uint64_t seed, int horizon) override {
    for (auto& m : models_) m->begin_episode(seed, horizon);
  }
  Control control(const SystemState& s, int agent,
                  std::span<const Control> preceding) override {
    return models_[active_]->control(s, agent, preceding);
  }
  void control_batch(int agent, std::span<const StageQuery> queries,
                     std::span<Control> out) override {
    models_[active_]->control_batch(agent, queries, out);
  }

 private:
  std::vector<std::unique_ptr<ApproximatorPolicy>> models_;
  std::size_t active_ = 0;
};

// Lookahead arrivals drawn from the active library entry's demand belief.
class SwitchableFuture final : public FutureModel {
 public:
  explicit SwitchableFuture(std::span<const LibraryEntry> library) {
    if (library.empty()) throw std::invalid_argument("empty model library");
    for (const LibraryEntry& e : library) futures_.emplace_back(e.demand);
  }

  void set_active(std::size_t index) {
    if (index >= futures_.size()) throw std::out_of_range("library entry out of range");
    active_ = index;
  }

  std::vector<Request> sample(std::uint64_t traj_seed, int minute) override {
    return futures_[active_].sample(traj_seed, minute);
  }

 private:
  std::vector<DemandFuture> futures_;
  std::size_t active_ = 0;
};

// Announces a pinned planning horizon to the wrapped policy regardless of
// how far the surrounding simulation segment runs, so an episode split into
// segments makes exactly the decisions of an unsegmented one.
class HorizonPin final : public Policy {
 public:
  HorizonPin(Policy& inner, int horizon) : inner_(inner), horizon_(horizon) {}
  void begin_episode(std::uint64_t seed, int /*segment_end*/) override {
    inner_.begin_episode(seed, horizon_);
  }
  Control control(const SystemState& s, int agent,
                  std::span<const Control> preceding) override {
    return inner_.control(s, agent, preceding);
  }

 private:
  Policy& inner_;
  int horizon_;
};

// Empirical request-count distribution of a realized window, fed through
// the public estimator.
inline CategoricalDistribution estimate_window_eta(std::span<const Request> realized,
                                                   int first_minute, int last_minute,
                                                   int max_count) {
  if (first_minute < 1 || last_minute < first_minute)
    throw std::invalid_argument("bad estimation window");
  RequestLog log;
  for (const Request& r : realized)
    if (r.arrival_minute >= first_minute && r.arrival_minute <= last_minute)
      log.entries.push_back({r.arrival_minute - first_minute + 1, r.pickup, r.dropoff});
  return estimate_eta(log, last_minute - first_minute + 1, max_count);
}

struct SwitchingOptions {
  int horizon = 120;
  int agents = 3;
  int episodes = 20;
  int check_interval = 60;  // minutes between reviews; also the estimation window
  std::uint64_t seed = 1;
  std::size_t initial_active = 0;
  RolloutConfig rollout;
  double q = 0.54;
  long long radius_samples = 5000;
  int max_count = 6;
  RadiusLogBase log_base = RadiusLogBase::Base10;

  void validate() const {
    if (horizon < 1 || agents < 1 || episodes < 1 || check_interval < 1)
      throw std::invalid_argument(
          "horizon, agents, episodes, check_interval must be >= 1");
    rollout.validate();
    if (max_count < 0) throw std::invalid_argument("max_count must be >= 0");
  }
};

struct ModelCheck {
  int minute = 0;  // review time; the estimate covers the trailing window
  double distance = 0.0;  // Wasserstein distance to the chosen reference
  std::size_t active_after = 0;
  bool switched = false;
};

struct SwitchingOutcome {
  std::vector<std::vector<ModelCheck>> episode_checks;  // per-episode time series
  std::vector<long long> switching_costs;  // paired with fixed_costs by episode
  std::vector<long long> fixed_costs;
  double switching_mean = 0.0;
  double fixed_mean = 0.0;
  double paired_diff_mean = 0.0;  // mean(fixed - switching)
  double paired_diff_se = 0.0;
  double relative_improvement = 0.0;  // (fixed - switching) / fixed
};

// Two online-play arms on bit-identical arrival realizations: one reviews
// the active model at every check interval (estimate the window's request
// counts, keep the model while inside its ambiguity region, else jump to
// the closest reference), the other keeps the initial model throughout.
// When no review triggers a switch, the arms coincide decision for
// decision.
inline SwitchingOutcome run_switching_experiment(const StreetGraph& g,
                                                 const DemandSchedule& schedule,
                                                 std::span<const LibraryEntry> library,
                                                 const SwitchingOptions& opt) {
  opt.validate();
  if (library.empty()) throw std::invalid_argument("empty model library");
  if (opt.initial_active >= library.size())
    throw std::out_of_range("initial active entry out of range");
  for (const LibraryEntry& e : library) e.demand.validate_for_graph(g.node_count());

  std::vector<AmbiguitySet> regions;
  for (const LibraryEntry& e : library)
    regions.push_back(make_ambiguity_set(e.demand.eta, opt.q, opt.radius_samples,
                                         static_cast<double>(opt.max_count),
                                         opt.log_base));

  SwitchingOutcome out;
  for (int e = 0; e < opt.episodes; ++e) {
    const auto episode = static_cast<std::uint64_t>(e);
    Rng locs_rng(derive_seed(opt.seed, episode, 0));
    std::vector<NodeId> locs;
    for (int l = 0; l < opt.agents; ++l)
      locs.push_back(static_cast<NodeId>(locs_rng.next_below(g.node_count())));
    SystemState start = make_initial_state(std::move(locs));
    std::vector<Request> script =
        sample_script(schedule, opt.horizon, derive_seed(opt.seed, episode, 1));
    std::uint64_t policy_seed = derive_seed(opt.seed, episode, 2);

    // Fixed arm: initial model for the whole horizon.
    {
      SwitchableApproximator base(library, g);
      SwitchableFuture future(library);
      base.set_active(opt.initial_active);
      future.set_active(opt.initial_active);
      RolloutPolicy policy(base, opt.rollout, future, g);
      ScriptedArrivals source = ScriptedArrivals::from_requests(script, opt.horizon);
      EpisodeResult run = run_episode(start, policy, source, g, opt.horizon, policy_seed);
      out.fixed_costs.push_back(run.total_cost);
    }

    // Switching arm: simulate between reviews, re-select, resume.
    {
      SwitchableApproximator base(library, g);
      SwitchableFuture future(library);
      std::size_t active = opt.initial_active;
      base.set_active(active);
      future.set_active(active);
      RolloutPolicy policy(base, opt.rollout, future, g);
      HorizonPin pinned(policy, opt.horizon);

      std::vector<ModelCheck> checks;
      SystemState state = start;
      long long cost = 0;
      for (;;) {
        int segment_end = std::min(state.minute + opt.check_interval, opt.horizon);
        ScriptedArrivals source = ScriptedArrivals::from_requests(script, opt.horizon);
        EpisodeResult run = run_episode(state, pinned, source, g, segment_end, policy_seed);
        cost += run.total_cost;
        state = std::move(run.final_state);
        if (segment_end >= opt.horizon) break;

        CategoricalDistribution estimate = estimate_window_eta(
            script, segment_end - opt.check_interval + 1, segment_end, opt.max_count);
        SelectionResult sel = select_model(regions, active, estimate);
        checks.push_back({segment_end, sel.distance, sel.index, sel.switched});
        active = sel.index;
        base.set_active(active);
        future.set_active(active);
      }
      out.switching_costs.push_back(cost);
      out.episode_checks.push_back(std::move(checks));
    }
  }

  const auto n = static_cast<double>(opt.episodes);
  double sw = 0.0, fx = 0.0;
  for (long long c : out.switching_costs) sw += static_cast<double>(c);
  for (long long c : out.fixed_costs) fx += static_cast<double>(c);
  out.switching_mean = sw / n;
  out.fixed_mean = fx / n;
  out.paired_diff_mean = out.fixed_mean - out.switching_mean;
  double sq = 0.0;
  for (int e = 0; e < opt.episodes; ++e) {
    double d = static_cast<double>(out.fixed_costs[e] - out.switching_costs[e]) -
               out.paired_diff_mean;
    sq += d * d;
  }
  out.paired_diff_se = opt.episodes > 1 ? std::sqrt(sq / (n - 1) / n) : 0.0;
  out.relative_improvement =
      out.fixed_mean > 0.0 ? out.paired_diff_mean / out.fixed_mean : 0.0;
  return out;
}

}  // namespace taxi
