// Command-line front end for the taxi dispatch engine. Subcommands cover the
// whole pipeline: demand estimation, label generation, training, distance and
// radius queries, simulation, evaluation, switching experiments, trace audit.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <string>
#include <vector>

#include "taxi/harness.hpp"

namespace {

using namespace taxi;

taxi::RadiusLogBase parse_log_base(const std::string& name) {
  if (name == "base10") return RadiusLogBase::Base10;
  if (name == "natural") return RadiusLogBase::Natural;
  throw CLI::ValidationError("--log-base", "expected base10 or natural");
}

std::vector<Request> requests_from_log(const RequestLog& log) {
  std::vector<Request> out;
  for (const auto& e : log.entries) out.push_back({e.pickup, e.dropoff, e.minute});
  return out;
}

// Single-run state derivation mirrors episode 0 of a paired evaluation, so
// `simulate --seed S` reproduces the first episode of `evaluate` with seed S.
SystemState draw_initial_state(const StreetGraph& g, int agents, std::uint64_t seed) {
  Rng rng(derive_seed(seed, 0, 0));
  std::vector<NodeId> locs;
  for (int l = 0; l < agents; ++l)
    locs.push_back(static_cast<NodeId>(rng.next_below(g.node_count())));
  return make_initial_state(std::move(locs));
}

std::string resolve_near(const std::string& anchor_file, const std::string& path) {
  std::filesystem::path p(path);
  if (p.is_absolute()) return path;
  return (std::filesystem::path(anchor_file).parent_path() / p).string();
}

std::vector<LibraryEntry> load_library(const std::string& manifest_path) {
  std::ifstream in(manifest_path);
  if (!in) throw std::runtime_error("cannot open manifest: " + manifest_path);
  std::vector<LibraryEntry> library;
  for (const ManifestEntry& e : load_manifest(in)) {
    LibraryEntry entry;
    entry.label = e.label;
    entry.demand = load_model_file(resolve_near(manifest_path, e.model_path));
    entry.nets = load_weights_file(resolve_near(manifest_path, e.weights_path));
    library.push_back(std::move(entry));
  }
  return library;
}

void write_text_file(const std::string& path, const std::string& body) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path);
  os << body;
}

int cmd_estimate_demand(const std::string& log_path, const std::string& graph_path,
                        int horizon, int max_count, const std::string& label,
                        const std::string& out_path) {
  StreetGraph g = load_graph_file(graph_path);
  RequestLog log = load_request_log_file(log_path);
  DemandModel dm;
  dm.label = label;
  dm.eta = estimate_eta(log, horizon, max_count);
  dm.pickup = estimate_location_dist(log, g, LocationColumn::Pickup);
  dm.dropoff = estimate_location_dist(log, g, LocationColumn::Dropoff);
  dm.validate_for_graph(g.node_count());
  save_model_file(dm, out_path);
  std::cout << "entries=" << log.entries.size() << " minutes=" << horizon
            << " model=" << out_path << "\n";
  return 0;
}

int cmd_gen_labels(const std::string& graph_path, const std::string& demand_path,
                   int count, int agents, int horizon, int trajectories,
                   int truncation, int warmup, std::uint64_t seed,
                   const std::string& out_path) {
  StreetGraph g = load_graph_file(graph_path);
  DemandModel dm = load_model_file(demand_path);
  GreedyPolicy base(g);
  LabelGenConfig cfg;
  cfg.rollout = {trajectories, truncation};
  cfg.agents = agents;
  cfg.horizon = horizon;
  cfg.warmup_max = warmup;
  TrainingSet set = generate_training_set(dm, g, base, cfg, count, seed);
  std::ofstream os(out_path);
  if (!os) throw std::runtime_error("cannot write " + out_path);
  save_labels(os, set, g.node_count(), agents);
  std::cout << "samples=" << set.size() << " labels=" << out_path << "\n";
  return 0;
}

int cmd_train(const std::string& labels_path, const std::string& graph_path,
              TrainConfig cfg, const std::string& out_path,
              const std::string& loss_csv) {
  StreetGraph g = load_graph_file(graph_path);
  std::ifstream in(labels_path);
  if (!in) throw std::runtime_error("cannot open labels: " + labels_path);
  LabelFile labels = load_labels(in);
  if (labels.node_count != g.node_count())
    throw std::invalid_argument("labels were generated for " +
                                std::to_string(labels.node_count) +
                                " nodes, graph has " +
                                std::to_string(g.node_count()));
  TrainResult result = train_nets(labels.samples, g, labels.agent_count, cfg);
  save_weights_file(out_path, result.nets);
  std::cout << std::fixed << std::setprecision(6) << "samples=" << labels.samples.size()
            << " epochs=" << cfg.epochs
            << " pickup_loss=" << result.pickup_loss.back()
            << " move_loss=" << result.move_loss.back() << " weights=" << out_path
            << "\n";
  if (!loss_csv.empty()) {
    std::ostringstream os;
    os << "epoch,pickup_loss,move_loss\n" << std::fixed << std::setprecision(9);
    for (std::size_t i = 0; i < result.pickup_loss.size(); ++i)
      os << i + 1 << ',' << result.pickup_loss[i] << ',' << result.move_loss[i] << "\n";
    write_text_file(loss_csv, os.str());
  }
  return 0;
}

int cmd_wasserstein(const std::string& left_path, const std::string& right_path) {
  DemandModel left = load_model_file(left_path);
  DemandModel right = load_model_file(right_path);
  std::cout << std::setprecision(12) << std::fixed
            << wasserstein1(left.eta, right.eta) << "\n";
  return 0;
}

int cmd_radius(double q, long long samples, double max_count,
               const std::string& base_name) {
  std::cout << std::setprecision(12) << std::fixed
            << q_valid_radius(q, samples, max_count, parse_log_base(base_name)) << "\n";
  return 0;
}

int cmd_simulate(const std::string& graph_path, const std::string& demand_path,
                 const std::string& policy_name, const std::string& weights_path,
                 const std::string& script_path, int horizon, int agents,
                 int trajectories, int truncation, int tss_samples,
                 std::uint64_t seed, const std::string& trace_path) {
  StreetGraph g = load_graph_file(graph_path);
  DemandModel dm = load_model_file(demand_path);
  dm.validate_for_graph(g.node_count());
  SystemState initial = draw_initial_state(g, agents, seed);

  std::vector<Request> script;
  if (!script_path.empty())
    script = requests_from_log(load_request_log_file(script_path));
  else
    script = sample_script(dm, horizon, derive_seed(seed, 0, 1));

  if (policy_name == "oracle") {
    OracleResult res = oracle_cost(initial, script, g, horizon);
    std::cout << "cost=" << res.cost << " exact=" << (res.exact ? "yes" : "no")
              << " nodes=" << res.nodes_expanded << "\n";
    return 0;
  }

  NetPair nets;
  const NetPair* nets_ptr = nullptr;
  if (!weights_path.empty()) {
    nets = load_weights_file(weights_path);
    nets_ptr = &nets;
  }
  BuiltPolicy bp = build_policy(policy_name, g, dm, {trajectories, truncation},
                                TssConfig{tss_samples, 6, 3}, nets_ptr);
  ScriptedArrivals source = ScriptedArrivals::from_requests(script, horizon);
  EpisodeResult run =
      run_episode(initial, *bp.policy, source, g, horizon, derive_seed(seed, 0, 2));
  AuditReport audit = audit_trace(run.trace);
  std::cout << "cost=" << run.total_cost << " requests=" << script.size()
            << " audit=" << (audit.ok ? "ok" : "MISMATCH") << "\n";
  if (!audit.ok) std::cerr << audit.detail << "\n";
  if (!trace_path.empty()) write_trace_file(run.trace, trace_path);
  return audit.ok ? 0 : 1;
}

int cmd_evaluate(const std::string& config_path, bool seed_given,
                 std::uint64_t seed_override) {
  std::ifstream in(config_path);
  if (!in) throw std::runtime_error("cannot open config: " + config_path);
  ExperimentConfig cfg = ExperimentConfig::from_stream(in);
  if (seed_given) cfg.seed = seed_override;

  StreetGraph g = load_graph_file(resolve_near(config_path, cfg.graph));
  DemandModel dm = load_model_file(resolve_near(config_path, cfg.demand));
  NetPair nets;
  const NetPair* nets_ptr = nullptr;
  if (!cfg.weights.empty()) {
    nets = load_weights_file(resolve_near(config_path, cfg.weights));
    nets_ptr = &nets;
  }

  RolloutConfig rollout{cfg.trajectories, cfg.truncation};
  TssConfig tss{cfg.tss_samples, 6, 3};
  std::vector<BuiltPolicy> policies;
  for (const std::string& name : cfg.policies)
    policies.push_back(build_policy(name, g, dm, rollout, tss, nets_ptr));

  EvalOptions opt{cfg.horizon, cfg.agents, cfg.episodes, cfg.seed};
  ResultTable table = run_experiment(g, dm, opt, policies);
  std::cout << format_result_table(table);

  if (!cfg.output.empty()) {
    std::filesystem::path dir(cfg.output);
    std::filesystem::create_directories(dir);
    std::ostringstream summary, episodes;
    write_summary_csv(summary, table);
    write_episode_csv(episodes, table);
    write_text_file((dir / "summary.csv").string(), summary.str());
    write_text_file((dir / "episodes.csv").string(), episodes.str());
    std::cout << "wrote " << (dir / "summary.csv").string() << " and "
              << (dir / "episodes.csv").string() << "\n";
  }
  return 0;
}

int cmd_switch_eval(const std::string& config_path, const std::string& manifest_path,
                    const std::string& initial_label, int interval,
                    const std::string& drift_demand, int drift_minute, bool seed_given,
                    std::uint64_t seed_override) {
  std::ifstream in(config_path);
  if (!in) throw std::runtime_error("cannot open config: " + config_path);
  ExperimentConfig cfg = ExperimentConfig::from_stream(in);
  if (seed_given) cfg.seed = seed_override;

  StreetGraph g = load_graph_file(resolve_near(config_path, cfg.graph));
  DemandModel world = load_model_file(resolve_near(config_path, cfg.demand));
  std::vector<LibraryEntry> library = load_library(manifest_path);

  SwitchingOptions opt;
  opt.horizon = cfg.horizon;
  opt.agents = cfg.agents;
  opt.episodes = cfg.episodes;
  opt.check_interval = interval;
  opt.seed = cfg.seed;
  opt.rollout = {cfg.trajectories, cfg.truncation};
  opt.q = cfg.q;
  opt.radius_samples = cfg.radius_samples;
  opt.max_count = cfg.max_count;
  opt.log_base = cfg.log_base;
  if (!initial_label.empty()) {
    opt.initial_active = library.size();
    for (std::size_t i = 0; i < library.size(); ++i)
      if (library[i].label == initial_label) opt.initial_active = i;
    if (opt.initial_active == library.size())
      throw std::invalid_argument("manifest has no entry labeled " + initial_label);
  }

  DemandSchedule schedule =
      drift_demand.empty()
          ? DemandSchedule::constant(world)
          : DemandSchedule({1, drift_minute},
                           {world, load_model_file(resolve_near(config_path, drift_demand))});

  SwitchingOutcome outcome = run_switching_experiment(g, schedule, library, opt);

  std::cout << std::fixed << std::setprecision(3);
  for (std::size_t e = 0; e < outcome.episode_checks.size(); ++e)
    for (const ModelCheck& c : outcome.episode_checks[e])
      std::cout << "episode=" << e << " minute=" << c.minute << " distance="
                << c.distance << " active=" << library[c.active_after].label
                << " switched=" << (c.switched ? "yes" : "no") << "\n";
  std::cout << "switching_mean=" << outcome.switching_mean
            << " fixed_mean=" << outcome.fixed_mean
            << " diff=" << outcome.paired_diff_mean
            << " diff_se=" << outcome.paired_diff_se
            << " relative_improvement=" << outcome.relative_improvement << "\n";

  if (!cfg.output.empty()) {
    std::filesystem::path dir(cfg.output);
    std::filesystem::create_directories(dir);
    std::ostringstream os;
    os << "episode,switching_wait,fixed_wait\n";
    for (std::size_t e = 0; e < outcome.switching_costs.size(); ++e)
      os << e << ',' << outcome.switching_costs[e] << ',' << outcome.fixed_costs[e]
         << "\n";
    write_text_file((dir / "switching.csv").string(), os.str());
    std::cout << "wrote " << (dir / "switching.csv").string() << "\n";
  }
  return 0;
}

int cmd_audit(const std::string& trace_path) {
  EpisodeTrace trace = read_trace_file(trace_path);
  AuditReport report = audit_trace(trace);
  std::cout << "stage_total=" << report.stage_total
            << " recomputed=" << report.recomputed_total
            << " audit=" << (report.ok ? "ok" : "MISMATCH") << "\n";
  if (!report.ok) {
    std::cerr << report.detail << "\n";
    return 1;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"multiagent dynamic taxi routing engine"};
  app.require_subcommand(1);

  // estimate-demand
  std::string ed_log, ed_graph, ed_label = "estimated", ed_out;
  int ed_horizon = 60, ed_max_count = 6;
  auto* ed = app.add_subcommand("estimate-demand",
                                "fit a demand model from a request log");
  ed->add_option("--log", ed_log, "request log CSV")->required();
  ed->add_option("--graph", ed_graph, "edge list file")->required();
  ed->add_option("--horizon", ed_horizon, "minutes covered by the log");
  ed->add_option("--max-count", ed_max_count, "largest requests-per-minute value");
  ed->add_option("--label", ed_label, "model label");
  ed->add_option("--out", ed_out, "output model file")->required();

  // gen-labels
  std::string gl_graph, gl_demand, gl_out;
  int gl_count = 1000, gl_agents = 3, gl_horizon = 60, gl_traj = 128, gl_trunc = 5,
      gl_warmup = 5;
  std::uint64_t gl_seed = 1;
  auto* gl = app.add_subcommand("gen-labels",
                                "label random states with rollout controls");
  gl->add_option("--graph", gl_graph)->required();
  gl->add_option("--demand", gl_demand)->required();
  gl->add_option("--count", gl_count, "states to label");
  gl->add_option("--agents", gl_agents);
  gl->add_option("--horizon", gl_horizon);
  gl->add_option("--trajectories", gl_traj, "lookahead trajectories per leaf");
  gl->add_option("--truncation", gl_trunc, "base-policy steps before truncation");
  gl->add_option("--warmup", gl_warmup, "max unserved warm-up minutes");
  gl->add_option("--seed", gl_seed);
  gl->add_option("--out", gl_out, "output label file")->required();

  // train
  std::string tr_labels, tr_graph, tr_out, tr_loss_csv;
  TrainConfig tr_cfg;
  auto* tr = app.add_subcommand("train", "fit the pickup and move networks");
  tr->add_option("--labels", tr_labels)->required();
  tr->add_option("--graph", tr_graph)->required();
  tr->add_option("--epochs", tr_cfg.epochs);
  tr->add_option("--batch", tr_cfg.batch_size);
  tr->add_option("--hidden", tr_cfg.hidden);
  tr->add_option("--lr-pickup", tr_cfg.lr_pickup);
  tr->add_option("--lr-move", tr_cfg.lr_move);
  tr->add_option("--l2", tr_cfg.l2);
  tr->add_option("--seed", tr_cfg.seed);
  tr->add_option("--out", tr_out, "output weights file")->required();
  tr->add_option("--loss-csv", tr_loss_csv, "per-epoch loss curve");

  // wasserstein
  std::string ws_left, ws_right;
  auto* ws = app.add_subcommand("wasserstein",
                                "distance between two models' request-count laws");
  ws->add_option("--left", ws_left)->required();
  ws->add_option("--right", ws_right)->required();

  // radius
  double ra_q = 0.54, ra_b = 6.0;
  long long ra_x = 5000;
  std::string ra_base = "base10";
  auto* ra = app.add_subcommand("radius", "q-valid ambiguity radius");
  ra->add_option("--q", ra_q, "confidence in (0,1)");
  ra->add_option("--samples", ra_x, "sample count X");
  ra->add_option("--max-count", ra_b, "support diameter B");
  ra->add_option("--log-base", ra_base, "base10 or natural");

  // simulate
  std::string si_graph, si_demand, si_policy = "greedy", si_weights, si_script,
              si_trace;
  int si_horizon = 60, si_agents = 3, si_traj = 128, si_trunc = 5, si_tss = 200;
  std::uint64_t si_seed = 1;
  auto* si = app.add_subcommand("simulate", "run one episode and audit it");
  si->add_option("--graph", si_graph)->required();
  si->add_option("--demand", si_demand)->required();
  si->add_option("--policy", si_policy,
                 "greedy|assign|assign-opt|tss|rollout|approx|online|oracle");
  si->add_option("--weights", si_weights, "approximator weights");
  si->add_option("--script", si_script, "scripted arrivals CSV (default: sample)");
  si->add_option("--horizon", si_horizon);
  si->add_option("--agents", si_agents);
  si->add_option("--trajectories", si_traj);
  si->add_option("--truncation", si_trunc);
  si->add_option("--tss-samples", si_tss);
  si->add_option("--seed", si_seed);
  si->add_option("--trace", si_trace, "write the episode trace CSV here");

  // evaluate
  std::string ev_config;
  std::uint64_t ev_seed = 0;
  auto* ev = app.add_subcommand("evaluate", "paired policy comparison from a config");
  ev->add_option("--config", ev_config, "key = value experiment file")->required();
  auto* ev_seed_opt = ev->add_option("--seed", ev_seed, "override the config seed");

  // switch-eval
  std::string se_config, se_manifest, se_initial, se_drift;
  int se_interval = 60, se_drift_minute = 61;
  std::uint64_t se_seed = 0;
  auto* se = app.add_subcommand("switch-eval",
                                "online play with and without model switching");
  se->add_option("--config", se_config)->required();
  se->add_option("--manifest", se_manifest, "model library manifest")->required();
  se->add_option("--initial", se_initial, "label of the initially active model");
  se->add_option("--interval", se_interval, "minutes between reviews");
  se->add_option("--drift-demand", se_drift, "world switches to this model file");
  se->add_option("--drift-minute", se_drift_minute, "first minute of the drift");
  auto* se_seed_opt = se->add_option("--seed", se_seed, "override the config seed");

  // audit
  std::string au_trace;
  auto* au = app.add_subcommand("audit", "re-account a saved episode trace");
  au->add_option("--trace", au_trace)->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (ed->parsed())
      return cmd_estimate_demand(ed_log, ed_graph, ed_horizon, ed_max_count, ed_label,
                                 ed_out);
    if (gl->parsed())
      return cmd_gen_labels(gl_graph, gl_demand, gl_count, gl_agents, gl_horizon,
                            gl_traj, gl_trunc, gl_warmup, gl_seed, gl_out);
    if (tr->parsed()) return cmd_train(tr_labels, tr_graph, tr_cfg, tr_out, tr_loss_csv);
    if (ws->parsed()) return cmd_wasserstein(ws_left, ws_right);
    if (ra->parsed()) return cmd_radius(ra_q, ra_x, ra_b, ra_base);
    if (si->parsed())
      return cmd_simulate(si_graph, si_demand, si_policy, si_weights, si_script,
                          si_horizon, si_agents, si_traj, si_trunc, si_tss, si_seed,
                          si_trace);
    if (ev->parsed()) return cmd_evaluate(ev_config, ev_seed_opt->count() > 0, ev_seed);
    if (se->parsed())
      return cmd_switch_eval(se_config, se_manifest, se_initial, se_interval, se_drift,
                             se_drift_minute, se_seed_opt->count() > 0, se_seed);
    if (au->parsed()) return cmd_audit(au_trace);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
