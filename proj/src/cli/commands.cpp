#include <CLI11.hpp>
#include <algorithm>
#include <chrono>
#include <functional>
#include <ostream>
#include <sstream>
#include <thread>

#include "treeot/bridge.hpp"
#include "treeot/cli.hpp"
#include "treeot/ensemble.hpp"
#include "treeot/oracle.hpp"
#include "treeot/pairwise.hpp"

namespace treeot::cli {

namespace {

struct Flags {
  std::vector<double> epsilon;
  std::optional<double> tol;
  std::optional<int> max_sweeps;
  std::optional<std::string> log_domain;
  std::optional<std::uint64_t> seed;
  int jobs = 1;
  std::string output;
  bool timing = false;
  bool known_initial = false;
};

struct Outcome {
  Json doc;
  int code = kOk;
};

int exit_code_for(Errc code) {
  switch (code) {
    case Errc::MaxSweepsExceeded:
    case Errc::NotConverged:
      return kNotConverged;
    case Errc::NumericalUnderflow:
    case Errc::TooLarge:
      return kNumericalError;
    default:
      return kInputError;
  }
}

Json log_json(const std::vector<double>& residuals, const std::vector<double>& duals = {}) {
  Json a = Json::array();
  for (size_t i = 0; i < residuals.size(); ++i) {
    Json row = {{"sweep", i + 1}, {"residual", residuals[i]}};
    if (i < duals.size()) row["dual"] = duals[i];
    a.push_back(row);
  }
  return a;
}

Json marginals_json(const std::vector<Vector>& mu) {
  Json a = Json::array();
  for (size_t j = 1; j < mu.size(); ++j) {
    a.push_back({{"node", j}, {"values", to_json(mu[j])}});
  }
  return a;
}

Json plan_json(Node a, Node b, const Matrix& m) {
  return {{"nodes", {a, b}}, {"matrix", to_json(m)}};
}

Json header(const std::string& command, const ProblemFile& pf, double eps) {
  return {{"schema_version", kSchemaVersion},
          {"version", kVersion},
          {"command", command},
          {"input_hash", pf.hash},
          {"epsilon", eps},
          {"oracle", false}};
}

double tol_of(const Flags& f, const ProblemFile& pf) { return f.tol.value_or(pf.tol); }
int sweeps_of(const Flags& f, const ProblemFile& pf) { return f.max_sweeps.value_or(pf.max_sweeps); }
LogDomainMode log_mode(const Flags& f, const ProblemFile& pf, LogDomainMode fallback) {
  if (f.log_domain) return parse_log_domain(*f.log_domain);
  return pf.log_domain.value_or(fallback);
}

std::vector<double> epsilons_of(const Flags& f, const ProblemFile& pf) {
  std::vector<double> eps = f.epsilon.empty() ? pf.epsilons : f.epsilon;
  for (double e : eps) {
    if (!(e > 0.0)) throw InputError("--epsilon", "must be positive");
  }
  return eps;
}

// Runs `task` once per epsilon, possibly in parallel; results keep input order.
std::vector<Outcome> for_each_epsilon(const std::vector<double>& eps, int jobs,
                                      const std::function<Outcome(double)>& task) {
  std::vector<Outcome> out(eps.size());
  std::vector<std::string> failures(eps.size());
  std::vector<int> failure_codes(eps.size(), 0);
  auto run = [&](size_t i) {
    try {
      out[i] = task(eps[i]);
    } catch (const Error& e) {
      failures[i] = e.what();
      failure_codes[i] = exit_code_for(e.code());
    } catch (const InputError& e) {
      failures[i] = e.what();
      failure_codes[i] = kInputError;
    }
  };
  const size_t workers = std::max<size_t>(1, std::min<size_t>(std::max(jobs, 1), eps.size()));
  if (workers == 1) {
    for (size_t i = 0; i < eps.size(); ++i) run(i);
  } else {
    std::vector<std::thread> pool;
    for (size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&, w] {
        for (size_t i = w; i < eps.size(); i += workers) run(i);
      });
    }
    for (auto& t : pool) t.join();
  }
  for (size_t i = 0; i < eps.size(); ++i) {
    if (failure_codes[i] != 0) {
      out[i].code = failure_codes[i];
      out[i].doc = {{"schema_version", kSchemaVersion},
                    {"version", kVersion},
                    {"epsilon", eps[i]},
                    {"error", failures[i]}};
    }
  }
  return out;
}

std::string suffixed(const std::string& path, double eps) {
  const auto slash = path.find_last_of('/');
  const auto dot = path.find_last_of('.');
  const bool has_ext = dot != std::string::npos && (slash == std::string::npos || dot > slash);
  const std::string stem = has_ext ? path.substr(0, dot) : path;
  const std::string ext = has_ext ? path.substr(dot) : "";
  return stem + "_eps" + format_double(eps) + ext;
}

int emit(const std::vector<double>& eps, std::vector<Outcome> results, const Flags& flags,
         std::ostream& out, std::ostream& err) {
  int code = kOk;
  for (const auto& r : results) {
    code = std::max(code, r.code);
    if (r.doc.contains("error")) err << "error: " << r.doc["error"].get<std::string>() << "\n";
  }
  if (results.size() == 1) {
    const std::string text = dump(results.front().doc);
    if (flags.output.empty()) {
      out << text;
    } else {
      write_file(flags.output, text);
    }
    return code;
  }
  if (flags.output.empty()) {
    Json all = {{"schema_version", kSchemaVersion}, {"results", Json::array()}};
    for (auto& r : results) all["results"].push_back(std::move(r.doc));
    out << dump(all);
  } else {
    for (size_t i = 0; i < results.size(); ++i) write_file(suffixed(flags.output, eps[i]), dump(results[i].doc));
  }
  return code;
}

template <class F>
double timed(bool enabled, F&& f) {
  const auto start = std::chrono::steady_clock::now();
  f();
  if (!enabled) return 0.0;
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

// ---- multi-marginal --------------------------------------------------------

Json solve_doc(const ProblemFile& pf, const TreeOTProblem& p, const SolveReport& report, bool converged) {
  Json doc = header("solve", pf, p.epsilon);
  doc["converged"] = converged;
  doc["sweeps"] = report.sweeps;
  doc["mass"] = report.mass;
  bool used_log = false;
  for (const auto& piece : report.pieces) used_log = used_log || piece.domain == Domain::Log;
  doc["log_domain_used"] = used_log;
  doc["pieces"] = report.pieces.size();
  std::vector<Vector> mu(p.tree.node_count() + 1);
  for (Node j = 1; j <= p.tree.node_count(); ++j) mu[j] = extract_marginal(report, p, j, true);
  doc["marginals"] = marginals_json(mu);
  Json plans = Json::array();
  for (const auto& [a, b] : p.tree.edges()) plans.push_back(plan_json(a, b, extract_plan(report, p, a, b, true)));
  for (const auto& [a, b] : pf.extra_plans) plans.push_back(plan_json(a, b, extract_plan(report, p, a, b, true)));
  doc["plans"] = plans;
  Json obj = {{"primal", primal_objective(report, p, true)}};
  if (!report.dual_history.empty()) obj["dual"] = report.dual_history.back();
  doc["objective"] = obj;
  doc["log"] = log_json(report.residual_history, report.dual_history);
  return doc;
}

Outcome run_solve(const ProblemFile& pf, const Flags& flags, double eps) {
  const TreeOTProblem p = problem_at(pf, eps);
  SolveOptions o{tol_of(flags, pf), sweeps_of(flags, pf), log_mode(flags, pf, LogDomainMode::Auto)};
  Outcome r;
  try {
    SolveReport report;
    const double secs = timed(flags.timing, [&] { report = solve(p, o); });
    r.doc = solve_doc(pf, p, report, true);
    if (flags.timing) r.doc["timing_seconds"] = secs;
  } catch (const SolveNotConverged& e) {
    r.doc = solve_doc(pf, p, e.partial(), false);
    r.doc["error"] = e.what();
    r.code = kNotConverged;
  }
  return r;
}

// ---- bridge ----------------------------------------------------------------

Node default_root(const TreeOTProblem& p) {
  for (const auto& [j, mu] : p.constraints) {
    if (p.tree.is_leaf(j)) return j;
  }
  throw InputError("/root", "no constrained leaf to root the bridge at");
}

Json bridge_doc(const ProblemFile& pf, double eps, const OtBridge& ob, const BridgeSolution& sol) {
  Json doc = header("bridge", pf, eps);
  doc["root"] = ob.problem.rooted.root;
  doc["converged"] = sol.converged;
  doc["sweeps"] = sol.sweeps;
  doc["marginals"] = marginals_json(sol.mu);
  Json plans = Json::array();
  for (const auto& [e, m] : sol.plans) plans.push_back(plan_json(e.first, e.second, m));
  doc["plans"] = plans;
  if (sol.converged) {
    const BridgeObjective obj = bridge_objective(ob.problem, sol);
    doc["objective"] = {{"kl_form", obj.kl_form},
                        {"degree_form", obj.degree_form},
                        {"bethe", bethe_objective(ob, sol)}};
  }
  doc["log"] = log_json(sol.residual_history);
  return doc;
}

Outcome run_bridge(const ProblemFile& pf, const Flags& flags, double eps) {
  const TreeOTProblem p = problem_at(pf, eps);
  const OtBridge ob = ot_to_bridge(p, pf.root.value_or(default_root(p)));
  BridgeOptions o{tol_of(flags, pf), sweeps_of(flags, pf)};
  Outcome r;
  try {
    BridgeSolution sol;
    const double secs = timed(flags.timing, [&] { sol = bridge_sinkhorn(ob.problem, o); });
    r.doc = bridge_doc(pf, eps, ob, sol);
    if (flags.timing) r.doc["timing_seconds"] = secs;
  } catch (const BridgeNotConverged& e) {
    r.doc = bridge_doc(pf, eps, ob, e.partial());
    r.doc["error"] = e.what();
    r.code = kNotConverged;
  }
  return r;
}

// ---- pairwise --------------------------------------------------------------

Json pairwise_doc(const ProblemFile& pf, double eps, const PairwiseSolution& sol) {
  Json doc = header("pairwise", pf, eps);
  doc["converged"] = sol.converged;
  doc["sweeps"] = sol.sweeps;
  doc["log_domain_used"] = sol.domain == Domain::Log;
  if (!sol.mu.empty()) doc["marginals"] = marginals_json(sol.mu);
  Json plans = Json::array();
  for (const auto& [e, m] : sol.plans) plans.push_back(plan_json(e.first, e.second, m));
  doc["plans"] = plans;
  if (!sol.plans.empty()) doc["objective"] = {{"pairwise", sol.objective}};
  doc["log"] = log_json(sol.residual_history);
  return doc;
}

PairwiseOptions pairwise_options(const ProblemFile& pf, const Flags& flags) {
  return {tol_of(flags, pf), sweeps_of(flags, pf), log_mode(flags, pf, LogDomainMode::Off)};
}

Outcome run_pairwise(const ProblemFile& pf, const Flags& flags, double eps) {
  const TreeOTProblem p = problem_at(pf, eps);
  Outcome r;
  try {
    PairwiseSolution sol;
    const double secs = timed(flags.timing, [&] { sol = pairwise_solve(p, pairwise_options(pf, flags)); });
    r.doc = pairwise_doc(pf, eps, sol);
    if (flags.timing) r.doc["timing_seconds"] = secs;
  } catch (const PairwiseNotConverged& e) {
    r.doc = pairwise_doc(pf, eps, e.partial());
    r.doc["error"] = e.what();
    r.code = kNotConverged;
  }
  return r;
}

// ---- compare ---------------------------------------------------------------

Outcome run_compare(const ProblemFile& pf, const Flags& flags, double eps) {
  // The file's log-domain option applies to the multi-marginal side only;
  // the pairwise side follows --log-domain or stays linear.
  const TreeOTProblem p = problem_at(pf, eps);
  SolveOptions o{tol_of(flags, pf), sweeps_of(flags, pf), log_mode(flags, pf, LogDomainMode::Auto)};
  const SolveReport multi = solve(p, o);
  Outcome r;
  r.doc = header("compare", pf, eps);
  std::vector<Vector> mu_multi(p.tree.node_count() + 1);
  for (Node j = 1; j <= p.tree.node_count(); ++j) mu_multi[j] = extract_marginal(multi, p, j);
  r.doc["marginals_multi"] = marginals_json(mu_multi);
  r.doc["multi_sweeps"] = multi.sweeps;

  PairwiseOptions po = pairwise_options(pf, flags);
  if (!flags.log_domain) po.log_domain = LogDomainMode::Off;
  Json table = Json::array();
  try {
    const PairwiseSolution pair = pairwise_solve(p, po);
    const EntropyGapReport gap = entropy_gap(p, pair, multi);
    r.doc["pairwise_converged"] = true;
    r.doc["pairwise_sweeps"] = pair.sweeps;
    r.doc["marginals_pair"] = marginals_json(pair.mu);
    for (const auto& row : gap.rows) {
      table.push_back({{"node", row.node},
                       {"entropy_multi", row.shannon_multi},
                       {"entropy_pair", row.shannon_pair},
                       {"neg_entropy_multi", row.neg_entropy_multi},
                       {"neg_entropy_pair", row.neg_entropy_pair}});
    }
    const auto& d = gap.decomposition;
    r.doc["decomposition"] = {{"objective", d.objective},
                              {"edge_terms", d.edge_terms},
                              {"node_terms", d.node_terms},
                              {"constant", d.constant}};
    r.doc["objective"] = {{"multi", d.objective}, {"pairwise", pair.objective}};
  } catch (const PairwiseNotConverged& e) {
    r.doc["pairwise_converged"] = false;
    r.doc["pairwise_error"] = e.what();
    r.doc["pairwise_log"] = log_json(e.partial().residual_history);
    for (Node j = 1; j <= p.tree.node_count(); ++j) {
      if (p.tree.degree(j) < 2) continue;
      table.push_back({{"node", j}, {"entropy_multi", shannon_entropy(mu_multi[j])}});
    }
  }
  r.doc["entropy"] = table;
  return r;
}

// ---- oracle ----------------------------------------------------------------

Outcome run_oracle(const ProblemFile& pf, const Flags& flags, double eps) {
  const TreeOTProblem p = problem_at(pf, eps);
  validate_problem(p);
  oracle::TensorProblem tp{oracle::assemble_cost_tensor(p.tree, p.edge_costs), eps, p.constraints};
  Outcome r;
  oracle::DenseSolution sol;
  bool converged = true;
  try {
    sol = oracle::dense_sinkhorn(tp, tol_of(flags, pf), sweeps_of(flags, pf));
  } catch (const NotConvergedError<oracle::DenseSolution>& e) {
    sol = e.partial();
    converged = false;
    r.code = kNotConverged;
  }
  r.doc = header("oracle", pf, eps);
  r.doc["oracle"] = true;
  r.doc["converged"] = converged;
  r.doc["sweeps"] = sol.sweeps;
  std::vector<Vector> mu(p.tree.node_count() + 1);
  for (Node j = 1; j <= p.tree.node_count(); ++j) mu[j] = oracle::project(sol.plan, j);
  r.doc["marginals"] = marginals_json(mu);
  Json plans = Json::array();
  for (const auto& [a, b] : p.tree.edges()) plans.push_back(plan_json(a, b, oracle::project_pair(sol.plan, a, b)));
  for (const auto& [a, b] : pf.extra_plans) plans.push_back(plan_json(a, b, oracle::project_pair(sol.plan, a, b)));
  r.doc["plans"] = plans;
  r.doc["objective"] = {{"primal", oracle::dense_objective(sol.plan, tp.cost, eps)}};
  r.doc["log"] = log_json(sol.residual_history, sol.dual_history);
  return r;
}

// ---- ensemble --------------------------------------------------------------

const Json& need(const Json& obj, const std::string& key, const std::string& where) {
  if (!obj.is_object() || !obj.contains(key)) throw InputError(where, "missing field '" + key + "'");
  return obj.at(key);
}

int need_int(const Json& obj, const std::string& key, const std::string& where) {
  const Json& v = need(obj, key, where);
  if (!v.is_number_integer()) throw InputError(where + "/" + key, "expected an integer");
  return v.get<int>();
}

ensemble::Network network_from_json(const Json& j) {
  if (j.contains("grid")) {
    const Json& g = j["grid"];
    return ensemble::grid_network(need_int(g, "rows", "/network/grid"), need_int(g, "cols", "/network/grid"));
  }
  const Json& pos = need(j, "positions", "/network");
  const Json& edges = need(j, "edges", "/network");
  if (!pos.is_array() || !edges.is_array()) throw InputError("/network", "positions and edges must be arrays");
  std::vector<Vector> points;
  for (size_t i = 0; i < pos.size(); ++i) points.push_back(vector_from_json(pos[i], "/network/positions/" + std::to_string(i)));
  std::vector<Edge> list;
  for (size_t i = 0; i < edges.size(); ++i) {
    if (!edges[i].is_array() || edges[i].size() != 2 || !edges[i][0].is_number_integer() ||
        !edges[i][1].is_number_integer()) {
      throw InputError("/network/edges/" + std::to_string(i), "expected two labels");
    }
    list.push_back({edges[i][0].get<int>(), edges[i][1].get<int>()});
  }
  return ensemble::make_network(std::move(points), std::move(list));
}

ensemble::ObservationModel model_from_json(const ensemble::Network& net, const Json& j) {
  const Json& kind = need(j, "kind", "/model");
  if (!kind.is_string()) throw InputError("/model/kind", "expected a string");
  const std::string k = kind.get<std::string>();
  if (k == "perfect") return ensemble::perfect_model(net);
  std::vector<Vector> sensors;
  const Json& s = need(j, "sensors", "/model");
  if (!s.is_array()) throw InputError("/model/sensors", "expected an array of positions");
  for (size_t i = 0; i < s.size(); ++i) sensors.push_back(vector_from_json(s[i], "/model/sensors/" + std::to_string(i)));
  if (k == "uncoupled") return ensemble::uncoupled_model(net, sensors);
  if (k == "coupled") return ensemble::coupled_model(net, sensors);
  throw InputError("/model/kind", "expected uncoupled, coupled or perfect");
}

int run_simulate(const std::string& path, const Flags& flags, std::ostream& out) {
  const std::string text = read_file(path);
  const Json cfg = parse_json(text, path);
  if (!cfg.is_object()) throw InputError(path, "top level must be an object");
  const ensemble::Network net = network_from_json(need(cfg, "network", ""));
  const ensemble::ObservationModel model = model_from_json(net, need(cfg, "model", ""));
  const int tau = need_int(cfg, "tau", "");
  const int agents = need_int(cfg, "agents", "");
  const Node source = need_int(cfg, "source", "");
  const Node sink = need_int(cfg, "sink", "");
  const bool lazy = cfg.contains("lazy") ? cfg["lazy"].get<bool>() : true;
  std::uint64_t seed = 0;
  if (cfg.contains("seed")) {
    if (!cfg["seed"].is_number_unsigned()) throw InputError("/seed", "expected a nonnegative integer");
    seed = cfg["seed"].get<std::uint64_t>();
  }
  if (flags.seed) seed = *flags.seed;
  if (agents < 1) throw InputError("/agents", "must be positive");

  BridgeOptions bo;
  if (flags.tol) bo.tol = *flags.tol;
  if (flags.max_sweeps) bo.max_sweeps = *flags.max_sweeps;
  const PathBridge prior = ensemble::plan_prior(net, source, sink, tau, lazy, bo);
  Vector initial = Vector::Zero(net.n);
  initial[source - 1] = 1.0;
  const ensemble::Simulation sim =
      ensemble::simulate(prior.transitions, initial, agents, model, seed, flags.jobs);

  Json doc = {{"schema_version", kSchemaVersion},
              {"version", kVersion},
              {"command", "ensemble simulate"},
              {"input_hash", fnv1a_hex(text)},
              {"seed", seed},
              {"config", cfg},
              {"tau", tau},
              {"agents", agents}};
  Json trans = Json::array();
  for (const auto& m : prior.transitions) trans.push_back(to_json(m));
  doc["transitions"] = trans;
  doc["zero_mass_rows"] = prior.zero_mass_rows;
  Json occ = Json::array();
  for (const auto& v : sim.occupancy) occ.push_back(to_json(v));
  doc["occupancy"] = occ;
  Json obs = Json::array();
  for (const auto& step : sim.observations) {
    Json row = Json::array();
    for (const auto& v : step) row.push_back(to_json(v));
    obs.push_back(row);
  }
  doc["observations"] = obs;
  Json traj = Json::array();
  for (const auto& path_states : sim.trajectories) {
    Json t = Json::array();
    for (int x : path_states) t.push_back(x + 1);
    traj.push_back(t);
  }
  doc["trajectories"] = traj;
  const std::string textout = dump(doc);
  if (flags.output.empty()) {
    out << textout;
  } else {
    write_file(flags.output, textout);
  }
  return kOk;
}

int run_estimate(const std::string& path, const Flags& flags, std::ostream& out) {
  const std::string text = read_file(path);
  const Json sim = parse_json(text, path);
  if (!sim.is_object()) throw InputError(path, "top level must be an object");
  const Json& cfg = need(sim, "config", "");
  const ensemble::Network net = network_from_json(need(cfg, "network", "/config"));
  const ensemble::ObservationModel model = model_from_json(net, need(cfg, "model", "/config"));

  // The estimate assumes only the random walk, not the planned transitions
  // that drove the simulation.
  const bool lazy = cfg.contains("lazy") ? cfg["lazy"].get<bool>() : true;
  const int tau = need_int(sim, "tau", "");
  if (tau < 1) throw InputError("/tau", "must be positive");
  const std::vector<Matrix> transitions(tau - 1, ensemble::build_random_walk(net, lazy));
  std::vector<std::vector<Vector>> observations;
  const Json& ob = need(sim, "observations", "");
  for (size_t t = 0; t < ob.size(); ++t) {
    std::vector<Vector> step;
    for (size_t s = 0; s < ob[t].size(); ++s) {
      step.push_back(vector_from_json(ob[t][s], "/observations/" + std::to_string(t) + "/" + std::to_string(s)));
    }
    observations.push_back(std::move(step));
  }
  std::optional<Vector> first;
  if (flags.known_initial) first = vector_from_json(need(sim, "occupancy", "")[0], "/occupancy/0");

  BridgeOptions bo;
  if (flags.tol) bo.tol = *flags.tol;
  if (flags.max_sweeps) bo.max_sweeps = *flags.max_sweeps;
  const ensemble::HmtProblem hmt = ensemble::build_hmt_problem(observations, transitions, model, first);
  const ensemble::EnsembleEstimate est = ensemble::estimate(hmt, bo);

  std::ostringstream csv;
  csv << "node,t,weight\n";
  for (size_t t = 0; t < est.occupancy.size(); ++t) {
    for (Eigen::Index i = 0; i < est.occupancy[t].size(); ++i) {
      csv << (i + 1) << ',' << (t + 1) << ',' << format_double(est.occupancy[t][i]) << '\n';
    }
  }
  if (flags.output.empty()) {
    out << csv.str();
  } else {
    write_file(flags.output, csv.str());
  }
  return kOk;
}

void add_common(CLI::App* cmd, Flags& f, bool solver_flags) {
  cmd->add_option("--output,-o", f.output, "Write the result here instead of standard output");
  cmd->add_option("--seed", f.seed, "Master seed");
  cmd->add_option("--jobs,-j", f.jobs, "Worker threads")->check(CLI::PositiveNumber);
  cmd->add_option("--tol", f.tol, "Residual tolerance (default 1e-8)");
  cmd->add_option("--max-sweeps", f.max_sweeps, "Sweep budget (default 10000)");
  if (solver_flags) {
    cmd->add_option("--epsilon", f.epsilon, "Regularization, comma separated for a grid")->delimiter(',');
    cmd->add_option("--log-domain", f.log_domain, "auto, on or off")
        ->check(CLI::IsMember({"auto", "on", "off"}));
    cmd->add_flag("--timing", f.timing, "Record wall time (output is then not reproducible)");
  }
}

constexpr const char* kFooter =
    "Exit codes: 0 success, 1 invalid input, 2 numerical failure or problem too large, "
    "3 no convergence within the sweep budget.";

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Entropic optimal transport on trees"};
  app.footer(kFooter);
  app.require_subcommand(1);
  Flags flags;
  std::string file;

  using Runner = Outcome (*)(const ProblemFile&, const Flags&, double);
  struct Command {
    const char* name;
    const char* help;
    Runner run;
  };
  const Command commands[] = {
      {"solve", "Multi-marginal solve by message passing", run_solve},
      {"bridge", "Schrodinger bridge on the tree rooted at a leaf", run_bridge},
      {"pairwise", "Sum of bi-marginal problems over the edges", run_pairwise},
      {"compare", "Multi-marginal versus pairwise entropies per internal node", run_compare},
      {"oracle", "Dense brute-force solve for small problems", run_oracle},
  };
  std::vector<std::pair<CLI::App*, Runner>> handlers;
  for (const auto& c : commands) {
    CLI::App* sub = app.add_subcommand(c.name, c.help);
    sub->add_option("problem", file, "Problem file (JSON)")->required();
    add_common(sub, flags, true);
    handlers.push_back({sub, c.run});
  }
  CLI::App* ens = app.add_subcommand("ensemble", "Agent ensembles on a network");
  ens->require_subcommand(1);
  CLI::App* sim = ens->add_subcommand("simulate", "Simulate agents and aggregate observations");
  sim->add_option("config", file, "Ensemble configuration (JSON)")->required();
  add_common(sim, flags, false);
  CLI::App* est = ens->add_subcommand("estimate", "Estimate occupancy from a simulation file");
  est->add_option("simulation", file, "Output of ensemble simulate")->required();
  add_common(est, flags, false);
  est->add_flag("--known-initial", flags.known_initial, "Constrain the first marginal to the true occupancy");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {
      app.exit(e, out, err);
      return kOk;
    }
    app.exit(e, out, err);
    return kInputError;
  }

  try {
    if (sim->parsed()) return run_simulate(file, flags, out);
    if (est->parsed()) return run_estimate(file, flags, out);
    for (const auto& [sub, run] : handlers) {
      if (!sub->parsed()) continue;
      const ProblemFile pf = parse_problem(read_file(file), file);
      const auto eps = epsilons_of(flags, pf);
      auto results = for_each_epsilon(eps, flags.jobs, [&, run = run](double e) { return run(pf, flags, e); });
      return emit(eps, std::move(results), flags, out, err);
    }
  } catch (const InputError& e) {
    err << "error: " << e.what() << "\n";
    return kInputError;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return exit_code_for(e.code());
  } catch (const Json::exception& e) {
    err << "error: " << e.what() << "\n";
    return kInputError;
  }
  return kInputError;
}

}  // namespace treeot::cli
