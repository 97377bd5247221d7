#include "treeot/ensemble.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <string>
#include <thread>

#include "treeot/linprog.hpp"

namespace treeot::ensemble {

namespace {

double uniform01(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

int draw(std::mt19937_64& rng, const Eigen::Ref<const Vector>& weights) {
  const double total = weights.sum();
  const double x = uniform01(rng) * total;
  double acc = 0.0;
  int last = -1;
  for (Eigen::Index i = 0; i < weights.size(); ++i) {
    if (weights[i] <= 0.0) continue;
    acc += weights[i];
    last = static_cast<int>(i);
    if (x < acc) return last;
  }
  if (last < 0) throw Error(Errc::ZeroMassState, "cannot sample from an all-zero row");
  return last;
}

void check_stochastic(const Matrix& m, const std::string& what) {
  if (!m.allFinite() || (m.array() < 0.0).any() ||
      ((m.rowwise().sum().array() - 1.0).abs() > 1e-9).any()) {
    throw Error(Errc::NonPositiveEntry, what + " is not row-stochastic");
  }
}

}  // namespace

Network make_network(std::vector<Vector> positions, std::vector<Edge> edges) {
  const int n = static_cast<int>(positions.size());
  if (n == 0) throw Error(Errc::InvalidArgument, "network has no nodes");
  std::vector<int> parent(n + 1);
  for (int i = 0; i <= n; ++i) parent[i] = i;
  auto find = [&](int x) {
    while (parent[x] != x) x = parent[x] = parent[parent[x]];
    return x;
  };
  int components = n;
  for (const auto& [a, b] : edges) {
    if (a < 1 || a > n || b < 1 || b > n) {
      throw Error(Errc::UnknownNode, "edge (" + std::to_string(a) + "," + std::to_string(b) + ")");
    }
    if (a == b) throw Error(Errc::InvalidArgument, "self-loops are implied by the lazy walk");
    const int ra = find(a), rb = find(b);
    if (ra != rb) {
      parent[ra] = rb;
      --components;
    }
  }
  if (components != 1) throw Error(Errc::Disconnected, "network is not connected");
  Network net;
  net.n = n;
  net.positions = std::move(positions);
  net.edges = std::move(edges);
  return net;
}

Network grid_network(int rows, int cols) {
  if (rows < 1 || cols < 1) throw Error(Errc::InvalidArgument, "grid needs positive dimensions");
  std::vector<Vector> pos;
  std::vector<Edge> edges;
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) {
      Vector p(2);
      p << c, r;
      pos.push_back(p);
      const Node self = r * cols + c + 1;
      if (c + 1 < cols) edges.push_back({self, self + 1});
      if (r + 1 < rows) edges.push_back({self, self + cols});
    }
  }
  return make_network(std::move(pos), std::move(edges));
}

Matrix build_random_walk(const Network& network, bool lazy) {
  const int n = network.n;
  std::vector<std::vector<int>> nb(n);
  for (const auto& [a, b] : network.edges) {
    nb[a - 1].push_back(b - 1);
    nb[b - 1].push_back(a - 1);
  }
  Matrix a = Matrix::Zero(n, n);
  for (int k = 0; k < n; ++k) {
    std::sort(nb[k].begin(), nb[k].end());
    nb[k].erase(std::unique(nb[k].begin(), nb[k].end()), nb[k].end());
    if (lazy) nb[k].push_back(k);
    if (nb[k].empty()) {
      a(k, k) = 1.0;
      continue;
    }
    for (int l : nb[k]) a(k, l) = 1.0 / static_cast<double>(nb[k].size());
  }
  return a;
}

Matrix network_distances(const Network& network) {
  return euclidean_cost(network.positions);
}

Matrix detection_probabilities(const Network& network, const std::vector<Vector>& sensors) {
  Matrix p(network.n, static_cast<Eigen::Index>(sensors.size()));
  for (int i = 0; i < network.n; ++i) {
    for (size_t s = 0; s < sensors.size(); ++s) {
      if (sensors[s].size() != network.positions[i].size()) {
        throw Error(Errc::ShapeMismatch, "sensor position has the wrong dimension");
      }
      const double d = (sensors[s] - network.positions[i]).norm();
      p(i, static_cast<Eigen::Index>(s)) = std::min(0.99, 2.0 * std::exp(-d));
    }
  }
  return p;
}

ObservationModel uncoupled_model(const Network& network, const std::vector<Vector>& sensors) {
  ObservationModel m;
  m.kind = ObservationKind::Uncoupled;
  m.sensors = sensors;
  const Matrix p = detection_probabilities(network, sensors);
  m.detection = p;
  for (Eigen::Index s = 0; s < p.cols(); ++s) {
    Matrix b(network.n, 2);
    b.col(0) = p.col(s);
    b.col(1) = Vector::Ones(network.n) - p.col(s);
    m.matrices.push_back(std::move(b));
  }
  return m;
}

ObservationModel coupled_model(const Network& network, const std::vector<Vector>& sensors) {
  const int count = static_cast<int>(sensors.size());
  if (count > kMaxCoupledSensors) {
    throw Error(Errc::TooLarge, "coupled model supports at most " +
                                    std::to_string(kMaxCoupledSensors) + " sensors");
  }
  ObservationModel m;
  m.kind = ObservationKind::Coupled;
  m.sensors = sensors;
  const Matrix p = detection_probabilities(network, sensors);
  m.detection = p;
  if (count == 0) return m;
  const int symbols = 1 << count;
  Matrix b(network.n, symbols);
  for (int i = 0; i < network.n; ++i) {
    for (int sym = 0; sym < symbols; ++sym) {
      double prob = 1.0;
      for (int s = 0; s < count; ++s) prob *= (sym >> s) & 1 ? 1.0 - p(i, s) : p(i, s);
      b(i, sym) = prob;
    }
  }
  m.matrices.push_back(std::move(b));
  return m;
}

ObservationModel perfect_model(const Network& network) {
  ObservationModel m;
  m.kind = ObservationKind::Perfect;
  m.matrices.push_back(Matrix::Identity(network.n, network.n));
  return m;
}

PathBridge plan_prior(const Network& network, Node source, Node sink, int tau, bool lazy,
                      const BridgeOptions& options) {
  if (tau < 2) throw Error(Errc::InvalidArgument, "tau must be at least 2");
  if (source < 1 || source > network.n || sink < 1 || sink > network.n) {
    throw Error(Errc::UnknownNode, "source or sink outside the network");
  }
  const Matrix walk = build_random_walk(network, lazy);
  Vector first = Vector::Zero(network.n);
  Vector last = Vector::Zero(network.n);
  first[source - 1] = 1.0;
  last[sink - 1] = 1.0;
  return path_bridge(std::vector<Matrix>(tau - 1, walk), first, last, options);
}

Simulation simulate(const std::vector<Matrix>& transitions, const Vector& initial, int agents,
                    const ObservationModel& model, std::uint64_t seed, int jobs) {
  if (agents < 0) throw Error(Errc::InvalidArgument, "agent count must be nonnegative");
  const int n = static_cast<int>(initial.size());
  if (n == 0 || (initial.array() < 0.0).any() || !(initial.sum() > 0.0)) {
    throw Error(Errc::InvalidArgument, "initial distribution must be nonnegative with positive mass");
  }
  for (size_t t = 0; t < transitions.size(); ++t) {
    if (transitions[t].rows() != n || transitions[t].cols() != n) {
      throw Error(Errc::ShapeMismatch, "transition " + std::to_string(t + 1) + " has wrong shape");
    }
    check_stochastic(transitions[t], "transition " + std::to_string(t + 1));
  }
  for (const auto& b : model.matrices) {
    if (b.rows() != n) throw Error(Errc::ShapeMismatch, "observation matrix has wrong row count");
    check_stochastic(b, "observation matrix");
  }
  const int tau = static_cast<int>(transitions.size()) + 1;
  const int sensors = static_cast<int>(model.sensors.size());
  if (model.kind != ObservationKind::Perfect &&
      (model.detection.rows() != n || model.detection.cols() != sensors)) {
    throw Error(Errc::ShapeMismatch, "detection table does not match the sensors");
  }

  // Per agent: states, then one symbol per (t, observation).
  const int per_step = model.observations_per_step();
  std::vector<std::vector<int>> states(agents, std::vector<int>(tau));
  std::vector<std::vector<int>> symbols(agents, std::vector<int>(tau * per_step));

  auto run_agent = [&](int a) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed & 0xffffffffu),
                      static_cast<std::uint32_t>(seed >> 32), static_cast<std::uint32_t>(a)};
    std::mt19937_64 rng(seq);
    int x = draw(rng, initial);
    for (int t = 0; t < tau; ++t) {
      if (t > 0) x = draw(rng, transitions[t - 1].row(x).transpose());
      states[a][t] = x;
      switch (model.kind) {
        case ObservationKind::Perfect:
          symbols[a][t * per_step] = x;
          break;
        case ObservationKind::Uncoupled:
        case ObservationKind::Coupled: {
          // One detection draw per sensor; the coupled symbol packs the same
          // draws into bits, which reproduces the product rule of its matrix.
          int packed = 0;
          for (int s = 0; s < sensors; ++s) {
            const bool missed = !(uniform01(rng) < model.detection(x, s));
            if (model.kind == ObservationKind::Uncoupled) {
              symbols[a][t * per_step + s] = missed ? 1 : 0;
            } else if (missed) {
              packed |= 1 << s;
            }
          }
          if (model.kind == ObservationKind::Coupled && per_step == 1) {
            symbols[a][t * per_step] = packed;
          }
          break;
        }
      }
    }
  };

  const int workers = std::max(1, std::min(jobs, std::max(agents, 1)));
  if (workers == 1) {
    for (int a = 0; a < agents; ++a) run_agent(a);
  } else {
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w) {
      pool.emplace_back([&, w] {
        for (int a = w; a < agents; a += workers) run_agent(a);
      });
    }
    for (auto& th : pool) th.join();
  }

  Simulation sim;
  sim.trajectories = std::move(states);
  sim.occupancy.assign(tau, Vector::Zero(n));
  sim.observations.assign(tau, std::vector<Vector>());
  for (int t = 0; t < tau; ++t) {
    for (int s = 0; s < per_step; ++s) sim.observations[t].push_back(Vector::Zero(model.matrices[s].cols()));
  }
  for (int a = 0; a < agents; ++a) {
    for (int t = 0; t < tau; ++t) {
      sim.occupancy[t][sim.trajectories[a][t]] += 1.0;
      for (int s = 0; s < per_step; ++s) sim.observations[t][s][symbols[a][t * per_step + s]] += 1.0;
    }
  }
  return sim;
}

HmtProblem build_hmt_problem(const std::vector<std::vector<Vector>>& observations,
                             const std::vector<Matrix>& transitions, const ObservationModel& model,
                             const std::optional<Vector>& first, const std::optional<Vector>& last) {
  const int tau = static_cast<int>(transitions.size()) + 1;
  const int per_step = model.observations_per_step();
  if (static_cast<int>(observations.size()) != tau && per_step > 0) {
    throw Error(Errc::InconsistentCounts, "expected observations for " + std::to_string(tau) + " steps");
  }
  const Eigen::Index n = transitions.empty()
                             ? (per_step > 0 ? model.matrices[0].rows() : (first ? first->size() : 0))
                             : transitions[0].rows();
  for (const auto& a : transitions) {
    if (a.rows() != n || a.cols() != n) throw Error(Errc::ShapeMismatch, "transitions must be n x n");
  }

  // Agent count from the first constraint; every other one must agree.
  double agents = -1.0;
  auto agree = [&](double total, const std::string& where) {
    if (agents < 0.0) {
      agents = total;
    } else if (std::abs(total - agents) > 1e-9 * std::max(1.0, agents)) {
      throw Error(Errc::InconsistentCounts, where + " sums to " + std::to_string(total) +
                                                ", expected " + std::to_string(agents));
    }
  };
  for (int t = 0; t < tau && per_step > 0; ++t) {
    if (static_cast<int>(observations[t].size()) != per_step) {
      throw Error(Errc::InconsistentCounts, "step " + std::to_string(t + 1) + " has " +
                                                std::to_string(observations[t].size()) +
                                                " observations, expected " + std::to_string(per_step));
    }
    for (int s = 0; s < per_step; ++s) {
      const Vector& phi = observations[t][s];
      if (phi.size() != model.matrices[s].cols()) {
        throw Error(Errc::ShapeMismatch, "observation has wrong number of symbols");
      }
      if ((phi.array() < 0.0).any()) throw Error(Errc::NonPositiveEntry, "negative count");
      agree(phi.sum(), "observation (" + std::to_string(t + 1) + "," + std::to_string(s + 1) + ")");
    }
  }
  if (first) agree(first->sum(), "first marginal");
  if (last) agree(last->sum(), "last marginal");
  if (agents < 0.0) throw Error(Errc::NoConstraints, "no observations and no endpoint marginals");
  if (!(agents > 0.0)) throw Error(Errc::InconsistentCounts, "no agents observed");

  HmtProblem out;
  out.tau = tau;
  out.per_step = per_step;
  out.agents = agents;

  // Natural orientation away from chain node 1: every kernel is stochastic.
  std::vector<Edge> edges;
  std::map<Edge, Matrix> kernels;
  std::map<Node, Vector> marginals;
  for (int t = 1; t < tau; ++t) {
    edges.push_back({t, t + 1});
    kernels[{t, t + 1}] = transitions[t - 1];
  }
  for (int t = 1; t <= tau; ++t) {
    for (int s = 1; s <= per_step; ++s) {
      const Node leaf = out.observation(t, s);
      edges.push_back({t, leaf});
      kernels[{t, leaf}] = model.matrices[s - 1];
      marginals[leaf] = observations[t - 1][s - 1] / agents;
    }
  }
  Node next = tau + tau * per_step + 1;
  auto clamp = [&](Node at, const Vector& mu) {
    if (mu.size() != n) throw Error(Errc::ShapeMismatch, "endpoint marginal has wrong length");
    const Node leaf = next++;
    edges.push_back({at, leaf});
    kernels[{at, leaf}] = Matrix::Identity(n, n);
    marginals[leaf] = mu / agents;
    return leaf;
  };
  if (first) out.first_clamp = clamp(1, *first);
  if (last) out.last_clamp = clamp(tau, *last);
  const int nodes = next - 1;
  const Tree tree = validate_tree(nodes, edges);

  Node root = per_step > 0 ? out.observation(1, 1) : (first ? out.first_clamp : out.last_clamp);
  MarkovTreeProblem& mp = out.problem;
  mp.rooted = root_at(tree, root);
  mp.leaf_marginals = marginals;

  // Reverse the edges between chain node 1 and the root; the reversal weights
  // start uniform at node 1 and end absorbed by the constrained root.
  const auto path = path_between(tree, 1, root);
  Vector a = Vector::Ones(n);
  std::map<Edge, Matrix> reversed;
  for (size_t i = 0; i + 1 < path.size(); ++i) {
    const Matrix& k = kernels.at({path[i], path[i + 1]});
    const Vector next_a = k.transpose() * a;
    if ((next_a.array() <= 0.0).any()) {
      throw Error(Errc::ZeroMassState, "a state of node " + std::to_string(path[i + 1]) +
                                           " cannot be reached");
    }
    reversed[{path[i + 1], path[i]}] = next_a.cwiseInverse().asDiagonal() * k.transpose() * a.asDiagonal();
    a = next_a;
  }
  for (const auto& [e, k] : kernels) {
    if (!reversed.count({e.second, e.first})) mp.transitions[e] = k;
  }
  for (auto& [e, k] : reversed) mp.transitions[e] = std::move(k);
  validate_bridge_problem(mp);
  return out;
}

EnsembleEstimate estimate(const HmtProblem& problem, const BridgeOptions& options) {
  EnsembleEstimate est;
  est.solution = bridge_sinkhorn(problem.problem, options);
  const double scale = problem.agents;
  const auto& sol = est.solution;
  auto plan = [&](Node from, Node to) {
    auto it = sol.plans.find({from, to});
    if (it != sol.plans.end()) return Matrix(it->second * scale);
    return Matrix(sol.plans.at({to, from}).transpose() * scale);
  };
  for (int t = 1; t <= problem.tau; ++t) est.occupancy.push_back(sol.mu[problem.chain(t)] * scale);
  for (int t = 1; t < problem.tau; ++t) est.flows.push_back(plan(t, t + 1));
  est.observation_plans.assign(problem.tau, {});
  for (int t = 1; t <= problem.tau; ++t) {
    for (int s = 1; s <= problem.per_step; ++s) {
      est.observation_plans[t - 1].push_back(plan(t, problem.observation(t, s)));
    }
  }
  est.sweeps = sol.sweeps;
  return est;
}

double earth_mover(const Vector& a, const Vector& b, const Matrix& ground) {
  const Eigen::Index n = a.size(), m = b.size();
  if (ground.rows() != n || ground.cols() != m) throw Error(Errc::ShapeMismatch, "ground cost shape");
  if (std::abs(a.sum() - b.sum()) > 1e-9 * std::max(1.0, a.sum())) {
    throw Error(Errc::MassMismatch, "histograms differ in mass");
  }
  // Drop the last column constraint; it follows from the others.
  Matrix eq = Matrix::Zero(n + m - 1, n * m);
  Vector rhs(n + m - 1);
  Vector cost(n * m);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index k = 0; k < m; ++k) {
      const Eigen::Index var = i * m + k;
      cost[var] = ground(i, k);
      eq(i, var) = 1.0;
      if (k + 1 < m) eq(n + k, var) = 1.0;
    }
    rhs[i] = a[i];
  }
  for (Eigen::Index k = 0; k + 1 < m; ++k) rhs[n + k] = b[k];
  const LpResult lp = solve_standard_lp(eq, rhs, cost);
  if (lp.status != LpStatus::Optimal) throw Error(Errc::NumericalUnderflow, "transport LP failed");
  return lp.objective;
}

}  // namespace treeot::ensemble
