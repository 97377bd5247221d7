#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "treeot/bridge.hpp"
#include "treeot/numerics.hpp"

namespace treeot::ensemble {

// Graph the agents move on. Nodes are 1..n; positions are indexed 0..n-1.
struct Network {
  int n = 0;
  std::vector<Vector> positions;
  std::vector<Edge> edges;
};

// Checks labels and connectivity.
Network make_network(std::vector<Vector> positions, std::vector<Edge> edges);

// rows x cols lattice with unit spacing; node (r, c) has label r * cols + c + 1.
Network grid_network(int rows, int cols);

// A(k, l) = 1/deg(k) over neighbours, or 1/(deg(k)+1) including k itself when lazy.
Matrix build_random_walk(const Network& network, bool lazy = true);

// Euclidean distances between node positions.
Matrix network_distances(const Network& network);

enum class ObservationKind { Uncoupled, Coupled, Perfect };

constexpr int kMaxCoupledSensors = 15;

// Uncoupled: one n x 2 matrix per sensor, columns [detected, undetected].
// Coupled: one n x 2^S matrix; bit s of a symbol is set when sensor s misses
// the agent. Perfect: the identity, the symbol is the node itself.
struct ObservationModel {
  ObservationKind kind = ObservationKind::Uncoupled;
  std::vector<Vector> sensors;
  std::vector<Matrix> matrices;
  Matrix detection;  // n x S detection probabilities; empty for Perfect

  int observations_per_step() const { return static_cast<int>(matrices.size()); }
};

// n x S matrix of detection probabilities min(0.99, 2 exp(-distance)).
Matrix detection_probabilities(const Network& network, const std::vector<Vector>& sensors);

ObservationModel uncoupled_model(const Network& network, const std::vector<Vector>& sensors);
ObservationModel coupled_model(const Network& network, const std::vector<Vector>& sensors);
ObservationModel perfect_model(const Network& network);

// Bridge between point masses at `source` and `sink` over tau steps with the
// random walk as prior; its transitions drive the simulation.
PathBridge plan_prior(const Network& network, Node source, Node sink, int tau, bool lazy = true,
                      const BridgeOptions& options = {});

struct Simulation {
  std::vector<std::vector<int>> trajectories;         // [agent][t], 0-based states
  std::vector<Vector> occupancy;                      // [t] agent counts per state
  std::vector<std::vector<Vector>> observations;      // [t][s] counts per symbol
};

// N independent agents started from `initial`; agent a draws from a stream
// seeded by (seed, a), so the result does not depend on `jobs`.
Simulation simulate(const std::vector<Matrix>& transitions, const Vector& initial, int agents,
                    const ObservationModel& model, std::uint64_t seed, int jobs = 1);

struct HmtProblem {
  MarkovTreeProblem problem;
  int tau = 0;
  int per_step = 0;  // observation leaves per time step
  double agents = 0.0;
  Node first_clamp = 0;  // leaf carrying a known first marginal, 0 if none
  Node last_clamp = 0;

  Node chain(int t) const { return t; }
  Node observation(int t, int s) const { return tau + (t - 1) * per_step + s; }
};

// Chain nodes 1..tau joined by the transitions, observation leaves hanging
// off every chain node, optional clamp leaves for known endpoint marginals.
// Rooted at the first constrained leaf.
HmtProblem build_hmt_problem(const std::vector<std::vector<Vector>>& observations,
                             const std::vector<Matrix>& transitions, const ObservationModel& model,
                             const std::optional<Vector>& first = std::nullopt,
                             const std::optional<Vector>& last = std::nullopt);

struct EnsembleEstimate {
  std::vector<Vector> occupancy;                  // [t], scaled to agent counts
  std::vector<Matrix> flows;                      // [t] couples steps t and t+1
  std::vector<std::vector<Matrix>> observation_plans;  // [t][s], states x symbols
  int sweeps = 0;
  BridgeSolution solution;
};

EnsembleEstimate estimate(const HmtProblem& problem, const BridgeOptions& options = {});

// Optimal transport distance between equal-mass histograms.
double earth_mover(const Vector& a, const Vector& b, const Matrix& ground);

}  // namespace treeot::ensemble
