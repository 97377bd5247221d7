#include "treeot/graph.hpp"

#include <algorithm>
#include <set>
#include <string>

#include "treeot/error.hpp"

namespace treeot {

std::string_view errc_name(Errc code) {
  switch (code) {
    case Errc::CycleDetected: return "CycleDetected";
    case Errc::Disconnected: return "Disconnected";
    case Errc::DuplicateEdge: return "DuplicateEdge";
    case Errc::UnknownNode: return "UnknownNode";
    case Errc::RootNotLeaf: return "RootNotLeaf";
    case Errc::ShapeMismatch: return "ShapeMismatch";
    case Errc::EpsilonNonPositive: return "EpsilonNonPositive";
    case Errc::MassMismatch: return "MassMismatch";
    case Errc::MissingEdgeCost: return "MissingEdgeCost";
    case Errc::ModeOutOfRange: return "ModeOutOfRange";
    case Errc::EqualModes: return "EqualModes";
    case Errc::EqualNodes: return "EqualNodes";
    case Errc::MaxSweepsExceeded: return "MaxSweepsExceeded";
    case Errc::TooLarge: return "TooLarge";
    case Errc::StaleDependency: return "StaleDependency";
    case Errc::NoConstraints: return "NoConstraints";
    case Errc::NumericalUnderflow: return "NumericalUnderflow";
    case Errc::NotConverged: return "NotConverged";
    case Errc::NonPositiveEntry: return "NonPositiveEntry";
    case Errc::IncompatibleRowSums: return "IncompatibleRowSums";
    case Errc::ZeroMassState: return "ZeroMassState";
    case Errc::ProblemMismatch: return "ProblemMismatch";
    case Errc::InconsistentCounts: return "InconsistentCounts";
    case Errc::SupportViolation: return "SupportViolation";
    case Errc::InvalidArgument: return "InvalidArgument";
  }
  return "Unknown";
}

namespace {

void require_node(const Tree& tree, Node j) {
  if (!tree.contains(j)) {
    throw Error(Errc::UnknownNode, "node " + std::to_string(j) + " not in 1.." +
                                       std::to_string(tree.node_count()));
  }
}

}  // namespace

const std::vector<Node>& Tree::neighbors(Node j) const {
  require_node(*this, j);
  return adjacency_[j];
}

bool Tree::is_leaf(Node j) const {
  if (node_count_ == 1) return contains(j);
  return degree(j) == 1;
}

int Tree::edge_index(Node j, Node k) const {
  if (!contains(j) || !contains(k)) return -1;
  const auto& nbrs = adjacency_[j];
  auto it = std::lower_bound(nbrs.begin(), nbrs.end(), k);
  if (it == nbrs.end() || *it != k) return -1;
  return adjacent_edges_[j][it - nbrs.begin()];
}

int Tree::slot(Node j, Node k) const {
  int e = edge_index(j, k);
  if (e < 0) {
    throw Error(Errc::UnknownNode,
                "(" + std::to_string(j) + "," + std::to_string(k) + ") is not an edge");
  }
  return 2 * e + (edges_[e].first == j ? 0 : 1);
}

Tree validate_tree(int node_count, const std::vector<Edge>& edges) {
  if (node_count < 1) throw Error(Errc::InvalidArgument, "tree needs at least one node");
  Tree tree;
  tree.node_count_ = node_count;
  tree.adjacency_.assign(node_count + 1, {});
  tree.adjacent_edges_.assign(node_count + 1, {});

  std::set<std::pair<Node, Node>> seen;
  for (const auto& [a, b] : edges) {
    if (!tree.contains(a) || !tree.contains(b)) {
      throw Error(Errc::UnknownNode, "edge (" + std::to_string(a) + "," + std::to_string(b) +
                                         ") references a label outside 1.." +
                                         std::to_string(node_count));
    }
    if (a == b) throw Error(Errc::CycleDetected, "self-loop at node " + std::to_string(a));
    if (!seen.insert({std::min(a, b), std::max(a, b)}).second) {
      throw Error(Errc::DuplicateEdge,
                  "edge (" + std::to_string(a) + "," + std::to_string(b) + ") repeated");
    }
  }
  if (static_cast<int>(edges.size()) > node_count - 1) {
    throw Error(Errc::CycleDetected, std::to_string(edges.size()) + " edges on " +
                                         std::to_string(node_count) + " nodes");
  }

  // Union-find: with J-1 edges, any merge of two already joined nodes is a cycle.
  std::vector<int> root(node_count + 1);
  for (int j = 0; j <= node_count; ++j) root[j] = j;
  auto find = [&](int x) {
    while (root[x] != x) x = root[x] = root[root[x]];
    return x;
  };
  for (const auto& [a, b] : edges) {
    int ra = find(a), rb = find(b);
    if (ra == rb) {
      throw Error(Errc::CycleDetected, "edge (" + std::to_string(a) + "," + std::to_string(b) +
                                           ") closes a cycle");
    }
    root[ra] = rb;
  }
  if (static_cast<int>(edges.size()) < node_count - 1) {
    throw Error(Errc::Disconnected, std::to_string(edges.size()) + " edges on " +
                                        std::to_string(node_count) + " nodes");
  }

  tree.edges_ = edges;
  std::vector<std::vector<std::pair<Node, int>>> incident(node_count + 1);
  for (int e = 0; e < static_cast<int>(edges.size()); ++e) {
    incident[edges[e].first].push_back({edges[e].second, e});
    incident[edges[e].second].push_back({edges[e].first, e});
  }
  for (int j = 1; j <= node_count; ++j) {
    std::sort(incident[j].begin(), incident[j].end());
    for (const auto& [k, e] : incident[j]) {
      tree.adjacency_[j].push_back(k);
      tree.adjacent_edges_[j].push_back(e);
    }
  }
  return tree;
}

std::vector<Node> leaves(const Tree& tree) {
  std::vector<Node> out;
  for (Node j = 1; j <= tree.node_count(); ++j) {
    if (tree.is_leaf(j)) out.push_back(j);
  }
  return out;
}

std::vector<Node> path_between(const Tree& tree, Node from, Node to) {
  require_node(tree, from);
  require_node(tree, to);
  std::vector<Node> prev(tree.node_count() + 1, 0);
  std::vector<Node> stack{to};
  prev[to] = to;
  while (!stack.empty()) {
    Node j = stack.back();
    stack.pop_back();
    if (j == from) break;
    for (Node k : tree.neighbors(j)) {
      if (prev[k] == 0) {
        prev[k] = j;
        stack.push_back(k);
      }
    }
  }
  std::vector<Node> path{from};
  while (path.back() != to) path.push_back(prev[path.back()]);
  return path;
}

RootedTree root_at(const Tree& tree, Node root) {
  require_node(tree, root);
  if (!tree.is_leaf(root)) {
    throw Error(Errc::RootNotLeaf, "node " + std::to_string(root) + " has degree " +
                                       std::to_string(tree.degree(root)));
  }
  RootedTree rooted;
  rooted.base = tree;
  rooted.root = root;
  rooted.parent.assign(tree.node_count() + 1, 0);
  rooted.children.assign(tree.node_count() + 1, {});
  rooted.preorder.reserve(tree.node_count());
  std::vector<Node> stack{root};
  while (!stack.empty()) {
    Node j = stack.back();
    stack.pop_back();
    rooted.preorder.push_back(j);
    const auto& nbrs = tree.neighbors(j);
    for (auto it = nbrs.rbegin(); it != nbrs.rend(); ++it) {
      if (*it == rooted.parent[j] || *it == root) continue;
      rooted.parent[*it] = j;
      stack.push_back(*it);
    }
  }
  for (Node j : rooted.preorder) {
    if (j != root) rooted.children[rooted.parent[j]].push_back(j);
  }
  for (auto& c : rooted.children) std::sort(c.begin(), c.end());
  return rooted;
}

std::vector<Node> leaf_schedule(const Tree& tree) {
  const std::vector<Node> all = leaves(tree);
  if (tree.node_count() == 1) return all;
  std::vector<Node> order;
  std::vector<char> visited(tree.node_count() + 1, 0);
  // Iterative DFS that visits neighbours in ascending label order.
  std::vector<std::pair<Node, size_t>> stack{{all.front(), 0}};
  visited[all.front()] = 1;
  order.push_back(all.front());
  while (!stack.empty()) {
    auto& [j, next] = stack.back();
    const auto& nbrs = tree.neighbors(j);
    if (next == nbrs.size()) {
      stack.pop_back();
      continue;
    }
    Node k = nbrs[next++];
    if (visited[k]) continue;
    visited[k] = 1;
    if (tree.is_leaf(k)) order.push_back(k);
    stack.push_back({k, 0});
  }
  return order;
}

}  // namespace treeot
