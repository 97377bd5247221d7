#pragma once

#include <utility>
#include <vector>

namespace treeot {

using Node = int;  // 1-based label
using Edge = std::pair<Node, Node>;

class Tree {
 public:
  Tree() = default;

  int node_count() const { return node_count_; }
  int edge_count() const { return static_cast<int>(edges_.size()); }
  const std::vector<Edge>& edges() const { return edges_; }

  bool contains(Node j) const { return j >= 1 && j <= node_count_; }
  const std::vector<Node>& neighbors(Node j) const;
  int degree(Node j) const { return static_cast<int>(neighbors(j).size()); }
  bool is_leaf(Node j) const;

  // Index into edges() of the edge joining j and k, or -1.
  int edge_index(Node j, Node k) const;
  // Dense slot for the ordered pair (j,k); each edge owns two slots.
  int slot(Node j, Node k) const;
  int slot_count() const { return 2 * edge_count(); }

 private:
  friend Tree validate_tree(int node_count, const std::vector<Edge>& edges);

  int node_count_ = 0;
  std::vector<Edge> edges_;
  std::vector<std::vector<Node>> adjacency_;       // sorted, indexed by label
  std::vector<std::vector<int>> adjacent_edges_;   // parallel to adjacency_
};

struct RootedTree {
  Tree base;
  Node root = 0;
  std::vector<Node> parent;                 // 0 for the root; indexed by label
  std::vector<std::vector<Node>> children;  // ascending labels
  std::vector<Node> preorder;               // parents before children

  const std::vector<Node>& children_of(Node j) const { return children.at(j); }
  Node parent_of(Node j) const { return parent.at(j); }
};

Tree validate_tree(int node_count, const std::vector<Edge>& edges);

std::vector<Node> leaves(const Tree& tree);

std::vector<Node> path_between(const Tree& tree, Node from, Node to);

RootedTree root_at(const Tree& tree, Node root);

std::vector<Node> leaf_schedule(const Tree& tree);

}  // namespace treeot
