#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "fastaid/error.hpp"

namespace fastaid {

/// One tree node as stored in a tree file. `parent` is kRootParent for
/// children of the virtual root.
struct LabelNode {
  static constexpr int kRootParent = -1;
  int id = 0;
  int parent = kRootParent;
  int level = 1;
  std::string name;
};

/// Label hierarchy with a virtual root at level 0.
///
/// Nodes are addressed by dense index in [0, size()); indices follow
/// topological order (every parent precedes its children). Node id 0, when
/// present, is the background class.
class LabelTree {
 public:
  /// Throws SchemaError listing the first violation.
  static LabelTree from_nodes(std::vector<LabelNode> nodes);
  /// Every schema violation found, empty when the node list is a valid tree.
  static std::vector<std::string> validate(const std::vector<LabelNode>& nodes);

  std::size_t size() const { return nodes_.size(); }
  const LabelNode& node(int index) const { return nodes_[index]; }
  const std::vector<LabelNode>& nodes() const { return nodes_; }

  /// Dense index for a node id, or -1.
  int index_of(int id) const;
  /// -1 for children of the root.
  int parent_index(int index) const { return parent_[index]; }
  const std::vector<int>& children(int index) const { return children_[index]; }
  /// Sibling groups; every node belongs to exactly one group.
  const std::vector<std::vector<int>>& groups() const { return groups_; }
  int group_of(int index) const { return group_of_[index]; }
  /// Leaves at any depth, in index order.
  const std::vector<int>& frontier() const { return frontier_; }
  bool is_frontier(int index) const { return children_[index].empty(); }
  /// Path from the level-1 ancestor down to `index`, inclusive.
  std::vector<int> path(int index) const;
  int depth() const { return depth_; }

  int find_by_name(const std::string& name) const;
  int background_index() const { return index_of(0); }

  /// Canonical "id parent level name" text, one node per line.
  std::string serialize() const;
  /// FNV-1a over serialize(); identifies the tree inside model files.
  uint64_t hash() const;

 private:
  std::vector<LabelNode> nodes_;
  std::vector<int> parent_;
  std::vector<std::vector<int>> children_;
  std::vector<std::vector<int>> groups_;
  std::vector<int> group_of_;
  std::vector<int> frontier_;
  std::vector<std::pair<int, int>> id_to_index_;  // sorted by id
  int depth_ = 0;
};

/// Parses whitespace-separated "id parent level name" lines; parent is an id or
/// "root"; '#' starts a comment. Throws SchemaError with the node id and reason.
LabelTree parse_tree(const std::string& text);
LabelTree load_tree(const std::filesystem::path& path);
std::vector<std::string> validate_tree(const LabelTree& tree);

/// Which nodes a hard label marks in the target vector.
enum class TargetSupport {
  AncestorPath,  // labeled node and every ancestor, one per level
  DeepestOnly,
};

// ---- per-pixel operations; every span has tree.size() entries ----

/// log p(node | parent) by log-sum-exp over each sibling group.
void sibling_log_softmax(std::span<const double> scores, const LabelTree& tree, std::span<double> log_cond);
/// p(node | parent).
std::vector<double> sibling_softmax(std::span<const double> scores, const LabelTree& tree);
/// log p(node) = sum of log conditionals along the root path.
void class_log_probs(std::span<const double> log_cond, const LabelTree& tree, std::span<double> log_prob);
/// p(node) from conditionals.
std::vector<double> class_conditional(std::span<const double> cond, const LabelTree& tree);

/// Adds `weight` at `index` (and its ancestors for AncestorPath) into `target`.
void add_target(const LabelTree& tree, int index, double weight, TargetSupport support, std::span<double> target);
std::vector<double> hard_target(const LabelTree& tree, int index, TargetSupport support = TargetSupport::AncestorPath);

/// -sum_n t(n) log p(n).
double hier_ce_loss(std::span<const double> scores, std::span<const double> target, const LabelTree& tree);
/// Gradient of hier_ce_loss with respect to the raw scores.
std::vector<double> hier_ce_grad(std::span<const double> scores, std::span<const double> target, const LabelTree& tree);

/// Reusable buffers for the batched paths in fusion/inference.
struct HierWorkspace {
  std::vector<double> log_cond, log_prob, acc, grad_log_prob;
  void resize(std::size_t n) {
    log_cond.resize(n);
    log_prob.resize(n);
    acc.resize(n);
    grad_log_prob.resize(n);
  }
};

/// Computes log_cond/log_prob for one pixel into ws.
void hier_forward(std::span<const double> scores, const LabelTree& tree, HierWorkspace& ws);

/// Backpropagates dL/dlog p(node) (all nodes) to dL/dscores, given the
/// forward state in ws. `grad_scores` is accumulated into, not overwritten.
void hier_backward(std::span<const double> grad_log_prob, const LabelTree& tree, HierWorkspace& ws,
                   std::span<double> grad_scores);

/// Loss and gradient for one pixel in one pass; gradient accumulated.
double hier_ce_accumulate(std::span<const double> scores, std::span<const double> target, const LabelTree& tree,
                          HierWorkspace& ws, std::span<double> grad_scores, double scale = 1.0);

}  // namespace fastaid
