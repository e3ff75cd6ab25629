#include "fastaid/hierarchy.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <set>
#include <sstream>

namespace fastaid {

std::vector<std::string> LabelTree::validate(const std::vector<LabelNode>& nodes) {
  std::vector<std::string> out;
  if (nodes.empty()) {
    out.push_back("tree has no nodes");
    return out;
  }
  std::map<int, const LabelNode*> by_id;
  for (const auto& n : nodes) {
    if (n.id < 0) out.push_back("node " + std::to_string(n.id) + ": negative id");
    if (!by_id.emplace(n.id, &n).second) out.push_back("node " + std::to_string(n.id) + ": duplicate id");
  }
  for (const auto& n : nodes) {
    const std::string tag = "node " + std::to_string(n.id) + ": ";
    if (n.level < 1) out.push_back(tag + "level must be >= 1");
    if (n.parent == LabelNode::kRootParent) {
      if (n.level != 1) out.push_back(tag + "children of the root must be at level 1");
      continue;
    }
    if (n.parent == n.id) {
      out.push_back(tag + "node is its own parent");
      continue;
    }
    const auto it = by_id.find(n.parent);
    if (it == by_id.end()) {
      out.push_back(tag + "unknown parent " + std::to_string(n.parent));
      continue;
    }
    if (it->second->level != n.level - 1)
      out.push_back(tag + "parent " + std::to_string(n.parent) + " is at level " + std::to_string(it->second->level) +
                    ", expected " + std::to_string(n.level - 1));
  }
  // Levels strictly decrease toward the root, so a consistent level assignment
  // rules out cycles; walk anyway to report them when levels are inconsistent.
  for (const auto& n : nodes) {
    std::set<int> seen{n.id};
    int cur = n.parent;
    while (cur != LabelNode::kRootParent) {
      const auto it = by_id.find(cur);
      if (it == by_id.end()) break;
      if (!seen.insert(cur).second) {
        out.push_back("node " + std::to_string(n.id) + ": cycle through " + std::to_string(cur));
        break;
      }
      cur = it->second->parent;
    }
  }
  return out;
}

LabelTree LabelTree::from_nodes(std::vector<LabelNode> nodes) {
  const auto problems = validate(nodes);
  if (!problems.empty()) throw Error(ErrorCode::SchemaError, problems.front());

  std::stable_sort(nodes.begin(), nodes.end(), [](const LabelNode& a, const LabelNode& b) { return a.level < b.level; });
  LabelTree t;
  t.nodes_ = std::move(nodes);
  const int n = static_cast<int>(t.nodes_.size());
  for (int i = 0; i < n; ++i) t.id_to_index_.emplace_back(t.nodes_[i].id, i);
  std::sort(t.id_to_index_.begin(), t.id_to_index_.end());

  t.parent_.resize(n);
  t.children_.assign(n, {});
  std::vector<int> root_children;
  for (int i = 0; i < n; ++i) {
    const int p = t.nodes_[i].parent == LabelNode::kRootParent ? -1 : t.index_of(t.nodes_[i].parent);
    t.parent_[i] = p;
    if (p < 0)
      root_children.push_back(i);
    else
      t.children_[p].push_back(i);
    t.depth_ = std::max(t.depth_, t.nodes_[i].level);
  }
  t.group_of_.assign(n, -1);
  auto add_group = [&t](const std::vector<int>& members) {
    const int g = static_cast<int>(t.groups_.size());
    t.groups_.push_back(members);
    for (int m : members) t.group_of_[m] = g;
  };
  add_group(root_children);
  for (int i = 0; i < n; ++i)
    if (!t.children_[i].empty()) add_group(t.children_[i]);
  for (int i = 0; i < n; ++i)
    if (t.children_[i].empty()) t.frontier_.push_back(i);
  return t;
}

int LabelTree::index_of(int id) const {
  const auto it = std::lower_bound(id_to_index_.begin(), id_to_index_.end(), std::make_pair(id, std::numeric_limits<int>::min()));
  if (it == id_to_index_.end() || it->first != id) return -1;
  return it->second;
}

std::vector<int> LabelTree::path(int index) const {
  std::vector<int> p;
  for (int cur = index; cur >= 0; cur = parent_[cur]) p.push_back(cur);
  std::reverse(p.begin(), p.end());
  return p;
}

int LabelTree::find_by_name(const std::string& name) const {
  for (int i = 0; i < static_cast<int>(nodes_.size()); ++i)
    if (nodes_[i].name == name) return i;
  return -1;
}

std::string LabelTree::serialize() const {
  std::ostringstream os;
  for (const auto& n : nodes_) {
    os << n.id << ' ';
    if (n.parent == LabelNode::kRootParent)
      os << "root";
    else
      os << n.parent;
    os << ' ' << n.level << ' ' << n.name << '\n';
  }
  return os.str();
}

uint64_t LabelTree::hash() const {
  uint64_t h = 1469598103934665603ull;
  for (unsigned char c : serialize()) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

LabelTree parse_tree(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  std::vector<LabelNode> nodes;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    std::istringstream ls(line);
    std::string id_s, parent_s, level_s, name;
    if (!(ls >> id_s)) continue;
    if (!(ls >> parent_s >> level_s >> name))
      throw Error(ErrorCode::SchemaError, "line " + std::to_string(lineno) + ": expected 'id parent level name'");
    LabelNode n;
    try {
      std::size_t used = 0;
      n.id = std::stoi(id_s, &used);
      if (used != id_s.size()) throw std::invalid_argument(id_s);
      n.level = std::stoi(level_s, &used);
      if (used != level_s.size()) throw std::invalid_argument(level_s);
      if (parent_s == "root" || parent_s == "-") {
        n.parent = LabelNode::kRootParent;
      } else {
        n.parent = std::stoi(parent_s, &used);
        if (used != parent_s.size()) throw std::invalid_argument(parent_s);
      }
    } catch (const std::logic_error&) {
      throw Error(ErrorCode::SchemaError, "line " + std::to_string(lineno) + ": non-integer field");
    }
    n.name = name;
    nodes.push_back(std::move(n));
  }
  return LabelTree::from_nodes(std::move(nodes));
}

LabelTree load_tree(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoFailure, "cannot open tree file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_tree(ss.str());
}

std::vector<std::string> validate_tree(const LabelTree& tree) { return LabelTree::validate(tree.nodes()); }

void sibling_log_softmax(std::span<const double> scores, const LabelTree& tree, std::span<double> log_cond) {
  for (const auto& g : tree.groups()) {
    if (g.size() == 1) {
      log_cond[g[0]] = 0.0;
      continue;
    }
    double m = -std::numeric_limits<double>::infinity();
    for (int i : g) m = std::max(m, scores[i]);
    double s = 0.0;
    for (int i : g) s += std::exp(scores[i] - m);
    const double lse = m + std::log(s);
    for (int i : g) log_cond[i] = scores[i] - lse;
  }
}

std::vector<double> sibling_softmax(std::span<const double> scores, const LabelTree& tree) {
  std::vector<double> out(tree.size());
  sibling_log_softmax(scores, tree, out);
  for (double& x : out) x = std::exp(x);
  return out;
}

void class_log_probs(std::span<const double> log_cond, const LabelTree& tree, std::span<double> log_prob) {
  for (int i = 0; i < static_cast<int>(tree.size()); ++i) {
    const int p = tree.parent_index(i);
    log_prob[i] = log_cond[i] + (p >= 0 ? log_prob[p] : 0.0);
  }
}

std::vector<double> class_conditional(std::span<const double> cond, const LabelTree& tree) {
  std::vector<double> out(tree.size());
  for (int i = 0; i < static_cast<int>(tree.size()); ++i) {
    const int p = tree.parent_index(i);
    out[i] = cond[i] * (p >= 0 ? out[p] : 1.0);
  }
  return out;
}

void add_target(const LabelTree& tree, int index, double weight, TargetSupport support, std::span<double> target) {
  if (support == TargetSupport::DeepestOnly) {
    target[index] += weight;
    return;
  }
  for (int cur = index; cur >= 0; cur = tree.parent_index(cur)) target[cur] += weight;
}

std::vector<double> hard_target(const LabelTree& tree, int index, TargetSupport support) {
  std::vector<double> t(tree.size(), 0.0);
  add_target(tree, index, 1.0, support, t);
  return t;
}

void hier_forward(std::span<const double> scores, const LabelTree& tree, HierWorkspace& ws) {
  ws.resize(tree.size());
  sibling_log_softmax(scores, tree, ws.log_cond);
  class_log_probs(ws.log_cond, tree, ws.log_prob);
}

void hier_backward(std::span<const double> grad_log_prob, const LabelTree& tree, HierWorkspace& ws,
                   std::span<double> grad_scores) {
  const int n = static_cast<int>(tree.size());
  // d log p(d) / d log c(a) = 1 for every ancestor a of d (inclusive).
  std::copy(grad_log_prob.begin(), grad_log_prob.end(), ws.acc.begin());
  for (int i = n - 1; i >= 0; --i) {
    const int p = tree.parent_index(i);
    if (p >= 0) ws.acc[p] += ws.acc[i];
  }
  for (const auto& g : tree.groups()) {
    if (g.size() == 1) continue;
    double s = 0.0;
    for (int i : g) s += ws.acc[i];
    for (int i : g) grad_scores[i] += ws.acc[i] - std::exp(ws.log_cond[i]) * s;
  }
}

double hier_ce_accumulate(std::span<const double> scores, std::span<const double> target, const LabelTree& tree,
                          HierWorkspace& ws, std::span<double> grad_scores, double scale) {
  bool any = false;
  for (double t : target) any = any || t != 0.0;
  if (!any) return 0.0;
  hier_forward(scores, tree, ws);
  double loss = 0.0;
  for (std::size_t i = 0; i < tree.size(); ++i) {
    if (target[i] != 0.0) loss -= target[i] * ws.log_prob[i];
    ws.grad_log_prob[i] = -target[i] * scale;
  }
  hier_backward(ws.grad_log_prob, tree, ws, grad_scores);
  return loss;
}

double hier_ce_loss(std::span<const double> scores, std::span<const double> target, const LabelTree& tree) {
  HierWorkspace ws;
  hier_forward(scores, tree, ws);
  double loss = 0.0;
  for (std::size_t i = 0; i < tree.size(); ++i)
    if (target[i] != 0.0) loss -= target[i] * ws.log_prob[i];
  return loss;
}

std::vector<double> hier_ce_grad(std::span<const double> scores, std::span<const double> target, const LabelTree& tree) {
  std::vector<double> g(tree.size(), 0.0);
  HierWorkspace ws;
  hier_ce_accumulate(scores, target, tree, ws, g);
  return g;
}

}  // namespace fastaid
