#pragma once

#include <array>
#include <cmath>
#include <span>
#include <vector>

#include "fastaid/hierarchy.hpp"
#include "fastaid/planes.hpp"
#include "fastaid/volume.hpp"

namespace fastaid {

inline constexpr double kDefaultWeakSigmaMm = 3.1622776601683795;  // sqrt(10)
inline constexpr double kKldFloor = 1e-12;

/// Learned plane weights, stored unconstrained and mapped through softmax.
struct PlaneWeights {
  std::array<double, 3> theta{0.0, 0.0, 0.0};

  std::array<double, 3> weights() const;
  /// Strictly positive weights only; they are renormalized.
  static PlaneWeights from_weights(const std::array<double, 3>& w);
};

/// Per-voxel weights exp(-d^2 / (2 sigma^2)), d = distance to the nearest foreground voxel (mm).
using WeightMap = Grid<double>;

/// Exact squared Euclidean distance (mm^2) from every voxel to the nearest voxel
/// where `mask` is true. Separable lower-envelope method, spacing-aware.
Grid<double> squared_distance_transform(const Grid<uint8_t>& mask, const Vec3& spacing);

/// Foreground = every nonzero label. Throws EmptyForeground.
WeightMap distance_weights(const LabelVolume& labels, double sigma_mm = kDefaultWeakSigmaMm);

/// Sparse per-voxel targets: at most two weighted nodes, each expanded over its
/// ancestor path (or alone, for DeepestOnly). A voxel with no entries is unlabeled.
class TargetGrid {
 public:
  struct Entry {
    int node = -1;
    double weight = 0.0;
  };

  TargetGrid() = default;
  TargetGrid(const NiftiHeader& h, const LabelTree* tree, TargetSupport support = TargetSupport::AncestorPath);

  const NiftiHeader& header() const { return header_; }
  const LabelTree& tree() const { return *tree_; }
  TargetSupport support() const { return support_; }
  std::size_t voxel_count() const { return entries_.size(); }

  void set_hard(std::size_t voxel, int node);
  void set_soft(std::size_t voxel, int node_a, double weight_a, int node_b, double weight_b);
  void clear(std::size_t voxel) { entries_[voxel] = {}; }
  const std::array<Entry, 2>& entries(std::size_t voxel) const { return entries_[voxel]; }

  /// Writes the dense target vector (tree.size() entries) for a voxel.
  void expand(std::size_t voxel, std::span<double> out) const;

 private:
  NiftiHeader header_;
  const LabelTree* tree_ = nullptr;
  TargetSupport support_ = TargetSupport::AncestorPath;
  std::vector<std::array<Entry, 2>> entries_;
};

/// Hard targets for every labeled voxel; label 0 maps to the background node
/// when the tree has one, else the voxel is left unlabeled.
TargetGrid hard_targets(const LabelVolume& labels, const LabelTree& tree,
                        TargetSupport support = TargetSupport::AncestorPath);

struct WeakTargetOptions {
  /// Node receiving the soft weight; -1 resolves the node named "cranial_cavity".
  int cavity_index = -1;
  /// Background voxels with w <= threshold get a hard background target.
  double threshold = 1e-3;
  TargetSupport support = TargetSupport::AncestorPath;
};

/// Labeled voxels keep hard targets; background voxels get w on the cavity node
/// and 1 - w on background.
TargetGrid weak_targets(const LabelVolume& labels, const WeightMap& weights, const LabelTree& tree,
                        const WeakTargetOptions& opts = {});

/// Weighted sum of raw scores at the shared voxel.
std::vector<double> fuse_intersection(std::span<const double> a, std::span<const double> c, std::span<const double> s,
                                      const std::array<double, 3>& weights);

/// Symmetric KL: 0.5 (KL(P||Q) + KL(Q||P)), each averaged over the K rows.
/// Rows are probability vectors of length `classes`; entries floored at kKldFloor.
double kld_consistency(std::span<const double> p, std::span<const double> q, std::size_t classes);
/// Gradient of kld_consistency with respect to P (swap arguments for Q).
std::vector<double> kld_consistency_grad(std::span<const double> p, std::span<const double> q, std::size_t classes);

/// Raw per-node scores for one plane slice, pixel-major: index (u + width*v) * nodes + n.
struct SliceScores {
  int width = 0;
  int height = 0;
  int nodes = 0;
  std::vector<double> s;

  SliceScores() = default;
  SliceScores(int w, int h, int n) : width(w), height(h), nodes(n), s(static_cast<std::size_t>(w) * h * n, 0.0) {}
  std::size_t pixels() const { return static_cast<std::size_t>(width) * height; }
  std::span<double> pixel(std::size_t p) { return {s.data() + p * nodes, static_cast<std::size_t>(nodes)}; }
  std::span<const double> pixel(std::size_t p) const { return {s.data() + p * nodes, static_cast<std::size_t>(nodes)}; }
};

/// One axial/coronal/sagittal triple through the voxel `center` (x, y, z).
/// Targets are dense, pixel-major like the scores; all-zero rows are unlabeled.
struct PlanarBatch {
  std::array<int, 3> center{0, 0, 0};
  std::array<SliceScores, 3> scores;
  std::array<std::vector<double>, 3> targets;
};

struct LossTerms {
  double total = 0.0;
  double ce = 0.0;           // sum over planes of the per-plane mean hierarchical CE
  double consistency = 0.0;  // D(AC,CA) + D(CS,SC) + D(AS,SA)
  std::array<double, 3> ce_plane{};
  std::array<double, 3> kld_pair{};  // AC, AS, CS
};

struct LossGrad {
  std::array<SliceScores, 3> scores;
  std::array<double, 3> theta{};
};

/// Validates plane sizes against `center` and the tree. Throws ShapeMismatch.
void check_batch(const PlanarBatch& b, const LabelTree& tree);

/// Loss for one triple. The intersection pixel of every plane carries the fused
/// scores; the consistency terms compare finest-frontier distributions along the
/// three pairwise intersection lines. `grad` (optional) receives gradients with
/// respect to the raw plane scores and the plane-weight parameters.
LossTerms total_loss(const PlanarBatch& batch, const PlaneWeights& weights, const LabelTree& tree,
                     LossGrad* grad = nullptr);

/// Mean of total_loss over a minibatch; gradients are averaged too.
LossTerms minibatch_loss(std::span<const PlanarBatch> batches, const PlaneWeights& weights, const LabelTree& tree,
                         std::vector<LossGrad>* grads = nullptr, std::array<double, 3>* grad_theta = nullptr);

}  // namespace fastaid
