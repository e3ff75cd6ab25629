#pragma once

#include <array>
#include <span>
#include <vector>

#include "fastaid/backbone.hpp"
#include "fastaid/hierarchy.hpp"
#include "fastaid/volume.hpp"

namespace fastaid {

/// Per-voxel raw node scores stacked from one plane orientation.
/// Voxel-major: (x + nx*(y + ny*z)) * nodes + n.
struct ScoreVolume {
  NiftiHeader header;
  int nodes = 0;
  std::vector<double> s;

  ScoreVolume() = default;
  ScoreVolume(const NiftiHeader& h, int n) : header(h), nodes(n), s(h.voxel_count() * n, 0.0) {}
  std::span<double> voxel(std::size_t i) { return {s.data() + i * nodes, static_cast<std::size_t>(nodes)}; }
  std::span<const double> voxel(std::size_t i) const { return {s.data() + i * nodes, static_cast<std::size_t>(nodes)}; }
};

enum class LabelDecision {
  GlobalArgmax,   // frontier node with the highest class probability
  GreedyDescent,  // best child at every level, root to leaf
};

enum class CombineMode { Fusion, Vote };

/// Node index chosen for one voxel. Ties resolve to the smallest node id.
int decide_node(std::span<const double> scores, const LabelTree& tree, HierWorkspace& ws,
                LabelDecision decision = LabelDecision::GlobalArgmax);

/// Fused scores -> hierarchical probabilities -> frontier label id, per voxel.
LabelVolume predict_score_fusion(const std::array<ScoreVolume, 3>& scores, const PlaneWeights& weights,
                                 const LabelTree& tree, LabelDecision decision = LabelDecision::GlobalArgmax);

/// Label of one orientation alone.
LabelVolume predict_plane_labels(const ScoreVolume& scores, const LabelTree& tree,
                                 LabelDecision decision = LabelDecision::GlobalArgmax);

/// Two or three matching labels win; otherwise the plane with the largest weight.
LabelVolume predict_majority_vote(const std::array<LabelVolume, 3>& labels, const PlaneWeights& weights);

/// Backbone scores for every slice of one orientation.
ScoreVolume plane_scores(const Volume& volume, const ToyBackbone& backbone, Plane plane, int threads = 1);

struct SegmentOptions {
  CombineMode mode = CombineMode::Fusion;
  LabelDecision decision = LabelDecision::GlobalArgmax;
  /// z-slab thickness for fusion; 0 = whole volume. Thinner slabs use less
  /// memory but rerun the coronal and sagittal slices once per slab.
  int chunk = 0;
  int threads = 1;
};

/// Runs the shared backbone over all axial, coronal and sagittal slices and
/// combines them. Output geometry equals the input geometry.
LabelVolume segment_volume(const Volume& volume, const Model& model, const LabelTree& tree,
                           const SegmentOptions& opts = {});

}  // namespace fastaid
