#include "fastaid/inference.hpp"

#include <algorithm>

#include "fastaid/parallel.hpp"

namespace fastaid {

namespace {

bool better(double value, int id, double best, int best_id) {
  return value > best || (value == best && id < best_id);
}

void check_scores(const ScoreVolume& s, const LabelTree& tree) {
  if (s.nodes != static_cast<int>(tree.size()))
    throw Error(ErrorCode::ShapeMismatch, "score volume has " + std::to_string(s.nodes) + " nodes, tree has " +
                                              std::to_string(tree.size()));
  if (s.s.size() != s.header.voxel_count() * static_cast<std::size_t>(s.nodes))
    throw Error(ErrorCode::ShapeMismatch, "score volume buffer does not match its header");
}

LabelVolume empty_labels(const NiftiHeader& h) {
  LabelVolume out;
  out.header = h;
  out.header.datatype = DataType::Int32;
  out.header.scl_slope = 0.0;
  out.header.scl_inter = 0.0;
  out.data.assign(h.voxel_count(), 0);
  return out;
}

}  // namespace

int decide_node(std::span<const double> scores, const LabelTree& tree, HierWorkspace& ws, LabelDecision decision) {
  ws.resize(tree.size());
  hier_forward(scores, tree, ws);
  if (decision == LabelDecision::GlobalArgmax) {
    int best = -1;
    for (int n : tree.frontier())
      if (best < 0 || better(ws.log_prob[n], tree.node(n).id, ws.log_prob[best], tree.node(best).id)) best = n;
    return best;
  }
  const std::vector<int>* group = &tree.groups().front();
  for (;;) {
    int best = -1;
    for (int n : *group)
      if (best < 0 || better(ws.log_cond[n], tree.node(n).id, ws.log_cond[best], tree.node(best).id)) best = n;
    if (tree.is_frontier(best)) return best;
    group = &tree.children(best);
  }
}

LabelVolume predict_score_fusion(const std::array<ScoreVolume, 3>& scores, const PlaneWeights& weights,
                                 const LabelTree& tree, LabelDecision decision) {
  for (const auto& s : scores) check_scores(s, tree);
  for (int p = 1; p < 3; ++p)
    if (scores[p].header.dims != scores[0].header.dims)
      throw Error(ErrorCode::ShapeMismatch, "plane score volumes differ in size");
  const auto w = weights.weights();
  LabelVolume out = empty_labels(scores[0].header);
  HierWorkspace ws;
  std::vector<double> fused(tree.size());
  for (std::size_t i = 0; i < out.data.size(); ++i) {
    const auto a = scores[0].voxel(i), c = scores[1].voxel(i), s = scores[2].voxel(i);
    for (std::size_t n = 0; n < fused.size(); ++n) fused[n] = w[0] * a[n] + w[1] * c[n] + w[2] * s[n];
    out.data[i] = tree.node(decide_node(fused, tree, ws, decision)).id;
  }
  return out;
}

LabelVolume predict_plane_labels(const ScoreVolume& scores, const LabelTree& tree, LabelDecision decision) {
  check_scores(scores, tree);
  LabelVolume out = empty_labels(scores.header);
  HierWorkspace ws;
  for (std::size_t i = 0; i < out.data.size(); ++i)
    out.data[i] = tree.node(decide_node(scores.voxel(i), tree, ws, decision)).id;
  return out;
}

LabelVolume predict_majority_vote(const std::array<LabelVolume, 3>& labels, const PlaneWeights& weights) {
  require_same_dims(labels[0], labels[1], "majority vote");
  require_same_dims(labels[0], labels[2], "majority vote");
  const auto w = weights.weights();
  int strongest = 0;
  for (int p = 1; p < 3; ++p)
    if (w[p] > w[strongest]) strongest = p;
  LabelVolume out = empty_labels(labels[0].header);
  for (std::size_t i = 0; i < out.data.size(); ++i) {
    const int32_t a = labels[0].data[i], c = labels[1].data[i], s = labels[2].data[i];
    if (a == c || a == s)
      out.data[i] = a;
    else if (c == s)
      out.data[i] = c;
    else
      out.data[i] = labels[strongest].data[i];
  }
  return out;
}

ScoreVolume plane_scores(const Volume& volume, const ToyBackbone& backbone, Plane plane, int threads) {
  const int nodes = backbone.shape().nodes;
  ScoreVolume out(volume.header, nodes);
  const int axis = fixed_axis(plane);
  const auto ax = slice_axes(plane);
  parallel_for(volume.header.dims[axis], threads, [&](std::size_t index) {
    const SliceScores sc = backbone.forward(extract_slice(volume, plane, static_cast<int>(index)));
    for (int v = 0; v < sc.height; ++v)
      for (int u = 0; u < sc.width; ++u) {
        std::array<int, 3> c{};
        c[axis] = static_cast<int>(index);
        c[ax[0]] = u;
        c[ax[1]] = v;
        const auto src = sc.pixel(static_cast<std::size_t>(u) + static_cast<std::size_t>(sc.width) * v);
        std::copy(src.begin(), src.end(), out.voxel(volume.index(c[0], c[1], c[2])).begin());
      }
  });
  return out;
}

namespace {

LabelVolume segment_fusion(const Volume& volume, const Model& model, const LabelTree& tree,
                           const SegmentOptions& opts) {
  const auto& d = volume.header.dims;
  const std::size_t nodes = tree.size();
  const auto w = model.planes.weights();
  const int chunk = opts.chunk > 0 ? std::min(opts.chunk, d[2]) : d[2];
  LabelVolume out = empty_labels(volume.header);
  std::vector<double> fused;

  for (int z0 = 0; z0 < d[2]; z0 += chunk) {
    const int z1 = std::min(d[2], z0 + chunk);
    const std::size_t slab = static_cast<std::size_t>(d[0]) * d[1];
    fused.assign(slab * (z1 - z0) * nodes, 0.0);
    auto at = [&](int x, int y, int z) {
      return fused.data() + ((static_cast<std::size_t>(z - z0) * d[1] + y) * d[0] + x) * nodes;
    };

    parallel_for(z1 - z0, opts.threads, [&](std::size_t k) {
      const int z = z0 + static_cast<int>(k);
      const SliceScores sc = model.backbone.forward(extract_slice(volume, Plane::Axial, z));
      for (int y = 0; y < d[1]; ++y)
        for (int x = 0; x < d[0]; ++x) {
          const auto src = sc.pixel(static_cast<std::size_t>(x) + static_cast<std::size_t>(d[0]) * y);
          double* dst = at(x, y, z);
          for (std::size_t n = 0; n < nodes; ++n) dst[n] = w[0] * src[n];
        }
    });
    parallel_for(d[1], opts.threads, [&](std::size_t y) {
      const SliceScores sc = model.backbone.forward(extract_slice(volume, Plane::Coronal, static_cast<int>(y)));
      for (int z = z0; z < z1; ++z)
        for (int x = 0; x < d[0]; ++x) {
          const auto src = sc.pixel(static_cast<std::size_t>(x) + static_cast<std::size_t>(d[0]) * z);
          double* dst = at(x, static_cast<int>(y), z);
          for (std::size_t n = 0; n < nodes; ++n) dst[n] += w[1] * src[n];
        }
    });
    parallel_for(d[0], opts.threads, [&](std::size_t x) {
      const SliceScores sc = model.backbone.forward(extract_slice(volume, Plane::Sagittal, static_cast<int>(x)));
      for (int z = z0; z < z1; ++z)
        for (int y = 0; y < d[1]; ++y) {
          const auto src = sc.pixel(static_cast<std::size_t>(y) + static_cast<std::size_t>(d[1]) * z);
          double* dst = at(static_cast<int>(x), y, z);
          for (std::size_t n = 0; n < nodes; ++n) dst[n] += w[2] * src[n];
        }
    });
    parallel_for(z1 - z0, opts.threads, [&](std::size_t k) {
      const int z = z0 + static_cast<int>(k);
      HierWorkspace ws;
      for (int y = 0; y < d[1]; ++y)
        for (int x = 0; x < d[0]; ++x) {
          const std::span<const double> s(at(x, y, z), nodes);
          out.at(x, y, z) = tree.node(decide_node(s, tree, ws, opts.decision)).id;
        }
    });
  }
  return out;
}

LabelVolume segment_vote(const Volume& volume, const Model& model, const LabelTree& tree,
                         const SegmentOptions& opts) {
  std::array<LabelVolume, 3> planes;
  for (Plane plane : kPlanes) {
    LabelVolume& lab = planes[static_cast<int>(plane)];
    lab = empty_labels(volume.header);
    const int axis = fixed_axis(plane);
    const auto ax = slice_axes(plane);
    parallel_for(volume.header.dims[axis], opts.threads, [&](std::size_t index) {
      const SliceScores sc = model.backbone.forward(extract_slice(volume, plane, static_cast<int>(index)));
      HierWorkspace ws;
      for (int v = 0; v < sc.height; ++v)
        for (int u = 0; u < sc.width; ++u) {
          std::array<int, 3> c{};
          c[axis] = static_cast<int>(index);
          c[ax[0]] = u;
          c[ax[1]] = v;
          const auto s = sc.pixel(static_cast<std::size_t>(u) + static_cast<std::size_t>(sc.width) * v);
          lab.at(c[0], c[1], c[2]) = tree.node(decide_node(s, tree, ws, opts.decision)).id;
        }
    });
  }
  return predict_majority_vote(planes, model.planes);
}

}  // namespace

LabelVolume segment_volume(const Volume& volume, const Model& model, const LabelTree& tree,
                           const SegmentOptions& opts) {
  check_model(model, tree);
  return opts.mode == CombineMode::Fusion ? segment_fusion(volume, model, tree, opts)
                                          : segment_vote(volume, model, tree, opts);
}

}  // namespace fastaid
