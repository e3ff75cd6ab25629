#include "fastaid/fusion_loss.hpp"

#include <algorithm>
#include <limits>
#include <numeric>

namespace fastaid {

std::array<double, 3> PlaneWeights::weights() const {
  const double m = std::max({theta[0], theta[1], theta[2]});
  std::array<double, 3> w{};
  double s = 0.0;
  for (int i = 0; i < 3; ++i) s += w[i] = std::exp(theta[i] - m);
  for (double& x : w) x /= s;
  return w;
}

PlaneWeights PlaneWeights::from_weights(const std::array<double, 3>& w) {
  PlaneWeights pw;
  for (int i = 0; i < 3; ++i) {
    if (!(w[i] > 0.0)) throw Error(ErrorCode::InvalidArgument, "plane weights must be positive");
    pw.theta[i] = std::log(w[i]);
  }
  return pw;
}

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// Lower envelope of parabolas w (q - i)^2 + f(i); points with f = inf are skipped.
void edt_line(std::vector<double>& f, double w, std::vector<int>& v, std::vector<double>& z, std::vector<double>& out) {
  const int n = static_cast<int>(f.size());
  int k = -1;
  for (int q = 0; q < n; ++q) {
    if (!std::isfinite(f[q])) continue;
    if (k < 0) {
      k = 0;
      v[0] = q;
      z[0] = -kInf;
      z[1] = kInf;
      continue;
    }
    double s = 0.0;
    while (true) {
      const int r = v[k];
      s = ((f[q] + w * q * q) - (f[r] + w * r * r)) / (2.0 * w * (q - r));
      if (k > 0 && s <= z[k]) {
        --k;
        continue;
      }
      break;
    }
    ++k;
    v[k] = q;
    z[k] = s;
    z[k + 1] = kInf;
  }
  if (k < 0) {
    std::fill(out.begin(), out.end(), kInf);
    return;
  }
  int j = 0;
  for (int q = 0; q < n; ++q) {
    while (z[j + 1] < q) ++j;
    const double dq = q - v[j];
    out[q] = w * dq * dq + f[v[j]];
  }
}

}  // namespace

Grid<double> squared_distance_transform(const Grid<uint8_t>& mask, const Vec3& spacing) {
  Grid<double> d(mask.header, kInf);
  for (std::size_t i = 0; i < mask.data.size(); ++i)
    if (mask.data[i]) d.data[i] = 0.0;
  const Dims& n = mask.header.dims;
  for (int axis = 0; axis < 3; ++axis) {
    const int len = n[axis];
    const double w = spacing[axis] * spacing[axis];
    std::vector<double> f(len), out(len), z(len + 1);
    std::vector<int> v(len);
    const int a1 = axis == 0 ? 1 : 0, a2 = axis == 2 ? 1 : 2;
    for (int j = 0; j < n[a2]; ++j)
      for (int i = 0; i < n[a1]; ++i) {
        std::array<int, 3> c{};
        c[a1] = i;
        c[a2] = j;
        for (int q = 0; q < len; ++q) {
          c[axis] = q;
          f[q] = d.at(c[0], c[1], c[2]);
        }
        edt_line(f, w, v, z, out);
        for (int q = 0; q < len; ++q) {
          c[axis] = q;
          d.at(c[0], c[1], c[2]) = out[q];
        }
      }
  }
  return d;
}

WeightMap distance_weights(const LabelVolume& labels, double sigma_mm) {
  if (!(sigma_mm > 0.0)) throw Error(ErrorCode::InvalidArgument, "sigma must be positive");
  Grid<uint8_t> mask(labels.header, 0);
  bool any = false;
  for (std::size_t i = 0; i < labels.data.size(); ++i)
    if (labels.data[i] != 0) mask.data[i] = 1, any = true;
  if (!any) throw Error(ErrorCode::EmptyForeground, "distance weights need a nonempty foreground");
  const Grid<double> d2 = squared_distance_transform(mask, labels.header.spacing);
  WeightMap w(labels.header, 0.0);
  w.header.datatype = DataType::Float32;
  const double denom = 2.0 * sigma_mm * sigma_mm;
  for (std::size_t i = 0; i < d2.data.size(); ++i) w.data[i] = std::exp(-d2.data[i] / denom);
  return w;
}

TargetGrid::TargetGrid(const NiftiHeader& h, const LabelTree* tree, TargetSupport support)
    : header_(h), tree_(tree), support_(support), entries_(h.voxel_count()) {}

void TargetGrid::set_hard(std::size_t voxel, int node) { entries_[voxel] = {Entry{node, 1.0}, Entry{}}; }

void TargetGrid::set_soft(std::size_t voxel, int node_a, double weight_a, int node_b, double weight_b) {
  entries_[voxel] = {Entry{node_a, weight_a}, Entry{node_b, weight_b}};
}

void TargetGrid::expand(std::size_t voxel, std::span<double> out) const {
  std::fill(out.begin(), out.end(), 0.0);
  for (const Entry& e : entries_[voxel])
    if (e.node >= 0 && e.weight != 0.0) add_target(*tree_, e.node, e.weight, support_, out);
}

namespace {

int label_index(const LabelTree& tree, int32_t label) {
  const int idx = tree.index_of(label);
  if (idx < 0) throw Error(ErrorCode::InvalidArgument, "label id " + std::to_string(label) + " is not in the tree");
  return idx;
}

}  // namespace

TargetGrid hard_targets(const LabelVolume& labels, const LabelTree& tree, TargetSupport support) {
  TargetGrid t(labels.header, &tree, support);
  const int bg = tree.background_index();
  for (std::size_t i = 0; i < labels.data.size(); ++i) {
    const int32_t l = labels.data[i];
    if (l != 0)
      t.set_hard(i, label_index(tree, l));
    else if (bg >= 0)
      t.set_hard(i, bg);
  }
  return t;
}

TargetGrid weak_targets(const LabelVolume& labels, const WeightMap& weights, const LabelTree& tree,
                        const WeakTargetOptions& opts) {
  require_same_dims(labels, weights, "weak_targets: label/weight dims differ");
  TargetGrid t(labels.header, &tree, opts.support);
  const int bg = tree.background_index();
  const int cavity = opts.cavity_index >= 0 ? opts.cavity_index : tree.find_by_name("cranial_cavity");
  for (std::size_t i = 0; i < labels.data.size(); ++i) {
    const int32_t l = labels.data[i];
    if (l != 0) {
      t.set_hard(i, label_index(tree, l));
      continue;
    }
    if (bg < 0) continue;
    const double w = std::clamp(weights.data[i], 0.0, 1.0);
    if (cavity >= 0 && w > opts.threshold)
      t.set_soft(i, cavity, w, bg, 1.0 - w);
    else
      t.set_hard(i, bg);
  }
  return t;
}

std::vector<double> fuse_intersection(std::span<const double> a, std::span<const double> c, std::span<const double> s,
                                      const std::array<double, 3>& w) {
  if (a.size() != c.size() || a.size() != s.size()) throw Error(ErrorCode::ShapeMismatch, "plane score lengths differ");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = w[0] * a[i] + w[1] * c[i] + w[2] * s[i];
  return out;
}

double kld_consistency(std::span<const double> p, std::span<const double> q, std::size_t classes) {
  if (p.size() != q.size() || classes == 0 || p.size() % classes != 0)
    throw Error(ErrorCode::ShapeMismatch, "kld rows differ in shape");
  const std::size_t rows = p.size() / classes;
  if (rows == 0) return 0.0;
  // P log(P/Q) + Q log(Q/P) == (P - Q)(log P - log Q); the product form makes
  // the argument swap exact.
  double acc = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double a = std::max(p[i], kKldFloor), b = std::max(q[i], kKldFloor);
    acc += (a - b) * (std::log(a) - std::log(b));
  }
  return 0.5 * acc / static_cast<double>(rows);
}

std::vector<double> kld_consistency_grad(std::span<const double> p, std::span<const double> q, std::size_t classes) {
  if (p.size() != q.size() || classes == 0 || p.size() % classes != 0)
    throw Error(ErrorCode::ShapeMismatch, "kld rows differ in shape");
  const std::size_t rows = p.size() / classes;
  std::vector<double> g(p.size(), 0.0);
  if (rows == 0) return g;
  const double scale = 0.5 / static_cast<double>(rows);
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] < kKldFloor) continue;
    const double a = p[i], b = std::max(q[i], kKldFloor);
    g[i] = scale * ((std::log(a) - std::log(b)) + (a - b) / a);
  }
  return g;
}

namespace {

struct PlaneGeom {
  int width, height;
};

std::array<PlaneGeom, 3> expected_geometry(const PlanarBatch& b) {
  // Volume extents are recovered from the slices: axial gives (nx, ny), coronal nz.
  const int nx = b.scores[0].width, ny = b.scores[0].height, nz = b.scores[1].height;
  return {PlaneGeom{nx, ny}, PlaneGeom{nx, nz}, PlaneGeom{ny, nz}};
}

// Pixel index of the volume voxel `c` inside plane p.
std::size_t pixel_of(const PlanarBatch& b, int plane, int x, int y, int z) {
  const int w = b.scores[plane].width;
  switch (plane) {
    case 0: return static_cast<std::size_t>(x) + static_cast<std::size_t>(w) * y;
    case 1: return static_cast<std::size_t>(x) + static_cast<std::size_t>(w) * z;
    default: return static_cast<std::size_t>(y) + static_cast<std::size_t>(w) * z;
  }
}

}  // namespace

void check_batch(const PlanarBatch& b, const LabelTree& tree) {
  const auto geom = expected_geometry(b);
  for (int p = 0; p < 3; ++p) {
    const auto& s = b.scores[p];
    if (s.width != geom[p].width || s.height != geom[p].height)
      throw Error(ErrorCode::ShapeMismatch, std::string(plane_name(kPlanes[p])) + " slice size inconsistent with the other planes");
    if (s.nodes != static_cast<int>(tree.size()) || s.s.size() != s.pixels() * tree.size())
      throw Error(ErrorCode::ShapeMismatch, "score node count does not match the tree");
    if (!b.targets[p].empty() && b.targets[p].size() != s.s.size())
      throw Error(ErrorCode::ShapeMismatch, "target size does not match scores");
  }
  const int nx = geom[0].width, ny = geom[0].height, nz = geom[1].height;
  const auto& c = b.center;
  if (c[0] < 0 || c[1] < 0 || c[2] < 0 || c[0] >= nx || c[1] >= ny || c[2] >= nz)
    throw Error(ErrorCode::ShapeMismatch, "intersection voxel outside the slices");
}

LossTerms total_loss(const PlanarBatch& b, const PlaneWeights& pw, const LabelTree& tree, LossGrad* grad) {
  check_batch(b, tree);
  const std::size_t n = tree.size();
  const auto w = pw.weights();
  const int x0 = b.center[0], y0 = b.center[1], z0 = b.center[2];
  const std::array<std::size_t, 3> ip{pixel_of(b, 0, x0, y0, z0), pixel_of(b, 1, x0, y0, z0), pixel_of(b, 2, x0, y0, z0)};
  const std::vector<double> fused =
      fuse_intersection(b.scores[0].pixel(ip[0]), b.scores[1].pixel(ip[1]), b.scores[2].pixel(ip[2]), w);

  LossTerms terms;
  std::array<std::vector<double>, 3> log_cond, log_prob, g_lp;
  HierWorkspace ws;
  ws.resize(n);
  for (int p = 0; p < 3; ++p) {
    const auto& sc = b.scores[p];
    const std::size_t m = sc.pixels();
    log_cond[p].resize(m * n);
    log_prob[p].resize(m * n);
    g_lp[p].assign(grad ? m * n : 0, 0.0);
    double ce = 0.0;
    for (std::size_t px = 0; px < m; ++px) {
      const std::span<const double> src = px == ip[p] ? std::span<const double>(fused) : sc.pixel(px);
      const std::span<double> lc(log_cond[p].data() + px * n, n), lp(log_prob[p].data() + px * n, n);
      sibling_log_softmax(src, tree, lc);
      class_log_probs(lc, tree, lp);
      if (b.targets[p].empty()) continue;
      const double* t = b.targets[p].data() + px * n;
      for (std::size_t k = 0; k < n; ++k) {
        if (t[k] == 0.0) continue;
        ce -= t[k] * lp[k];
        if (grad) g_lp[p][px * n + k] = -t[k] / static_cast<double>(m);
      }
    }
    terms.ce_plane[p] = ce / static_cast<double>(m);
    terms.ce += terms.ce_plane[p];
  }

  // Intersection lines: AC varies x, AS varies y, CS varies z.
  const auto& frontier = tree.frontier();
  const std::size_t classes = frontier.size();
  struct Pair {
    int a, b, len;
  };
  const int nx = b.scores[0].width, ny = b.scores[0].height, nz = b.scores[1].height;
  const std::array<Pair, 3> pairs{Pair{0, 1, nx}, Pair{0, 2, ny}, Pair{1, 2, nz}};
  for (int pi = 0; pi < 3; ++pi) {
    const Pair& pr = pairs[pi];
    std::vector<std::size_t> pix_a(pr.len), pix_b(pr.len);
    for (int k = 0; k < pr.len; ++k) {
      const int x = pi == 0 ? k : x0, y = pi == 1 ? k : y0, z = pi == 2 ? k : z0;
      pix_a[k] = pixel_of(b, pr.a, x, y, z);
      pix_b[k] = pixel_of(b, pr.b, x, y, z);
    }
    std::vector<double> P(pr.len * classes), Q(pr.len * classes);
    for (int k = 0; k < pr.len; ++k)
      for (std::size_t c = 0; c < classes; ++c) {
        P[k * classes + c] = std::exp(log_prob[pr.a][pix_a[k] * n + frontier[c]]);
        Q[k * classes + c] = std::exp(log_prob[pr.b][pix_b[k] * n + frontier[c]]);
      }
    terms.kld_pair[pi] = kld_consistency(P, Q, classes);
    terms.consistency += terms.kld_pair[pi];
    if (!grad) continue;
    const auto gp = kld_consistency_grad(P, Q, classes);
    const auto gq = kld_consistency_grad(Q, P, classes);
    for (int k = 0; k < pr.len; ++k)
      for (std::size_t c = 0; c < classes; ++c) {
        const std::size_t r = k * classes + c;
        g_lp[pr.a][pix_a[k] * n + frontier[c]] += gp[r] * P[r];
        g_lp[pr.b][pix_b[k] * n + frontier[c]] += gq[r] * Q[r];
      }
  }
  terms.total = terms.ce + terms.consistency;
  if (!grad) return terms;

  std::vector<double> g_fused(n, 0.0);
  for (int p = 0; p < 3; ++p) {
    const auto& sc = b.scores[p];
    grad->scores[p] = SliceScores(sc.width, sc.height, sc.nodes);
    for (std::size_t px = 0; px < sc.pixels(); ++px) {
      const std::span<const double> g(g_lp[p].data() + px * n, n);
      if (std::all_of(g.begin(), g.end(), [](double v) { return v == 0.0; })) continue;
      std::copy_n(log_cond[p].data() + px * n, n, ws.log_cond.begin());
      const std::span<double> out = px == ip[p] ? std::span<double>(g_fused) : grad->scores[p].pixel(px);
      hier_backward(g, tree, ws, out);
    }
  }
  std::array<double, 3> gw{};
  for (int p = 0; p < 3; ++p) {
    auto out = grad->scores[p].pixel(ip[p]);
    const auto src = b.scores[p].pixel(ip[p]);
    for (std::size_t k = 0; k < n; ++k) {
      out[k] = w[p] * g_fused[k];
      gw[p] += src[k] * g_fused[k];
    }
  }
  const double mix = w[0] * gw[0] + w[1] * gw[1] + w[2] * gw[2];
  for (int p = 0; p < 3; ++p) grad->theta[p] = w[p] * (gw[p] - mix);
  return terms;
}

LossTerms minibatch_loss(std::span<const PlanarBatch> batches, const PlaneWeights& weights, const LabelTree& tree,
                         std::vector<LossGrad>* grads, std::array<double, 3>* grad_theta) {
  LossTerms sum;
  if (batches.empty()) return sum;
  if (grads) grads->assign(batches.size(), {});
  if (grad_theta) *grad_theta = {0.0, 0.0, 0.0};
  const double inv = 1.0 / static_cast<double>(batches.size());
  for (std::size_t i = 0; i < batches.size(); ++i) {
    LossGrad* g = grads ? &(*grads)[i] : nullptr;
    const LossTerms t = total_loss(batches[i], weights, tree, g);
    sum.total += inv * t.total;
    sum.ce += inv * t.ce;
    sum.consistency += inv * t.consistency;
    for (int p = 0; p < 3; ++p) {
      sum.ce_plane[p] += inv * t.ce_plane[p];
      sum.kld_pair[p] += inv * t.kld_pair[p];
    }
    if (!g) continue;
    for (int p = 0; p < 3; ++p) {
      for (double& v : g->scores[p].s) v *= inv;
      g->theta[p] *= inv;
      if (grad_theta) (*grad_theta)[p] += g->theta[p];
    }
  }
  return sum;
}

}  // namespace fastaid
