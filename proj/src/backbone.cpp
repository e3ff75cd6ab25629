#include "fastaid/backbone.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <random>

namespace fastaid {

std::size_t BackboneShape::parameter_count() const {
  const std::size_t k2 = static_cast<std::size_t>(kernel) * kernel;
  const std::size_t h = hidden;
  return h * k2 + h + h * h * k2 + h + static_cast<std::size_t>(nodes) * h + nodes;
}

ToyBackbone::ToyBackbone(const BackboneShape& shape) : shape_(shape) {
  if (shape.kernel < 1 || shape.kernel % 2 == 0) throw Error(ErrorCode::InvalidArgument, "kernel size must be odd");
  if (shape.hidden < 1 || shape.nodes < 1) throw Error(ErrorCode::InvalidArgument, "backbone channels must be positive");
  params_.assign(shape.parameter_count(), 0.0);
}

ToyBackbone::Layout ToyBackbone::layout() const {
  const std::size_t k2 = static_cast<std::size_t>(shape_.kernel) * shape_.kernel;
  const std::size_t h = shape_.hidden, n = shape_.nodes;
  Layout l{};
  l.w1 = 0;
  l.b1 = l.w1 + h * k2;
  l.w2 = l.b1 + h;
  l.b2 = l.w2 + h * h * k2;
  l.w3 = l.b2 + h;
  l.b3 = l.w3 + n * h;
  l.end = l.b3 + n;
  return l;
}

void ToyBackbone::init(uint64_t seed) {
  std::mt19937_64 rng(seed);
  const Layout l = layout();
  const double k2 = static_cast<double>(shape_.kernel) * shape_.kernel;
  auto fill = [&](std::size_t from, std::size_t to, double fan_in, double fan_out) {
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    const double limit = std::sqrt(6.0 / (fan_in + fan_out));
    for (std::size_t i = from; i < to; ++i) params_[i] = limit * u(rng);
  };
  std::fill(params_.begin(), params_.end(), 0.0);
  fill(l.w1, l.b1, k2, shape_.hidden * k2);
  fill(l.w2, l.b2, shape_.hidden * k2, shape_.hidden * k2);
  fill(l.w3, l.b3, shape_.hidden, shape_.nodes);
}

namespace {

// out[co][p] += sum_ci sum_k w[co][ci][k] * in[ci][p + offset(k)], zero padded.
void conv_forward(const double* in, int cin, const double* w, int cout, int k, int width, int height, double* out) {
  const int half = k / 2;
  const std::size_t plane = static_cast<std::size_t>(width) * height;
  for (int co = 0; co < cout; ++co)
    for (int ci = 0; ci < cin; ++ci)
      for (int dy = 0; dy < k; ++dy)
        for (int dx = 0; dx < k; ++dx) {
          const double wt = w[((static_cast<std::size_t>(co) * cin + ci) * k + dy) * k + dx];
          if (wt == 0.0) continue;
          const int oy = dy - half, ox = dx - half;
          const int u0 = std::max(0, -ox), u1 = std::min(width, width - ox);
          const int v0 = std::max(0, -oy), v1 = std::min(height, height - oy);
          const double* src = in + ci * plane;
          double* dst = out + co * plane;
          for (int v = v0; v < v1; ++v) {
            const double* s = src + static_cast<std::size_t>(v + oy) * width + ox;
            double* d = dst + static_cast<std::size_t>(v) * width;
            for (int u = u0; u < u1; ++u) d[u] += wt * s[u];
          }
        }
}

// Given g = dL/dout, accumulates dL/dw and (optionally) dL/din.
void conv_backward(const double* in, int cin, const double* w, int cout, int k, int width, int height,
                   const double* g, double* gw, double* gin) {
  const int half = k / 2;
  const std::size_t plane = static_cast<std::size_t>(width) * height;
  for (int co = 0; co < cout; ++co)
    for (int ci = 0; ci < cin; ++ci)
      for (int dy = 0; dy < k; ++dy)
        for (int dx = 0; dx < k; ++dx) {
          const std::size_t wi = ((static_cast<std::size_t>(co) * cin + ci) * k + dy) * k + dx;
          const double wt = w[wi];
          const int oy = dy - half, ox = dx - half;
          const int u0 = std::max(0, -ox), u1 = std::min(width, width - ox);
          const int v0 = std::max(0, -oy), v1 = std::min(height, height - oy);
          const double* src = in + ci * plane;
          const double* gs = g + co * plane;
          double acc = 0.0;
          for (int v = v0; v < v1; ++v) {
            const double* s = src + static_cast<std::size_t>(v + oy) * width + ox;
            const double* gg = gs + static_cast<std::size_t>(v) * width;
            for (int u = u0; u < u1; ++u) acc += gg[u] * s[u];
          }
          gw[wi] += acc;
          if (!gin) continue;
          double* gi = gin + ci * plane;
          for (int v = v0; v < v1; ++v) {
            double* d = gi + static_cast<std::size_t>(v + oy) * width + ox;
            const double* gg = gs + static_cast<std::size_t>(v) * width;
            for (int u = u0; u < u1; ++u) d[u] += wt * gg[u];
          }
        }
}

}  // namespace

SliceScores ToyBackbone::forward(const Slice<double>& image, Cache* cache) const {
  const int k = shape_.kernel, hc = shape_.hidden, nn = shape_.nodes;
  if (image.width < k || image.height < k)
    throw Error(ErrorCode::ShapeMismatch, "slice is smaller than the convolution kernel");
  const Layout l = layout();
  const double* p = params_.data();
  const std::size_t plane = static_cast<std::size_t>(image.width) * image.height;

  Cache local;
  Cache& c = cache ? *cache : local;
  c.width = image.width;
  c.height = image.height;
  c.input = image.data;
  c.h1.assign(hc * plane, 0.0);
  c.h2.assign(hc * plane, 0.0);

  for (int ch = 0; ch < hc; ++ch) std::fill_n(c.h1.data() + ch * plane, plane, p[l.b1 + ch]);
  conv_forward(c.input.data(), 1, p + l.w1, hc, k, image.width, image.height, c.h1.data());
  for (double& x : c.h1) x = std::tanh(x);

  for (int ch = 0; ch < hc; ++ch) std::fill_n(c.h2.data() + ch * plane, plane, p[l.b2 + ch]);
  conv_forward(c.h1.data(), hc, p + l.w2, hc, k, image.width, image.height, c.h2.data());
  for (double& x : c.h2) x = std::tanh(x);

  SliceScores out(image.width, image.height, nn);
  for (std::size_t px = 0; px < plane; ++px) {
    auto o = out.pixel(px);
    for (int n = 0; n < nn; ++n) {
      double acc = p[l.b3 + n];
      const double* w = p + l.w3 + static_cast<std::size_t>(n) * hc;
      for (int ch = 0; ch < hc; ++ch) acc += w[ch] * c.h2[ch * plane + px];
      o[n] = acc;
    }
  }
  return out;
}

void ToyBackbone::backward(const Cache& c, const SliceScores& g, std::span<double> gp) const {
  const int k = shape_.kernel, hc = shape_.hidden, nn = shape_.nodes;
  if (g.width != c.width || g.height != c.height || g.nodes != nn)
    throw Error(ErrorCode::ShapeMismatch, "score gradient does not match the cached forward pass");
  if (gp.size() != params_.size()) throw Error(ErrorCode::ShapeMismatch, "parameter gradient has the wrong length");
  const Layout l = layout();
  const double* p = params_.data();
  const std::size_t plane = static_cast<std::size_t>(c.width) * c.height;

  std::vector<double> g2(hc * plane, 0.0);
  for (std::size_t px = 0; px < plane; ++px) {
    const auto go = g.pixel(px);
    for (int n = 0; n < nn; ++n) {
      const double gv = go[n];
      if (gv == 0.0) continue;
      gp[l.b3 + n] += gv;
      const std::size_t wrow = l.w3 + static_cast<std::size_t>(n) * hc;
      for (int ch = 0; ch < hc; ++ch) {
        gp[wrow + ch] += gv * c.h2[ch * plane + px];
        g2[ch * plane + px] += gv * p[wrow + ch];
      }
    }
  }
  for (std::size_t i = 0; i < g2.size(); ++i) g2[i] *= 1.0 - c.h2[i] * c.h2[i];
  for (int ch = 0; ch < hc; ++ch)
    for (std::size_t px = 0; px < plane; ++px) gp[l.b2 + ch] += g2[ch * plane + px];

  std::vector<double> g1(hc * plane, 0.0);
  conv_backward(c.h1.data(), hc, p + l.w2, hc, k, c.width, c.height, g2.data(), gp.data() + l.w2, g1.data());
  for (std::size_t i = 0; i < g1.size(); ++i) g1[i] *= 1.0 - c.h1[i] * c.h1[i];
  for (int ch = 0; ch < hc; ++ch)
    for (std::size_t px = 0; px < plane; ++px) gp[l.b1 + ch] += g1[ch * plane + px];
  conv_backward(c.input.data(), 1, p + l.w1, hc, k, c.width, c.height, g1.data(), gp.data() + l.w1, nullptr);
}

namespace {

constexpr char kMagic[8] = {'F', 'A', 'I', 'D', 'M', 'D', 'L', '\0'};
constexpr uint32_t kModelVersion = 1;

template <class T>
void put(std::ostream& os, const T& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T take(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw Error(ErrorCode::TruncatedData, "model file ends early");
  return v;
}

}  // namespace

void save_model(const Model& m, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error(ErrorCode::IoFailure, "cannot write model " + path.string());
  os.write(kMagic, sizeof kMagic);
  put<uint32_t>(os, kModelVersion);
  put<uint64_t>(os, m.tree_hash);
  const auto& s = m.backbone.shape();
  put<int32_t>(os, s.kernel);
  put<int32_t>(os, s.hidden);
  put<int32_t>(os, s.nodes);
  put<uint64_t>(os, m.backbone.params().size());
  for (double v : m.backbone.params()) put<double>(os, v);
  for (double v : m.planes.theta) put<double>(os, v);
  if (!os) throw Error(ErrorCode::IoFailure, "short write to " + path.string());
}

Model load_model(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error(ErrorCode::IoFailure, "cannot open model " + path.string());
  char magic[8] = {};
  is.read(magic, sizeof magic);
  if (!is || std::memcmp(magic, kMagic, sizeof kMagic) != 0)
    throw Error(ErrorCode::MalformedHeader, path.string() + " is not a model file");
  const auto version = take<uint32_t>(is);
  if (version != kModelVersion)
    throw Error(ErrorCode::MalformedHeader, "unsupported model version " + std::to_string(version));
  Model m;
  m.tree_hash = take<uint64_t>(is);
  BackboneShape s;
  s.kernel = take<int32_t>(is);
  s.hidden = take<int32_t>(is);
  s.nodes = take<int32_t>(is);
  m.backbone = ToyBackbone(s);
  const auto count = take<uint64_t>(is);
  if (count != s.parameter_count()) throw Error(ErrorCode::ModelShapeMismatch, "parameter count does not match shape");
  for (double& v : m.backbone.params()) v = take<double>(is);
  for (double& v : m.planes.theta) v = take<double>(is);
  return m;
}

void check_model(const Model& m, const LabelTree& tree) {
  if (m.backbone.shape().nodes != static_cast<int>(tree.size()))
    throw Error(ErrorCode::ModelShapeMismatch, "model emits " + std::to_string(m.backbone.shape().nodes) +
                                                   " scores, tree has " + std::to_string(tree.size()) + " nodes");
  if (m.tree_hash != 0 && m.tree_hash != tree.hash())
    throw Error(ErrorCode::ModelShapeMismatch, "model was trained on a different label tree");
}

}  // namespace fastaid
