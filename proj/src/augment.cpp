#include "fastaid/augment.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <mutex>
#include <numbers>
#include <sstream>

#include <nlohmann/json.hpp>

#include "fastaid/interpolate.hpp"
#include "fastaid/standardize.hpp"

namespace fastaid {
namespace {

std::mutex& planner_mutex() {
  static std::mutex m;
  return m;
}

// In-place 3D DFT over x-fastest data. sign = FFTW_FORWARD or FFTW_BACKWARD.
void dft3(std::vector<std::complex<double>>& data, const Dims& d, int sign) {
  auto* ptr = reinterpret_cast<fftw_complex*>(data.data());
  fftw_plan plan;
  {
    std::lock_guard<std::mutex> lock(planner_mutex());
    plan = fftw_plan_dft_3d(d[2], d[1], d[0], ptr, ptr, sign, FFTW_ESTIMATE);
  }
  fftw_execute(plan);
  std::lock_guard<std::mutex> lock(planner_mutex());
  fftw_destroy_plan(plan);
}

// out[i] = in[(i + s_a) mod n_a] per axis.
std::vector<std::complex<double>> cyclic_shift(const std::vector<std::complex<double>>& in, const Dims& d,
                                               const std::array<int, 3>& s) {
  std::vector<std::complex<double>> out(in.size());
  std::size_t o = 0;
  for (int z = 0; z < d[2]; ++z) {
    const int sz = (z + s[2]) % d[2];
    for (int y = 0; y < d[1]; ++y) {
      const int sy = (y + s[1]) % d[1];
      const std::size_t row = static_cast<std::size_t>(d[0]) * (sy + static_cast<std::size_t>(d[1]) * sz);
      for (int x = 0; x < d[0]; ++x) out[o++] = in[row + (x + s[0]) % d[0]];
    }
  }
  return out;
}

std::array<int, 3> ifftshift_offsets(const Dims& d) { return {d[0] / 2, d[1] / 2, d[2] / 2}; }
std::array<int, 3> fftshift_offsets(const Dims& d) {
  return {(d[0] + 1) / 2, (d[1] + 1) / 2, (d[2] + 1) / 2};
}

double clamp01(double x) { return std::clamp(x, 0.0, 1.0); }

Volume real_part_clamped(const KSpace& k, const NiftiHeader& like) {
  const auto c = ifft3_centered_complex(k);
  Volume out(like);
  for (std::size_t i = 0; i < c.size(); ++i) out.data[i] = clamp01(c[i].real());
  return out;
}

double uniform(Rng& rng, const Range& r) {
  if (r.hi <= r.lo) return r.lo;
  return std::uniform_real_distribution<double>(r.lo, r.hi)(rng);
}

int uniform_int(Rng& rng, const Range& r) {
  const int lo = static_cast<int>(std::lround(r.lo));
  const int hi = static_cast<int>(std::lround(r.hi));
  if (hi <= lo) return lo;
  return std::uniform_int_distribution<int>(lo, hi)(rng);
}

bool coin(Rng& rng, double p) {
  if (p <= 0.0) return false;
  if (p >= 1.0) return true;
  return std::uniform_real_distribution<double>(0.0, 1.0)(rng) < p;
}

using Mat3 = std::array<std::array<double, 3>, 3>;

Mat3 mul(const Mat3& a, const Mat3& b) {
  Mat3 r{};
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j)
      for (int k = 0; k < 3; ++k) r[i][j] += a[i][k] * b[k][j];
  return r;
}

Mat3 rotation_xyz(const Vec3& deg) {
  const double ax = deg[0] * std::numbers::pi / 180.0;
  const double ay = deg[1] * std::numbers::pi / 180.0;
  const double az = deg[2] * std::numbers::pi / 180.0;
  const Mat3 rx{{{1, 0, 0}, {0, std::cos(ax), -std::sin(ax)}, {0, std::sin(ax), std::cos(ax)}}};
  const Mat3 ry{{{std::cos(ay), 0, std::sin(ay)}, {0, 1, 0}, {-std::sin(ay), 0, std::cos(ay)}}};
  const Mat3 rz{{{std::cos(az), -std::sin(az), 0}, {std::sin(az), std::cos(az), 0}, {0, 0, 1}}};
  Mat3 r = mul(mul(rx, ry), rz);
  // Snap round-off so exact quarter turns map voxel centers onto voxel centers.
  for (auto& row : r)
    for (double& e : row)
      if (std::abs(e) < 1e-15) e = 0.0;
  return r;
}

// Separable smoothing with edge replication.
void smooth_axis(std::vector<double>& f, const Dims& d, int axis, const std::vector<double>& kernel) {
  const int half = static_cast<int>(kernel.size() / 2);
  const int n = d[axis];
  const std::size_t stride = axis == 0 ? 1 : axis == 1 ? static_cast<std::size_t>(d[0])
                                                       : static_cast<std::size_t>(d[0]) * d[1];
  std::vector<double> line(n), out(n);
  const int o1 = axis == 0 ? 1 : 0, o2 = axis == 2 ? 1 : 2;
  for (int b = 0; b < d[o2]; ++b)
    for (int a = 0; a < d[o1]; ++a) {
      std::array<int, 3> idx{};
      idx[o1] = a;
      idx[o2] = b;
      idx[axis] = 0;
      const std::size_t base = idx[0] + static_cast<std::size_t>(d[0]) * (idx[1] + static_cast<std::size_t>(d[1]) * idx[2]);
      for (int i = 0; i < n; ++i) line[i] = f[base + i * stride];
      for (int i = 0; i < n; ++i) {
        double acc = 0.0;
        for (int k = -half; k <= half; ++k) acc += kernel[k + half] * line[std::clamp(i + k, 0, n - 1)];
        out[i] = acc;
      }
      for (int i = 0; i < n; ++i) f[base + i * stride] = out[i];
    }
}

}  // namespace

KSpace fft3_centered(const Volume& v) {
  const Dims& d = v.header.dims;
  std::vector<std::complex<double>> buf(v.data.size());
  for (std::size_t i = 0; i < buf.size(); ++i) buf[i] = v.data[i];
  buf = cyclic_shift(buf, d, ifftshift_offsets(d));
  dft3(buf, d, FFTW_FORWARD);
  return KSpace{d, cyclic_shift(buf, d, fftshift_offsets(d))};
}

std::vector<std::complex<double>> ifft3_centered_complex(const KSpace& k) {
  auto buf = cyclic_shift(k.data, k.dims, ifftshift_offsets(k.dims));
  dft3(buf, k.dims, FFTW_BACKWARD);
  buf = cyclic_shift(buf, k.dims, fftshift_offsets(k.dims));
  const double scale = 1.0 / static_cast<double>(buf.size());
  for (auto& c : buf) c *= scale;
  return buf;
}

Volume ifft3_centered(const KSpace& k, const NiftiHeader& like) {
  if (like.dims != k.dims) throw Error(ErrorCode::ShapeMismatch, "k-space dims differ from header dims");
  const auto c = ifft3_centered_complex(k);
  Volume out(like);
  for (std::size_t i = 0; i < c.size(); ++i) out.data[i] = c[i].real();
  return out;
}

AugmentConfig AugmentConfig::scaled_to(int side) const {
  AugmentConfig c = *this;
  const double s = side / 256.0;
  c.ringing_cutoff = {std::max(1.0, std::round(ringing_cutoff.lo * s)), std::max(1.0, std::round(ringing_cutoff.hi * s))};
  c.elastic_sigma = {elastic_sigma.lo * s, elastic_sigma.hi * s};
  c.elastic_alpha = {elastic_alpha.lo * s, elastic_alpha.hi * s};
  c.bias_center = {1.0, static_cast<double>(side)};
  c.bias_radius = bias_radius * s;
  return c;
}

void AugmentConfig::validate() const {
  for (const Range* r : {&rotation_deg, &gamma, &noise_variance, &ringing_cutoff, &ghost_period, &ghost_factor,
                         &elastic_sigma, &elastic_alpha, &bias_center})
    if (!(r->lo <= r->hi)) throw Error(ErrorCode::InvalidArgument, "augment range with low > high");
  if (gamma.lo <= 0.0) throw Error(ErrorCode::InvalidArgument, "gamma must be positive");
  if (noise_variance.lo < 0.0) throw Error(ErrorCode::InvalidArgument, "noise variance must be >= 0");
  if (ghost_period.lo < 2.0) throw Error(ErrorCode::InvalidArgument, "ghost period must be >= 2");
  if (ghost_factor.lo <= 0.0 || ghost_factor.hi > 1.0) throw Error(ErrorCode::InvalidArgument, "ghost factor must be in (0, 1]");
  if (elastic_sigma.lo <= 0.0 || elastic_alpha.lo < 0.0) throw Error(ErrorCode::InvalidArgument, "elastic sigma/alpha out of range");
  if (!(bias_radius > 0.0)) throw Error(ErrorCode::InvalidArgument, "bias radius must be positive");
}

namespace {

void read_range(const nlohmann::json& j, const char* key, Range& r) {
  if (!j.contains(key)) return;
  const auto& v = j.at(key);
  if (!v.is_array() || v.size() != 2) throw Error(ErrorCode::InvalidArgument, std::string(key) + " must be [low, high]");
  r = {v[0].get<double>(), v[1].get<double>()};
}

template <class T>
void read_scalar(const nlohmann::json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace

AugmentConfig parse_augment_config(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::InvalidArgument, std::string("augment config: ") + e.what());
  }
  AugmentConfig c;
  try {
    read_scalar(j, "seed", c.seed);
    read_range(j, "rotation_deg", c.rotation_deg);
    read_range(j, "gamma", c.gamma);
    read_range(j, "noise_variance", c.noise_variance);
    read_range(j, "ringing_cutoff", c.ringing_cutoff);
    read_range(j, "ghost_period", c.ghost_period);
    read_range(j, "ghost_factor", c.ghost_factor);
    read_range(j, "elastic_sigma", c.elastic_sigma);
    read_range(j, "elastic_alpha", c.elastic_alpha);
    read_range(j, "bias_center", c.bias_center);
    read_scalar(j, "bias_radius", c.bias_radius);
    read_scalar(j, "p_rotate", c.p_rotate);
    read_scalar(j, "p_gamma", c.p_gamma);
    read_scalar(j, "p_noise", c.p_noise);
    read_scalar(j, "p_bias", c.p_bias);
    read_scalar(j, "p_ringing", c.p_ringing);
    read_scalar(j, "p_ghosting", c.p_ghosting);
    read_scalar(j, "p_elastic", c.p_elastic);
    read_scalar(j, "p_crop", c.p_crop);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::InvalidArgument, std::string("augment config: ") + e.what());
  }
  c.validate();
  return c;
}

AugmentConfig load_augment_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoFailure, "cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_augment_config(ss.str());
}

std::string to_json(const AugmentConfig& c) {
  auto r = [](const Range& x) { return nlohmann::json::array({x.lo, x.hi}); };
  nlohmann::json j = {
      {"seed", c.seed},
      {"rotation_deg", r(c.rotation_deg)},
      {"gamma", r(c.gamma)},
      {"noise_variance", r(c.noise_variance)},
      {"ringing_cutoff", r(c.ringing_cutoff)},
      {"ghost_period", r(c.ghost_period)},
      {"ghost_factor", r(c.ghost_factor)},
      {"elastic_sigma", r(c.elastic_sigma)},
      {"elastic_alpha", r(c.elastic_alpha)},
      {"bias_center", r(c.bias_center)},
      {"bias_radius", c.bias_radius},
      {"p_rotate", c.p_rotate},
      {"p_gamma", c.p_gamma},
      {"p_noise", c.p_noise},
      {"p_bias", c.p_bias},
      {"p_ringing", c.p_ringing},
      {"p_ghosting", c.p_ghosting},
      {"p_elastic", c.p_elastic},
      {"p_crop", c.p_crop},
  };
  return j.dump(2);
}

Augmented rotate3d(const Volume& v, const LabelVolume* labels, const Vec3& angles_deg) {
  for (double a : angles_deg)
    if (!(std::abs(a) <= 90.0)) throw Error(ErrorCode::InvalidArgument, "rotation angle must be within [-90, 90]");
  if (labels) require_same_dims(v, *labels, "rotate3d: volume/label dims differ");
  const Mat3 r = rotation_xyz(angles_deg);
  const Vec3 c{(v.nx() - 1) / 2.0, (v.ny() - 1) / 2.0, (v.nz() - 1) / 2.0};
  Augmented out{Volume(v.header), std::nullopt};
  if (labels) out.labels = LabelVolume(labels->header);
  for (int z = 0; z < v.nz(); ++z)
    for (int y = 0; y < v.ny(); ++y)
      for (int x = 0; x < v.nx(); ++x) {
        const double p[3] = {x - c[0], y - c[1], z - c[2]};
        double s[3];
        for (int i = 0; i < 3; ++i) s[i] = r[i][0] * p[0] + r[i][1] * p[1] + r[i][2] * p[2] + c[i];
        out.volume.at(x, y, z) = sample_linear(v, s[0], s[1], s[2], 0.0);
        if (labels) out.labels->at(x, y, z) = sample_nearest<int32_t>(*labels, s[0], s[1], s[2], 0);
      }
  return out;
}

Box foreground_box(const LabelVolume& labels) {
  Box b{{labels.nx(), labels.ny(), labels.nz()}, {-1, -1, -1}};
  for (int z = 0; z < labels.nz(); ++z)
    for (int y = 0; y < labels.ny(); ++y)
      for (int x = 0; x < labels.nx(); ++x)
        if (labels.at(x, y, z) != 0) {
          const int p[3] = {x, y, z};
          for (int a = 0; a < 3; ++a) {
            b.lo[a] = std::min(b.lo[a], p[a]);
            b.hi[a] = std::max(b.hi[a], p[a]);
          }
        }
  if (b.hi[0] < 0) throw Error(ErrorCode::EmptyForeground, "label volume has no foreground");
  return b;
}

std::pair<Volume, LabelVolume> crop_to_box(const Volume& v, const LabelVolume& labels, const Box& box) {
  require_same_dims(v, labels, "crop: volume/label dims differ");
  Volume ov = v;
  LabelVolume ol = labels;
  for (int z = 0; z < v.nz(); ++z)
    for (int y = 0; y < v.ny(); ++y)
      for (int x = 0; x < v.nx(); ++x) {
        const bool inside = x >= box.lo[0] && x <= box.hi[0] && y >= box.lo[1] && y <= box.hi[1] &&
                            z >= box.lo[2] && z <= box.hi[2];
        if (!inside) {
          ov.at(x, y, z) = 0.0;
          ol.at(x, y, z) = 0;
        }
      }
  return {std::move(ov), std::move(ol)};
}

std::pair<Volume, LabelVolume> random_crop_brain(const Volume& v, const LabelVolume& labels, Rng& rng) {
  const Box tight = foreground_box(labels);
  Box box;
  for (int a = 0; a < 3; ++a) {
    box.lo[a] = std::uniform_int_distribution<int>(0, tight.lo[a])(rng);
    box.hi[a] = std::uniform_int_distribution<int>(tight.hi[a], v.header.dims[a] - 1)(rng);
  }
  return crop_to_box(v, labels, box);
}

Volume add_gaussian_noise(const Volume& v, double variance, Rng& rng) {
  if (variance < 0.0) throw Error(ErrorCode::InvalidArgument, "noise variance must be >= 0");
  Volume out = v;
  if (variance == 0.0) return out;
  std::normal_distribution<double> n(0.0, std::sqrt(variance));
  for (double& x : out.data) x = clamp01(x + n(rng));
  return out;
}

Volume add_speckle_noise(const Volume& v, double variance, Rng& rng) {
  if (variance < 0.0) throw Error(ErrorCode::InvalidArgument, "noise variance must be >= 0");
  Volume out = v;
  if (variance == 0.0) return out;
  std::normal_distribution<double> n(0.0, std::sqrt(variance));
  for (double& x : out.data) x = clamp01(x + x * n(rng));
  return out;
}

Volume bias_field(const Volume& v, const Vec3& center, double radius) {
  if (!(radius > 0.0)) throw Error(ErrorCode::InvalidArgument, "bias radius must be positive");
  Volume out = v;
  for (int z = 0; z < v.nz(); ++z) {
    const double ez = (z + 1 - center[2]) / radius;
    for (int y = 0; y < v.ny(); ++y) {
      const double ey = (y + 1 - center[1]) / radius;
      for (int x = 0; x < v.nx(); ++x) {
        const double ex = (x + 1 - center[0]) / radius;
        const double f = 1.0 - (ex * ex + ey * ey + ez * ez);
        out.at(x, y, z) = clamp01(v.at(x, y, z) * f);
      }
    }
  }
  return out;
}

Volume gibbs_ringing(const Volume& v, int cutoff) {
  if (cutoff < 0) throw Error(ErrorCode::InvalidArgument, "ringing cutoff must be >= 0");
  KSpace k = fft3_centered(v);
  const Dims& d = k.dims;
  for (int z = 0; z < d[2]; ++z)
    for (int y = 0; y < d[1]; ++y)
      for (int x = 0; x < d[0]; ++x)
        if (std::abs(x - d[0] / 2) > cutoff || std::abs(y - d[1] / 2) > cutoff || std::abs(z - d[2] / 2) > cutoff)
          k.data[k.index(x, y, z)] = 0.0;
  return real_part_clamped(k, v.header);
}

Volume ghosting(const Volume& v, int period, double factor, const std::array<bool, 3>& axes) {
  if (period < 2) throw Error(ErrorCode::InvalidArgument, "ghost period must be >= 2");
  if (!(factor > 0.0 && factor <= 1.0)) throw Error(ErrorCode::InvalidArgument, "ghost factor must be in (0, 1]");
  KSpace k = fft3_centered(v);
  const Dims& d = k.dims;
  for (int axis = 0; axis < 3; ++axis) {
    if (!axes[axis]) continue;
    const int c = d[axis] / 2;
    for (int z = 0; z < d[2]; ++z)
      for (int y = 0; y < d[1]; ++y)
        for (int x = 0; x < d[0]; ++x) {
          const int idx = axis == 0 ? x : axis == 1 ? y : z;
          const int rel = ((idx - c - 1) % period + period) % period;
          if (rel == 0) k.data[k.index(x, y, z)] *= factor;
        }
  }
  return real_part_clamped(k, v.header);
}

std::vector<double> gaussian_kernel(double sigma) {
  if (!(sigma > 0.0)) throw Error(ErrorCode::InvalidArgument, "sigma must be positive");
  const int half = static_cast<int>(std::ceil(2.0 * sigma));
  std::vector<double> k(2 * half + 1);
  double sum = 0.0;
  for (int i = -half; i <= half; ++i) sum += k[i + half] = std::exp(-0.5 * i * i / (sigma * sigma));
  for (double& x : k) x /= sum;
  return k;
}

DisplacementField elastic_field(const Dims& dims, double sigma, double alpha, Rng& rng) {
  if (alpha < 0.0) throw Error(ErrorCode::InvalidArgument, "alpha must be >= 0");
  const auto kernel = gaussian_kernel(sigma);
  DisplacementField f{dims, {}};
  const std::size_t n = static_cast<std::size_t>(dims[0]) * dims[1] * dims[2];
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (auto& comp : f.d) {
    comp.resize(n);
    for (double& x : comp) x = u(rng);
    for (int axis = 0; axis < 3; ++axis) smooth_axis(comp, dims, axis, kernel);
    for (double& x : comp) x *= alpha;
  }
  return f;
}

Augmented apply_displacement(const Volume& v, const LabelVolume* labels, const DisplacementField& f) {
  if (f.dims != v.dims()) throw Error(ErrorCode::ShapeMismatch, "displacement field dims differ from volume");
  if (labels) require_same_dims(v, *labels, "elastic: volume/label dims differ");
  Augmented out{Volume(v.header), std::nullopt};
  if (labels) out.labels = LabelVolume(labels->header);
  for (int z = 0; z < v.nz(); ++z)
    for (int y = 0; y < v.ny(); ++y)
      for (int x = 0; x < v.nx(); ++x) {
        const std::size_t i = v.index(x, y, z);
        const double sx = x + f.d[0][i], sy = y + f.d[1][i], sz = z + f.d[2][i];
        out.volume.data[i] = sample_linear(v, sx, sy, sz, 0.0);
        if (labels) out.labels->data[i] = sample_nearest<int32_t>(*labels, sx, sy, sz, 0);
      }
  return out;
}

Augmented elastic_deform(const Volume& v, const LabelVolume* labels, double sigma, double alpha, Rng& rng) {
  if (!(sigma > 0.0)) throw Error(ErrorCode::InvalidArgument, "sigma must be positive");
  if (alpha == 0.0) {
    Augmented out{v, std::nullopt};
    if (labels) out.labels = *labels;
    return out;
  }
  return apply_displacement(v, labels, elastic_field(v.dims(), sigma, alpha, rng));
}

Augmented random_augment(const Volume& v, const LabelVolume* labels, const AugmentConfig& cfg, Rng& rng) {
  cfg.validate();
  Augmented cur{v, std::nullopt};
  if (labels) cur.labels = *labels;
  auto lab = [&cur]() -> const LabelVolume* { return cur.labels ? &*cur.labels : nullptr; };

  if (coin(rng, cfg.p_rotate)) {
    const Vec3 angles{uniform(rng, cfg.rotation_deg), uniform(rng, cfg.rotation_deg), uniform(rng, cfg.rotation_deg)};
    cur = rotate3d(cur.volume, lab(), angles);
  }
  if (coin(rng, cfg.p_elastic)) {
    const double sigma = uniform(rng, cfg.elastic_sigma);
    const double alpha = uniform(rng, cfg.elastic_alpha);
    cur = elastic_deform(cur.volume, lab(), sigma, alpha, rng);
  }
  if (cur.labels && coin(rng, cfg.p_crop)) {
    bool any = std::any_of(cur.labels->data.begin(), cur.labels->data.end(), [](int32_t l) { return l != 0; });
    if (any) {
      auto [cv, cl] = random_crop_brain(cur.volume, *cur.labels, rng);
      cur.volume = std::move(cv);
      cur.labels = std::move(cl);
    }
  }
  if (coin(rng, cfg.p_gamma)) cur.volume = gamma_transform(cur.volume, uniform(rng, cfg.gamma));
  if (coin(rng, cfg.p_bias)) {
    const Vec3 center{uniform(rng, cfg.bias_center), uniform(rng, cfg.bias_center), uniform(rng, cfg.bias_center)};
    cur.volume = bias_field(cur.volume, center, cfg.bias_radius);
  }
  if (coin(rng, cfg.p_noise)) {
    const double var = uniform(rng, cfg.noise_variance);
    cur.volume = coin(rng, 0.5) ? add_gaussian_noise(cur.volume, var, rng) : add_speckle_noise(cur.volume, var, rng);
  }
  if (coin(rng, cfg.p_ringing)) cur.volume = gibbs_ringing(cur.volume, uniform_int(rng, cfg.ringing_cutoff));
  if (coin(rng, cfg.p_ghosting)) {
    // Each axis gets its own period and factor.
    for (int axis = 0; axis < 3; ++axis) {
      const int period = uniform_int(rng, cfg.ghost_period);
      const double factor = uniform(rng, cfg.ghost_factor);
      std::array<bool, 3> axes{};
      axes[axis] = true;
      cur.volume = ghosting(cur.volume, period, factor, axes);
    }
  }
  return cur;
}

}  // namespace fastaid
