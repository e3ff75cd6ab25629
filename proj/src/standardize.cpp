#include "fastaid/standardize.hpp"

#include <algorithm>
#include <cmath>

namespace fastaid {
namespace {

template <class T, class Sampler>
Grid<T> resample(const Grid<T>& in, double target_spacing, Sampler&& sample) {
  if (!(target_spacing > 0.0)) throw Error(ErrorCode::InvalidArgument, "target spacing must be positive");
  NiftiHeader h = in.header;
  Vec3 ratio{};
  for (int a = 0; a < 3; ++a) {
    if (!(in.header.spacing[a] > 0.0)) throw Error(ErrorCode::InvalidArgument, "spacing must be positive");
    h.dims[a] = isotropic_length(in.header.dims[a], in.header.spacing[a], target_spacing);
    ratio[a] = static_cast<double>(in.header.dims[a]) / h.dims[a];
    h.spacing[a] = in.header.dims[a] * in.header.spacing[a] / h.dims[a];
  }
  // Output voxel o sits at input coordinate (o + 0.5) * ratio - 0.5 (extents aligned).
  for (int r = 0; r < 3; ++r) {
    double t = in.header.affine[r][3];
    for (int a = 0; a < 3; ++a) {
      t += in.header.affine[r][a] * (0.5 * ratio[a] - 0.5);
      h.affine[r][a] = in.header.affine[r][a] * ratio[a];
    }
    h.affine[r][3] = t;
  }
  Grid<T> out(h);
  for (int z = 0; z < h.dims[2]; ++z) {
    const double sz = (z + 0.5) * ratio[2] - 0.5;
    for (int y = 0; y < h.dims[1]; ++y) {
      const double sy = (y + 0.5) * ratio[1] - 0.5;
      for (int x = 0; x < h.dims[0]; ++x)
        out.at(x, y, z) = sample(in, (x + 0.5) * ratio[0] - 0.5, sy, sz);
    }
  }
  return out;
}

template <class T>
Grid<T> pad_crop_impl(const Grid<T>& in, const Dims& target, T fill) {
  NiftiHeader h = in.header;
  std::array<int, 3> shift{};  // output index = input index + shift
  for (int a = 0; a < 3; ++a) {
    if (target[a] < 1) throw Error(ErrorCode::InvalidArgument, "target dims must be positive");
    const int diff = target[a] - in.header.dims[a];
    shift[a] = diff >= 0 ? diff / 2 : -((-diff) / 2);
    h.dims[a] = target[a];
  }
  for (int r = 0; r < 3; ++r) {
    double t = in.header.affine[r][3];
    for (int a = 0; a < 3; ++a) t -= in.header.affine[r][a] * shift[a];
    h.affine[r][3] = t;
  }
  Grid<T> out(h, fill);
  for (int z = 0; z < target[2]; ++z) {
    const int sz = z - shift[2];
    if (sz < 0 || sz >= in.nz()) continue;
    for (int y = 0; y < target[1]; ++y) {
      const int sy = y - shift[1];
      if (sy < 0 || sy >= in.ny()) continue;
      for (int x = 0; x < target[0]; ++x) {
        const int sx = x - shift[0];
        if (sx >= 0 && sx < in.nx()) out.at(x, y, z) = in.at(sx, sy, sz);
      }
    }
  }
  return out;
}

}  // namespace

int isotropic_length(int dim, double spacing, double target_spacing) {
  const double extent = dim * spacing / target_spacing;
  return std::max(2, 2 * static_cast<int>(std::lround(extent / 2.0)));
}

Volume resample_to_isotropic(const Volume& v, double target_spacing) {
  return resample(v, target_spacing, [](const Volume& g, double x, double y, double z) {
    return sample_linear(g, x, y, z, 0.0);
  });
}

LabelVolume resample_to_isotropic(const LabelVolume& v, double target_spacing) {
  return resample(v, target_spacing, [](const LabelVolume& g, double x, double y, double z) {
    return sample_nearest<int32_t>(g, x, y, z, 0);
  });
}

Volume pad_crop(const Volume& v, const Dims& target, double fill) { return pad_crop_impl(v, target, fill); }
LabelVolume pad_crop(const LabelVolume& v, const Dims& target, int32_t fill) {
  return pad_crop_impl(v, target, fill);
}

Volume pad_crop_to_cube(const Volume& v, int side, double fill) { return pad_crop(v, {side, side, side}, fill); }
LabelVolume pad_crop_to_cube(const LabelVolume& v, int side, int32_t fill) {
  return pad_crop(v, {side, side, side}, fill);
}

Volume normalize_intensity(const Volume& v) {
  if (v.data.empty()) throw Error(ErrorCode::ConstantVolume, "empty volume");
  const auto [lo_it, hi_it] = std::minmax_element(v.data.begin(), v.data.end());
  const double lo = *lo_it, hi = *hi_it;
  if (!(hi > lo)) throw Error(ErrorCode::ConstantVolume, "max equals min");
  Volume out = v;
  const double range = hi - lo;
  for (double& x : out.data) x = (x - lo) / range;
  return out;
}

Volume gamma_transform(const Volume& v, double gamma) {
  if (!(gamma > 0.0)) throw Error(ErrorCode::InvalidArgument, "gamma must be positive");
  Volume out = v;
  if (gamma == 1.0) return out;
  for (double& x : out.data) x = std::pow(std::max(x, 0.0), gamma);
  return out;
}

Volume standardize(const Volume& v, const StandardizeConfig& cfg) {
  return pad_crop_to_cube(normalize_intensity(resample_to_isotropic(v, cfg.target_spacing_mm)), cfg.side, 0.0);
}

LabelVolume standardize(const LabelVolume& v, const StandardizeConfig& cfg) {
  return pad_crop_to_cube(resample_to_isotropic(v, cfg.target_spacing_mm), cfg.side, 0);
}

}  // namespace fastaid
