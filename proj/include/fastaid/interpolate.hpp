#pragma once

#include <algorithm>
#include <cmath>

#include "fastaid/volume.hpp"

namespace fastaid {

enum class Interp { Linear, Nearest };

// Continuous voxel coordinates. A sample is inside the grid when every
// coordinate lies within half a voxel of the first/last center; inside
// samples are clamped to the centers for trilinear weights.
inline double sample_linear(const Volume& v, double x, double y, double z, double fill) {
  const double c[3] = {x, y, z};
  double t[3];
  int i0[3], i1[3];
  for (int a = 0; a < 3; ++a) {
    const int n = v.header.dims[a];
    if (!(c[a] >= -0.5 && c[a] <= n - 0.5)) return fill;
    const double cc = std::clamp(c[a], 0.0, static_cast<double>(n - 1));
    i0[a] = static_cast<int>(std::floor(cc));
    i1[a] = std::min(i0[a] + 1, n - 1);
    t[a] = cc - i0[a];
  }
  double acc = 0.0;
  for (int k = 0; k < 8; ++k) {
    const int ix = (k & 1) ? i1[0] : i0[0];
    const int iy = (k & 2) ? i1[1] : i0[1];
    const int iz = (k & 4) ? i1[2] : i0[2];
    const double w = ((k & 1) ? t[0] : 1.0 - t[0]) * ((k & 2) ? t[1] : 1.0 - t[1]) *
                     ((k & 4) ? t[2] : 1.0 - t[2]);
    if (w != 0.0) acc += w * v.at(ix, iy, iz);
  }
  return acc;
}

template <class T>
T sample_nearest(const Grid<T>& v, double x, double y, double z, T fill) {
  const int ix = static_cast<int>(std::floor(x + 0.5));
  const int iy = static_cast<int>(std::floor(y + 0.5));
  const int iz = static_cast<int>(std::floor(z + 0.5));
  if (!v.contains(ix, iy, iz)) return fill;
  return v.at(ix, iy, iz);
}

}  // namespace fastaid
