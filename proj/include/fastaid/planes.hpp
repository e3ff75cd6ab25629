#pragma once

#include <array>
#include <vector>

#include "fastaid/volume.hpp"

namespace fastaid {

/// Orthogonal slice orientations. Axial slices fix z and are indexed (x, y);
/// coronal fix y, indexed (x, z); sagittal fix x, indexed (y, z).
enum class Plane { Axial = 0, Coronal = 1, Sagittal = 2 };

inline constexpr std::array<Plane, 3> kPlanes{Plane::Axial, Plane::Coronal, Plane::Sagittal};

const char* plane_name(Plane p);

/// Volume axis held fixed by a plane.
inline int fixed_axis(Plane p) { return p == Plane::Axial ? 2 : p == Plane::Coronal ? 1 : 0; }
/// Volume axes mapped to slice (u, v).
inline std::array<int, 2> slice_axes(Plane p) {
  switch (p) {
    case Plane::Axial: return {0, 1};
    case Plane::Coronal: return {0, 2};
    case Plane::Sagittal: return {1, 2};
  }
  return {0, 1};
}

/// 2D image, u fastest.
template <class T>
struct Slice {
  int width = 0;
  int height = 0;
  std::vector<T> data;

  Slice() = default;
  Slice(int w, int h, T fill = T{}) : width(w), height(h), data(static_cast<std::size_t>(w) * h, fill) {}
  T& at(int u, int v) { return data[static_cast<std::size_t>(u) + static_cast<std::size_t>(width) * v]; }
  const T& at(int u, int v) const { return data[static_cast<std::size_t>(u) + static_cast<std::size_t>(width) * v]; }
};

inline std::array<int, 3> volume_coord(Plane p, int index, int u, int v) {
  std::array<int, 3> c{};
  c[fixed_axis(p)] = index;
  const auto ax = slice_axes(p);
  c[ax[0]] = u;
  c[ax[1]] = v;
  return c;
}

template <class T>
Slice<T> extract_slice(const Grid<T>& g, Plane p, int index) {
  const auto ax = slice_axes(p);
  Slice<T> s(g.header.dims[ax[0]], g.header.dims[ax[1]]);
  for (int v = 0; v < s.height; ++v)
    for (int u = 0; u < s.width; ++u) {
      const auto c = volume_coord(p, index, u, v);
      s.at(u, v) = g.at(c[0], c[1], c[2]);
    }
  return s;
}

}  // namespace fastaid
