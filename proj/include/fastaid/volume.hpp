#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <vector>

#include "fastaid/error.hpp"

namespace fastaid {

using Dims = std::array<int, 3>;
using Vec3 = std::array<double, 3>;
using Affine = std::array<std::array<double, 4>, 4>;

/// NIfTI-1 datatype codes for the scalar types we read and write.
enum class DataType : int16_t {
  UInt8 = 2,
  Int16 = 4,
  Int32 = 8,
  Float32 = 16,
  Float64 = 64,
};

bool is_integer(DataType t);
int bytes_per_voxel(DataType t);

Affine identity_affine();
Affine diagonal_affine(const Vec3& spacing);

struct NiftiHeader {
  Dims dims{1, 1, 1};
  Vec3 spacing{1.0, 1.0, 1.0};
  Affine affine = identity_affine();
  DataType datatype = DataType::Float32;
  double scl_slope = 0.0;
  double scl_inter = 0.0;
  int16_t qform_code = 0;
  int16_t sform_code = 1;

  std::size_t voxel_count() const {
    return static_cast<std::size_t>(dims[0]) * dims[1] * dims[2];
  }
  double voxel_volume() const { return spacing[0] * spacing[1] * spacing[2]; }
};

/// Dense 3D grid in x-fastest order.
template <class T>
struct Grid {
  NiftiHeader header;
  std::vector<T> data;

  Grid() = default;
  Grid(const NiftiHeader& h, T fill = T{}) : header(h), data(h.voxel_count(), fill) {}

  const Dims& dims() const { return header.dims; }
  int nx() const { return header.dims[0]; }
  int ny() const { return header.dims[1]; }
  int nz() const { return header.dims[2]; }
  std::size_t size() const { return data.size(); }

  std::size_t index(int x, int y, int z) const {
    return static_cast<std::size_t>(x) +
           static_cast<std::size_t>(header.dims[0]) *
               (static_cast<std::size_t>(y) + static_cast<std::size_t>(header.dims[1]) * z);
  }
  T& at(int x, int y, int z) { return data[index(x, y, z)]; }
  const T& at(int x, int y, int z) const { return data[index(x, y, z)]; }

  bool contains(int x, int y, int z) const {
    return x >= 0 && y >= 0 && z >= 0 && x < nx() && y < ny() && z < nz();
  }
};

using Volume = Grid<double>;
using LabelVolume = Grid<int32_t>;

/// Header for a cube of side `side` with the given spacing and a diagonal affine.
NiftiHeader make_header(const Dims& dims, const Vec3& spacing = {1.0, 1.0, 1.0},
                        DataType type = DataType::Float32);

/// World coordinate (mm) of a voxel index under the header affine.
Vec3 voxel_to_world(const Affine& a, const Vec3& ijk);

template <class A, class B>
void require_same_dims(const Grid<A>& a, const Grid<B>& b, const char* what) {
  if (a.dims() != b.dims()) throw Error(ErrorCode::ShapeMismatch, what);
}

}  // namespace fastaid
