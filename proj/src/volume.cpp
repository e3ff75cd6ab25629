#include "fastaid/volume.hpp"

namespace fastaid {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::MalformedHeader: return "MalformedHeader";
    case ErrorCode::UnsupportedDatatype: return "UnsupportedDatatype";
    case ErrorCode::TruncatedData: return "TruncatedData";
    case ErrorCode::IoFailure: return "IoFailure";
    case ErrorCode::SingularAffine: return "SingularAffine";
    case ErrorCode::ConstantVolume: return "ConstantVolume";
    case ErrorCode::EmptyForeground: return "EmptyForeground";
    case ErrorCode::SchemaError: return "SchemaError";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::BothEmpty: return "BothEmpty";
    case ErrorCode::AllZeroDifferences: return "AllZeroDifferences";
    case ErrorCode::InsufficientSamples: return "InsufficientSamples";
    case ErrorCode::LengthMismatch: return "LengthMismatch";
    case ErrorCode::ZeroBaseline: return "ZeroBaseline";
    case ErrorCode::DivergenceDetected: return "DivergenceDetected";
    case ErrorCode::ModelShapeMismatch: return "ModelShapeMismatch";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
  }
  return "Unknown";
}

bool is_integer(DataType t) {
  return t == DataType::UInt8 || t == DataType::Int16 || t == DataType::Int32;
}

int bytes_per_voxel(DataType t) {
  switch (t) {
    case DataType::UInt8: return 1;
    case DataType::Int16: return 2;
    case DataType::Int32: return 4;
    case DataType::Float32: return 4;
    case DataType::Float64: return 8;
  }
  return 0;
}

Affine identity_affine() { return diagonal_affine({1.0, 1.0, 1.0}); }

Affine diagonal_affine(const Vec3& spacing) {
  Affine a{};
  for (int i = 0; i < 3; ++i) a[i][i] = spacing[i];
  a[3][3] = 1.0;
  return a;
}

NiftiHeader make_header(const Dims& dims, const Vec3& spacing, DataType type) {
  NiftiHeader h;
  h.dims = dims;
  h.spacing = spacing;
  h.affine = diagonal_affine(spacing);
  h.datatype = type;
  return h;
}

Vec3 voxel_to_world(const Affine& a, const Vec3& ijk) {
  Vec3 w{};
  for (int r = 0; r < 3; ++r)
    w[r] = a[r][0] * ijk[0] + a[r][1] * ijk[1] + a[r][2] * ijk[2] + a[r][3];
  return w;
}

}  // namespace fastaid
