#pragma once

#include <filesystem>
#include <variant>

#include "fastaid/volume.hpp"

namespace fastaid {

/// Reads a NIfTI-1 file (.nii or .nii.gz, either byte order).
///
/// Intensities are scaled by scl_slope/scl_inter when the slope is nonzero.
/// The affine comes from the sform when sform_code > 0, else the qform when
/// qform_code > 0, else from pixdim alone.
Volume read_volume(const std::filesystem::path& path);

/// Reads integer-typed data as 32-bit label ids.
LabelVolume read_labels(const std::filesystem::path& path);

/// Integer datatypes without intensity scaling come back as labels.
std::variant<Volume, LabelVolume> read_nifti(const std::filesystem::path& path);

/// Only the header, for inspection.
NiftiHeader read_header(const std::filesystem::path& path);

/// Writes using header.datatype as storage type. A ".gz" suffix selects gzip.
void write_nifti(const Volume& volume, const std::filesystem::path& path);
void write_nifti(const LabelVolume& labels, const std::filesystem::path& path);

/// Permutes/flips voxel axes so they point toward +R, +A, +S.
///
/// Each voxel axis is assigned to the world axis that dominates its affine
/// column. World coordinates of every voxel are unchanged; oblique affines
/// are snapped to the nearest axis, never resampled.
Volume reorient_to_ras(const Volume& volume);
LabelVolume reorient_to_ras(const LabelVolume& labels);

}  // namespace fastaid
