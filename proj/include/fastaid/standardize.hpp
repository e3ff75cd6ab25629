#pragma once

#include "fastaid/interpolate.hpp"
#include "fastaid/volume.hpp"

namespace fastaid {

struct StandardizeConfig {
  int side = 256;
  double target_spacing_mm = 1.0;
};

/// Target length along one axis: nearest even integer to extent / target spacing.
int isotropic_length(int dim, double spacing, double target_spacing = 1.0);

/// Resamples so each axis has isotropic_length() voxels spanning the original extent.
Volume resample_to_isotropic(const Volume& v, double target_spacing = 1.0);
LabelVolume resample_to_isotropic(const LabelVolume& v, double target_spacing = 1.0);

/// Pads with `fill` or crops symmetrically to `side`^3; odd remainders go to the high side.
Volume pad_crop_to_cube(const Volume& v, int side = 256, double fill = 0.0);
LabelVolume pad_crop_to_cube(const LabelVolume& v, int side = 256, int32_t fill = 0);

/// Per-axis pad/crop to arbitrary dims, same centering rule.
Volume pad_crop(const Volume& v, const Dims& target, double fill = 0.0);
LabelVolume pad_crop(const LabelVolume& v, const Dims& target, int32_t fill = 0);

/// (v - min) / (max - min). Throws ConstantVolume when max == min.
Volume normalize_intensity(const Volume& v);

/// v^gamma elementwise; gamma > 0.
Volume gamma_transform(const Volume& v, double gamma);

/// resample -> normalize -> pad/crop, the canonical training/inference representation.
Volume standardize(const Volume& v, const StandardizeConfig& cfg = {});
LabelVolume standardize(const LabelVolume& v, const StandardizeConfig& cfg = {});

}  // namespace fastaid
