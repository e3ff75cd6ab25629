#pragma once

#include <complex>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <utility>

#include "fastaid/volume.hpp"

namespace fastaid {

using Rng = std::mt19937_64;

/// Centered k-space: zero frequency at index n/2 along every axis.
struct KSpace {
  Dims dims{1, 1, 1};
  std::vector<std::complex<double>> data;

  std::size_t index(int x, int y, int z) const {
    return static_cast<std::size_t>(x) +
           static_cast<std::size_t>(dims[0]) * (static_cast<std::size_t>(y) + static_cast<std::size_t>(dims[1]) * z);
  }
};

/// Unnormalized forward transform, fftshift(fftn(ifftshift(v))).
KSpace fft3_centered(const Volume& v);
/// Inverse of fft3_centered (1/N normalized). `like` supplies the header.
std::vector<std::complex<double>> ifft3_centered_complex(const KSpace& k);
Volume ifft3_centered(const KSpace& k, const NiftiHeader& like);

struct Range {
  double lo = 0.0;
  double hi = 0.0;
};

struct AugmentConfig {
  uint64_t seed = 0;
  Range rotation_deg{-10.0, 10.0};
  Range gamma{0.8, 1.2};
  Range noise_variance{0.0, 1e-4};
  Range ringing_cutoff{90, 120};
  Range ghost_period{2, 4};
  Range ghost_factor{0.85, 0.95};
  Range elastic_sigma{20.0, 30.0};
  Range elastic_alpha{200.0, 500.0};
  Range bias_center{1.0, 256.0};
  double bias_radius = 256.0;

  // Probability of applying each transform in random_augment().
  double p_rotate = 0.5;
  double p_gamma = 0.5;
  double p_noise = 0.5;
  double p_bias = 0.3;
  double p_ringing = 0.2;
  double p_ghosting = 0.2;
  double p_elastic = 0.2;
  double p_crop = 0.3;

  /// Ranges scaled for a cube of side `side` (geometry-dependent ranges only).
  AugmentConfig scaled_to(int side) const;
  void validate() const;
};

/// Key-value JSON config; missing keys keep their defaults.
AugmentConfig load_augment_config(const std::string& path);
AugmentConfig parse_augment_config(const std::string& json_text);
std::string to_json(const AugmentConfig& cfg);

struct Augmented {
  Volume volume;
  std::optional<LabelVolume> labels;
};

/// Rotation about the grid center (n-1)/2 by X, then Y, then Z angles (degrees).
/// Output voxel p samples the input at R (p - c) + c with R = Rx Ry Rz.
Augmented rotate3d(const Volume& v, const LabelVolume* labels, const Vec3& angles_deg);

struct Box {
  Dims lo{0, 0, 0};
  Dims hi{0, 0, 0};  // inclusive
};

/// Tight bounding box of nonzero labels. Throws EmptyForeground.
Box foreground_box(const LabelVolume& labels);
/// Zeroes everything outside `box` in both volumes.
std::pair<Volume, LabelVolume> crop_to_box(const Volume& v, const LabelVolume& labels, const Box& box);
/// Samples a box between the tight foreground box and the full extent, per axis.
std::pair<Volume, LabelVolume> random_crop_brain(const Volume& v, const LabelVolume& labels, Rng& rng);

Volume add_gaussian_noise(const Volume& v, double variance, Rng& rng);
Volume add_speckle_noise(const Volume& v, double variance, Rng& rng);

/// Multiplies by 1 - sum(((p - c) / r)^2) on the 1-based integer grid, clamped to [0, 1].
Volume bias_field(const Volume& v, const Vec3& center, double radius);

/// Keeps the centered k-space cube |k - n/2| <= cutoff on every axis.
Volume gibbs_ringing(const Volume& v, int cutoff);

/// Scales k-space planes with (k - n/2 - 1) mod period == 0 along each selected
/// axis, one axis after another. The DC plane is never attenuated.
Volume ghosting(const Volume& v, int period, double factor, const std::array<bool, 3>& axes);

/// Smoothed uniform[-1,1] displacement fields (voxels), one per axis.
struct DisplacementField {
  Dims dims{1, 1, 1};
  std::array<std::vector<double>, 3> d;
};
DisplacementField elastic_field(const Dims& dims, double sigma, double alpha, Rng& rng);
Augmented apply_displacement(const Volume& v, const LabelVolume* labels, const DisplacementField& f);
Augmented elastic_deform(const Volume& v, const LabelVolume* labels, double sigma, double alpha, Rng& rng);

/// 1D Gaussian kernel of size 2*ceil(2 sigma)+1, unit sum.
std::vector<double> gaussian_kernel(double sigma);

/// One randomized pass through the transforms, each gated by its probability.
Augmented random_augment(const Volume& v, const LabelVolume* labels, const AugmentConfig& cfg, Rng& rng);

}  // namespace fastaid
