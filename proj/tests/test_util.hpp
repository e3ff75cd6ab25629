#pragma once

#include <filesystem>
#include <random>
#include <string>
#include <unistd.h>

#include "fastaid/volume.hpp"

namespace testutil {

inline std::filesystem::path scratch(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("fastaid_test_" + std::to_string(::getpid()));
  std::filesystem::create_directories(dir);
  return dir / name;
}

inline fastaid::Volume random_volume(const fastaid::Dims& d, std::mt19937_64& rng, double lo = 0.0, double hi = 1.0) {
  fastaid::Volume v(fastaid::make_header(d));
  std::uniform_real_distribution<double> u(lo, hi);
  for (double& x : v.data) x = u(rng);
  return v;
}

// Smooth blob, values in [0, 1].
inline fastaid::Volume smooth_phantom(int side) {
  fastaid::Volume v(fastaid::make_header({side, side, side}));
  const double c = (side - 1) / 2.0, s = side / 4.0;
  for (int z = 0; z < side; ++z)
    for (int y = 0; y < side; ++y)
      for (int x = 0; x < side; ++x) {
        const double r2 = ((x - c) * (x - c) + 0.7 * (y - c) * (y - c) + 1.3 * (z - c) * (z - c)) / (s * s);
        v.at(x, y, z) = std::exp(-r2 / 2.0);
      }
  return v;
}

}  // namespace testutil
