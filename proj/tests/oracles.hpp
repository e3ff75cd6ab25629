#pragma once
// Reference implementations used only by the tests. Deliberately naive.

#include <algorithm>
#include <cmath>
#include <complex>
#include <functional>
#include <limits>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "fastaid/hierarchy.hpp"
#include "fastaid/volume.hpp"

namespace oracle {

using cplx = std::complex<double>;

// Centered 3D DFT by direct summation, zero frequency at index n/2.
inline std::vector<cplx> centered_dft(const std::vector<cplx>& x, const fastaid::Dims& d, bool inverse = false) {
  const int nx = d[0], ny = d[1], nz = d[2];
  const double sign = inverse ? 1.0 : -1.0;
  const double tau = 2.0 * std::numbers::pi;
  std::vector<cplx> out(x.size());
  for (int kz = 0; kz < nz; ++kz)
    for (int ky = 0; ky < ny; ++ky)
      for (int kx = 0; kx < nx; ++kx) {
        cplx acc = 0.0;
        for (int jz = 0; jz < nz; ++jz)
          for (int jy = 0; jy < ny; ++jy)
            for (int jx = 0; jx < nx; ++jx) {
              const double ph = static_cast<double>((kx - nx / 2) * (jx - nx / 2)) / nx +
                                static_cast<double>((ky - ny / 2) * (jy - ny / 2)) / ny +
                                static_cast<double>((kz - nz / 2) * (jz - nz / 2)) / nz;
              acc += x[jx + nx * (jy + ny * jz)] * std::polar(1.0, sign * tau * ph);
            }
        out[kx + nx * (ky + ny * kz)] = inverse ? acc / static_cast<double>(x.size()) : acc;
      }
  return out;
}

// Squared distance (mm^2) from every voxel to the nearest mask voxel, all pairs.
inline std::vector<double> brute_sq_distance(const std::vector<uint8_t>& mask, const fastaid::Dims& d,
                                             const fastaid::Vec3& sp) {
  std::vector<std::array<int, 3>> fg;
  for (int z = 0; z < d[2]; ++z)
    for (int y = 0; y < d[1]; ++y)
      for (int x = 0; x < d[0]; ++x)
        if (mask[x + d[0] * (y + d[1] * z)]) fg.push_back({x, y, z});
  std::vector<double> out(mask.size(), std::numeric_limits<double>::infinity());
  for (int z = 0; z < d[2]; ++z)
    for (int y = 0; y < d[1]; ++y)
      for (int x = 0; x < d[0]; ++x) {
        double best = std::numeric_limits<double>::infinity();
        for (const auto& f : fg) {
          const double dx = (x - f[0]) * sp[0], dy = (y - f[1]) * sp[1], dz = (z - f[2]) * sp[2];
          best = std::min(best, dx * dx + dy * dy + dz * dz);
        }
        out[x + d[0] * (y + d[1] * z)] = best;
      }
  return out;
}

// Central differences of a scalar function of a parameter vector.
inline std::vector<double> numeric_grad(const std::function<double(const std::vector<double>&)>& f,
                                        std::vector<double> x, double h = 1e-5) {
  std::vector<double> g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double keep = x[i];
    x[i] = keep + h;
    const double fp = f(x);
    x[i] = keep - h;
    const double fm = f(x);
    x[i] = keep;
    g[i] = (fp - fm) / (2.0 * h);
  }
  return g;
}

// max |a-b| / max(max|b|, floor)
inline double rel_error(const std::vector<double>& a, const std::vector<double>& b, double floor = 1e-6) {
  double num = 0.0, den = floor;
  for (std::size_t i = 0; i < a.size(); ++i) {
    num = std::max(num, std::fabs(a[i] - b[i]));
    den = std::max(den, std::fabs(b[i]));
  }
  return num / den;
}

inline const char* kSixNodeTree =
    "1 root 1 node1\n"
    "2 root 1 node2\n"
    "3 2 2 node3\n"
    "4 2 2 node4\n"
    "5 4 3 node5\n"
    "6 4 3 node6\n";

// Random tree of exactly `levels` levels; every internal node has 1-3 children.
inline fastaid::LabelTree random_tree(std::mt19937_64& rng, int levels) {
  std::vector<fastaid::LabelNode> nodes;
  int next = 1;
  std::vector<int> frontier{fastaid::LabelNode::kRootParent};
  for (int l = 1; l <= levels; ++l) {
    std::vector<int> created;
    for (std::size_t i = 0; i < frontier.size(); ++i) {
      // Keep at least one branch growing so the depth is exact.
      const bool must = i == 0;
      if (!must && l > 1 && std::uniform_int_distribution<int>(0, 2)(rng) == 0) continue;
      const int kids = std::uniform_int_distribution<int>(l == 1 ? 2 : 1, 3)(rng);
      for (int k = 0; k < kids; ++k) {
        nodes.push_back({next, frontier[i], l, "n" + std::to_string(next)});
        created.push_back(next++);
      }
    }
    frontier = created;
  }
  return fastaid::LabelTree::from_nodes(nodes);
}

// Plain log-softmax cross-entropy.
inline double flat_ce(const std::vector<double>& s, const std::vector<double>& t) {
  const double m = *std::max_element(s.begin(), s.end());
  double z = 0.0;
  for (double v : s) z += std::exp(v - m);
  const double lse = m + std::log(z);
  double loss = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i) loss -= t[i] * (s[i] - lse);
  return loss;
}

// p(node) as the product of exp-normalized conditionals along the path, no logs.
inline std::vector<double> path_probabilities(const std::vector<double>& s, const fastaid::LabelTree& tree) {
  std::vector<double> cond(tree.size());
  for (const auto& g : tree.groups()) {
    double z = 0.0;
    for (int n : g) z += std::exp(s[n]);
    for (int n : g) cond[n] = std::exp(s[n]) / z;
  }
  std::vector<double> p(tree.size());
  for (std::size_t n = 0; n < tree.size(); ++n) {
    double v = 1.0;
    for (int a : tree.path(static_cast<int>(n))) v *= cond[a];
    p[n] = v;
  }
  return p;
}

}  // namespace oracle
