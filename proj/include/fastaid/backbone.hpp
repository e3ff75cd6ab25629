#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "fastaid/fusion_loss.hpp"
#include "fastaid/planes.hpp"

namespace fastaid {

struct BackboneShape {
  int kernel = 3;   // odd, used by both convolution layers
  int hidden = 8;   // channels after each convolution
  int nodes = 1;    // output scores per pixel (tree size)

  std::size_t parameter_count() const;
  bool operator==(const BackboneShape&) const = default;
};

/// Desk-scale 2D scorer shared by all three plane orientations:
/// conv k x k (1 -> hidden), tanh, conv k x k (hidden -> hidden), tanh,
/// 1 x 1 projection (hidden -> nodes). Zero "same" padding keeps the slice size.
class ToyBackbone {
 public:
  ToyBackbone() = default;
  explicit ToyBackbone(const BackboneShape& shape);

  /// Scaled-uniform initialization.
  void init(uint64_t seed);

  const BackboneShape& shape() const { return shape_; }
  std::vector<double>& params() { return params_; }
  const std::vector<double>& params() const { return params_; }

  /// Activations kept for backward().
  struct Cache {
    int width = 0, height = 0;
    std::vector<double> input;   // w*h
    std::vector<double> h1, h2;  // channel-major: c * (w*h) + pixel, post-tanh
  };

  SliceScores forward(const Slice<double>& image, Cache* cache = nullptr) const;

  /// Accumulates dL/dparams into `grad_params` (parameter_count() entries)
  /// given dL/dscores for the slice that produced `cache`.
  void backward(const Cache& cache, const SliceScores& grad_scores, std::span<double> grad_params) const;

 private:
  struct Layout {
    std::size_t w1, b1, w2, b2, w3, b3, end;
  };
  Layout layout() const;

  BackboneShape shape_;
  std::vector<double> params_;
};

/// A trained segmenter: backbone, plane weights, and the tree it was trained on.
struct Model {
  ToyBackbone backbone;
  PlaneWeights planes;
  uint64_t tree_hash = 0;
};

/// Versioned little-endian container: magic, version, tree hash, shape, parameters, plane weights.
void save_model(const Model& m, const std::filesystem::path& path);
Model load_model(const std::filesystem::path& path);
/// Throws ModelShapeMismatch if the model was built for a different tree.
void check_model(const Model& m, const LabelTree& tree);

}  // namespace fastaid
