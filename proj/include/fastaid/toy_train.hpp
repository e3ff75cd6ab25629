#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "fastaid/augment.hpp"
#include "fastaid/backbone.hpp"
#include "fastaid/hierarchy.hpp"
#include "fastaid/volume.hpp"

namespace fastaid {

struct AdamConfig {
  double lr = 1e-2;
  double beta1 = 0.9;
  double beta2 = 0.99;
  double eps = 1e-8;
  double l2 = 5e-5;  // added to the gradient (coupled)
};

struct AdamState {
  std::vector<double> m, v;
  int64_t step = 0;
};

/// One bias-corrected Adam update of `params` in place.
void adam_step(std::span<double> params, std::span<const double> grads, AdamState& state, const AdamConfig& cfg,
               double lr);

struct Schedule {
  int max_iters = 2000;
  int patience_iters = 160;
  double lr_drop_factor = 0.9;
  int lr_drop_period = 80;

  void validate() const;
  double lr_at(double base_lr, int iter) const;
};

struct TrainConfig {
  Schedule schedule;
  AdamConfig adam;
  BackboneShape shape{5, 8, 0};  // nodes = 0 takes the tree size
  int triples_per_batch = 4;
  int validate_every = 20;
  uint64_t seed = 42;
  /// Probability that a training volume is augmented before sampling a triple.
  double augment_probability = 0.4;
  std::optional<AugmentConfig> augment;  // default: standard ranges scaled to the volume side
  /// Fraction of training volumes whose cavity labels are dropped and replaced
  /// by distance-decayed soft targets.
  double weak_fraction = 0.2;
  double weak_sigma_mm = 3.1622776601683795;
  TargetSupport support = TargetSupport::AncestorPath;
  int threads = 1;  // validation only; training itself is single-threaded

  void validate() const;
};

TrainConfig parse_train_config(const std::string& json_text);
TrainConfig load_train_config(const std::string& path);
std::string to_json(const TrainConfig& cfg);

struct Sample {
  Volume image;
  LabelVolume labels;
};

struct TrainState {
  Model model;
  AdamState adam;
  int iteration = 0;
  Model best;
  double best_score = -1.0;
  int best_iter = -1;
  bool stopped_early = false;
  std::vector<double> loss_history;                  // minibatch loss per iteration
  std::vector<std::pair<int, double>> val_history;  // (iteration, score)
};

/// Higher is better. Default: mean frontier DSC of fusion predictions on the
/// validation set.
using Validator = std::function<double(const Model&, int iteration)>;

/// Throws DivergenceDetected when the loss stops being finite.
TrainState train(const std::vector<Sample>& train_set, const std::vector<Sample>& validation, const LabelTree& tree,
                 const TrainConfig& cfg, const Validator& validator = {});

/// Nested-ellipsoid head: background, scalp (labeled background), cranial
/// cavity, and the frontier classes below "brain" as an outer shell, a core,
/// and small inner ellipsoids. Deterministic per seed.
Sample generate_phantom(uint64_t seed, int side, const LabelTree& tree);

/// background, cranial_cavity, brain -> {cortex_gm, deep -> {white_matter, ventricles}}.
const std::string& phantom_tree_text();
LabelTree phantom_tree();

/// Mean over volumes of mean_frontier_dsc.
double validation_dsc(const Model& model, const std::vector<Sample>& set, const LabelTree& tree, int threads = 1);

}  // namespace fastaid
