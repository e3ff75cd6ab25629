#include "fastaid/toy_train.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include <nlohmann/json.hpp>

#include "fastaid/fusion_loss.hpp"
#include "fastaid/inference.hpp"
#include "fastaid/metrics.hpp"
#include "fastaid/parallel.hpp"

namespace fastaid {

void adam_step(std::span<double> params, std::span<const double> grads, AdamState& st, const AdamConfig& cfg,
               double lr) {
  if (grads.size() != params.size()) throw Error(ErrorCode::ShapeMismatch, "gradient and parameter sizes differ");
  if (st.m.empty()) {
    st.m.assign(params.size(), 0.0);
    st.v.assign(params.size(), 0.0);
  }
  if (st.m.size() != params.size() || st.v.size() != params.size())
    throw Error(ErrorCode::ShapeMismatch, "optimizer moments do not match the parameters");
  ++st.step;
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(st.step));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(st.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = grads[i] + cfg.l2 * params[i];
    st.m[i] = cfg.beta1 * st.m[i] + (1.0 - cfg.beta1) * g;
    st.v[i] = cfg.beta2 * st.v[i] + (1.0 - cfg.beta2) * g * g;
    params[i] -= lr * (st.m[i] / c1) / (std::sqrt(st.v[i] / c2) + cfg.eps);
  }
}

void Schedule::validate() const {
  if (max_iters < 1 || patience_iters < 1 || lr_drop_period < 1 || !(lr_drop_factor > 0.0))
    throw Error(ErrorCode::InvalidArgument, "schedule values must be positive");
  if (patience_iters > max_iters) throw Error(ErrorCode::InvalidArgument, "patience exceeds the iteration budget");
}

double Schedule::lr_at(double base_lr, int iter) const {
  return base_lr * std::pow(lr_drop_factor, static_cast<double>(iter / lr_drop_period));
}

void TrainConfig::validate() const {
  schedule.validate();
  if (!(adam.lr >= 0.0) || !(adam.l2 >= 0.0) || !(adam.eps > 0.0))
    throw Error(ErrorCode::InvalidArgument, "lr and l2 must be nonnegative, eps positive");
  if (!(adam.beta1 >= 0.0 && adam.beta1 < 1.0 && adam.beta2 >= 0.0 && adam.beta2 < 1.0))
    throw Error(ErrorCode::InvalidArgument, "Adam betas must lie in [0, 1)");
  if (triples_per_batch < 1 || validate_every < 1) throw Error(ErrorCode::InvalidArgument, "batch and validation intervals must be positive");
  if (!(augment_probability >= 0.0 && augment_probability <= 1.0) || !(weak_fraction >= 0.0 && weak_fraction <= 1.0))
    throw Error(ErrorCode::InvalidArgument, "probabilities must lie in [0, 1]");
  if (!(weak_sigma_mm > 0.0)) throw Error(ErrorCode::InvalidArgument, "weak sigma must be positive");
  if (augment) augment->validate();
}

namespace {

template <class T>
void read(const nlohmann::json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace

TrainConfig parse_train_config(const std::string& text) {
  TrainConfig c;
  try {
    const auto j = nlohmann::json::parse(text);
    read(j, "max_iters", c.schedule.max_iters);
    read(j, "patience_iters", c.schedule.patience_iters);
    read(j, "lr_drop_factor", c.schedule.lr_drop_factor);
    read(j, "lr_drop_period", c.schedule.lr_drop_period);
    read(j, "lr", c.adam.lr);
    read(j, "beta1", c.adam.beta1);
    read(j, "beta2", c.adam.beta2);
    read(j, "eps", c.adam.eps);
    read(j, "l2", c.adam.l2);
    read(j, "kernel", c.shape.kernel);
    read(j, "hidden", c.shape.hidden);
    read(j, "triples_per_batch", c.triples_per_batch);
    read(j, "validate_every", c.validate_every);
    read(j, "seed", c.seed);
    read(j, "augment_probability", c.augment_probability);
    read(j, "weak_fraction", c.weak_fraction);
    read(j, "weak_sigma_mm", c.weak_sigma_mm);
    read(j, "threads", c.threads);
    if (j.contains("support")) {
      const auto s = j.at("support").get<std::string>();
      if (s == "ancestor_path")
        c.support = TargetSupport::AncestorPath;
      else if (s == "deepest_only")
        c.support = TargetSupport::DeepestOnly;
      else
        throw Error(ErrorCode::InvalidArgument, "support must be ancestor_path or deepest_only");
    }
    if (j.contains("augment")) c.augment = parse_augment_config(j.at("augment").dump());
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::InvalidArgument, std::string("train config: ") + e.what());
  }
  c.validate();
  return c;
}

TrainConfig load_train_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoFailure, "cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_train_config(ss.str());
}

std::string to_json(const TrainConfig& c) {
  nlohmann::ordered_json j = {
      {"max_iters", c.schedule.max_iters},
      {"patience_iters", c.schedule.patience_iters},
      {"lr_drop_factor", c.schedule.lr_drop_factor},
      {"lr_drop_period", c.schedule.lr_drop_period},
      {"lr", c.adam.lr},
      {"beta1", c.adam.beta1},
      {"beta2", c.adam.beta2},
      {"eps", c.adam.eps},
      {"l2", c.adam.l2},
      {"kernel", c.shape.kernel},
      {"hidden", c.shape.hidden},
      {"triples_per_batch", c.triples_per_batch},
      {"validate_every", c.validate_every},
      {"seed", c.seed},
      {"augment_probability", c.augment_probability},
      {"weak_fraction", c.weak_fraction},
      {"weak_sigma_mm", c.weak_sigma_mm},
      {"support", c.support == TargetSupport::AncestorPath ? "ancestor_path" : "deepest_only"},
      {"threads", c.threads},
  };
  if (c.augment) j["augment"] = nlohmann::ordered_json::parse(to_json(*c.augment));
  return j.dump(2);
}

// ---------------------------------------------------------------------------
// phantoms

const std::string& phantom_tree_text() {
  static const std::string text =
      "# id parent level name\n"
      "0 root 1 background\n"
      "1 root 1 cranial_cavity\n"
      "2 root 1 brain\n"
      "3 2 2 cortex_gm\n"
      "6 2 2 deep\n"
      "4 6 3 white_matter\n"
      "5 6 3 ventricles\n";
  return text;
}

LabelTree phantom_tree() { return parse_tree(phantom_tree_text()); }

namespace {

bool has_ancestor(const LabelTree& tree, int index, int ancestor) {
  for (int p = tree.parent_index(index); p >= 0; p = tree.parent_index(p))
    if (p == ancestor) return true;
  return false;
}

}  // namespace

Sample generate_phantom(uint64_t seed, int side, const LabelTree& tree) {
  if (side < 16) throw Error(ErrorCode::InvalidArgument, "phantom side must be at least 16");
  if (tree.frontier().size() < 3) throw Error(ErrorCode::InvalidArgument, "phantom tree needs 3 or more frontier classes");
  const int cavity = tree.find_by_name("cranial_cavity");
  const int brain = tree.find_by_name("brain");
  if (cavity < 0 || brain < 0 || !tree.is_frontier(cavity))
    throw Error(ErrorCode::InvalidArgument, "phantom tree needs a frontier cranial_cavity node and a brain node");
  std::vector<int> classes;
  for (int n : tree.frontier())
    if (has_ancestor(tree, n, brain)) classes.push_back(tree.node(n).id);
  if (classes.size() < 2) throw Error(ErrorCode::InvalidArgument, "brain needs at least two frontier descendants");

  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::normal_distribution<double> noise(0.0, 0.03);
  const double s = side;
  const Vec3 c{(s - 1) / 2 + 0.03 * s * u(rng), (s - 1) / 2 + 0.03 * s * u(rng), (s - 1) / 2 + 0.03 * s * u(rng)};
  Vec3 r;
  for (double& x : r) x = s * (0.425 + 0.025 * u(rng));
  const double ph1 = 3.14159 * u(rng), ph2 = 3.14159 * u(rng), amp = 0.04 + 0.02 * u(rng);

  static constexpr double kClassMean[] = {0.4, 0.7, 0.28, 0.85, 0.55, 0.95};
  std::vector<double> mean(classes.size());
  for (std::size_t k = 0; k < classes.size(); ++k) mean[k] = kClassMean[k % 6] + 0.02 * u(rng);
  const double scalp_mean = 0.55 + 0.03 * u(rng), cavity_mean = 0.15 + 0.02 * u(rng);

  // Inner structures: mirrored pairs straddling the midline, offsets alternate between axes.
  struct Blob {
    Vec3 center, radii;
  };
  std::vector<std::vector<Blob>> blobs(classes.size());
  for (std::size_t k = 2; k < classes.size(); ++k) {
    const int axis = static_cast<int>(k - 2) % 3;
    const double off = s * (0.10 + 0.01 * u(rng));
    Vec3 radii{s * 0.07, s * 0.14, s * 0.09};
    for (double& x : radii) x *= 1.0 + 0.1 * u(rng);
    for (double sign : {-1.0, 1.0}) {
      Blob b{c, radii};
      b.center[axis] += sign * off;
      blobs[k].push_back(b);
    }
  }

  auto tissue = [&](double x, double y, double z) -> std::pair<int32_t, double> {
    const Vec3 d{(x - c[0]) / r[0], (y - c[1]) / r[1], (z - c[2]) / r[2]};
    const double len = std::sqrt(d[0] * d[0] + d[1] * d[1] + d[2] * d[2]);
    const double bump = len > 0 ? 1.0 + amp * std::sin(3.0 * std::atan2(d[1], d[0]) + ph1) *
                                            std::cos(2.0 * std::acos(std::clamp(d[2] / len, -1.0, 1.0)) + ph2)
                                : 1.0;
    const double rho = len / bump;
    if (rho > 1.0) return {0, 0.0};
    if (rho > 0.88) return {0, scalp_mean};
    if (rho > 0.72) return {tree.node(cavity).id, cavity_mean};
    std::size_t k = rho > 0.72 * 0.72 ? 0 : 1;
    const Vec3 p{x, y, z};
    for (std::size_t b = 2; b < classes.size(); ++b)
      for (const Blob& blob : blobs[b]) {
        double q = 0.0;
        for (int a = 0; a < 3; ++a) {
          const double t = (p[a] - blob.center[a]) / blob.radii[a];
          q += t * t;
        }
        if (q <= 1.0) k = b;
      }
    return {classes[k], mean[k]};
  };

  Sample out;
  out.image = Volume(make_header({side, side, side}, {1.0, 1.0, 1.0}, DataType::Float32), 0.0);
  out.labels = LabelVolume(make_header({side, side, side}, {1.0, 1.0, 1.0}, DataType::Int16), 0);
  for (int z = 0; z < side; ++z)
    for (int y = 0; y < side; ++y)
      for (int x = 0; x < side; ++x) {
        const auto [label, value] = tissue(x, y, z);
        out.labels.at(x, y, z) = label;
        out.image.at(x, y, z) = std::clamp(value + noise(rng), 0.0, 1.0);
      }
  return out;
}

// ---------------------------------------------------------------------------
// training

double validation_dsc(const Model& model, const std::vector<Sample>& set, const LabelTree& tree, int threads) {
  if (set.empty()) throw Error(ErrorCode::InvalidArgument, "validation set is empty");
  SegmentOptions opts;
  opts.threads = threads;
  double sum = 0.0;
  for (const Sample& s : set) sum += mean_frontier_dsc(segment_volume(s.image, model, tree, opts), s.labels, tree);
  return sum / static_cast<double>(set.size());
}

namespace {

struct Prepared {
  Volume image;
  TargetGrid targets;
  std::array<std::vector<int>, 3> indices;  // slices with foreground, per axis
};

Prepared prepare(const Volume& image, const LabelVolume& labels, bool weak, const LabelTree& tree,
                 const TrainConfig& cfg) {
  Prepared p;
  p.image = image;
  if (weak) {
    LabelVolume dropped = labels;
    const int cavity = tree.find_by_name("cranial_cavity");
    const int32_t cavity_id = cavity >= 0 ? tree.node(cavity).id : -1;
    for (auto& l : dropped.data)
      if (l == cavity_id) l = 0;
    WeakTargetOptions opts;
    opts.support = cfg.support;
    p.targets = weak_targets(dropped, distance_weights(dropped, cfg.weak_sigma_mm), tree, opts);
  } else {
    p.targets = hard_targets(labels, tree, cfg.support);
  }
  const auto& d = labels.header.dims;
  std::array<std::vector<uint8_t>, 3> hit{std::vector<uint8_t>(d[0]), std::vector<uint8_t>(d[1]),
                                          std::vector<uint8_t>(d[2])};
  for (int z = 0; z < d[2]; ++z)
    for (int y = 0; y < d[1]; ++y)
      for (int x = 0; x < d[0]; ++x)
        if (labels.at(x, y, z) != 0) hit[0][x] = hit[1][y] = hit[2][z] = 1;
  for (int a = 0; a < 3; ++a) {
    for (int i = 0; i < d[a]; ++i)
      if (hit[a][i]) p.indices[a].push_back(i);
    if (p.indices[a].empty())
      for (int i = 0; i < d[a]; ++i) p.indices[a].push_back(i);
  }
  return p;
}

std::vector<double> dense_targets(const TargetGrid& t, Plane plane, int index, std::size_t nodes) {
  const auto& d = t.header().dims;
  const auto ax = slice_axes(plane);
  const int w = d[ax[0]], h = d[ax[1]];
  std::vector<double> out(static_cast<std::size_t>(w) * h * nodes, 0.0);
  for (int v = 0; v < h; ++v)
    for (int u = 0; u < w; ++u) {
      const auto c = volume_coord(plane, index, u, v);
      const std::size_t vox = static_cast<std::size_t>(c[0]) + static_cast<std::size_t>(d[0]) *
                                                                     (c[1] + static_cast<std::size_t>(d[1]) * c[2]);
      const std::size_t px = static_cast<std::size_t>(u) + static_cast<std::size_t>(w) * v;
      t.expand(vox, {out.data() + px * nodes, nodes});
    }
  return out;
}

template <class T>
const T& pick(const std::vector<T>& v, std::mt19937_64& rng) {
  return v[std::uniform_int_distribution<std::size_t>(0, v.size() - 1)(rng)];
}

}  // namespace

TrainState train(const std::vector<Sample>& train_set, const std::vector<Sample>& validation, const LabelTree& tree,
                 const TrainConfig& cfg, const Validator& validator) {
  cfg.validate();
  if (train_set.empty()) throw Error(ErrorCode::InvalidArgument, "training set is empty");
  if (!validator && validation.empty()) throw Error(ErrorCode::InvalidArgument, "validation set is empty");
  const std::size_t nodes = tree.size();

  std::mt19937_64 rng(cfg.seed);
  BackboneShape shape = cfg.shape;
  shape.nodes = static_cast<int>(nodes);

  TrainState st;
  st.model.backbone = ToyBackbone(shape);
  st.model.backbone.init(rng());
  st.model.tree_hash = tree.hash();
  st.best = st.model;

  std::vector<uint8_t> weak(train_set.size(), 0);
  {
    std::vector<std::size_t> order(train_set.size());
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    const auto n_weak = static_cast<std::size_t>(std::llround(cfg.weak_fraction * train_set.size()));
    for (std::size_t i = 0; i < n_weak; ++i) weak[order[i]] = 1;
  }
  std::vector<Prepared> prepared;
  prepared.reserve(train_set.size());
  for (std::size_t i = 0; i < train_set.size(); ++i)
    prepared.push_back(prepare(train_set[i].image, train_set[i].labels, weak[i], tree, cfg));

  std::optional<AugmentConfig> aug_cfg = cfg.augment;
  Validator validate = validator;
  if (!validate)
    validate = [&](const Model& m, int) { return validation_dsc(m, validation, tree, cfg.threads); };

  const std::size_t n_params = st.model.backbone.params().size();
  std::vector<double> flat(n_params + 3), grad(n_params + 3);
  std::vector<PlanarBatch> batches(cfg.triples_per_batch);
  std::vector<std::array<ToyBackbone::Cache, 3>> caches(cfg.triples_per_batch);
  std::vector<LossGrad> grads;
  std::array<double, 3> grad_theta{};

  for (int iter = 0; iter < cfg.schedule.max_iters; ++iter) {
    for (int t = 0; t < cfg.triples_per_batch; ++t) {
      const std::size_t which = std::uniform_int_distribution<std::size_t>(0, prepared.size() - 1)(rng);
      std::optional<Prepared> augmented;
      if (cfg.augment_probability > 0.0 && std::uniform_real_distribution<double>(0.0, 1.0)(rng) < cfg.augment_probability) {
        const Sample& src = train_set[which];
        const AugmentConfig ac = aug_cfg ? *aug_cfg : AugmentConfig{}.scaled_to(src.image.header.dims[0]);
        Augmented a = random_augment(src.image, &src.labels, ac, rng);
        augmented = prepare(a.volume, *a.labels, weak[which], tree, cfg);
      }
      const Prepared& p = augmented ? *augmented : prepared[which];
      PlanarBatch& b = batches[t];
      b.center = {pick(p.indices[0], rng), pick(p.indices[1], rng), pick(p.indices[2], rng)};
      for (Plane plane : kPlanes) {
        const int k = static_cast<int>(plane);
        const int index = b.center[fixed_axis(plane)];
        b.scores[k] = st.model.backbone.forward(extract_slice(p.image, plane, index), &caches[t][k]);
        b.targets[k] = dense_targets(p.targets, plane, index, nodes);
      }
    }

    const LossTerms loss = minibatch_loss(batches, st.model.planes, tree, &grads, &grad_theta);
    if (!std::isfinite(loss.total))
      throw Error(ErrorCode::DivergenceDetected, "loss is not finite at iteration " + std::to_string(iter));
    st.loss_history.push_back(loss.total);

    std::fill(grad.begin(), grad.end(), 0.0);
    for (int t = 0; t < cfg.triples_per_batch; ++t)
      for (int k = 0; k < 3; ++k)
        st.model.backbone.backward(caches[t][k], grads[t].scores[k], std::span<double>(grad.data(), n_params));
    for (int k = 0; k < 3; ++k) grad[n_params + k] = grad_theta[k];
    for (double g : grad)
      if (!std::isfinite(g))
        throw Error(ErrorCode::DivergenceDetected, "gradient is not finite at iteration " + std::to_string(iter));

    auto& params = st.model.backbone.params();
    std::copy(params.begin(), params.end(), flat.begin());
    for (int k = 0; k < 3; ++k) flat[n_params + k] = st.model.planes.theta[k];
    adam_step(flat, grad, st.adam, cfg.adam, cfg.schedule.lr_at(cfg.adam.lr, iter));
    std::copy(flat.begin(), flat.begin() + static_cast<std::ptrdiff_t>(n_params), params.begin());
    for (int k = 0; k < 3; ++k) st.model.planes.theta[k] = flat[n_params + k];
    st.iteration = iter + 1;

    if (st.iteration % cfg.validate_every == 0 || st.iteration == cfg.schedule.max_iters) {
      const double score = validate(st.model, st.iteration);
      st.val_history.emplace_back(st.iteration, score);
      if (score > st.best_score) {
        st.best_score = score;
        st.best_iter = st.iteration;
        st.best = st.model;
      } else if (st.iteration - st.best_iter >= cfg.schedule.patience_iters) {
        st.stopped_early = true;
        break;
      }
    }
  }
  return st;
}

}  // namespace fastaid
