#include <doctest.h>

#include <numeric>

#include "fastaid/toy_train.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace fastaid;

namespace {

std::vector<Sample> phantoms(uint64_t first, int count, int side, const LabelTree& t) {
  std::vector<Sample> out;
  for (int i = 0; i < count; ++i) out.push_back(generate_phantom(first + i, side, t));
  return out;
}

double mean_of(const std::vector<double>& v, std::size_t from, std::size_t to) {
  return std::accumulate(v.begin() + from, v.begin() + to, 0.0) / static_cast<double>(to - from);
}

}  // namespace

TEST_CASE("Adam") {
  AdamConfig cfg;
  cfg.l2 = 0.0;
  std::vector<double> p{1.0, -2.0, 3.0};
  AdamState st;
  adam_step(p, std::vector<double>(3, 0.0), st, cfg, 0.1);
  CHECK(p == std::vector<double>{1.0, -2.0, 3.0});

  // First bias-corrected step moves each coordinate by lr * sign(g).
  st = {};
  adam_step(p, std::vector<double>{0.5, -4.0, 1e-3}, st, cfg, 0.1);
  CHECK(p[0] == doctest::Approx(0.9).epsilon(1e-6));
  CHECK(p[1] == doctest::Approx(-1.9).epsilon(1e-6));
  const std::vector<double> keep = p;
  adam_step(p, std::vector<double>{7.0, 7.0, 7.0}, st, cfg, 0.0);
  CHECK(p == keep);

  // Minimizes a quadratic.
  std::vector<double> x{5.0, -3.0};
  AdamState s2;
  for (int i = 0; i < 2000; ++i) adam_step(x, std::vector<double>{2 * (x[0] - 1), 2 * (x[1] + 2)}, s2, cfg, 0.05);
  CHECK(x[0] == doctest::Approx(1.0).epsilon(1e-2));
  CHECK(x[1] == doctest::Approx(-2.0).epsilon(1e-2));
}

TEST_CASE("Adam: coupled L2 and step size") {
  AdamConfig cfg;
  cfg.l2 = 0.1;
  std::vector<double> p{0.5, -2.0, 3.0};
  const std::vector<double> start = p;
  AdamState st;
  for (int i = 0; i < 5; ++i) adam_step(p, std::vector<double>(3, 0.0), st, cfg, 0.01);
  for (int i = 0; i < 3; ++i) {
    CHECK(std::fabs(p[i]) < std::fabs(start[i]));
    CHECK(p[i] * start[i] > 0.0);
  }

  cfg.l2 = 0.0;
  std::vector<double> x{1.0};
  AdamState s2;
  double prev = x[0];
  for (int i = 0; i < 300; ++i) {
    prev = x[0];
    adam_step(x, std::vector<double>{0.3}, s2, cfg, 0.01);
  }
  CHECK(prev - x[0] == doctest::Approx(0.01).epsilon(1e-6));
}

TEST_CASE("gradient through backbone, fusion and hierarchy") {
  std::mt19937_64 rng(31);
  const LabelTree t = parse_tree(oracle::kSixNodeTree);
  const int n = static_cast<int>(t.size());
  const Volume v = testutil::random_volume({8, 8, 8}, rng);
  ToyBackbone net({3, 3, n});
  net.init(12);
  PlaneWeights pw;
  pw.theta = {0.3, -0.2, 0.1};

  PlanarBatch batch;
  batch.center = {3, 5, 2};
  std::array<Slice<double>, 3> slices;
  for (Plane plane : kPlanes) {
    const int k = static_cast<int>(plane);
    slices[k] = extract_slice(v, plane, batch.center[fixed_axis(plane)]);
    batch.targets[k].assign(64 * static_cast<std::size_t>(n), 0.0);
    for (std::size_t px = 0; px < 64; ++px) {
      std::span<double> row(batch.targets[k].data() + px * n, n);
      add_target(t, t.frontier()[rng() % t.frontier().size()], 0.7, TargetSupport::AncestorPath, row);
      add_target(t, static_cast<int>(rng() % n), 0.3, TargetSupport::AncestorPath, row);
    }
  }

  auto loss_of = [&](const std::vector<double>& x, std::vector<double>* grad) {
    ToyBackbone b = net;
    std::copy(x.begin(), x.end() - 3, b.params().begin());
    PlaneWeights w;
    std::copy(x.end() - 3, x.end(), w.theta.begin());
    PlanarBatch pb = batch;
    std::array<ToyBackbone::Cache, 3> caches;
    for (int k = 0; k < 3; ++k) pb.scores[k] = b.forward(slices[k], &caches[k]);
    LossGrad g;
    const double total = total_loss(pb, w, t, grad ? &g : nullptr).total;
    if (grad) {
      grad->assign(x.size(), 0.0);
      std::span<double> gp(grad->data(), x.size() - 3);
      for (int k = 0; k < 3; ++k) b.backward(caches[k], g.scores[k], gp);
      std::copy(g.theta.begin(), g.theta.end(), grad->end() - 3);
    }
    return total;
  };

  std::vector<double> x = net.params();
  x.insert(x.end(), pw.theta.begin(), pw.theta.end());
  std::vector<double> analytic;
  loss_of(x, &analytic);
  const auto numeric = oracle::numeric_grad([&](const std::vector<double>& y) { return loss_of(y, nullptr); }, x);
  CHECK(oracle::rel_error(analytic, numeric) < 1e-4);
}

TEST_CASE("schedule") {
  Schedule s;
  CHECK(s.lr_at(1.0, 0) == 1.0);
  CHECK(s.lr_at(1.0, 79) == 1.0);
  CHECK(s.lr_at(1.0, 80) == doctest::Approx(0.9));
  CHECK(s.lr_at(1.0, 240) == doctest::Approx(0.729));
  s.lr_drop_period = 0;
  CHECK_THROWS_AS(s.validate(), Error);
}

TEST_CASE("phantoms") {
  const LabelTree t = phantom_tree();
  CHECK(t.frontier().size() == 5);
  const Sample a = generate_phantom(3, 24, t), b = generate_phantom(3, 24, t), c = generate_phantom(4, 24, t);
  CHECK(a.image.data == b.image.data);
  CHECK(a.labels.data == b.labels.data);
  CHECK(a.image.data != c.image.data);
  std::size_t fg = 0;
  for (int32_t v : a.labels.data) {
    CHECK(t.index_of(v) >= 0);
    fg += v != 0;
  }
  const double frac = static_cast<double>(fg) / a.labels.data.size();
  CHECK(frac > 0.05);
  CHECK(frac < 0.6);
  for (double v : a.image.data) CHECK((v >= 0.0 && v <= 1.0));
}

TEST_CASE("config JSON") {
  TrainConfig cfg;
  cfg.schedule.max_iters = 77;
  cfg.schedule.patience_iters = 50;
  cfg.seed = 9;
  cfg.support = TargetSupport::DeepestOnly;
  const TrainConfig r = parse_train_config(to_json(cfg));
  CHECK(r.schedule.max_iters == 77);
  CHECK(r.seed == 9);
  CHECK(r.support == TargetSupport::DeepestOnly);
  CHECK(r.adam.beta2 == 0.99);
  CHECK_THROWS_AS(parse_train_config(R"({"weak_fraction": 2.0})"), Error);
  CHECK_THROWS_AS(parse_train_config("{not json"), Error);
}

TEST_CASE("training is deterministic and reduces the loss") {
  const LabelTree t = phantom_tree();
  const auto train_set = phantoms(100, 4, 16, t), val = phantoms(200, 1, 16, t);
  TrainConfig cfg;
  cfg.schedule.max_iters = 400;
  cfg.schedule.patience_iters = 400;
  cfg.validate_every = 200;
  const TrainState a = train(train_set, val, t, cfg), b = train(train_set, val, t, cfg);
  CHECK(a.model.backbone.params() == b.model.backbone.params());
  CHECK(a.loss_history == b.loss_history);
  CHECK(a.val_history.size() == 2);
  CHECK(a.best.tree_hash == t.hash());
  const std::size_t n = a.loss_history.size();
  CHECK(mean_of(a.loss_history, n - 40, n) < 0.5 * mean_of(a.loss_history, 0, 10));

  cfg.adam.lr = 0.0;
  cfg.schedule.max_iters = 20;
  cfg.schedule.patience_iters = 20;
  const TrainState short_run = train(train_set, val, t, cfg);
  cfg.schedule.max_iters = 40;
  cfg.schedule.patience_iters = 40;
  const TrainState long_run = train(train_set, val, t, cfg);
  CHECK(short_run.model.backbone.params() == long_run.model.backbone.params());
  CHECK(short_run.model.backbone.params() != a.model.backbone.params());
}

TEST_CASE("early stopping waits for the patience window") {
  const LabelTree t = phantom_tree();
  const auto train_set = phantoms(1, 2, 16, t);
  TrainConfig cfg;
  cfg.schedule.max_iters = 1000;
  cfg.schedule.patience_iters = 160;
  cfg.validate_every = 20;
  int calls = 0;
  const TrainState st = train(train_set, {}, t, cfg, [&](const Model&, int iter) {
    ++calls;
    return 1.0 / iter;  // best at the first check, worse afterwards
  });
  CHECK(st.stopped_early);
  CHECK(st.best_iter == 20);
  CHECK(st.iteration == 180);
  CHECK(calls == 9);

  CHECK_THROWS_AS(train({}, {}, t, cfg), Error);
}

TEST_CASE("divergence is reported") {
  const LabelTree t = phantom_tree();
  auto train_set = phantoms(1, 1, 16, t);
  std::fill(train_set[0].image.data.begin(), train_set[0].image.data.end(), std::nan(""));
  TrainConfig cfg;
  cfg.augment_probability = 0.0;
  cfg.schedule.max_iters = 20;
  cfg.schedule.patience_iters = 20;
  try {
    train(train_set, {}, t, cfg, [](const Model&, int) { return 0.0; });
    FAIL("expected DivergenceDetected");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::DivergenceDetected);
  }
}
