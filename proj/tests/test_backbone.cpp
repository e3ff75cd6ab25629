#include <doctest.h>

#include <fstream>

#include "fastaid/backbone.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace fastaid;

namespace {

Slice<double> random_slice(std::mt19937_64& rng, int w, int h) {
  Slice<double> s(w, h);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (double& x : s.data) x = u(rng);
  return s;
}

// Scalar loss sum(c * scores) so dL/dscores = c.
double probe(const ToyBackbone& b, const Slice<double>& img, const std::vector<double>& c) {
  const SliceScores s = b.forward(img);
  double acc = 0.0;
  for (std::size_t i = 0; i < c.size(); ++i) acc += c[i] * s.s[i];
  return acc;
}

ErrorCode load_error(const std::filesystem::path& p) {
  try {
    load_model(p);
  } catch (const Error& e) {
    return e.code();
  }
  return ErrorCode::InvalidArgument;
}

}  // namespace

TEST_CASE("parameter layout") {
  CHECK(BackboneShape{3, 8, 6}.parameter_count() == 8 * 9 + 8 + 8 * 8 * 9 + 8 + 6 * 8 + 6);
  CHECK_THROWS_AS(ToyBackbone(BackboneShape{4, 8, 6}), Error);
  ToyBackbone b({3, 4, 5});
  b.init(1);
  ToyBackbone c({3, 4, 5});
  c.init(1);
  CHECK(b.params() == c.params());
  c.init(2);
  CHECK(b.params() != c.params());
}

TEST_CASE("zero weights give zero scores and output keeps the slice size") {
  ToyBackbone b({3, 5, 4});
  std::mt19937_64 rng(1);
  const SliceScores s = b.forward(random_slice(rng, 7, 6));
  CHECK(s.width == 7);
  CHECK(s.height == 6);
  CHECK(s.nodes == 4);
  for (double x : s.s) CHECK(x == 0.0);
  CHECK_THROWS_AS(b.forward(Slice<double>(2, 8)), Error);
}

TEST_CASE("backward matches finite differences") {
  std::mt19937_64 rng(3);
  for (int k : {1, 3, 5}) {
    ToyBackbone b({k, 3, 4});
    b.init(10 + k);
    std::uniform_real_distribution<double> u(-0.2, 0.2);
    for (double& p : b.params()) p += u(rng);  // nonzero biases too
    const Slice<double> img = random_slice(rng, 6, 5);
    std::vector<double> c(6 * 5 * 4);
    for (double& x : c) x = u(rng) * 5;

    ToyBackbone::Cache cache;
    const SliceScores s = b.forward(img, &cache);
    SliceScores g(s.width, s.height, s.nodes);
    g.s = c;
    std::vector<double> analytic(b.params().size(), 0.0);
    b.backward(cache, g, analytic);
    const auto numeric = oracle::numeric_grad(
        [&](const std::vector<double>& p) {
          ToyBackbone t = b;
          t.params() = p;
          return probe(t, img, c);
        },
        b.params());
    CHECK(oracle::rel_error(analytic, numeric) < 1e-7);
  }
}

TEST_CASE("interior responses are translation equivariant") {
  ToyBackbone b({3, 4, 2});
  b.init(7);
  Slice<double> img(16, 16, 0.0);
  img.at(6, 6) = 1.0;
  Slice<double> moved(16, 16, 0.0);
  moved.at(8, 7) = 1.0;
  const SliceScores a = b.forward(img), m = b.forward(moved);
  for (int v = 2; v < 12; ++v)
    for (int u = 2; u < 12; ++u)
      for (int n = 0; n < 2; ++n)
        CHECK(m.pixel((u + 2) + 16 * (v + 1))[n] == doctest::Approx(a.pixel(u + 16 * v)[n]).epsilon(1e-12));
}

TEST_CASE("model files") {
  const LabelTree t = parse_tree(oracle::kSixNodeTree);
  Model m;
  m.backbone = ToyBackbone({3, 4, 6});
  m.backbone.init(5);
  m.planes.theta = {0.1, -0.3, 0.2};
  m.tree_hash = t.hash();
  const auto path = testutil::scratch("m.fam");
  save_model(m, path);
  const Model r = load_model(path);
  CHECK(r.backbone.params() == m.backbone.params());
  CHECK(r.backbone.shape() == m.backbone.shape());
  CHECK(r.planes.theta == m.planes.theta);
  CHECK(r.tree_hash == m.tree_hash);
  CHECK_NOTHROW(check_model(r, t));

  const LabelTree other = parse_tree("1 root 1 a\n2 root 1 b\n3 root 1 c\n4 root 1 d\n5 root 1 e\n6 root 1 f\n");
  try {
    check_model(r, other);
    FAIL("expected ModelShapeMismatch");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::ModelShapeMismatch);
  }
  try {
    check_model(r, parse_tree("1 root 1 a\n2 root 1 b\n"));
    FAIL("expected ModelShapeMismatch");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::ModelShapeMismatch);
  }

  std::ifstream in(path, std::ios::binary);
  std::string bytes((std::istreambuf_iterator<char>(in)), {});
  const auto cut = testutil::scratch("cut.fam");
  std::ofstream(cut, std::ios::binary) << bytes.substr(0, bytes.size() - 9);
  CHECK(load_error(cut) == ErrorCode::TruncatedData);
  const auto bad = testutil::scratch("bad.fam");
  std::string flipped = bytes;
  flipped[0] = 'X';
  std::ofstream(bad, std::ios::binary) << flipped;
  CHECK(load_error(bad) == ErrorCode::MalformedHeader);
  CHECK(load_error(testutil::scratch("missing.fam")) == ErrorCode::IoFailure);
}
