#include <doctest.h>

#include "fastaid/inference.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace fastaid;

namespace {

int brute_label(const std::vector<double>& s, const LabelTree& t) {
  const auto p = oracle::path_probabilities(s, t);
  int best = -1;
  for (std::size_t n = 0; n < t.size(); ++n) {
    if (!t.is_frontier(static_cast<int>(n))) continue;
    const int id = t.node(static_cast<int>(n)).id;
    if (best < 0 || p[n] > p[best] + 1e-15 || (std::fabs(p[n] - p[best]) <= 1e-15 && id < t.node(best).id))
      best = static_cast<int>(n);
  }
  return t.node(best).id;
}

std::array<ScoreVolume, 3> random_scores(std::mt19937_64& rng, const Dims& d, int nodes, double sd) {
  std::normal_distribution<double> g(0.0, sd);
  std::array<ScoreVolume, 3> s{ScoreVolume(make_header(d), nodes), ScoreVolume(make_header(d), nodes),
                               ScoreVolume(make_header(d), nodes)};
  for (auto& v : s)
    for (double& x : v.s) x = g(rng);
  return s;
}

Model random_model(const LabelTree& t, uint64_t seed) {
  Model m;
  m.backbone = ToyBackbone({3, 4, static_cast<int>(t.size())});
  m.backbone.init(seed);
  m.planes.theta = {0.2, -0.1, 0.05};
  m.tree_hash = t.hash();
  return m;
}

}  // namespace

TEST_CASE("score fusion matches a brute-force oracle") {
  std::mt19937_64 rng(21);
  for (int trial = 0; trial < 6; ++trial) {
    const LabelTree t = trial == 0 ? parse_tree(oracle::kSixNodeTree) : oracle::random_tree(rng, 1 + trial % 4);
    const auto s = random_scores(rng, {4, 3, 5}, static_cast<int>(t.size()), 2.0);
    PlaneWeights pw;
    pw.theta = {0.4 * trial, -0.3, 0.1};
    const auto w = pw.weights();
    const LabelVolume out = predict_score_fusion(s, pw, t);
    CHECK(out.header.datatype == DataType::Int32);
    for (std::size_t i = 0; i < out.data.size(); ++i) {
      std::vector<double> f(t.size());
      for (std::size_t n = 0; n < t.size(); ++n)
        f[n] = w[0] * s[0].voxel(i)[n] + w[1] * s[1].voxel(i)[n] + w[2] * s[2].voxel(i)[n];
      CHECK(out.data[i] == brute_label(f, t));
    }
  }
}

TEST_CASE("weights at a vertex select one plane") {
  std::mt19937_64 rng(4);
  const LabelTree t = parse_tree(oracle::kSixNodeTree);
  const auto s = random_scores(rng, {5, 5, 5}, 6, 3.0);
  for (int p = 0; p < 3; ++p) {
    PlaneWeights pw;
    pw.theta = {-60.0, -60.0, -60.0};
    pw.theta[p] = 60.0;
    CHECK(predict_score_fusion(s, pw, t).data == predict_plane_labels(s[p], t).data);
  }
}

TEST_CASE("global argmax and greedy descent") {
  const LabelTree t = parse_tree(oracle::kSixNodeTree);
  HierWorkspace ws;
  // node1 0.45 vs node2 0.55 split evenly into 3/4/{5,6}: greedy takes node2, global takes node1.
  std::vector<double> s(6, 0.0);
  s[t.index_of(1)] = std::log(0.45);
  s[t.index_of(2)] = std::log(0.55);
  CHECK(t.node(decide_node(s, t, ws)).id == 1);
  CHECK(t.node(decide_node(s, t, ws, LabelDecision::GreedyDescent)).id == 3);
  // Exact ties go to the smaller id.
  CHECK(t.node(decide_node(std::vector<double>(6, 0.0), t, ws, LabelDecision::GreedyDescent)).id == 1);
  std::vector<double> tie(6, 0.0);
  tie[t.index_of(1)] = std::log(0.25);
  tie[t.index_of(2)] = std::log(0.75);
  CHECK(t.node(decide_node(tie, t, ws)).id == 3);
}

TEST_CASE("majority vote") {
  const NiftiHeader h = make_header({3, 1, 1});
  std::array<LabelVolume, 3> l{LabelVolume(h, 0), LabelVolume(h, 0), LabelVolume(h, 0)};
  l[0].data = {5, 3, 1};
  l[1].data = {5, 7, 2};
  l[2].data = {9, 9, 2};
  const LabelVolume v = predict_majority_vote(l, PlaneWeights::from_weights({0.2, 0.5, 0.3}));
  CHECK(v.data == std::vector<int32_t>{5, 7, 2});
  const LabelVolume a = predict_majority_vote(l, PlaneWeights::from_weights({0.6, 0.2, 0.2}));
  CHECK(a.data[1] == 3);
  l[2] = LabelVolume(make_header({2, 1, 1}), 0);
  CHECK_THROWS_AS(predict_majority_vote(l, PlaneWeights{}), Error);
}

TEST_CASE("plane scores place every slice at its voxels") {
  const LabelTree t = parse_tree(oracle::kSixNodeTree);
  const Model m = random_model(t, 3);
  std::mt19937_64 rng(6);
  const Volume v = testutil::random_volume({6, 5, 4}, rng);
  for (Plane p : kPlanes) {
    const ScoreVolume sv = plane_scores(v, m.backbone, p, 2);
    const int axis = fixed_axis(p);
    const int idx = v.header.dims[axis] / 2;
    const SliceScores ref = m.backbone.forward(extract_slice(v, p, idx));
    for (int b = 0; b < ref.height; ++b)
      for (int a = 0; a < ref.width; ++a) {
        const auto c = volume_coord(p, idx, a, b);
        const auto got = sv.voxel(v.index(c[0], c[1], c[2]));
        const auto want = ref.pixel(a + ref.width * b);
        for (int n = 0; n < 6; ++n) CHECK(got[n] == want[n]);
      }
  }
}

TEST_CASE("segment_volume: chunking and threads do not change the result") {
  const LabelTree t = parse_tree(oracle::kSixNodeTree);
  const Model m = random_model(t, 9);
  const Volume v = testutil::smooth_phantom(12);
  SegmentOptions o;
  const LabelVolume whole = segment_volume(v, m, t, o);
  const std::array<ScoreVolume, 3> sc{plane_scores(v, m.backbone, Plane::Axial),
                                      plane_scores(v, m.backbone, Plane::Coronal),
                                      plane_scores(v, m.backbone, Plane::Sagittal)};
  CHECK(whole.data == predict_score_fusion(sc, m.planes, t).data);
  for (int chunk : {1, 5, 12, 40}) {
    o.chunk = chunk;
    o.threads = chunk % 3 + 1;
    CHECK(segment_volume(v, m, t, o).data == whole.data);
  }
  o.mode = CombineMode::Vote;
  o.threads = 4;
  const LabelVolume vote = segment_volume(v, m, t, o);
  const std::array<LabelVolume, 3> per{predict_plane_labels(sc[0], t), predict_plane_labels(sc[1], t),
                                       predict_plane_labels(sc[2], t)};
  CHECK(vote.data == predict_majority_vote(per, m.planes).data);
  CHECK(vote.header.dims == v.header.dims);

  const Volume zero(make_header({8, 8, 8}), 0.0);
  CHECK(segment_volume(zero, m, t).data == segment_volume(zero, m, t).data);

  const LabelTree other = parse_tree("1 root 1 a\n2 root 1 b\n");
  CHECK_THROWS_AS(segment_volume(v, m, other), Error);
}
