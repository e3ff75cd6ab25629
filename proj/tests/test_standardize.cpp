#include <doctest.h>

#include <algorithm>

#include "fastaid/standardize.hpp"
#include "test_util.hpp"

using namespace fastaid;

TEST_CASE("isotropic length rounds the extent to the nearest even integer") {
  CHECK(isotropic_length(128, 2.0) == 256);
  CHECK(isotropic_length(255, 1.0) == 256);
  CHECK(isotropic_length(256, 1.0) == 256);
  CHECK(isotropic_length(100, 1.3) == 130);
  CHECK(isotropic_length(3, 0.5) == 2);
}

TEST_CASE("resampling preserves physical extent within one voxel") {
  std::mt19937_64 rng(5);
  for (int t = 0; t < 10; ++t) {
    const Dims d{5 + int(rng() % 20), 5 + int(rng() % 20), 5 + int(rng() % 20)};
    Volume v = testutil::random_volume(d, rng);
    v.header.spacing = {0.7 + 0.1 * (rng() % 10), 0.7 + 0.1 * (rng() % 10), 0.7 + 0.1 * (rng() % 10)};
    v.header.affine = diagonal_affine(v.header.spacing);
    const Volume r = resample_to_isotropic(v);
    for (int a = 0; a < 3; ++a) {
      const double extent = d[a] * v.header.spacing[a];
      CHECK(r.header.dims[a] % 2 == 0);
      CHECK(std::fabs(r.header.dims[a] - extent) <= 1.0 + 1e-9);
      CHECK(r.header.dims[a] * r.header.spacing[a] == doctest::Approx(extent));
    }
  }
}

TEST_CASE("128 voxels at 2 mm become 256") {
  Volume v(make_header({128, 4, 4}, {2.0, 1.0, 1.0}), 0.5);
  const Volume r = resample_to_isotropic(v);
  CHECK(r.header.dims == Dims{256, 4, 4});
  CHECK(r.header.spacing[0] == doctest::Approx(1.0));
}

TEST_CASE("already isotropic even grids are untouched") {
  std::mt19937_64 rng(9);
  const Volume v = testutil::random_volume({6, 8, 4}, rng);
  const Volume r = resample_to_isotropic(v);
  CHECK(r.header.dims == v.header.dims);
  double worst = 0.0;
  for (std::size_t i = 0; i < v.data.size(); ++i) worst = std::max(worst, std::fabs(r.data[i] - v.data[i]));
  CHECK(worst == 0.0);

  LabelVolume l(v.header, 0);
  for (std::size_t i = 0; i < l.data.size(); ++i) l.data[i] = static_cast<int32_t>(rng() % 5);
  CHECK(resample_to_isotropic(l).data == l.data);
}

TEST_CASE("label resampling only produces existing labels") {
  LabelVolume l(make_header({9, 7, 5}, {1.7, 0.6, 2.2}), 0);
  for (std::size_t i = 0; i < l.data.size(); ++i) l.data[i] = static_cast<int32_t>((i * 7) % 4) * 10;
  const LabelVolume r = resample_to_isotropic(l);
  for (int32_t v : r.data) CHECK((v == 0 || v == 10 || v == 20 || v == 30));
}

TEST_CASE("pad and crop to a cube") {
  Volume v(make_header({250, 250, 250}), 1.0);
  const Volume p = pad_crop_to_cube(v, 256);
  CHECK(p.header.dims == Dims{256, 256, 256});
  CHECK(p.at(2, 128, 128) == 0.0);
  CHECK(p.at(3, 128, 128) == 1.0);
  CHECK(p.at(252, 128, 128) == 1.0);
  CHECK(p.at(253, 128, 128) == 0.0);
  CHECK(p.header.affine[0][3] == doctest::Approx(-3.0));

  Volume big(make_header({260, 8, 8}));
  for (int x = 0; x < 260; ++x) big.at(x, 0, 0) = x;
  const Volume c = pad_crop(big, {256, 8, 8});
  CHECK(c.at(0, 0, 0) == 2.0);
  CHECK(c.at(255, 0, 0) == 257.0);

  Volume odd(make_header({5, 1, 1}));
  for (int x = 0; x < 5; ++x) odd.at(x, 0, 0) = x + 1;
  const Volume po = pad_crop(odd, {8, 1, 1});
  CHECK(po.at(0, 0, 0) == 0.0);
  CHECK(po.at(1, 0, 0) == 1.0);
  CHECK(po.at(5, 0, 0) == 5.0);
  CHECK(po.at(7, 0, 0) == 0.0);

  std::mt19937_64 rng(2);
  const Volume cube = testutil::random_volume({16, 16, 16}, rng);
  CHECK(pad_crop_to_cube(cube, 16).data == cube.data);
}

TEST_CASE("pad then crop recovers the interior") {
  std::mt19937_64 rng(4);
  const Volume v = testutil::random_volume({7, 10, 5}, rng);
  const Volume padded = pad_crop(v, {16, 13, 9}, 0.25);
  const Volume back = pad_crop(padded, v.header.dims);
  CHECK(back.data == v.data);
  CHECK(back.header.affine[0][3] == doctest::Approx(v.header.affine[0][3]));
}

TEST_CASE("normalize maps to [0, 1]") {
  Volume v(make_header({3, 1, 1}));
  v.data = {10, 20, 30};
  CHECK(normalize_intensity(v).data == std::vector<double>{0.0, 0.5, 1.0});

  Volume unit(make_header({4, 1, 1}));
  unit.data = {0.0, 0.3, 1.0, 0.7};
  CHECK(normalize_intensity(unit).data == unit.data);

  std::mt19937_64 rng(8);
  const Volume r = testutil::random_volume({4, 4, 4}, rng);
  Volume affine = r;
  for (double& x : affine.data) x = 4.0 * x + 3.0;
  const Volume a = normalize_intensity(r), b = normalize_intensity(affine);
  for (std::size_t i = 0; i < a.data.size(); ++i) CHECK(a.data[i] == doctest::Approx(b.data[i]).epsilon(1e-12));

  const Volume constant(make_header({2, 2, 2}), 3.0);
  try {
    normalize_intensity(constant);
    FAIL("expected ConstantVolume");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::ConstantVolume);
  }
}

TEST_CASE("gamma transform") {
  Volume v(make_header({4, 1, 1}));
  v.data = {0.0, 0.25, 0.64, 1.0};
  CHECK(gamma_transform(v, 1.0).data == v.data);
  const Volume h = gamma_transform(v, 0.5);
  CHECK(h.data[0] == 0.0);
  CHECK(h.data[1] == doctest::Approx(0.5));
  CHECK(h.data[3] == 1.0);

  std::mt19937_64 rng(6);
  Volume r = testutil::random_volume({50, 1, 1}, rng);
  std::sort(r.data.begin(), r.data.end());
  for (double g : {0.8, 1.2}) {
    const Volume o = gamma_transform(r, g);
    CHECK(std::is_sorted(o.data.begin(), o.data.end()));
    for (double x : o.data) CHECK((x >= 0.0 && x <= 1.0));
  }
}

TEST_CASE("standardize yields the canonical cube") {
  std::mt19937_64 rng(11);
  Volume v = testutil::random_volume({20, 14, 10}, rng, 100, 900);
  v.header.spacing = {1.5, 2.0, 3.0};
  v.header.affine = diagonal_affine(v.header.spacing);
  const Volume s = standardize(v, {32, 1.0});
  CHECK(s.header.dims == Dims{32, 32, 32});
  CHECK(s.header.spacing[0] == doctest::Approx(1.0));
  const auto [lo, hi] = std::minmax_element(s.data.begin(), s.data.end());
  CHECK(*lo == 0.0);
  CHECK(*hi == 1.0);
}
