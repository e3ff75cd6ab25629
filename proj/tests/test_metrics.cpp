#include <doctest.h>

#include <fstream>
#include <nlohmann/json.hpp>

#include "fastaid/metrics.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace fastaid;

namespace {

template <class Fn>
ErrorCode code_of(Fn&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  return ErrorCode::InvalidArgument;
}

// Average ranks (1-based) by counting, O(n^2).
std::vector<double> naive_ranks(const std::vector<double>& v) {
  std::vector<double> r(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    double below = 0, equal = 0;
    for (double w : v) below += w < v[i], equal += w == v[i];
    r[i] = below + (equal + 1) / 2.0;
  }
  return r;
}

// Two-sided signed-rank p by flipping every sign.
double brute_wilcoxon(const std::vector<double>& x, const std::vector<double>& y) {
  std::vector<double> d, mag;
  for (std::size_t i = 0; i < x.size(); ++i)
    if (x[i] != y[i]) d.push_back(x[i] - y[i]), mag.push_back(std::fabs(x[i] - y[i]));
  const auto r = naive_ranks(mag);
  double total = 0, plus = 0;
  for (std::size_t i = 0; i < d.size(); ++i) total += r[i], plus += d[i] > 0 ? r[i] : 0;
  const double obs = std::min(plus, total - plus);
  std::size_t hits = 0, all = std::size_t{1} << d.size();
  for (std::size_t m = 0; m < all; ++m) {
    double w = 0;
    for (std::size_t i = 0; i < d.size(); ++i)
      if (m >> i & 1) w += r[i];
    hits += std::min(w, total - w) <= obs + 1e-9;
  }
  return static_cast<double>(hits) / all;
}

double brute_mann_whitney(const std::vector<double>& x, const std::vector<double>& y) {
  std::vector<double> pooled(x);
  pooled.insert(pooled.end(), y.begin(), y.end());
  const auto r = naive_ranks(pooled);
  const double nx = x.size(), ny = y.size(), mid = nx * ny / 2;
  auto u_of = [&](std::size_t mask) {
    double rs = 0;
    for (std::size_t i = 0; i < pooled.size(); ++i)
      if (mask >> i & 1) rs += r[i];
    return rs - nx * (nx + 1) / 2;
  };
  const double obs = std::fabs(u_of((std::size_t{1} << x.size()) - 1) - mid);
  std::size_t hits = 0, splits = 0;
  for (std::size_t m = 0; m < (std::size_t{1} << pooled.size()); ++m) {
    if (static_cast<std::size_t>(__builtin_popcountll(m)) != x.size()) continue;
    ++splits;
    hits += std::fabs(u_of(m) - mid) >= obs - 1e-9;
  }
  return static_cast<double>(hits) / splits;
}

}  // namespace

TEST_CASE("overlap counts agree with voxel counting") {
  std::mt19937_64 rng(1);
  LabelVolume p(make_header({7, 6, 5}), 0), t(p.header, 0);
  for (auto& v : p.data) v = static_cast<int32_t>(rng() % 4);
  for (auto& v : t.data) v = static_cast<int32_t>(rng() % 4);
  for (int region = 0; region < 4; ++region) {
    std::size_t a = 0, b = 0, c = 0;
    for (std::size_t i = 0; i < p.data.size(); ++i) {
      a += p.data[i] == region;
      b += t.data[i] == region;
      c += p.data[i] == region && t.data[i] == region;
    }
    const Overlap o = overlap(p, t, region);
    CHECK(o.pred == a);
    CHECK(o.truth == b);
    CHECK(o.both == c);
    CHECK(dsc(p, t, region) == doctest::Approx(2.0 * c / (a + b)));
    CHECK(vs(p, t, region) == doctest::Approx(1.0 - std::fabs(double(a) - double(b)) / (a + b)));
  }
  CHECK(dsc(p, p, 2) == 1.0);
  CHECK(code_of([&] { dsc(p, t, 9); }) == ErrorCode::BothEmpty);
  CHECK(code_of([&] { vs(Overlap{}); }) == ErrorCode::BothEmpty);
  CHECK(dsc(Overlap{4, 0, 0}) == 0.0);
  CHECK(vs(Overlap{3, 1, 1}) == doctest::Approx(0.5));
}

TEST_CASE("signed-rank test") {
  const std::vector<double> x{1.1, 2.3, 3.2, 4.8, 5.0}, zero(5, 0.0);
  const RankTest r = wilcoxon_signed_rank(x, zero);
  CHECK(r.exact);
  CHECK(r.w_plus == 15.0);
  CHECK(r.w_minus == 0.0);
  CHECK(r.p == doctest::Approx(0.0625));
  CHECK(wilcoxon_signed_rank(zero, x).p == r.p);

  std::mt19937_64 rng(7);
  std::normal_distribution<double> g(0.0, 1.0);
  for (int trial = 0; trial < 30; ++trial) {
    const std::size_t n = 5 + trial % 8;
    std::vector<double> a(n), b(n);
    for (std::size_t i = 0; i < n; ++i) {
      a[i] = std::round(g(rng) * 3) / 2;  // ties and zeros on purpose
      b[i] = std::round(g(rng) * 3) / 2 + 0.3 * (trial % 3);
    }
    std::size_t nonzero = 0;
    for (std::size_t i = 0; i < n; ++i) nonzero += a[i] != b[i];
    if (nonzero < 5) continue;
    const RankTest w = wilcoxon_signed_rank(a, b);
    CHECK(w.p == doctest::Approx(brute_wilcoxon(a, b)).epsilon(1e-12));
    CHECK(wilcoxon_signed_rank(b, a).p == doctest::Approx(w.p));
  }

  // Just past the exact limit: the normal approximation stays close to enumeration.
  std::vector<double> a(13), b(13, 0.0);
  for (int i = 0; i < 13; ++i) a[i] = (i % 4 == 0 ? -1.0 : 1.0) * (i + 1) * 0.7;
  const RankTest approx = wilcoxon_signed_rank(a, b);
  CHECK_FALSE(approx.exact);
  CHECK(std::fabs(approx.p - brute_wilcoxon(a, b)) < 0.02);

  CHECK(code_of([] { wilcoxon_signed_rank({1, 2}, {1}); }) == ErrorCode::LengthMismatch);
  CHECK(code_of([] { wilcoxon_signed_rank({1, 2, 3}, {1, 2, 3}); }) == ErrorCode::AllZeroDifferences);
  CHECK(code_of([] { wilcoxon_signed_rank({1, 2, 3, 4}, {0, 0, 0, 0}); }) == ErrorCode::InsufficientSamples);
}

TEST_CASE("rank-sum test") {
  const RankTest r = mann_whitney_u({1, 2, 3}, {4, 5, 6});
  CHECK(r.exact);
  CHECK(r.statistic == 0.0);
  CHECK(r.p == doctest::Approx(0.1));
  CHECK(mann_whitney_u({4, 5, 6}, {1, 2, 3}).p == r.p);
  CHECK(mann_whitney_u({1, 2, 3, 4}, {1, 2, 3, 4}).p == doctest::Approx(1.0));

  std::mt19937_64 rng(9);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t nx = 2 + trial % 5, ny = 3 + trial % 4;
    std::vector<double> x(nx), y(ny);
    for (double& v : x) v = static_cast<double>(rng() % 6);
    for (double& v : y) v = static_cast<double>(rng() % 6) + 0.5 * (trial % 2);
    CHECK(mann_whitney_u(x, y).p == doctest::Approx(brute_mann_whitney(x, y)).epsilon(1e-12));
  }

  std::vector<double> x(7), y(7);
  for (int i = 0; i < 7; ++i) x[i] = i * 1.3, y[i] = i * 1.1 + 2.05;
  const RankTest approx = mann_whitney_u(x, y);
  CHECK_FALSE(approx.exact);
  CHECK(std::fabs(approx.p - brute_mann_whitney(x, y)) < 0.02);
  CHECK(code_of([] { mann_whitney_u({}, {1.0}); }) == ErrorCode::InsufficientSamples);
}

TEST_CASE("Bland-Altman") {
  const BlandAltman same = bland_altman({1, 2, 3}, {1, 2, 3});
  CHECK(same.mean_diff == 0.0);
  CHECK(same.sd_diff == 0.0);
  CHECK(same.loa_low == 0.0);

  const BlandAltman ba = bland_altman({10, 12, 14, 20}, {9, 12, 12, 19});
  CHECK(ba.mean_diff == doctest::Approx(1.0));
  CHECK(ba.sd_diff == doctest::Approx(std::sqrt(2.0 / 3.0)));
  CHECK(ba.loa_high == doctest::Approx(1.0 + 1.96 * std::sqrt(2.0 / 3.0)));
  CHECK(ba.points[2].first == doctest::Approx(13.0));
  CHECK(ba.points[2].second == doctest::Approx(2.0));
  CHECK(code_of([] { bland_altman({1, 2}, {1}); }) == ErrorCode::LengthMismatch);
  CHECK(code_of([] { bland_altman({1}, {1}); }) == ErrorCode::LengthMismatch);

  const auto path = testutil::scratch("ba.tsv");
  write_bland_altman_tsv(ba, path);
  std::ifstream in(path);
  std::string header;
  std::getline(in, header);
  CHECK(header == "mean\tdiff");
}

TEST_CASE("volumes and change rates") {
  LabelVolume l(make_header({10, 10, 10}), 1);
  CHECK(icv(l) == doctest::Approx(1000.0));
  l.header.spacing = {1.0, 1.2, 1.0};
  CHECK(icv(l) == doctest::Approx(1200.0));
  l.data[0] = 0;
  CHECK(icv(l, {1, 1, 1}) == doctest::Approx(999.0));
  CHECK(annual_pct_change(1000, 900, 2) == doctest::Approx(-5.0));
  CHECK(code_of([] { annual_pct_change(0, 10, 1); }) == ErrorCode::ZeroBaseline);
  CHECK(code_of([] { annual_pct_change(10, 10, 0); }) == ErrorCode::InvalidArgument);
}

TEST_CASE("region report") {
  const LabelTree t = parse_tree("0 root 1 background\n1 root 1 a\n2 root 1 b\n3 root 1 c\n");
  LabelVolume p(make_header({10, 1, 1}), 0), g(p.header, 0);
  p.data = {1, 1, 1, 2, 2, 0, 0, 0, 0, 0};
  g.data = {1, 1, 0, 2, 0, 2, 0, 0, 0, 0};
  const RegionReport r = region_report(p, g, t);
  REQUIRE(r.rows.size() == 2);
  REQUIRE(r.undefined.size() == 1);
  CHECK(r.undefined[0].id == 3);
  CHECK(r.rows[0].dsc == doctest::Approx(0.8));
  CHECK(r.rows[1].dsc == doctest::Approx(0.5));
  CHECK(r.rows[0].vs == doctest::Approx(0.8));
  CHECK(r.rows[1].vs == doctest::Approx(1.0));
  CHECK(r.dsc_mean == doctest::Approx(0.65));
  CHECK(r.dsc_sd == doctest::Approx(std::sqrt(2 * 0.15 * 0.15)));
  CHECK(mean_frontier_dsc(p, g, t) == doctest::Approx(0.65));

  const RegionReport only = region_report(p, g, t, parse_region_mapping("# truth pred\n2\n"));
  REQUIRE(only.rows.size() == 1);
  CHECK(only.rows[0].id == 2);
  const RegionReport cross = region_report(p, g, t, RegionMapping{{2, 1}});
  CHECK(cross.rows[0].dsc == 0.0);
  CHECK(cross.rows[0].pred_mm3 == doctest::Approx(3.0));
  CHECK(code_of([] { parse_region_mapping("1 2 3\n"); }) == ErrorCode::SchemaError);

  const auto path = testutil::scratch("regions.tsv");
  write_region_tsv(r, path);
  std::ifstream in(path);
  std::string line, last;
  std::getline(in, line);
  CHECK(line == "id\tname\tpred_id\tdsc\tvs\tpred_mm3\ttruth_mm3");
  while (std::getline(in, line)) last = line;
  CHECK(last.find("NA") != std::string::npos);
  const auto j = nlohmann::json::parse(region_summary_json(r));
  CHECK(j["regions"] == 2);
  CHECK(j["undefined"][0]["name"] == "c");

  const LabelVolume empty(p.header, 0);
  CHECK(code_of([&] { mean_frontier_dsc(empty, empty, t); }) == ErrorCode::BothEmpty);
}
