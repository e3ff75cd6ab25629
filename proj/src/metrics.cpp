#include "fastaid/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <sstream>
#include <unordered_map>

#include <nlohmann/json.hpp>

namespace fastaid {

Overlap overlap(const LabelVolume& pred, const LabelVolume& truth, int pred_region, int truth_region) {
  require_same_dims(pred, truth, "overlap");
  Overlap o;
  for (std::size_t i = 0; i < pred.data.size(); ++i) {
    const bool y = pred.data[i] == pred_region, t = truth.data[i] == truth_region;
    o.pred += y;
    o.truth += t;
    o.both += y && t;
  }
  return o;
}

Overlap overlap(const LabelVolume& pred, const LabelVolume& truth, int region) {
  return overlap(pred, truth, region, region);
}

double dsc(const Overlap& o) {
  if (o.pred + o.truth == 0) throw Error(ErrorCode::BothEmpty, "region is empty in both volumes");
  return 2.0 * static_cast<double>(o.both) / static_cast<double>(o.pred + o.truth);
}

double vs(const Overlap& o) {
  if (o.pred + o.truth == 0) throw Error(ErrorCode::BothEmpty, "region is empty in both volumes");
  const double diff = o.pred > o.truth ? o.pred - o.truth : o.truth - o.pred;
  return 1.0 - diff / static_cast<double>(o.pred + o.truth);
}

double dsc(const LabelVolume& pred, const LabelVolume& truth, int region) { return dsc(overlap(pred, truth, region)); }
double vs(const LabelVolume& pred, const LabelVolume& truth, int region) { return vs(overlap(pred, truth, region)); }

namespace {

// Average ranks (1-based) doubled so tied ranks stay integral, plus the tie group sizes.
std::vector<int64_t> doubled_ranks(const std::vector<double>& v, std::vector<std::size_t>* ties) {
  std::vector<std::size_t> order(v.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<int64_t> r(v.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
    const auto twice_avg = static_cast<int64_t>(i + 1 + j + 1);
    for (std::size_t k = i; k <= j; ++k) r[order[k]] = twice_avg;
    if (ties && j > i) ties->push_back(j - i + 1);
    i = j + 1;
  }
  return r;
}

double tie_sum(const std::vector<std::size_t>& ties) {
  double s = 0.0;
  for (auto t : ties) s += static_cast<double>(t) * t * t - static_cast<double>(t);
  return s;
}

double two_sided_normal(double deviation, double var) {
  if (var <= 0.0) return 1.0;
  const double z = (deviation - 0.5) / std::sqrt(var);
  if (z <= 0.0) return 1.0;
  return std::min(1.0, std::erfc(z / std::sqrt(2.0)));
}

constexpr std::size_t kExactLimit = 12;

}  // namespace

RankTest wilcoxon_signed_rank(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size()) throw Error(ErrorCode::LengthMismatch, "paired samples differ in length");
  std::vector<double> d, mag;
  for (std::size_t i = 0; i < x.size(); ++i)
    if (x[i] - y[i] != 0.0) d.push_back(x[i] - y[i]);
  if (d.empty()) throw Error(ErrorCode::AllZeroDifferences, "all paired differences are zero");
  if (d.size() < 5)
    throw Error(ErrorCode::InsufficientSamples, "need at least 5 nonzero differences, got " + std::to_string(d.size()));
  for (double v : d) mag.push_back(std::fabs(v));
  std::vector<std::size_t> ties;
  const auto r2 = doubled_ranks(mag, &ties);
  const std::size_t n = d.size();

  int64_t plus2 = 0, total2 = 0;
  for (std::size_t i = 0; i < n; ++i) {
    total2 += r2[i];
    if (d[i] > 0) plus2 += r2[i];
  }
  RankTest t;
  t.n = n;
  t.w_plus = plus2 / 2.0;
  t.w_minus = (total2 - plus2) / 2.0;
  const int64_t obs2 = std::min(plus2, total2 - plus2);
  t.statistic = obs2 / 2.0;

  if (n <= kExactLimit) {
    t.exact = true;
    uint64_t hits = 0;
    const uint64_t patterns = uint64_t{1} << n;
    for (uint64_t m = 0; m < patterns; ++m) {
      int64_t w = 0;
      for (std::size_t i = 0; i < n; ++i)
        if (m >> i & 1) w += r2[i];
      if (std::min(w, total2 - w) <= obs2) ++hits;
    }
    t.p = static_cast<double>(hits) / static_cast<double>(patterns);
    return t;
  }
  const double nn = static_cast<double>(n);
  const double mean = nn * (nn + 1.0) / 4.0;
  const double var = nn * (nn + 1.0) * (2.0 * nn + 1.0) / 24.0 - tie_sum(ties) / 48.0;
  t.p = two_sided_normal(std::fabs(t.w_plus - mean), var);
  return t;
}

RankTest mann_whitney_u(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.empty() || y.empty()) throw Error(ErrorCode::InsufficientSamples, "both samples must be nonempty");
  std::vector<double> pooled(x);
  pooled.insert(pooled.end(), y.begin(), y.end());
  std::vector<std::size_t> ties;
  const auto r2 = doubled_ranks(pooled, &ties);
  const std::size_t nx = x.size(), ny = y.size(), n = nx + ny;

  int64_t rx2 = 0;
  for (std::size_t i = 0; i < nx; ++i) rx2 += r2[i];
  const auto nx64 = static_cast<int64_t>(nx), ny64 = static_cast<int64_t>(ny);
  const int64_t ux2 = rx2 - nx64 * (nx64 + 1);  // 2 Ux
  RankTest t;
  t.n = n;
  t.statistic = std::min(ux2, 2 * nx64 * ny64 - ux2) / 2.0;

  if (n <= kExactLimit) {
    t.exact = true;
    const int64_t dev = std::llabs(ux2 - nx64 * ny64);
    uint64_t hits = 0, splits = 0;
    for (uint64_t m = 0; m < (uint64_t{1} << n); ++m) {
      if (static_cast<std::size_t>(__builtin_popcountll(m)) != nx) continue;
      ++splits;
      int64_t s = 0;
      for (std::size_t i = 0; i < n; ++i)
        if (m >> i & 1) s += r2[i];
      if (std::llabs(s - nx64 * (nx64 + 1) - nx64 * ny64) >= dev) ++hits;
    }
    t.p = static_cast<double>(hits) / static_cast<double>(splits);
    return t;
  }
  const double fx = static_cast<double>(nx), fy = static_cast<double>(ny), fn = static_cast<double>(n);
  const double var = fx * fy / 12.0 * ((fn + 1.0) - tie_sum(ties) / (fn * (fn - 1.0)));
  t.p = two_sided_normal(std::fabs(ux2 / 2.0 - fx * fy / 2.0), var);
  return t;
}

BlandAltman bland_altman(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) throw Error(ErrorCode::LengthMismatch, "Bland-Altman inputs differ in length");
  if (a.size() < 2) throw Error(ErrorCode::LengthMismatch, "Bland-Altman needs at least two pairs");
  BlandAltman r;
  const double n = static_cast<double>(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    r.points.emplace_back(0.5 * (a[i] + b[i]), a[i] - b[i]);
    r.mean_diff += a[i] - b[i];
  }
  r.mean_diff /= n;
  double ss = 0.0;
  for (const auto& [m, d] : r.points) ss += (d - r.mean_diff) * (d - r.mean_diff);
  r.sd_diff = std::sqrt(ss / (n - 1.0));
  r.loa_low = r.mean_diff - 1.96 * r.sd_diff;
  r.loa_high = r.mean_diff + 1.96 * r.sd_diff;
  return r;
}

void write_bland_altman_tsv(const BlandAltman& ba, const std::filesystem::path& path) {
  std::ofstream os(path);
  if (!os) throw Error(ErrorCode::IoFailure, "cannot write " + path.string());
  os << std::setprecision(10) << "mean\tdiff\n";
  for (const auto& [m, d] : ba.points) os << m << '\t' << d << '\n';
}

double icv(const LabelVolume& labels, const Vec3& spacing) {
  const auto count = std::count_if(labels.data.begin(), labels.data.end(), [](int32_t v) { return v != 0; });
  return static_cast<double>(count) * spacing[0] * spacing[1] * spacing[2];
}

double icv(const LabelVolume& labels) { return icv(labels, labels.header.spacing); }

double annual_pct_change(double baseline, double followup, double years) {
  if (baseline <= 0.0) throw Error(ErrorCode::ZeroBaseline, "baseline volume must be positive");
  if (!(years > 0.0)) throw Error(ErrorCode::InvalidArgument, "interval must be positive");
  return 100.0 * (followup - baseline) / (baseline * years);
}

RegionMapping parse_region_mapping(const std::string& text) {
  RegionMapping m;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto c = line.find('#'); c != std::string::npos) line.resize(c);
    std::istringstream ls(line);
    std::vector<std::string> tok;
    for (std::string t; ls >> t;) tok.push_back(t);
    if (tok.empty()) continue;
    try {
      if (tok.size() > 2) throw std::invalid_argument("too many fields");
      const int t = std::stoi(tok[0]);
      m.emplace_back(t, tok.size() == 2 ? std::stoi(tok[1]) : t);
    } catch (const std::exception&) {
      throw Error(ErrorCode::SchemaError, "bad region mapping at line " + std::to_string(lineno));
    }
  }
  return m;
}

RegionMapping load_region_mapping(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw Error(ErrorCode::IoFailure, "cannot open " + path.string());
  std::stringstream ss;
  ss << is.rdbuf();
  return parse_region_mapping(ss.str());
}

namespace {

void mean_sd(const std::vector<double>& v, double& mean, double& sd) {
  mean = sd = 0.0;
  if (v.empty()) return;
  mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  if (v.size() < 2) return;
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  sd = std::sqrt(ss / static_cast<double>(v.size() - 1));
}

RegionMapping default_regions(const LabelTree& tree) {
  RegionMapping m;
  for (int n : tree.frontier())
    if (tree.node(n).id != 0) m.emplace_back(tree.node(n).id, tree.node(n).id);
  std::sort(m.begin(), m.end());
  return m;
}

}  // namespace

RegionReport region_report(const LabelVolume& pred, const LabelVolume& truth, const LabelTree& tree,
                           const std::optional<RegionMapping>& mapping) {
  require_same_dims(pred, truth, "region report");
  RegionMapping regions = mapping ? *mapping : default_regions(tree);
  std::sort(regions.begin(), regions.end());

  std::unordered_map<int32_t, std::size_t> pc, tc;
  std::unordered_map<uint64_t, std::size_t> joint;
  auto key = [](int32_t t, int32_t p) { return (static_cast<uint64_t>(static_cast<uint32_t>(t)) << 32) | static_cast<uint32_t>(p); };
  for (std::size_t i = 0; i < pred.data.size(); ++i) {
    ++pc[pred.data[i]];
    ++tc[truth.data[i]];
    ++joint[key(truth.data[i], pred.data[i])];
  }
  auto get = [](const auto& m, auto k) {
    auto it = m.find(k);
    return it == m.end() ? std::size_t{0} : it->second;
  };

  const double voxel = truth.header.voxel_volume();
  RegionReport r;
  std::vector<double> ds, vss;
  for (const auto& [tid, pid] : regions) {
    Overlap o{get(pc, pid), get(tc, tid), get(joint, key(tid, pid))};
    RegionRow row;
    row.id = tid;
    row.pred_id = pid;
    const int idx = tree.index_of(tid);
    row.name = idx >= 0 ? tree.node(idx).name : "label_" + std::to_string(tid);
    row.pred_mm3 = static_cast<double>(o.pred) * voxel;
    row.truth_mm3 = static_cast<double>(o.truth) * voxel;
    if (o.pred + o.truth == 0) {
      r.undefined.push_back(row);
      continue;
    }
    row.dsc = dsc(o);
    row.vs = vs(o);
    ds.push_back(row.dsc);
    vss.push_back(row.vs);
    r.rows.push_back(row);
  }
  mean_sd(ds, r.dsc_mean, r.dsc_sd);
  mean_sd(vss, r.vs_mean, r.vs_sd);
  return r;
}

void write_region_tsv(const RegionReport& r, const std::filesystem::path& path) {
  std::ofstream os(path);
  if (!os) throw Error(ErrorCode::IoFailure, "cannot write " + path.string());
  os << "id\tname\tpred_id\tdsc\tvs\tpred_mm3\ttruth_mm3\n";
  os << std::fixed << std::setprecision(6);
  for (const auto& row : r.rows)
    os << row.id << '\t' << row.name << '\t' << row.pred_id << '\t' << row.dsc << '\t' << row.vs << '\t'
       << row.pred_mm3 << '\t' << row.truth_mm3 << '\n';
  for (const auto& row : r.undefined)
    os << row.id << '\t' << row.name << '\t' << row.pred_id << "\tNA\tNA\t" << row.pred_mm3 << '\t' << row.truth_mm3
       << '\n';
}

std::string region_summary_json(const RegionReport& r) {
  nlohmann::ordered_json j;
  j["regions"] = r.rows.size();
  j["dsc"] = {{"mean", r.dsc_mean}, {"sd", r.dsc_sd}};
  j["vs"] = {{"mean", r.vs_mean}, {"sd", r.vs_sd}};
  auto undefined = nlohmann::ordered_json::array();
  for (const auto& row : r.undefined) undefined.push_back({{"id", row.id}, {"name", row.name}});
  j["undefined"] = undefined;
  return j.dump(2);
}

double mean_frontier_dsc(const LabelVolume& pred, const LabelVolume& truth, const LabelTree& tree) {
  const RegionReport r = region_report(pred, truth, tree);
  if (r.rows.empty()) throw Error(ErrorCode::BothEmpty, "no frontier region present in either volume");
  return r.dsc_mean;
}

}  // namespace fastaid
