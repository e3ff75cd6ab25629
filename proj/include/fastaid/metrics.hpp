#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "fastaid/hierarchy.hpp"
#include "fastaid/volume.hpp"

namespace fastaid {

struct Overlap {
  std::size_t pred = 0;   // |Y|
  std::size_t truth = 0;  // |T|
  std::size_t both = 0;   // |Y n T|
};

Overlap overlap(const LabelVolume& pred, const LabelVolume& truth, int region);
Overlap overlap(const LabelVolume& pred, const LabelVolume& truth, int pred_region, int truth_region);

/// 2|Y n T| / (|Y| + |T|). Throws BothEmpty.
double dsc(const Overlap& o);
double dsc(const LabelVolume& pred, const LabelVolume& truth, int region);
/// 1 - ||Y| - |T|| / (|Y| + |T|). Throws BothEmpty.
double vs(const Overlap& o);
double vs(const LabelVolume& pred, const LabelVolume& truth, int region);

struct RankTest {
  double statistic = 0.0;  // min(W+, W-) or min(Ux, Uy)
  double p = 1.0;          // two-sided
  std::size_t n = 0;       // pairs used (signed-rank) or nx + ny (rank-sum)
  bool exact = false;
  double w_plus = 0.0, w_minus = 0.0;  // signed-rank only
};

/// Zero differences are dropped; ties share average ranks. Exact by
/// enumerating all sign patterns for n <= 12, else normal approximation with
/// tie and continuity corrections. Throws LengthMismatch, AllZeroDifferences,
/// InsufficientSamples (fewer than 5 nonzero differences).
RankTest wilcoxon_signed_rank(const std::vector<double>& x, const std::vector<double>& y);

/// Exact by enumerating every split of the pooled ranks for nx + ny <= 12,
/// else normal approximation with tie and continuity corrections.
RankTest mann_whitney_u(const std::vector<double>& x, const std::vector<double>& y);

struct BlandAltman {
  double mean_diff = 0.0;
  double sd_diff = 0.0;  // sample SD
  double loa_low = 0.0;
  double loa_high = 0.0;
  std::vector<std::pair<double, double>> points;  // (mean of pair, a - b)
};

/// Throws LengthMismatch for unequal lengths or fewer than two pairs.
BlandAltman bland_altman(const std::vector<double>& a, const std::vector<double>& b);
void write_bland_altman_tsv(const BlandAltman& ba, const std::filesystem::path& path);

/// Nonzero-label voxel count times voxel volume, in mm^3.
double icv(const LabelVolume& labels);
double icv(const LabelVolume& labels, const Vec3& spacing);

/// 100 (followup - baseline) / (baseline * years). Throws ZeroBaseline.
double annual_pct_change(double baseline, double followup, double years);

struct RegionRow {
  int id = 0;        // truth label id
  int pred_id = 0;   // predicted label id compared against it
  std::string name;
  double dsc = 0.0;
  double vs = 0.0;
  double pred_mm3 = 0.0;
  double truth_mm3 = 0.0;
};

struct RegionReport {
  std::vector<RegionRow> rows;           // defined regions, by truth id
  std::vector<RegionRow> undefined;      // empty in both volumes
  double dsc_mean = 0.0, dsc_sd = 0.0;   // over rows
  double vs_mean = 0.0, vs_sd = 0.0;
};

/// (truth id, predicted id) pairs; restricts the report to these regions.
using RegionMapping = std::vector<std::pair<int, int>>;

/// Two whitespace-separated ids per line ("truth pred"); a single id maps to itself.
RegionMapping parse_region_mapping(const std::string& text);
RegionMapping load_region_mapping(const std::filesystem::path& path);

/// Without a mapping every non-background frontier node of the tree is a region.
RegionReport region_report(const LabelVolume& pred, const LabelVolume& truth, const LabelTree& tree,
                           const std::optional<RegionMapping>& mapping = std::nullopt);

void write_region_tsv(const RegionReport& r, const std::filesystem::path& path);
std::string region_summary_json(const RegionReport& r);

/// Mean over the non-background frontier classes present in either volume.
double mean_frontier_dsc(const LabelVolume& pred, const LabelVolume& truth, const LabelTree& tree);

}  // namespace fastaid
