#include <CLI11.hpp>

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <random>
#include <sstream>

#include <nlohmann/json.hpp>

#include "fastaid/augment.hpp"
#include "fastaid/backbone.hpp"
#include "fastaid/inference.hpp"
#include "fastaid/metrics.hpp"
#include "fastaid/nifti_io.hpp"
#include "fastaid/parallel.hpp"
#include "fastaid/standardize.hpp"
#include "fastaid/toy_train.hpp"

#ifndef FASTAID_VERSION
#define FASTAID_VERSION "dev"
#endif

namespace fs = std::filesystem;
using namespace fastaid;
using json = nlohmann::ordered_json;

namespace {

struct Globals {
  std::optional<uint64_t> seed;
  int threads = default_threads();
  std::string command_line;
};

uint64_t resolve_seed(const Globals& g, json& prov) {
  if (g.seed) {
    prov["seed"] = *g.seed;
    prov["seed_source"] = "flag";
    return *g.seed;
  }
  std::random_device rd;
  const uint64_t s = (static_cast<uint64_t>(rd()) << 32) ^ rd();
  prov["seed"] = s;
  prov["seed_source"] = "entropy";
  return s;
}

json provenance(const Globals& g, const std::string& sub) {
  json j;
  j["tool"] = "fastaid";
  j["version"] = FASTAID_VERSION;
  j["subcommand"] = sub;
  j["command_line"] = g.command_line;
  j["threads"] = g.threads;
  j["inputs"] = json::object();
  j["parameters"] = json::object();
  j["outputs"] = json::array();
  return j;
}

void write_provenance(const json& prov, const fs::path& out) {
  fs::path p = out;
  p += ".prov.json";
  std::ofstream os(p);
  if (!os) throw Error(ErrorCode::IoFailure, "cannot write " + p.string());
  os << prov.dump(2) << '\n';
}

std::vector<double> read_numbers(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw Error(ErrorCode::IoFailure, "cannot open " + p.string());
  std::vector<double> v;
  std::string tok;
  while (in >> tok) {
    try {
      v.push_back(std::stod(tok));
    } catch (const std::exception&) {
      throw Error(ErrorCode::SchemaError, p.string() + ": not a number: " + tok);
    }
  }
  return v;
}

std::string read_text(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw Error(ErrorCode::IoFailure, "cannot open " + p.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// "image labels" per line.
std::vector<Sample> read_sample_list(const fs::path& p) {
  std::istringstream in(read_text(p));
  std::vector<Sample> out;
  std::string line;
  while (std::getline(in, line)) {
    std::istringstream ls(line);
    std::string img, lab;
    if (!(ls >> img) || img[0] == '#') continue;
    if (!(ls >> lab)) throw Error(ErrorCode::SchemaError, p.string() + ": expected 'image labels' per line");
    out.push_back({read_volume(img), read_labels(lab)});
  }
  return out;
}

LabelTree tree_or_phantom(const std::string& path) { return path.empty() ? phantom_tree() : load_tree(path); }

}  // namespace

int main(int argc, char** argv) {
  Globals g;
  for (int i = 0; i < argc; ++i) g.command_line += (i ? " " : "") + std::string(argv[i]);

  CLI::App app{"fastaid: brain MRI standardization, augmentation, hierarchical segmentation and statistics"};
  app.set_version_flag("--version", FASTAID_VERSION);
  app.require_subcommand(1);
  app.failure_message(CLI::FailureMessage::help);
  uint64_t seed_value = 0;
  app.add_option("--seed", seed_value, "seed for every random choice")->each([&](const std::string&) {
    g.seed = seed_value;
  });
  app.add_option("--threads", g.threads, "worker threads (default: FASTAID_THREADS or 1)")->check(CLI::PositiveNumber);

  // standardize
  auto* st = app.add_subcommand("standardize", "reorient to RAS, resample to isotropic, normalize, pad/crop to a cube");
  std::string st_in, st_out;
  bool st_labels = false;
  StandardizeConfig st_cfg;
  st->add_option("--in", st_in)->required()->check(CLI::ExistingFile);
  st->add_option("--out", st_out)->required();
  st->add_option("--side", st_cfg.side, "cube side in voxels")->check(CLI::PositiveNumber);
  st->add_option("--spacing", st_cfg.target_spacing_mm, "target spacing in mm")->check(CLI::PositiveNumber);
  st->add_flag("--labels", st_labels, "input is a label volume (nearest neighbour, no normalization)");

  // augment
  auto* au = app.add_subcommand("augment", "apply one randomized augmentation pass");
  std::string au_in, au_out, au_labels, au_labels_out, au_config;
  au->add_option("--in", au_in)->required()->check(CLI::ExistingFile);
  au->add_option("--out", au_out)->required();
  au->add_option("--labels", au_labels, "label volume transformed alongside")->check(CLI::ExistingFile);
  au->add_option("--labels-out", au_labels_out);
  au->add_option("--config", au_config, "augmentation JSON config")->check(CLI::ExistingFile);

  // train
  auto* tr = app.add_subcommand("train", "train the toy backbone with the fusion loss");
  std::string tr_out, tr_tree, tr_config, tr_train_list, tr_val_list, tr_history;
  int tr_phantoms = 20, tr_val = 5, tr_side = 32;
  tr->add_option("--out", tr_out, "model file")->required();
  tr->add_option("--tree", tr_tree, "label tree (default: built-in phantom tree)")->check(CLI::ExistingFile);
  tr->add_option("--config", tr_config, "training JSON config")->check(CLI::ExistingFile);
  tr->add_option("--train-list", tr_train_list, "file of 'image labels' lines")->check(CLI::ExistingFile);
  tr->add_option("--val-list", tr_val_list, "file of 'image labels' lines")->check(CLI::ExistingFile);
  tr->add_option("--phantoms", tr_phantoms, "synthetic training volumes when no list is given")->check(CLI::PositiveNumber);
  tr->add_option("--val-phantoms", tr_val, "synthetic validation volumes")->check(CLI::PositiveNumber);
  tr->add_option("--side", tr_side, "phantom side")->check(CLI::Range(16, 512));
  tr->add_option("--history", tr_history, "write loss and validation history as JSON");

  // segment
  auto* sg = app.add_subcommand("segment", "predict a label volume");
  std::string sg_in, sg_model, sg_tree, sg_out, sg_mode = "fusion", sg_decision = "global";
  int sg_chunk = 0;
  sg->add_option("--in", sg_in)->required()->check(CLI::ExistingFile);
  sg->add_option("--model", sg_model)->required()->check(CLI::ExistingFile);
  sg->add_option("--tree", sg_tree, "label tree (default: built-in phantom tree)")->check(CLI::ExistingFile);
  sg->add_option("--out", sg_out)->required();
  sg->add_option("--mode", sg_mode)->check(CLI::IsMember({"fusion", "vote"}));
  sg->add_option("--decision", sg_decision)->check(CLI::IsMember({"global", "greedy"}));
  sg->add_option("--chunk", sg_chunk, "z-slab thickness for fusion, 0 = whole volume")->check(CLI::NonNegativeNumber);

  // evaluate
  auto* ev = app.add_subcommand("evaluate", "per-region DSC and VS");
  std::string ev_pred, ev_truth, ev_tree, ev_mapping, ev_out;
  ev->add_option("--pred", ev_pred)->required()->check(CLI::ExistingFile);
  ev->add_option("--truth", ev_truth)->required()->check(CLI::ExistingFile);
  ev->add_option("--tree", ev_tree)->check(CLI::ExistingFile);
  ev->add_option("--mapping", ev_mapping, "'truth pred' id pairs restricting the regions")->check(CLI::ExistingFile);
  ev->add_option("--out", ev_out, "TSV report")->required();

  // icv
  auto* ic = app.add_subcommand("icv", "intracranial volume of label files (nonzero voxels, mm^3)");
  std::vector<std::string> ic_in;
  std::string ic_out;
  double ic_years = 0.0;
  ic->add_option("--in", ic_in, "label volumes")->required()->check(CLI::ExistingFile);
  ic->add_option("--out", ic_out, "TSV output");
  ic->add_option("--years", ic_years, "with exactly two inputs, report the annual percent change over this interval");

  // stats
  auto* sx = app.add_subcommand("stats", "paired and unpaired tests on whitespace-separated numbers");
  std::string sx_test, sx_a, sx_b, sx_out;
  sx->add_option("test", sx_test)->required()->check(CLI::IsMember({"wilcoxon", "mann-whitney", "bland-altman"}));
  sx->add_option("--a", sx_a)->required()->check(CLI::ExistingFile);
  sx->add_option("--b", sx_b)->required()->check(CLI::ExistingFile);
  sx->add_option("--out", sx_out, "JSON result (Bland-Altman also writes <out>.tsv points)");

  // phantom
  auto* ph = app.add_subcommand("phantom", "write a synthetic head phantom and its labels");
  std::string ph_out, ph_labels, ph_tree;
  int ph_side = 32;
  ph->add_option("--out", ph_out)->required();
  ph->add_option("--labels-out", ph_labels)->required();
  ph->add_option("--side", ph_side)->check(CLI::Range(16, 512));
  ph->add_option("--tree", ph_tree)->check(CLI::ExistingFile);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (st->parsed()) {
      json prov = provenance(g, "standardize");
      prov["inputs"]["in"] = st_in;
      prov["parameters"] = {{"side", st_cfg.side}, {"spacing_mm", st_cfg.target_spacing_mm}, {"labels", st_labels}};
      if (st_labels)
        write_nifti(standardize(reorient_to_ras(read_labels(st_in)), st_cfg), st_out);
      else
        write_nifti(standardize(reorient_to_ras(read_volume(st_in)), st_cfg), st_out);
      prov["outputs"].push_back(st_out);
      write_provenance(prov, st_out);
    } else if (au->parsed()) {
      json prov = provenance(g, "augment");
      AugmentConfig cfg = au_config.empty() ? AugmentConfig{} : load_augment_config(au_config);
      if (!au_labels.empty() && au_labels_out.empty()) throw CLI::RequiredError("--labels-out");
      Rng rng(resolve_seed(g, prov) ^ cfg.seed);
      const Volume v = read_volume(au_in);
      if (au_config.empty()) cfg = cfg.scaled_to(v.nx());
      std::optional<LabelVolume> labels;
      if (!au_labels.empty()) labels = read_labels(au_labels);
      const Augmented a = random_augment(v, labels ? &*labels : nullptr, cfg, rng);
      write_nifti(a.volume, au_out);
      prov["inputs"] = {{"in", au_in}, {"labels", au_labels}, {"config", au_config}};
      prov["parameters"] = json::parse(to_json(cfg));
      prov["outputs"].push_back(au_out);
      if (a.labels) {
        write_nifti(*a.labels, au_labels_out);
        prov["outputs"].push_back(au_labels_out);
      }
      write_provenance(prov, au_out);
    } else if (tr->parsed()) {
      json prov = provenance(g, "train");
      TrainConfig cfg = tr_config.empty() ? TrainConfig{} : load_train_config(tr_config);
      cfg.seed = resolve_seed(g, prov);
      cfg.threads = g.threads;
      const LabelTree tree = tree_or_phantom(tr_tree);
      std::vector<Sample> train_set, val_set;
      if (!tr_train_list.empty()) {
        if (tr_val_list.empty()) throw CLI::RequiredError("--val-list");
        train_set = read_sample_list(tr_train_list);
        val_set = read_sample_list(tr_val_list);
      } else {
        for (int i = 0; i < tr_phantoms; ++i) train_set.push_back(generate_phantom(cfg.seed + 1000 + i, tr_side, tree));
        for (int i = 0; i < tr_val; ++i) val_set.push_back(generate_phantom(cfg.seed + 9000 + i, tr_side, tree));
      }
      const TrainState state = train(train_set, val_set, tree, cfg);
      save_model(state.best, tr_out);
      prov["inputs"] = {{"tree", tr_tree.empty() ? "builtin:phantom" : tr_tree},
                        {"train_list", tr_train_list},
                        {"val_list", tr_val_list}};
      prov["parameters"] = json::parse(to_json(cfg));
      prov["result"] = {{"iterations", state.iteration},
                        {"best_iteration", state.best_iter},
                        {"best_validation", state.best_score},
                        {"stopped_early", state.stopped_early}};
      prov["outputs"].push_back(tr_out);
      if (!tr_history.empty()) {
        json h;
        h["loss"] = state.loss_history;
        h["validation"] = json::array();
        for (const auto& [it, s] : state.val_history) h["validation"].push_back({it, s});
        std::ofstream(tr_history) << h.dump() << '\n';
        prov["outputs"].push_back(tr_history);
      }
      write_provenance(prov, tr_out);
      std::cout << "best validation DSC " << state.best_score << " at iteration " << state.best_iter << '\n';
    } else if (sg->parsed()) {
      json prov = provenance(g, "segment");
      const LabelTree tree = tree_or_phantom(sg_tree);
      SegmentOptions o;
      o.mode = sg_mode == "vote" ? CombineMode::Vote : CombineMode::Fusion;
      o.decision = sg_decision == "greedy" ? LabelDecision::GreedyDescent : LabelDecision::GlobalArgmax;
      o.chunk = sg_chunk;
      o.threads = g.threads;
      write_nifti(segment_volume(read_volume(sg_in), load_model(sg_model), tree, o), sg_out);
      prov["inputs"] = {{"in", sg_in}, {"model", sg_model}, {"tree", sg_tree.empty() ? "builtin:phantom" : sg_tree}};
      prov["parameters"] = {{"mode", sg_mode}, {"decision", sg_decision}, {"chunk", sg_chunk}};
      prov["outputs"].push_back(sg_out);
      write_provenance(prov, sg_out);
    } else if (ev->parsed()) {
      json prov = provenance(g, "evaluate");
      const LabelTree tree = tree_or_phantom(ev_tree);
      std::optional<RegionMapping> mapping;
      if (!ev_mapping.empty()) mapping = load_region_mapping(ev_mapping);
      const RegionReport r = region_report(read_labels(ev_pred), read_labels(ev_truth), tree, mapping);
      write_region_tsv(r, ev_out);
      std::cout << region_summary_json(r) << '\n';
      prov["inputs"] = {{"pred", ev_pred}, {"truth", ev_truth}, {"tree", ev_tree}, {"mapping", ev_mapping}};
      prov["result"] = json::parse(region_summary_json(r));
      prov["outputs"].push_back(ev_out);
      write_provenance(prov, ev_out);
    } else if (ic->parsed()) {
      std::ostringstream os;
      os << std::setprecision(10) << "file\ticv_mm3\n";
      std::vector<double> values;
      for (const auto& p : ic_in) {
        values.push_back(icv(read_labels(p)));
        os << p << '\t' << values.back() << '\n';
      }
      if (ic_years != 0.0) {
        if (values.size() != 2) throw CLI::ValidationError("--years", "needs exactly two --in volumes");
        os << "annual_pct_change\t" << annual_pct_change(values[0], values[1], ic_years) << '\n';
      }
      std::cout << os.str();
      if (!ic_out.empty()) {
        std::ofstream(ic_out) << os.str();
        json prov = provenance(g, "icv");
        prov["inputs"]["in"] = ic_in;
        prov["parameters"]["years"] = ic_years;
        prov["outputs"].push_back(ic_out);
        write_provenance(prov, ic_out);
      }
    } else if (sx->parsed()) {
      const auto a = read_numbers(sx_a), b = read_numbers(sx_b);
      json res;
      res["test"] = sx_test;
      if (sx_test == "bland-altman") {
        const BlandAltman ba = bland_altman(a, b);
        res["mean_diff"] = ba.mean_diff;
        res["sd_diff"] = ba.sd_diff;
        res["loa"] = {ba.loa_low, ba.loa_high};
        if (!sx_out.empty()) write_bland_altman_tsv(ba, sx_out + ".tsv");
      } else {
        const RankTest t = sx_test == "wilcoxon" ? wilcoxon_signed_rank(a, b) : mann_whitney_u(a, b);
        res["statistic"] = t.statistic;
        res["p"] = t.p;
        res["n"] = t.n;
        res["exact"] = t.exact;
        if (sx_test == "wilcoxon") res["w_plus"] = t.w_plus, res["w_minus"] = t.w_minus;
      }
      std::cout << res.dump(2) << '\n';
      if (!sx_out.empty()) {
        std::ofstream(sx_out) << res.dump(2) << '\n';
        json prov = provenance(g, "stats");
        prov["inputs"] = {{"a", sx_a}, {"b", sx_b}};
        prov["parameters"]["test"] = sx_test;
        prov["outputs"].push_back(sx_out);
        write_provenance(prov, sx_out);
      }
    } else if (ph->parsed()) {
      json prov = provenance(g, "phantom");
      const uint64_t seed = resolve_seed(g, prov);
      const Sample s = generate_phantom(seed, ph_side, tree_or_phantom(ph_tree));
      write_nifti(s.image, ph_out);
      write_nifti(s.labels, ph_labels);
      prov["parameters"] = {{"side", ph_side}};
      prov["inputs"]["tree"] = ph_tree.empty() ? "builtin:phantom" : ph_tree;
      prov["outputs"] = {ph_out, ph_labels};
      write_provenance(prov, ph_out);
    }
  } catch (const CLI::Error& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return 2;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
