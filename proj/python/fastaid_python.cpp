#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "fastaid/augment.hpp"
#include "fastaid/inference.hpp"
#include "fastaid/metrics.hpp"
#include "fastaid/nifti_io.hpp"
#include "fastaid/standardize.hpp"
#include "fastaid/toy_train.hpp"

namespace py = pybind11;
using namespace fastaid;

namespace {

// Volumes cross the boundary as (nx, ny, nz) arrays with x varying fastest.
template <class T>
py::array_t<T> to_numpy(const Grid<T>& g) {
  py::array_t<T, py::array::f_style> out({g.nx(), g.ny(), g.nz()});
  std::copy(g.data.begin(), g.data.end(), out.mutable_data());
  return out;
}

template <class T>
Grid<T> from_numpy(const py::array_t<T, py::array::f_style | py::array::forcecast>& a, const Vec3& spacing,
                   DataType type) {
  if (a.ndim() != 3) throw Error(ErrorCode::ShapeMismatch, "expected a 3D array");
  Grid<T> g(make_header({static_cast<int>(a.shape(0)), static_cast<int>(a.shape(1)), static_cast<int>(a.shape(2))},
                        spacing, type));
  std::copy(a.data(), a.data() + g.data.size(), g.data.begin());
  return g;
}

template <class T>
void bind_grid(py::module_& m, const char* name, DataType default_type) {
  py::class_<Grid<T>>(m, name)
      .def(py::init([default_type](const py::array_t<T, py::array::f_style | py::array::forcecast>& a,
                                   const Vec3& spacing) { return from_numpy<T>(a, spacing, default_type); }),
           py::arg("array"), py::arg("spacing") = Vec3{1.0, 1.0, 1.0})
      .def_property_readonly("shape", [](const Grid<T>& g) { return g.header.dims; })
      .def_property_readonly("spacing", [](const Grid<T>& g) { return g.header.spacing; })
      .def_property_readonly("affine", [](const Grid<T>& g) { return g.header.affine; })
      .def("numpy", &to_numpy<T>)
      .def("__repr__", [name](const Grid<T>& g) {
        return std::string("<fastaid.") + name + " " + std::to_string(g.nx()) + "x" + std::to_string(g.ny()) + "x" +
               std::to_string(g.nz()) + ">";
      });
}

std::vector<double> span_of(const py::array_t<double, py::array::c_style | py::array::forcecast>& a) {
  return {a.data(), a.data() + a.size()};
}

}  // namespace

PYBIND11_MODULE(fastaid, m) {
  m.doc() = "Hierarchical multi-plane brain segmentation toolkit";
  m.attr("__version__") = FASTAID_VERSION;
  py::register_exception<Error>(m, "Error", PyExc_RuntimeError);

  bind_grid<double>(m, "Volume", DataType::Float32);
  bind_grid<int32_t>(m, "LabelVolume", DataType::Int32);

  // nifti_io
  m.def("read_nifti", [](const std::filesystem::path& p) -> std::variant<Volume, LabelVolume> { return read_nifti(p); },
        py::arg("path"), "Volume for float data, LabelVolume for integer data.");
  m.def("write_nifti", py::overload_cast<const Volume&, const std::filesystem::path&>(&write_nifti));
  m.def("write_nifti", py::overload_cast<const LabelVolume&, const std::filesystem::path&>(&write_nifti));
  m.def("reorient_to_ras", py::overload_cast<const Volume&>(&reorient_to_ras));
  m.def("reorient_to_ras", py::overload_cast<const LabelVolume&>(&reorient_to_ras));

  // standardize
  m.def("standardize",
        [](const Volume& v, int side, double spacing) { return standardize(v, StandardizeConfig{side, spacing}); },
        py::arg("volume"), py::arg("side") = 256, py::arg("spacing") = 1.0);
  m.def("standardize",
        [](const LabelVolume& v, int side, double spacing) { return standardize(v, StandardizeConfig{side, spacing}); },
        py::arg("labels"), py::arg("side") = 256, py::arg("spacing") = 1.0);
  m.def("normalize_intensity", &normalize_intensity);

  // augment
  m.def("rotate3d",
        [](const Volume& v, const Vec3& angles, const std::optional<LabelVolume>& labels) {
          Augmented a = rotate3d(v, labels ? &*labels : nullptr, angles);
          return std::make_pair(a.volume, a.labels);
        },
        py::arg("volume"), py::arg("angles_deg"), py::arg("labels") = std::nullopt);
  m.def("gibbs_ringing", &gibbs_ringing, py::arg("volume"), py::arg("cutoff"));
  m.def("ghosting", &ghosting, py::arg("volume"), py::arg("period"), py::arg("factor"),
        py::arg("axes") = std::array<bool, 3>{true, true, true});
  m.def("bias_field", &bias_field, py::arg("volume"), py::arg("center"), py::arg("radius"));
  m.def("add_gaussian_noise",
        [](const Volume& v, double variance, uint64_t seed) {
          Rng rng(seed);
          return add_gaussian_noise(v, variance, rng);
        },
        py::arg("volume"), py::arg("variance"), py::arg("seed"));
  m.def("random_augment",
        [](const Volume& v, const std::optional<LabelVolume>& labels, const std::string& config_json, uint64_t seed) {
          const AugmentConfig cfg = config_json.empty() ? AugmentConfig{}.scaled_to(v.nx()) : parse_augment_config(config_json);
          Rng rng(seed);
          Augmented a = random_augment(v, labels ? &*labels : nullptr, cfg, rng);
          return std::make_pair(a.volume, a.labels);
        },
        py::arg("volume"), py::arg("labels") = std::nullopt, py::arg("config_json") = "", py::arg("seed") = 0);

  // hierarchy
  py::class_<LabelTree>(m, "LabelTree")
      .def_static("parse", &parse_tree)
      .def_static("load", [](const std::filesystem::path& p) { return load_tree(p); })
      .def("__len__", &LabelTree::size)
      .def_property_readonly("depth", &LabelTree::depth)
      .def_property_readonly("ids", [](const LabelTree& t) {
        std::vector<int> ids;
        for (const auto& n : t.nodes()) ids.push_back(n.id);
        return ids;
      })
      .def_property_readonly("frontier_ids", [](const LabelTree& t) {
        std::vector<int> ids;
        for (int f : t.frontier()) ids.push_back(t.node(f).id);
        return ids;
      })
      .def("name", [](const LabelTree& t, int id) { return t.node(t.index_of(id)).name; })
      .def("class_probabilities",
           [](const LabelTree& t, const py::array_t<double, py::array::c_style | py::array::forcecast>& s) {
             const std::vector<double> scores = span_of(s);
             if (scores.size() != t.size()) throw Error(ErrorCode::ShapeMismatch, "one score per tree node expected");
             std::vector<double> lc(t.size()), lp(t.size());
             sibling_log_softmax(scores, t, lc);
             class_log_probs(lc, t, lp);
             for (double& x : lp) x = std::exp(x);
             return lp;
           },
           py::arg("scores"), "Marginal probability of every node, in node order.")
      .def("ce_loss",
           [](const LabelTree& t, const py::array_t<double, py::array::c_style | py::array::forcecast>& s, int label) {
             const std::vector<double> scores = span_of(s);
             if (scores.size() != t.size()) throw Error(ErrorCode::ShapeMismatch, "one score per tree node expected");
             return hier_ce_loss(scores, hard_target(t, t.index_of(label)), t);
           },
           py::arg("scores"), py::arg("label"));

  // metrics
  m.def("dsc", py::overload_cast<const LabelVolume&, const LabelVolume&, int>(&dsc), py::arg("pred"),
        py::arg("truth"), py::arg("region"));
  m.def("vs", py::overload_cast<const LabelVolume&, const LabelVolume&, int>(&vs), py::arg("pred"),
        py::arg("truth"), py::arg("region"));
  m.def("icv", py::overload_cast<const LabelVolume&>(&icv));
  m.def("annual_pct_change", &annual_pct_change, py::arg("baseline"), py::arg("followup"), py::arg("years"));
  py::class_<RankTest>(m, "RankTest")
      .def_readonly("statistic", &RankTest::statistic)
      .def_readonly("p", &RankTest::p)
      .def_readonly("n", &RankTest::n)
      .def_readonly("exact", &RankTest::exact);
  m.def("wilcoxon_signed_rank", &wilcoxon_signed_rank, py::arg("x"), py::arg("y"));
  m.def("mann_whitney_u", &mann_whitney_u, py::arg("x"), py::arg("y"));
  py::class_<BlandAltman>(m, "BlandAltman")
      .def_readonly("mean_diff", &BlandAltman::mean_diff)
      .def_readonly("sd_diff", &BlandAltman::sd_diff)
      .def_readonly("loa_low", &BlandAltman::loa_low)
      .def_readonly("loa_high", &BlandAltman::loa_high)
      .def_readonly("points", &BlandAltman::points);
  m.def("bland_altman", &bland_altman, py::arg("a"), py::arg("b"));

  // training and inference
  py::class_<Model>(m, "Model")
      .def_static("load", [](const std::filesystem::path& p) { return load_model(p); })
      .def("save", [](const Model& mod, const std::filesystem::path& p) { save_model(mod, p); })
      .def_property_readonly("plane_weights", [](const Model& mod) { return mod.planes.weights(); })
      .def_property_readonly("parameter_count", [](const Model& mod) { return mod.backbone.params().size(); });
  m.def("phantom_tree", &phantom_tree);
  m.def("generate_phantom",
        [](uint64_t seed, int side) {
          Sample s = generate_phantom(seed, side, phantom_tree());
          return std::make_pair(s.image, s.labels);
        },
        py::arg("seed"), py::arg("side") = 32);
  m.def("train",
        [](const std::vector<std::pair<Volume, LabelVolume>>& train_set,
           const std::vector<std::pair<Volume, LabelVolume>>& val_set, const LabelTree& tree,
           const std::string& config_json) {
          auto samples = [](const std::vector<std::pair<Volume, LabelVolume>>& in) {
            std::vector<Sample> out;
            for (const auto& [v, l] : in) out.push_back({v, l});
            return out;
          };
          const TrainConfig cfg = config_json.empty() ? TrainConfig{} : parse_train_config(config_json);
          const auto tr = samples(train_set), va = samples(val_set);
          py::gil_scoped_release release;
          return train(tr, va, tree, cfg).best;
        },
        py::arg("train_set"), py::arg("val_set"), py::arg("tree"), py::arg("config_json") = "",
        "Returns the best-validation model.");
  m.def("segment",
        [](const Volume& v, const Model& model, const LabelTree& tree, const std::string& mode,
           const std::string& decision, int threads) {
          SegmentOptions o;
          if (mode == "vote") o.mode = CombineMode::Vote;
          else if (mode != "fusion") throw Error(ErrorCode::InvalidArgument, "mode must be fusion or vote");
          if (decision == "greedy") o.decision = LabelDecision::GreedyDescent;
          else if (decision != "global") throw Error(ErrorCode::InvalidArgument, "decision must be global or greedy");
          o.threads = threads;
          py::gil_scoped_release release;
          return segment_volume(v, model, tree, o);
        },
        py::arg("volume"), py::arg("model"), py::arg("tree"), py::arg("mode") = "fusion",
        py::arg("decision") = "global", py::arg("threads") = 1);
}
