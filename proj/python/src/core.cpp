// gatefusenet._core: the pipeline and a few numeric building blocks.
// Structured results cross the boundary as JSON-compatible dicts; volumes as
// float32 numpy arrays shaped (D, H, W) or (C, D, H, W).

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "gfn/pipeline.hpp"

namespace py = pybind11;
using namespace gfn;
using nlohmann::json;

namespace {

py::object to_py(const json& j) {
  return py::module_::import("json").attr("loads")(j.dump());
}

json from_py(const py::object& o) {
  if (o.is_none()) return json::object();
  const std::string text = py::str(py::module_::import("json").attr("dumps")(o));
  return json::parse(text);
}

template <class T>
T parse_section(const py::object& o, T value) {
  try {
    from_json(from_py(o), value);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  return value;
}

py::array_t<float> to_numpy(const Tensor& t) {
  const Shape& s = t.shape();
  std::vector<py::ssize_t> dims;
  if (s.c > 1) dims.push_back(s.c);
  dims.insert(dims.end(), {s.d, s.h, s.w});
  py::array_t<float> out(dims);
  auto src = t.data();
  std::copy(src.begin(), src.end(), out.mutable_data());
  return out;
}

Tensor from_numpy(py::array_t<float, py::array::c_style | py::array::forcecast> a) {
  if (a.ndim() != 3) throw ConfigError("volume must be a 3-D array (D, H, W)");
  Shape s{1, 1, int(a.shape(0)), int(a.shape(1)), int(a.shape(2))};
  return Tensor(s, std::vector<Real>(a.data(), a.data() + a.size()));
}

json curve_json(const Curve& c) {
  json pts = json::array();
  for (const CurvePoint& p : c.points) pts.push_back({p.x, p.y, p.threshold});
  return {{"points", pts}, {"area", c.area}};
}

// --- pipeline ---------------------------------------------------------------

py::object synth(const std::string& out, int subjects, int size, std::uint64_t seed,
                 double noise, const py::object& phantom) {
  PhantomSpec spec = parse_section(phantom, PhantomSpec{});
  spec.size = size;
  scale_noise(spec, noise);
  SynthSummary s;
  {
    py::gil_scoped_release release;
    s = synth_dataset(spec, subjects, seed, out);
  }
  return to_py({{"manifest", s.manifest_path}, {"hc", s.hc}, {"pd", s.pd}});
}

py::object train(const std::string& data, const std::string& out, int fold,
                 const py::object& config) {
  RunConfig cfg = parse_section(config, RunConfig{});
  cfg.validate();
  const Manifest m = read_manifest(data);
  const FoldSelection sel = select_fold(m, fold);
  const std::string dir = out + "/" + sel.name;
  TrainRun run;
  {
    py::gil_scoped_release release;
    run = train_selection(m, sel, cfg, dir);
  }
  const TrainResult& r = run.result;
  json log = json::array();
  for (const EpochLog& e : r.log) {
    log.push_back({{"epoch", e.epoch}, {"lr", e.lr}, {"train_loss", e.train_loss},
                   {"val_auc", e.val_auc}, {"val_f1", e.val_f1}, {"val_acc", e.val_acc}});
  }
  return to_py({{"dir", dir},
                {"best_epoch", r.best_epoch},
                {"best_score", r.best_score},
                {"diverged", r.diverged},
                {"divergence", r.divergence},
                {"log", log}});
}

py::object evaluate_checkpoint(const std::string& data, const std::string& ckpt,
                               const std::string& out, const std::string& split,
                               std::optional<std::string> fusion,
                               std::optional<std::string> anchor, double threshold) {
  EvalRequest req;
  req.split = split;
  if (fusion) req.fusion = parse_fusion(*fusion);
  if (anchor) req.anchor = parse_modality(*anchor);
  req.threshold = threshold;
  EvalReport r;
  {
    py::gil_scoped_release release;
    r = eval_checkpoint(data, ckpt, req, out);
  }
  json j = metrics_json(r);
  j["ids"] = r.ids;
  j["scores"] = r.scores;
  j["labels"] = r.labels;
  return to_py(j);
}

py::object gradcam(const std::string& data, const std::string& ckpt,
                   const std::vector<std::string>& ids, const std::string& out, int stage) {
  std::vector<CamSummary> rows;
  {
    py::gil_scoped_release release;
    rows = gradcam_subjects(data, ckpt, ids, out, stage);
  }
  const std::vector<std::string> names = roi_names(data);
  json arr = json::array();
  for (const CamSummary& c : rows) {
    json frac = json::object();
    for (std::size_t k = 0; k < c.nucleus_fraction.size() && k < names.size(); ++k) {
      frac[names[k]] = c.nucleus_fraction[k];
    }
    arr.push_back({{"id", c.id},
                   {"label", c.label},
                   {"zero", c.zero},
                   {"nucleus_fraction", frac},
                   {"sn_gp_enrichment", c.sn_gp_enrichment}});
  }
  return to_py(arr);
}

// --- building blocks --------------------------------------------------------

double focal(const std::vector<double>& logits, const std::vector<int>& labels, double gamma,
             double alpha) {
  Tape t;
  Tensor z(Shape{int(logits.size()), 1, 1, 1, 1});
  for (std::size_t i = 0; i < logits.size(); ++i) z.data()[i] = Real(logits[i]);
  const Var loss = focal_loss(t.constant(z), labels, FocalParams{gamma, alpha});
  return double(t.value(loss.id).data()[0]);
}

py::object subject(const py::object& phantom, int label, std::uint64_t seed) {
  const PhantomSpec spec = parse_section(phantom, PhantomSpec{});
  spec.validate();
  if (label != 0 && label != 1) throw ConfigError("label must be 0 (HC) or 1 (PD)");
  const SubjectVolumes v = synth_subject(spec, label, seed);
  py::dict d;
  d["qsm"] = to_numpy(v.qsm);
  d["t1w"] = to_numpy(v.t1);
  d["roi"] = to_numpy(v.roi);
  return std::move(d);
}

py::tuple read_volume(const std::string& path) {
  VolumeHeader h;
  const Tensor t = load_volume(path, &h);
  py::dict meta;
  meta["modality"] = h.modality;
  meta["voxel_size"] = py::make_tuple(h.voxel_size[0], h.voxel_size[1], h.voxel_size[2]);
  return py::make_tuple(to_numpy(t), meta);
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "GateFuseNet native core";

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<IoError>(m, "IoError", PyExc_OSError);
  py::register_exception<FormatError>(m, "FormatError", PyExc_OSError);
  py::register_exception<NumericError>(m, "NumericError", PyExc_ArithmeticError);

  m.def("default_config", [] { return to_py(json(RunConfig{})); },
        "Every configuration section with its default values.");

  m.def("synth", &synth, py::arg("out"), py::arg("subjects") = 16, py::arg("size") = 32,
        py::arg("seed") = 0, py::arg("noise") = 1.0, py::arg("phantom") = py::none(),
        "Write a phantom dataset (manifest.csv, dataset.json, subjects/). `noise` scales every "
        "noise and jitter level; `phantom` overrides PhantomSpec fields.");
  m.def("train", &train, py::arg("data"), py::arg("out"), py::arg("fold") = 0,
        py::arg("config") = py::none(),
        "Train one fold (fold < 0: all non-test records) into out/<fold name>/.");
  m.def("evaluate", &evaluate_checkpoint, py::arg("data"), py::arg("ckpt"), py::arg("out"),
        py::arg("split") = "test", py::arg("fusion") = py::none(),
        py::arg("anchor") = py::none(), py::arg("threshold") = 0.5,
        "Score a split with a checkpoint and write the report files.");
  m.def("gradcam", &gradcam, py::arg("data"), py::arg("ckpt"), py::arg("ids"), py::arg("out"),
        py::arg("stage") = -1, "Write Grad-CAM volumes and localization.csv.");

  m.def("focal_loss", &focal, py::arg("logits"), py::arg("labels"), py::arg("gamma") = 2.0,
        py::arg("alpha") = 0.5, "Batch-mean focal loss of raw logits.");
  m.def("cosine_lr", &cosine_lr, py::arg("epoch"), py::arg("epochs") = 30,
        py::arg("base") = 2e-4, py::arg("floor") = 1e-7);
  m.def(
      "roc_curve",
      [](const std::vector<double>& s, const std::vector<int>& y) {
        return to_py(curve_json(roc_curve(s, y)));
      },
      py::arg("scores"), py::arg("labels"), "points are (fpr, tpr, threshold)");
  m.def(
      "pr_curve",
      [](const std::vector<double>& s, const std::vector<int>& y) {
        return to_py(curve_json(pr_curve(s, y)));
      },
      py::arg("scores"), py::arg("labels"), "points are (recall, precision, threshold)");
  m.def(
      "metrics",
      [](const std::vector<double>& s, const std::vector<int>& y, double threshold) {
        std::vector<std::string> ids(s.size());
        return to_py(metrics_json(evaluate(s, y, ids, threshold)));
      },
      py::arg("scores"), py::arg("labels"), py::arg("threshold") = 0.5);

  m.def("synth_subject", &subject, py::arg("phantom") = py::none(), py::arg("label") = 0,
        py::arg("seed") = 0, "One subject as {'qsm', 't1w', 'roi'} arrays.");
  m.def("read_volume", &read_volume, py::arg("path"), "(array, {'modality', 'voxel_size'})");
  m.def(
      "write_volume",
      [](const std::string& path, py::array_t<float, py::array::c_style | py::array::forcecast> a,
         const std::string& modality) { save_volume(path, from_numpy(a), modality); },
      py::arg("path"), py::arg("array"), py::arg("modality"));
}
