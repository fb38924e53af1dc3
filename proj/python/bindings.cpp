#include <pybind11/functional.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "swiden/data.hpp"
#include "swiden/error.hpp"
#include "swiden/gradcheck.hpp"
#include "swiden/harness.hpp"
#include "swiden/layers.hpp"
#include "swiden/optim.hpp"
#include "swiden/rng.hpp"

namespace py = pybind11;
using namespace swiden;

namespace {

py::array_t<double> to_numpy(const Tensor& t) {
  std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
  py::array_t<double> out(shape);
  std::copy(t.raw(), t.raw() + t.size(), out.mutable_data());
  return out;
}

Tensor from_numpy(const py::array_t<double, py::array::c_style | py::array::forcecast>& a) {
  Shape shape(a.shape(), a.shape() + a.ndim());
  return Tensor(std::move(shape), std::vector<double>(a.data(), a.data() + a.size()));
}

RunConfig config_from(const std::map<std::string, std::string>& overrides) {
  RunConfig cfg;
  apply_config(cfg, overrides);
  return cfg;
}

py::dict metrics_dict(const Metrics& m) {
  py::dict d;
  d["arch"] = m.arch;
  d["overall_acc"] = m.overall_acc;
  d["correct"] = m.correct;
  d["total"] = m.total;
  d["photo_acc"] = m.style_acc(kPhotoStyle);
  d["art_acc"] = m.style_acc(kArtStyle);
  d["per_class_acc"] = m.per_class_acc;
  d["loss_curve"] = m.loss_curve;
  d["lr_curve"] = m.lr_curve;
  d["val_curve"] = m.val_curve;
  d["best_epoch"] = m.best_epoch;
  return d;
}

}  // namespace

PYBIND11_MODULE(_swiden, m) {
  m.doc() = "Style-routed CNN micro-framework and experiment harness";

  // Translators are tried newest first, so the base class goes first.
  py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception<ShapeError>(m, "ShapeError", PyExc_ValueError);
  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<InputError>(m, "InputError", PyExc_ValueError);
  py::register_exception<DataError>(m, "DataError", PyExc_IOError);

  py::class_<Rng>(m, "Rng")
      .def(py::init<std::uint64_t>(), py::arg("seed") = 0)
      .def("next", &Rng::next)
      .def("uniform", py::overload_cast<>(&Rng::uniform))
      .def("normal", py::overload_cast<>(&Rng::normal))
      .def("index", &Rng::index);

  m.def("derive_seed", &derive_seed, py::arg("master"), py::arg("stream"));

  py::class_<PlateauScheduler>(m, "PlateauScheduler")
      .def(py::init([](double base_lr, std::size_t patience, double min_delta, double factor, std::size_t max_reductions) {
             return PlateauScheduler(base_lr, {patience, min_delta, factor, max_reductions});
           }),
           py::arg("base_lr"), py::arg("patience") = 5, py::arg("min_delta") = 1e-3, py::arg("factor") = 0.1,
           py::arg("max_reductions") = 2)
      .def("update", &PlateauScheduler::update)
      .def_property_readonly("current_lr", &PlateauScheduler::current_lr);

  m.def(
      "grl_backward", [](const py::array_t<double>& g, double lambda) { return to_numpy(grl_backward(from_numpy(g), lambda)); },
      py::arg("grad"), py::arg("lam"));

  m.def(
      "five_crop_offsets",
      [](std::size_t h, std::size_t w, std::size_t crop) {
        std::vector<std::pair<std::size_t, std::size_t>> out;
        for (const auto& o : five_crop_offsets(h, w, crop)) out.emplace_back(o.y, o.x);
        return out;
      },
      py::arg("height"), py::arg("width"), py::arg("crop"));

  m.def(
      "pool_five_crop_predictions",
      [](const py::array_t<double>& probs) { return pool_five_crop_predictions(from_numpy(probs)); },
      py::arg("probs"));

  m.def(
      "gen_synthetic",
      [](std::uint64_t seed, std::size_t classes, std::size_t per_class, std::size_t resolution, double rotation_deg) {
        SyntheticConfig cfg{seed, classes, per_class, resolution, rotation_deg * 3.141592653589793 / 180.0};
        const Dataset ds = gen_synthetic(cfg);
        const std::size_t n = ds.size();
        py::array_t<double> images({n, std::size_t{3}, resolution, resolution});
        py::array_t<std::int64_t> labels(n), styles(n);
        auto lab = labels.mutable_unchecked<1>();
        auto sty = styles.mutable_unchecked<1>();
        double* dst = images.mutable_data();
        const std::size_t per = 3 * resolution * resolution;
        for (std::size_t i = 0; i < n; ++i) {
          std::copy(ds.images[i].pixels.raw(), ds.images[i].pixels.raw() + per, dst + i * per);
          lab(i) = static_cast<std::int64_t>(ds.images[i].class_id);
          sty(i) = static_cast<std::int64_t>(ds.images[i].style_id);
        }
        return py::make_tuple(images, labels, styles, ds.class_names);
      },
      py::arg("seed") = 42, py::arg("classes") = 10, py::arg("per_class") = 50, py::arg("resolution") = 72,
      py::arg("rotation_deg") = 10.0,
      "Returns (images [N,3,R,R], class labels, style labels, class names).");

  m.def(
      "gradcheck",
      [](const std::string& layer, std::uint64_t seed) {
        py::list out;
        for (const auto& r : run_gradcheck(layer, seed)) {
          py::dict d;
          d["layer"] = r.layer;
          d["configs"] = r.configs;
          d["max_rel_error"] = r.max_rel_error;
          d["passed"] = r.passed;
          out.append(d);
        }
        return out;
      },
      py::arg("layer") = "", py::arg("seed") = 1);

  m.def(
      "train",
      [](const std::map<std::string, std::string>& config) {
        RunConfig cfg = config_from(config);
        RunArtifacts art;
        {
          py::gil_scoped_release release;
          art = cfg.arch == Architecture::Switch ? cmd_train_switch(cfg) : cmd_train(cfg);
        }
        return metrics_dict(art.metrics);
      },
      py::arg("config"), "Train one network; `config` holds key=value overrides as strings.");

  m.def(
      "run_experiment",
      [](const std::map<std::string, std::string>& config) {
        RunConfig cfg = config_from(config);
        ExperimentResult res;
        {
          py::gil_scoped_release release;
          res = cmd_experiment(cfg);
        }
        py::list rows;
        for (const auto& r : res.mean_rows) rows.append(py::make_tuple(r.label, r.overall, r.art, r.photo));
        py::dict d;
        d["rows"] = rows;
        d["report"] = res.report;
        d["seconds"] = res.seconds;
        return d;
      },
      py::arg("config"));
}
