#include <pybind11/eigen.h>
#include <pybind11/functional.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "tomofocus/commands.hpp"
#include "tomofocus/errors.hpp"
#include "tomofocus/parallel.hpp"

namespace py = pybind11;
using namespace tomofocus;

namespace {

py::array_t<double> image(const SliceImage& s) {
  py::array_t<double> a({s.rows, s.cols});
  std::copy(s.data.begin(), s.data.end(), a.mutable_data());
  return a;
}

py::list slices_to_list(const SliceTriplets& s) {
  py::list out;
  for (const auto& im : s.slices) out.append(image(im));
  return out;
}

SliceTriplets slices_from_list(const py::list& l, const SliceSet& set) {
  SliceTriplets s = SliceTriplets::zeros(set);
  if (l.size() != 9) throw ShapeError("expected nine slices");
  for (int k = 0; k < 9; ++k) {
    auto a = l[k].cast<py::array_t<double, py::array::c_style | py::array::forcecast>>();
    if (a.ndim() != 2 || a.shape(0) != s.slices[k].rows || a.shape(1) != s.slices[k].cols)
      throw ShapeError("slice " + std::to_string(k) + " has the wrong shape");
    std::copy(a.data(), a.data() + a.size(), s.slices[k].data.begin());
  }
  return s;
}

MotionCurves curves_from_array(const Eigen::MatrixXd& c, std::size_t n) {
  if (c.rows() != 6 || std::size_t(c.cols()) != n) throw ShapeError("curves must have shape (6, n_views)");
  return {c};
}

// Slices of the phantom scanned along `traj`, reconstructed with the motion curves applied.
SliceTriplets scan(const Phantom& ph, const Trajectory& traj, const Eigen::MatrixXd& curves, double scale) {
  const FdkReconstructor fdk(traj, render_projections(ph, traj));
  const EffectiveTrajectory eff(traj, annihilating_motion(curves_from_array(curves, traj.size())));
  return fdk.reconstruct(make_slice_set({scale}), eff);
}

py::object to_py(const json& j) { return py::module_::import("json").attr("loads")(j.dump()); }

}  // namespace

PYBIND11_MODULE(tomofocus, m) {
  m.doc() = "Cone-beam CT rigid motion simulation and autofocus compensation";

  // translators run last-registered first, so the base class goes first
  auto& base = py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception<ConfigError>(m, "ConfigError", base.ptr());
  py::register_exception<IoError>(m, "IoError", base.ptr());

  m.def("set_thread_count", &set_thread_count, py::arg("n"));
  m.def("thread_count", &thread_count);

  py::class_<Intrinsics>(m, "Intrinsics")
      .def(py::init<>())
      .def_readwrite("sid", &Intrinsics::sid)
      .def_readwrite("sdd", &Intrinsics::sdd)
      .def_readwrite("nu", &Intrinsics::nu)
      .def_readwrite("nv", &Intrinsics::nv)
      .def_readwrite("du", &Intrinsics::du)
      .def_readwrite("dv", &Intrinsics::dv)
      .def_readwrite("cu", &Intrinsics::cu)
      .def_readwrite("cv", &Intrinsics::cv)
      .def("fan_angle_deg", &Intrinsics::fan_angle_deg);

  py::class_<Trajectory>(m, "Trajectory")
      .def("__len__", &Trajectory::size)
      .def_property_readonly("intrinsics", &Trajectory::intrinsics)
      .def_property_readonly("angles_deg",
                             [](const Trajectory& t) {
                               std::vector<double> a;
                               for (const auto& v : t.views()) a.push_back(v.angle_deg);
                               return a;
                             })
      .def("matrix", [](const Trajectory& t, std::size_t i) -> Eigen::MatrixXd {
        if (i >= t.size()) throw py::index_error("view index out of range");
        return t[i].p.matrix();
      });
  m.def("build_short_scan", &build_short_scan, py::arg("intrinsics") = Intrinsics{}, py::arg("n_views") = 200,
        py::arg("start_angle_deg") = 0.0);
  m.def("parker_weights", &parker_weights);

  py::class_<Phantom>(m, "Phantom")
      .def_property_readonly("name", &Phantom::name)
      .def("max_density", &Phantom::max_density)
      .def("bounding_radius", &Phantom::bounding_radius)
      .def("to_json", [](const Phantom& p) { return to_json(p).dump(); })
      .def_static("from_json", [](const std::string& s) { return phantom_from_json(json::parse(s)); });
  m.def("default_head_phantom", &default_head_phantom, py::arg("scale") = 0.5);
  m.def("head_phantom_variant", &head_phantom_variant, py::arg("scale"), py::arg("seed"), py::arg("metal") = false);
  m.def(
      "render_projections",
      [](const Phantom& ph, const Trajectory& t) {
        const ProjectionStack s = render_projections(ph, t);
        py::array_t<float> a({s.n_views, s.nv, s.nu});
        std::copy(s.data.begin(), s.data.end(), a.mutable_data());
        return a;
      },
      py::arg("phantom"), py::arg("trajectory"));

  py::class_<MotionSplineSet>(m, "MotionSplineSet")
      .def_static("uniform", &MotionSplineSet::uniform, py::arg("n_nodes"), py::arg("n_views"))
      .def_property_readonly("positions", &MotionSplineSet::positions)
      .def_property_readonly("values", &MotionSplineSet::values)
      .def("set_value", [](MotionSplineSet& s, const std::string& axis, int node,
                           double v) { s.set_value(parse_axis(axis), node, v); })
      .def("curves", [](const MotionSplineSet& s, int n) -> Eigen::MatrixXd { return curves_from_splines(s, n).values; });
  m.def(
      "random_motion",
      [](const std::string& axis, double amplitude, int nodes, const Trajectory& t, std::uint64_t seed) {
        return random_motion(parse_axis(axis), amplitude, nodes, int(t.size()), parker_safe_range(t), seed).splines;
      },
      py::arg("axis"), py::arg("amplitude"), py::arg("nodes"), py::arg("trajectory"), py::arg("seed"));
  m.def(
      "scenario_motion",
      [](const std::string& name, const std::string& axis, const Trajectory& t) {
        return scenario_motion(Scenario::by_name(name), parse_axis(axis), int(t.size()), parker_safe_range(t));
      },
      py::arg("scenario"), py::arg("axis"), py::arg("trajectory"));

  m.def(
      "rpe_profile",
      [](const Trajectory& t, const Eigen::MatrixXd& curves, double scale) {
        const EffectiveTrajectory eff(t, annihilating_motion(curves_from_array(curves, t.size())));
        return rpe_profile(eff, default_markers(scale), RpeVariant::all).values;
      },
      py::arg("trajectory"), py::arg("curves"), py::arg("scale") = 0.5);
  m.def(
      "mean_rpe",
      [](const Trajectory& t, const Eigen::MatrixXd& curves, double scale) {
        const EffectiveTrajectory eff(t, annihilating_motion(curves_from_array(curves, t.size())));
        return mean_rpe(eff, default_markers(scale));
      },
      py::arg("trajectory"), py::arg("curves"), py::arg("scale") = 0.5);

  m.def(
      "reconstruct_slices",
      [](const Phantom& ph, const Trajectory& t, const Eigen::MatrixXd& curves, double scale) {
        return slices_to_list(scan(ph, t, curves, scale));
      },
      py::arg("phantom"), py::arg("trajectory"), py::arg("curves"), py::arg("scale") = 0.5,
      "Nine slices (ax, co, sa; three each) of the scan with the motion curves (6 x n_views) applied.");
  m.def(
      "phantom_slices",
      [](const Phantom& ph, double scale) { return slices_to_list(sample_phantom(ph, make_slice_set({scale}))); },
      py::arg("phantom"), py::arg("scale") = 0.5);
  m.def(
      "entropy",
      [](const py::list& s, const Phantom& ph, double scale) {
        return entropy_iqm(slices_from_list(s, make_slice_set({scale})), BoneWindow::for_phantom(ph)).score;
      },
      py::arg("slices"), py::arg("phantom"), py::arg("scale") = 0.5);
  m.def(
      "total_variation",
      [](const py::list& s, double scale) { return tv_iqm(slices_from_list(s, make_slice_set({scale}))).score; },
      py::arg("slices"), py::arg("scale") = 0.5);
  m.def(
      "ssim",
      [](const py::list& a, const py::list& b, double scale) {
        const SliceSet set = make_slice_set({scale});
        const SliceMasks cyl = cylinder_mask(set);
        return ssim(slices_from_list(a, set), slices_from_list(b, set), &cyl);
      },
      py::arg("a"), py::arg("b"), py::arg("scale") = 0.5, "SSIM x 100 inside the inscribed cylinder.");

  m.def(
      "nelder_mead_1d",
      [](const std::function<double(double)>& f, double x0, double step, int max_iter, double tol) {
        const SimplexResult r = nelder_mead_1d(f, x0, step, max_iter, tol);
        return py::make_tuple(r.x, r.fx, r.iterations);
      },
      py::arg("f"), py::arg("x0"), py::arg("step") = 1.0, py::arg("max_iter") = 100, py::arg("tol") = 1e-3);

  m.def(
      "run_command",
      [](const std::string& name, const std::string& config_json) {
        const ExperimentConfig cfg = ExperimentConfig::from_json(json::parse(config_json));
        using Cmd = CommandResult (*)(const ExperimentConfig&, const ProgressFn&);
        static const std::map<std::string, Cmd> cmds{{"phantom", cmd_phantom},       {"simulate", cmd_simulate},
                                                     {"reconstruct", cmd_reconstruct}, {"train", cmd_train},
                                                     {"autofocus", cmd_autofocus},   {"benchmark", cmd_benchmark},
                                                     {"report", cmd_report}};
        auto it = cmds.find(name);
        if (it == cmds.end()) throw ConfigError("unknown command " + name);
        CommandResult r;
        {
          py::gil_scoped_release release;
          r = it->second(cfg, {});
        }
        return to_py(r.summary);
      },
      py::arg("name"), py::arg("config_json") = "{}", "Runs a CLI command; returns its summary as a dict.");
}
