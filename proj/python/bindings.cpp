#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "resectsim/evaluation.hpp"
#include "resectsim/executor.hpp"
#include "resectsim/geometry.hpp"
#include "resectsim/phantom.hpp"
#include "resectsim/planner.hpp"
#include "resectsim/serialization.hpp"
#include "resectsim/surface.hpp"

namespace py = pybind11;
using namespace resectsim;

using Points = Eigen::Matrix<double, Eigen::Dynamic, 3, Eigen::RowMajor>;
using Image = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MaskImage = Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

namespace {

PointCloud to_cloud(const Points& pts) {
  PointCloud c;
  c.points.reserve(static_cast<std::size_t>(pts.rows()));
  for (Eigen::Index i = 0; i < pts.rows(); ++i) c.points.emplace_back(pts(i, 0), pts(i, 1), pts(i, 2));
  return c;
}

Points to_points(const PointCloud& c) {
  Points out(static_cast<Eigen::Index>(c.size()), 3);
  for (std::size_t i = 0; i < c.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = c.points[i].transpose();
  return out;
}

py::object to_py(const Json& j) { return py::module_::import("json").attr("loads")(j.dump()); }

Json from_py(const py::object& o) {
  return Json::parse(py::module_::import("json").attr("dumps")(o).cast<std::string>());
}

BoundingBox2D box_from_py(const py::dict& d) { return from_py(d).get<BoundingBox2D>(); }

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Supervised autonomous tumor resection simulator";

  static py::exception<Error> error(m, "ResectsimError", PyExc_RuntimeError);
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const Error& e) {
      py::set_error(error, (std::string(to_string(e.kind())) + ": " + e.what()).c_str());
    }
  });

  m.def(
      "project_depth_to_cloud",
      [](const Image& depth, double fx, double fy, double cx, double cy, std::optional<MaskImage> mask) {
        DepthImage d(static_cast<int>(depth.cols()), static_cast<int>(depth.rows()));
        for (int v = 0; v < d.height; ++v)
          for (int u = 0; u < d.width; ++u) d.at(u, v) = depth(v, u);
        BinaryMask bm(d.width, d.height);
        if (mask) {
          require(mask->rows() == depth.rows() && mask->cols() == depth.cols(), "mask shape must match depth");
          for (int v = 0; v < d.height; ++v)
            for (int u = 0; u < d.width; ++u)
              if ((*mask)(v, u)) bm.set(u, v);
        } else {
          for (int v = 0; v < d.height; ++v)
            for (int u = 0; u < d.width; ++u) bm.set(u, v);
        }
        return to_points(project_depth_to_cloud(d, bm, CameraIntrinsics{fx, fy, cx, cy}));
      },
      py::arg("depth"), py::arg("fx"), py::arg("fy"), py::arg("cx"), py::arg("cy"), py::arg("mask") = py::none(),
      "Back-project a depth image (rows = v) through a pinhole camera; pixels with depth <= 0 are skipped.");

  m.def(
      "transform_cloud",
      [](const Points& pts, const Eigen::Matrix3d& rotation, const Eigen::Vector3d& translation) {
        return to_points(transform_cloud(to_cloud(pts), RigidTransform(rotation, translation)));
      },
      py::arg("points"), py::arg("rotation"), py::arg("translation"));

  m.def(
      "subtract_cloud",
      [](const Points& base, const Points& removal, double radius) {
        return to_points(subtract_cloud(to_cloud(base), to_cloud(removal), radius));
      },
      py::arg("base"), py::arg("removal"), py::arg("radius") = kDefaultSubtractionRadius);

  m.def(
      "bbox_iou", [](const py::dict& a, const py::dict& b) { return bbox_iou(box_from_py(a), box_from_py(b)); },
      py::arg("a"), py::arg("b"));

  py::class_<PolySurface>(m, "PolySurface")
      .def_property_readonly("degree_x", [](const PolySurface& s) { return s.degree_x; })
      .def_property_readonly("degree_y", [](const PolySurface& s) { return s.degree_y; })
      .def_property_readonly("cap", [](const PolySurface& s) { return s.total_degree_cap; })
      .def_property_readonly("model_id", &PolySurface::model_id)
      .def_property_readonly("coefficient_count", &PolySurface::coefficient_count)
      .def("in_domain", &PolySurface::in_domain, py::arg("x"), py::arg("y"))
      .def(
          "evaluate",
          [](const PolySurface& s, const Eigen::VectorXd& x, const Eigen::VectorXd& y) {
            require(x.size() == y.size(), "x and y must have the same length");
            Eigen::VectorXd z(x.size());
            for (Eigen::Index i = 0; i < x.size(); ++i) z(i) = evaluate(s, x(i), y(i));
            return z;
          },
          py::arg("x"), py::arg("y"))
      .def("to_json", [](const PolySurface& s) { return to_py(Json(s)); })
      .def_static("from_json", [](const py::object& o) { return from_py(o).get<PolySurface>(); })
      .def("__repr__", [](const PolySurface& s) { return "<PolySurface " + s.model_id() + ">"; });

  m.def(
      "fit_poly",
      [](const Points& pts, int dx, int dy, std::optional<int> cap) { return fit_poly(to_cloud(pts), dx, dy, cap); },
      py::arg("points"), py::arg("degree_x"), py::arg("degree_y"), py::arg("cap") = py::none());
  m.def("fit_default_surface", [](const Points& pts) { return fit_default_surface(to_cloud(pts)); }, py::arg("points"));
  m.def(
      "rmse", [](const PolySurface& s, const Points& pts) { return rmse(s, to_cloud(pts)); }, py::arg("surface"),
      py::arg("points"));

  py::class_<FitReport>(m, "FitReport")
      .def_readonly("model_id", &FitReport::model_id)
      .def_readonly("degree_x", &FitReport::degree_x)
      .def_readonly("degree_y", &FitReport::degree_y)
      .def_readonly("cap", &FitReport::cap)
      .def_readonly("coeff_count", &FitReport::coeff_count)
      .def_readonly("rmse", &FitReport::rmse)
      .def_readonly("fit_time_s", &FitReport::fit_time_s)
      .def_readonly("error", &FitReport::error)
      .def("ok", &FitReport::ok)
      .def("__repr__", [](const FitReport& r) { return "<FitReport " + r.model_id + ">"; });

  m.def(
      "sweep_models",
      [](const Points& pts, int max_degree, int timing_runs) {
        return sweep_models(to_cloud(pts), max_degree, timing_runs);
      },
      py::arg("points"), py::arg("max_degree") = 10, py::arg("timing_runs") = 3);
  m.def("pareto_front", &pareto_front, py::arg("reports"));
  m.def("select_default", &select_default, py::arg("reports"), py::arg("rmse_ceiling") = kDefaultRmseCeiling);
  m.def("model_id_for", &model_id_for, py::arg("degree_x"), py::arg("degree_y"), py::arg("cap") = py::none());

  m.def("demonstration_pitch_table", &demonstration_pitch_table);
  m.def(
      "summarize_pitch",
      [](const PitchTable& t) {
        const auto s = summarize_pitch(t);
        return py::make_tuple(s.mean, s.sample_std);
      },
      py::arg("table"));
  m.def("estimate_pitch", [](const Points& pts) { return estimate_pitch(to_cloud(pts)); }, py::arg("points"));

  m.def(
      "plan_cuts",
      [](const PolySurface& surface, const Points& tumor, const py::dict& config) {
        PlanConfig pc = config.empty() ? PlanConfig{} : from_py(config).get<PlanConfig>();
        return to_py(Json(plan_cuts(surface, to_cloud(tumor), pc)));
      },
      py::arg("surface"), py::arg("tumor_points"), py::arg("config") = py::dict(),
      "Plan the cut schedule; returns the CutPlan JSON as a dict.");
  m.def(
      "plan_consistency_rmse",
      [](const py::dict& predicted, const py::dict& current, std::size_t index) {
        return plan_consistency_rmse(from_py(predicted).get<CutPlan>(), from_py(current).get<CutPlan>(), index);
      },
      py::arg("predicted"), py::arg("current"), py::arg("index"));

  m.def("phantom_for_seed", [](std::uint64_t seed) { return to_py(Json(phantom_for_seed(seed))); }, py::arg("seed"));
  m.def(
      "phantom_volume",
      [](const py::dict& spec) { return generate_phantom(from_py(spec).get<PhantomSpec>()).initial_volume; },
      py::arg("spec"));
  m.def("removal_percent", &removal_percent, py::arg("initial_volume"), py::arg("removed_volume"));

  m.def(
      "run_headless",
      [](const py::object& phantom, const py::dict& config) {
        const PhantomSpec spec = phantom.is_none() ? PhantomSpec{} : from_py(phantom).get<PhantomSpec>();
        const RunConfig rc = run_config_from_json(config.empty() ? Json::object() : from_py(config));
        RunRecord record;
        {
          py::gil_scoped_release release;
          record = run_headless(spec, rc);
        }
        Json cycles = Json::array();
        for (const auto& c : record.cycles) cycles.push_back(cycle_record_to_json(c));
        Json trace = Json::array();
        for (auto s : record.state_trace) trace.push_back(to_string(s));
        return to_py(Json{{"status", to_string(record.status)},
                          {"cycles", cycles},
                          {"state_trace", trace},
                          {"metrics", metrics_to_json(record.metrics)},
                          {"event_count", record.events.size()}});
      },
      py::arg("phantom") = py::none(), py::arg("config") = py::dict(),
      "Run one procedure in memory with auto-approval; returns status, cycle records and metrics.");
}
