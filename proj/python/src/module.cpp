#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "avm/app/config.hpp"
#include "avm/app/eval.hpp"
#include "avm/app/pipeline.hpp"
#include "avm/camera.hpp"
#include "avm/errors.hpp"
#include "avm/geometry.hpp"
#include "avm/sim.hpp"

namespace py = pybind11;
using namespace avm;
using namespace avm::app;

namespace {

py::array_t<double> trajectory_array(const std::vector<StampedPose>& traj) {
  py::array_t<double> out({static_cast<py::ssize_t>(traj.size()), py::ssize_t{4}});
  auto a = out.mutable_unchecked<2>();
  for (std::size_t i = 0; i < traj.size(); ++i) {
    const auto k = static_cast<py::ssize_t>(i);
    a(k, 0) = traj[i].t;
    a(k, 1) = traj[i].pose.x;
    a(k, 2) = traj[i].pose.y;
    a(k, 3) = traj[i].pose.yaw;
  }
  return out;
}

py::dict stats_dict(const RunStats& s) {
  py::dict d;
  d["frames"] = s.frames;
  d["dropped_frames"] = s.dropped_frames;
  d["tracking_failures"] = s.tracking_failures;
  d["keyframes"] = s.keyframes;
  d["submaps"] = s.submaps;
  d["loop_queries"] = s.loop_queries;
  d["loop_candidates"] = s.loop_candidates;
  d["episodes"] = s.episodes;
  d["local_solves"] = s.local_solves;
  d["final_cost"] = s.final_cost;
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "AVM semantic SLAM core";

  auto base = py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception<ConfigError>(m, "ConfigError", base.ptr());
  py::register_exception<InputError>(m, "InputError", base.ptr());
  py::register_exception<SchemaError>(m, "SchemaError", base.ptr());
  py::register_exception<OutOfFieldError>(m, "OutOfFieldError", base.ptr());
  py::register_exception<DomainError>(m, "DomainError", base.ptr());
  py::register_exception<InitStarvationError>(m, "InitStarvationError", base.ptr());

  py::class_<Pose2>(m, "Pose2")
      .def(py::init<>())
      .def(py::init<double, double, double>(), py::arg("x"), py::arg("y"), py::arg("yaw"))
      .def_readwrite("x", &Pose2::x)
      .def_readwrite("y", &Pose2::y)
      .def_readwrite("yaw", &Pose2::yaw)
      .def("apply", [](const Pose2& p, double x, double y) {
        const Vec2 q = p.apply(Vec2(x, y));
        return std::pair{q.x(), q.y()};
      })
      .def("inverse", [](const Pose2& p) { return inverse(p); })
      .def("__mul__", [](const Pose2& a, const Pose2& b) { return compose(a, b); })
      .def("__repr__", [](const Pose2& p) {
        return "Pose2(" + std::to_string(p.x) + ", " + std::to_string(p.y) + ", " + std::to_string(p.yaw) + ")";
      });
  m.def("between", &between);
  m.def("wrap_angle", &wrap_angle);

  py::class_<FisheyeModel>(m, "FisheyeModel")
      .def(py::init([](std::array<double, 5> k, double focal, std::pair<double, double> pp, double theta_max) {
             return FisheyeModel(k, focal, Pixel(pp.first, pp.second), theta_max);
           }),
           py::arg("k"), py::arg("focal"), py::arg("principal_point"), py::arg("theta_max") = FisheyeModel::kDefaultThetaMax)
      .def_property_readonly("theta_max", &FisheyeModel::theta_max)
      .def("radius", &FisheyeModel::radius)
      .def("forward",
           [](const FisheyeModel& f, double theta, double phi) {
             const Pixel px = f.forward(theta, phi);
             return std::pair{px.x(), px.y()};
           })
      .def("inverse", [](const FisheyeModel& f, double u, double v) { return f.inverse(Pixel(u, v)); });

  m.def(
      "bev_pixel_to_vehicle",
      [](double u, double v) {
        const Point3 p = bev_pixel_to_vehicle(BevCameraModel::centered(), Pixel(u, v));
        return std::pair{p.x(), p.y()};
      },
      "Vehicle-frame point of a pixel in the default top-down image.");

  m.def(
      "distance_error_metrics",
      [](const std::vector<double>& world, const std::vector<double>& map) {
        const auto d = distance_error_metrics(world, map);
        py::dict r;
        r["mean"] = d.mean;
        r["max"] = d.max;
        r["rmse"] = d.rmse;
        r["count"] = d.count;
        return r;
      },
      py::arg("world"), py::arg("map"));

  m.def("default_config", [] { return dump_config(RunConfig{}); });
  m.def("normalize_config", [](const std::string& text) { return dump_config(parse_config(text)); });

  m.def(
      "simulate",
      [](const std::string& config, const std::string& out_dir) {
        const RunConfig cfg = parse_config(config);
        Simulation sim;
        {
          py::gil_scoped_release release;
          sim = simulate(cfg);
          write_dataset(out_dir, sim.data);
        }
        return sim.data.frames.size();
      },
      py::arg("config"), py::arg("out_dir"), "Writes a simulated dataset; returns the frame count.");

  m.def(
      "run",
      [](const std::string& config, const std::string& dataset_dir, const std::string& out_dir) {
        const RunConfig cfg = parse_config(config);
        SlamResult r;
        {
          py::gil_scoped_release release;
          r = run_slam(read_dataset(dataset_dir), cfg);
          if (!out_dir.empty()) write_run(out_dir, r, cfg);
        }
        py::dict d;
        d["keyframes"] = trajectory_array(r.keyframes);
        d["keyframes_frontend"] = trajectory_array(r.keyframes_frontend);
        d["frames"] = trajectory_array(r.frames);
        d["closures"] = r.closures.size();
        d["stats"] = stats_dict(r.stats);
        return d;
      },
      py::arg("config"), py::arg("dataset_dir"), py::arg("out_dir") = "");

  m.def(
      "evaluate",
      [](const std::string& run_dir, const std::string& dataset_dir, const std::vector<std::string>& landmarks) {
        return report_json(evaluate_run(run_dir, dataset_dir, landmarks));
      },
      py::arg("run_dir"), py::arg("dataset_dir"), py::arg("landmarks") = std::vector<std::string>{});
}
