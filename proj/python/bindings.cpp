// Python bindings: synthetic scenes, model inference from checkpoints, metrics.

#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "iterflow/training.hpp"

namespace py = pybind11;
using namespace iterflow;
using geom::PointCloud;

namespace {

py::dict frame_dict(const geom::RadarFrame& f) {
  py::dict d;
  d["positions"] = f.positions;
  d["rcs"] = f.rcs;
  d["rrv"] = f.rrv;
  if (f.gt_flow) d["gt_flow"] = *f.gt_flow;
  if (f.gt_instance) d["gt_instance"] = *f.gt_instance;
  return d;
}

geom::RadarFrame make_frame(const PointCloud& positions, std::vector<double> rcs, std::vector<double> rrv) {
  geom::RadarFrame f;
  f.positions = positions;
  f.rcs = std::move(rcs);
  f.rrv = std::move(rrv);
  f.validate();
  return f;
}

struct Model {
  training::RunConfig cfg;
  ad::ParamStore params;

  PointCloud predict(const PointCloud& src, std::vector<double> src_rcs, std::vector<double> src_rrv,
                     const PointCloud& tgt, std::vector<double> tgt_rcs, std::vector<double> tgt_rrv,
                     std::optional<std::size_t> iterations) const {
    auto mc = cfg.model;
    if (iterations) mc.iterations = *iterations;
    const auto s = make_frame(src, std::move(src_rcs), std::move(src_rrv));
    const auto t = make_frame(tgt, std::move(tgt_rcs), std::move(tgt_rrv));
    return model::to_cloud(model::forward<double>(s, t, mc, params).final_flow());
  }
};

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "IterFlow radar scene flow toolkit";

  py::class_<model::IterFlowConfig>(m, "ModelConfig")
      .def(py::init<>())
      .def_readwrite("feature_dim", &model::IterFlowConfig::feature_dim)
      .def_readwrite("hidden_dim", &model::IterFlowConfig::hidden_dim)
      .def_readwrite("neighbors", &model::IterFlowConfig::neighbors)
      .def_readwrite("radius", &model::IterFlowConfig::radius)
      .def_readwrite("iterations", &model::IterFlowConfig::iterations)
      .def_readwrite("seed", &model::IterFlowConfig::seed)
      .def("validate", &model::IterFlowConfig::validate);

  m.def("parameter_count", &model::parameter_count, py::arg("config") = model::IterFlowConfig{});

  m.def(
      "generate_pair",
      [](std::uint64_t seed) {
        const auto pair = synth::generate_pair(synth::random_scene(seed));
        py::dict d;
        d["source"] = frame_dict(pair.source);
        d["target"] = frame_dict(pair.target);
        d["ego_rotation"] = Eigen::Matrix3d(pair.ego.rotation);
        d["ego_translation"] = geom::Vec3(pair.ego.translation);
        d["dt"] = pair.dt;
        return d;
      },
      py::arg("seed"), "Random synthetic frame pair; returns frames as dicts of arrays.");

  m.def(
      "verify_pair", [](std::uint64_t seed) { return synth::verify_pair(synth::generate_pair(synth::random_scene(seed))).summary(); },
      py::arg("seed"));

  m.def(
      "generate_dataset",
      [](const std::filesystem::path& out, std::size_t num_scenes, std::uint64_t seed) {
        dataset::GenerateSpec spec;
        spec.num_scenes = num_scenes;
        spec.seed = seed;
        return dataset::generate_dataset(spec, out).scenes.size();
      },
      py::arg("out"), py::arg("num_scenes"), py::arg("seed") = 0);

  m.def("ball_query",
        [](const PointCloud& q, const PointCloud& t, double radius, std::size_t max_neighbors) {
          const auto nb = geom::ball_query(q, t, radius, max_neighbors);
          return py::make_tuple(nb.offsets, nb.indices);
        },
        py::arg("queries"), py::arg("targets"), py::arg("radius"), py::arg("max_neighbors"));

  m.def("epe", &metrics::epe, py::arg("pred"), py::arg("gt"));
  m.def("acc_strict", [](const PointCloud& p, const PointCloud& g) { return metrics::acc(p, g, true); });
  m.def("acc_relaxed", [](const PointCloud& p, const PointCloud& g) { return metrics::acc(p, g, false); });
  m.def("rne", [](const PointCloud& p, const PointCloud& g) { return metrics::rne(p, g); });

  py::class_<Model>(m, "Model")
      .def_static(
          "load",
          [](const std::filesystem::path& path) {
            auto [cfg, state] = training::load_checkpoint(path);
            return Model{cfg, std::move(state.params)};
          },
          py::arg("path"))
      .def_static(
          "init",
          [](const model::IterFlowConfig& cfg) {
            training::RunConfig rc;
            rc.model = cfg;
            return Model{rc, model::init_params(cfg)};
          },
          py::arg("config") = model::IterFlowConfig{})
      .def_property_readonly("config", [](const Model& m) { return m.cfg.model; })
      .def_property_readonly("num_parameters", [](const Model& m) { return m.params.total_parameters(); })
      .def("parameter_names", [](const Model& m) { return m.params.names(); })
      .def("predict", &Model::predict, py::arg("source"), py::arg("source_rcs"), py::arg("source_rrv"),
           py::arg("target"), py::arg("target_rcs"), py::arg("target_rrv"), py::arg("iterations") = py::none(),
           "Scene flow for every source point (N x 3, meters per frame interval).");
}
