#include <pybind11/eigen.h>
#include <pybind11/functional.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "avatarforge/checkpoint.hpp"
#include "avatarforge/checks.hpp"
#include "avatarforge/config.hpp"
#include "avatarforge/error.hpp"
#include "avatarforge/losses.hpp"
#include "avatarforge/mesh_io.hpp"
#include "avatarforge/metrics.hpp"
#include "avatarforge/mini_rig.hpp"
#include "avatarforge/pipeline.hpp"
#include "avatarforge/synth.hpp"
#include "avatarforge/train.hpp"

namespace py = pybind11;
using namespace avatarforge;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Array to_array(const Image& image) {
  Array a({image.height, image.width, image.channels});
  std::copy(image.data.begin(), image.data.end(), a.mutable_data());
  return a;
}

Image from_array(const Array& a) {
  if (a.ndim() != 3) throw Error(ErrorCode::kShapeMismatch, "expected an H x W x C array");
  Image image(static_cast<int>(a.shape(0)), static_cast<int>(a.shape(1)), static_cast<int>(a.shape(2)));
  std::copy(a.data(), a.data() + a.size(), image.data.begin());
  return image;
}

std::vector<std::string> label_names(const std::vector<Part>& labels) {
  std::vector<std::string> out;
  out.reserve(labels.size());
  for (Part p : labels) out.emplace_back(part_name(p));
  return out;
}

std::vector<Part> parse_labels(const std::vector<std::string>& names) {
  std::vector<Part> out;
  out.reserve(names.size());
  for (const auto& n : names) out.push_back(part_from_name(n));
  return out;
}

py::dict metrics_dict(const MetricsRow& m) {
  py::dict d;
  d["step"] = m.step;
  d["l_img"] = m.l_img;
  d["l_mask"] = m.l_mask;
  d["l_normal"] = m.l_normal;
  d["l_part"] = m.l_part;
  d["l_lap"] = m.l_lap;
  d["l_total"] = m.l_total;
  d["psnr"] = m.psnr;
  d["ssim"] = m.ssim;
  return d;
}

/// Network weights together with the configuration they were built for.
struct Model {
  Config config;
  std::unique_ptr<Blocks> blocks;

  explicit Model(const Config& c) : config(c), blocks(Blocks::create(c)) {}
};

Config make_config(const std::string& profile, const std::optional<std::string>& config_json) {
  const Config base = default_config(profile_from_name(profile));
  return config_json ? config_from_json(*config_json, base) : base;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Single-image head avatar reconstruction: rig assets, renderer, refinement network and checks.";

  py::exception<Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const Error& e) {
      // Raised as avatarforge.Error with the error code name in `.code`.
      const py::object cls = py::module_::import("avatarforge._core").attr("Error");
      py::object exc = cls(e.what());
      exc.attr("code") = std::string(to_string(e.code()));
      PyErr_SetObject(cls.ptr(), exc.ptr());
    }
  });

  py::class_<RiggedMesh>(m, "Mesh")
      .def_property_readonly("vertices", [](const RiggedMesh& r) { return Eigen::MatrixXd(r.vertices); })
      .def_property_readonly("faces", [](const RiggedMesh& r) { return Eigen::MatrixXi(r.faces); })
      .def_property_readonly("uv", [](const RiggedMesh& r) { return Eigen::MatrixXd(r.uv); })
      .def_property_readonly("skin_weights", [](const RiggedMesh& r) { return r.skin_weights; })
      .def_property_readonly("part_labels", [](const RiggedMesh& r) { return label_names(r.part_labels); })
      .def_property_readonly("num_vertices", &RiggedMesh::num_vertices)
      .def_property_readonly("num_faces", &RiggedMesh::num_faces)
      .def("is_valid", [](const RiggedMesh& r) { return !find_invariant_violation(r).has_value(); })
      .def("is_edge_manifold", [](const RiggedMesh& r) { return is_edge_manifold(r.faces); })
      .def("is_consistently_oriented", [](const RiggedMesh& r) { return is_consistently_oriented(r.faces); })
      .def("save", [](const RiggedMesh& r, const std::filesystem::path& p) { save_mesh(r, p); }, py::arg("path"))
      .def_static("load", [](const std::filesystem::path& p) { return load_mesh(p); }, py::arg("path"));

  m.def("mini_rig", [](const std::string& profile) { return make_mini_rig(profile_from_name(profile)); },
        py::arg("profile") = "desk", "Procedural head template with skinning, blendshapes and part labels.");

  py::class_<SyntheticSubject>(m, "Subject")
      .def_property_readonly("input_image", [](const SyntheticSubject& s) { return to_array(s.input_image); })
      .def_property_readonly("fg_mask", [](const SyntheticSubject& s) { return to_array(s.fg_mask); })
      .def_property_readonly("normal_map", [](const SyntheticSubject& s) { return to_array(s.normal_map); })
      .def_property_readonly("part_map", [](const SyntheticSubject& s) { return to_array(s.part_map); })
      .def_property_readonly("texture", [](const SyntheticSubject& s) { return to_array(s.gt_texture.values); })
      .def_readonly("gt_mesh", &SyntheticSubject::gt_mesh)
      .def_readonly("template_mesh", &SyntheticSubject::template_mesh)
      .def_property_readonly("params_json", [](const SyntheticSubject& s) { return params_to_json(s.pose_params); })
      .def("save", [](const SyntheticSubject& s, const std::filesystem::path& d) { save_subject(s, d); },
           py::arg("directory"))
      .def_static("load", [](const std::filesystem::path& d) { return load_subject(d); }, py::arg("directory"));

  m.def(
      "synthesize",
      [](std::uint64_t seed, const std::string& profile) {
        const Config c = default_config(profile_from_name(profile));
        SynthOptions o;
        o.resolution = c.dims.image_resolution;
        o.texture_resolution = c.dims.texture_resolution;
        return make_synthetic_subject(seed, make_mini_rig(profile_from_name(profile)), o);
      },
      py::arg("seed"), py::arg("profile") = "desk", "Deterministic synthetic subject with rendered supervision.");

  m.def("default_config", [](const std::string& profile) { return config_to_json(default_config(profile_from_name(profile))); },
        py::arg("profile") = "desk");
  m.def("resolve_config", [](const std::string& json, const std::string& profile) {
        return config_to_json(make_config(profile, json));
      }, py::arg("config_json"), py::arg("profile") = "desk",
      "Overlay `config_json` on the profile defaults and validate; raises Error(kConfig) on bad input.");

  py::class_<Model>(m, "Model")
      .def(py::init([](const std::string& profile, const std::optional<std::string>& json) {
             return std::make_unique<Model>(make_config(profile, json));
           }),
           py::arg("profile") = "desk", py::arg("config_json") = py::none())
      .def_property_readonly("config_json", [](const Model& md) { return config_to_json(md.config); })
      .def_property_readonly("num_parameters", [](const Model& md) { return md.blocks->params.num_scalars(); })
      .def("save", [](const Model& md, const std::filesystem::path& p) { ad::save_checkpoint(md.blocks->params, p); })
      .def("load", [](Model& md, const std::filesystem::path& p) { ad::load_checkpoint(md.blocks->params, p); })
      .def(
          "train",
          [](Model& md, const SyntheticSubject& s, long steps, std::function<void(py::dict)> on_step) {
            TrainOptions o;
            o.steps = steps;
            if (on_step) o.on_step = [&](const MetricsRow& r) { on_step(metrics_dict(r)); };
            py::list rows;
            for (const auto& r : train_overfit(s, *md.blocks, md.config, o).metrics) rows.append(metrics_dict(r));
            return rows;
          },
          py::arg("subject"), py::arg("steps"), py::arg("on_step") = nullptr,
          "Overfit to one subject with Adam; returns one metrics dict per step (row 0 before any update).")
      .def(
          "reconstruct",
          [](const Model& md, const Array& image, const std::string& params_json) {
            ad::NoGradGuard no_grad;
            const PoseParams params = params_from_json(params_json);
            const RiggedMesh rig = make_mini_rig(profile_from_name(md.config.profile));
            const RunOutput out = run(from_array(image), params, rig, *md.blocks, md.config);
            py::list meshes, textures, renders;
            for (const auto& rec : out.records) {
              meshes.append(rec.mesh);
              textures.append(to_array(rec.texture));
            }
            for (const auto& r : out.renders) renders.append(to_array(tensor_to_image(r.image)));
            py::dict d;
            d["meshes"] = meshes;
            d["textures"] = textures;
            d["renders"] = renders;
            return d;
          },
          py::arg("image"), py::arg("params_json"),
          "Run every refinement iteration; lists are indexed by iteration t = 0..K.");

  m.def(
      "render",
      [](const RiggedMesh& mesh, const Array& texture, const std::string& params_json, int resolution) {
        return to_array(tensor_to_image(render_mesh(mesh, from_array(texture), params_from_json(params_json), resolution).image));
      },
      py::arg("mesh"), py::arg("texture"), py::arg("params_json"), py::arg("resolution") = 128);

  m.def(
      "clip_deformation",
      [](const Eigen::MatrixXd& d, const std::vector<std::string>& labels) {
        if (d.cols() != 3) throw Error(ErrorCode::kShapeMismatch, "displacement must be N x 3");
        return Eigen::MatrixXd(clip_deformation(Points(d), parse_labels(labels), ClipRanges{}));
      },
      py::arg("displacement"), py::arg("labels"), "Per-part clamp with the default bounds.");

  m.def(
      "total_loss",
      [](const std::vector<double>& per_iteration, double gamma) {
        std::vector<ad::Tensor> terms;
        for (double v : per_iteration) terms.push_back(ad::Tensor::scalar(v));
        return total_loss(terms, gamma, static_cast<int>(terms.size())).item();
      },
      py::arg("per_iteration"), py::arg("gamma") = 0.8);
  m.def(
      "weighted_loss",
      [](double img, double mask, double normal, double part, double lap) {
        const auto s = [](double v) { return ad::Tensor::scalar(v); };
        return per_iteration_loss({s(img), s(mask), s(normal), s(part), s(lap)}, LossWeights{}).item();
      },
      py::arg("img"), py::arg("mask"), py::arg("normal"), py::arg("part"), py::arg("lap"));
  m.def(
      "psnr",
      [](const Array& a, const Array& b, std::optional<Array> mask) {
        std::vector<double> w;
        if (mask) w.assign(mask->data(), mask->data() + mask->size());
        return psnr(from_array(a), from_array(b), w);
      },
      py::arg("a"), py::arg("b"), py::arg("mask") = py::none());

  m.def(
      "check",
      [](const std::string& suite, std::uint64_t seed) {
        SuiteReport r;
        {
          py::gil_scoped_release release;
          if (suite == "grad") r = run_grad_suite(seed);
          else if (suite == "geometry") r = run_geometry_suite(seed);
          else if (suite == "roundtrip") r = run_roundtrip_suite(seed);
          else throw Error(ErrorCode::kConfig, "unknown suite " + suite);
        }
        py::list lines;
        for (const auto& l : r.lines) lines.append(py::make_tuple(l.name, l.pass, l.detail));
        return py::make_tuple(r.pass(), lines);
      },
      py::arg("suite"), py::arg("seed") = 0, "Returns (passed, [(name, passed, detail), ...]).");
}
