#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "shadowsteer/diffusion.hpp"
#include "shadowsteer/errors.hpp"
#include "shadowsteer/evaluation.hpp"
#include "shadowsteer/geometry.hpp"
#include "shadowsteer/guidance.hpp"
#include "shadowsteer/image_io.hpp"
#include "shadowsteer/scene.hpp"
#include "shadowsteer/schedule.hpp"

namespace py = pybind11;
using namespace shadowsteer;

namespace {

using FloatArray = py::array_t<float, py::array::c_style | py::array::forcecast>;

template <class G>
G grid_from(const FloatArray& a) {
  if (a.ndim() != 2) throw InputError("expected a 2-D array");
  const auto h = static_cast<int>(a.shape(0));
  const auto w = static_cast<int>(a.shape(1));
  return G(h, w, std::vector<float>(a.data(), a.data() + a.size()));
}

FloatArray to_array(const Grid& g) {
  FloatArray out({g.height(), g.width()});
  std::copy(g.values().begin(), g.values().end(), out.mutable_data());
  return out;
}

FloatArray to_array(const RgbImage& img) {
  FloatArray out({img.height(), img.width(), 3});
  std::copy(img.values().begin(), img.values().end(), out.mutable_data());
  return out;
}

nlohmann::json parse(const std::string& text) {
  try {
    return nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw InputError(std::string("invalid JSON: ") + e.what());
  }
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Shadow control for small diffusion portrait models";

  py::register_exception<InputError>(m, "InputError", PyExc_ValueError);
  py::register_exception<PreconditionError>(m, "PreconditionError", PyExc_RuntimeError);
  py::register_exception<CheckpointError>(m, "CheckpointError", PyExc_RuntimeError);
  py::register_exception<IoError>(m, "IoError", PyExc_OSError);

  m.def(
      "raycast_shadow",
      [](const FloatArray& depth, std::tuple<double, double, double> light, double step_length) {
        RaycastConfig cfg;
        cfg.step_length = step_length;
        const auto [x, y, z] = light;
        ShadowMap s;
        {
          py::gil_scoped_release release;
          s = raycast_shadow(grid_from<DepthMap>(depth), LightPosition{x, y, z}, cfg);
        }
        return to_array(s);
      },
      py::arg("depth"), py::arg("light"), py::arg("step_length") = 0.5,
      "Hard self-shadowing of a heightfield; 1 is lit, 0 is shadowed.");

  m.def(
      "apply_shadow_mask",
      [](const FloatArray& shadow, const FloatArray& mask, double darkness) {
        return to_array(apply_shadow_mask(grid_from<ShadowMap>(shadow), grid_from<BinaryMask>(mask), darkness));
      },
      py::arg("shadow"), py::arg("mask"), py::arg("darkness"));

  m.def(
      "alpha_bar",
      [](int train_steps, int inference_steps) { return NoiseSchedule(train_steps, inference_steps).alpha_bar(); },
      py::arg("train_steps") = 1000, py::arg("inference_steps") = 100);
  m.def(
      "sampler_timesteps",
      [](int train_steps, int inference_steps) {
        NoiseSchedule s(train_steps, inference_steps);
        std::vector<int> out;
        for (int k = 0; k < inference_steps; ++k) out.push_back(s.timestep(k));
        return out;
      },
      py::arg("train_steps") = 1000, py::arg("inference_steps") = 100);

  m.def(
      "build_dataset",
      [](int identities, int lights, int size, const std::filesystem::path& out, std::uint64_t seed,
         double val_fraction, bool overwrite) {
        scene::BuildOptions opts;
        opts.val_fraction = val_fraction;
        opts.overwrite = overwrite;
        scene::DatasetManifest manifest;
        {
          py::gil_scoped_release release;
          manifest = scene::build_dataset(identities, lights, size, out, seed, opts);
        }
        return to_json(manifest).dump();
      },
      py::arg("identities"), py::arg("lights"), py::arg("size"), py::arg("out_dir"), py::arg("seed") = 1,
      py::arg("val_fraction") = 0.05, py::arg("overwrite") = false,
      "Renders the paired corpus and returns its manifest as JSON text.");

  m.def(
      "generate",
      [](const std::filesystem::path& diffusion, int label, std::uint64_t seed, const std::string& sampler_json) {
        RgbImage image;
        {
          py::gil_scoped_release release;
          auto backend = std::shared_ptr<const DenoisingBackend>(DiffusionModel::load(diffusion));
          Sampler s(backend, sampler_config_from_json(parse(sampler_json)));
          image = s.generate(label, seed).image;
        }
        return to_array(image);
      },
      py::arg("diffusion"), py::arg("label"), py::arg("seed"), py::arg("sampler") = "{}",
      "Uncontrolled generation; returns an HxWx3 float array in [0, 1].");

  m.def(
      "generate_with_control",
      [](const std::filesystem::path& diffusion, const std::filesystem::path& sd, const std::filesystem::path& id,
         int label, std::uint64_t seed, const std::string& control_json, const std::string& guidance_json,
         const std::filesystem::path& out_dir, const std::string& sampler_json) {
        py::gil_scoped_release release;
        auto model = DiffusionModel::load(diffusion);
        ShadowGuide guide(model, load_sd_estimator(sd, *model), load_id_estimator(id, *model),
                          sampler_config_from_json(parse(sampler_json)));
        auto control = shadow_control_from_json(parse(control_json));
        auto cfg = guidance_config_from_json(parse(guidance_json));
        const auto result = guide.generate_with_control(label, seed, control, cfg);
        write_run(result, out_dir);
        return run_config_json(result).dump();
      },
      py::arg("diffusion"), py::arg("sd"), py::arg("id"), py::arg("label"), py::arg("seed"), py::arg("control"),
      py::arg("guidance") = "{}", py::arg("out_dir"), py::arg("sampler") = "{}",
      "Controlled generation into a run directory; returns config.json text.");

  m.def(
      "half_face_mask", [](int size) { return to_array(half_face_mask(size)); }, py::arg("size"));
  m.def(
      "encode_mask",
      [](const FloatArray& mask) { return io::base64_encode(io::encode_mask_png(grid_from<BinaryMask>(mask))); },
      py::arg("mask"), "Base64 PNG text, the form controls carry masks in.");
  m.def(
      "validate_ablation_report", [](const std::string& text) { validate_report_json(parse(text)); },
      py::arg("report_json"));
  m.def(
      "guidance_preset", [](const std::string& name) { return to_json(guidance_preset(name)).dump(); },
      py::arg("name"));
}
