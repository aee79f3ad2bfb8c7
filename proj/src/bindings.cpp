#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

#include "guarddoor/attacks.hpp"
#include "guarddoor/checkpoint.hpp"
#include "guarddoor/config.hpp"
#include "guarddoor/guard.hpp"
#include "guarddoor/metrics.hpp"
#include "guarddoor/pipeline.hpp"
#include "guarddoor/vae.hpp"

namespace py = pybind11;
using namespace gd;

namespace {

Tensor tensor_from_array(const py::array_t<float, py::array::c_style | py::array::forcecast>& a) {
    Shape shape(a.ndim());
    for (py::ssize_t i = 0; i < a.ndim(); ++i) shape[i] = static_cast<int>(a.shape(i));
    std::vector<float> data(a.data(), a.data() + a.size());
    return Tensor::from_data(std::move(shape), std::move(data));
}

py::array_t<float> array_from_tensor(const Tensor& t) {
    std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
    py::array_t<float> a(shape);
    std::copy(t.data().begin(), t.data().end(), a.mutable_data());
    return a;
}

AttackSpec make_spec(const std::string& kind, const std::map<std::string, double>& params,
                     std::uint64_t seed) {
    AttackSpec spec;
    spec.kind = kind;
    spec.params = params;
    spec.seed = seed;
    spec.validate();
    return spec;
}

}  // namespace

PYBIND11_MODULE(_guarddoor, m) {
    m.doc() = "protective image backdoor toolkit: triggers, attacks, metrics, pipeline steps";

    // ---- metrics -----------------------------------------------------------
    m.def(
        "ssim", [](py::array_t<float> a, py::array_t<float> b) {
            return ssim(tensor_from_array(a), tensor_from_array(b));
        },
        py::arg("a"), py::arg("b"));
    m.def(
        "psnr", [](py::array_t<float> a, py::array_t<float> b) {
            return psnr(tensor_from_array(a), tensor_from_array(b));
        },
        py::arg("a"), py::arg("b"));
    m.def(
        "mse", [](py::array_t<float> a, py::array_t<float> b) {
            return mse_value(tensor_from_array(a), tensor_from_array(b));
        },
        py::arg("a"), py::arg("b"));
    m.def(
        "protect_score",
        [](py::array_t<float> edited_protected, py::array_t<float> edited_clean,
           py::array_t<float> x_tar) {
            return protect_score(tensor_from_array(edited_protected),
                                 tensor_from_array(edited_clean), tensor_from_array(x_tar));
        },
        py::arg("edited_protected"), py::arg("edited_clean"), py::arg("x_tar"));

    // ---- attacks -----------------------------------------------------------
    m.def(
        "apply_attack",
        [](const std::string& kind, py::array_t<float> x, const std::map<std::string, double>& params,
           std::uint64_t seed) {
            AttackSpec spec = make_spec(kind, params, seed);
            if (spec.kind == "recon_purify" || spec.kind == "impress")
                throw std::invalid_argument("attack '" + spec.kind +
                                            "' needs a model; use the pipeline CLI instead");
            AttackContext ctx;
            return array_from_tensor(apply_attack(spec, tensor_from_array(x), ctx));
        },
        py::arg("kind"), py::arg("x"), py::arg("params") = std::map<std::string, double>{},
        py::arg("seed") = 0,
        "Apply a preprocessing attack (gaussian_noise, gaussian_blur, jpeg, resample) to a "
        "(N,C,H,W) float image batch in [0,1].");

    // ---- models ------------------------------------------------------------
    py::class_<VAEParams>(m, "VAE")
        .def_static(
            "load",
            [](const std::string& path) { return vae_from_checkpoint(Checkpoint::load(path)); },
            py::arg("path"))
        .def_property_readonly("latent_channels",
                               [](const VAEParams& v) { return v.latent_channels; })
        .def(
            "encode",
            [](const VAEParams& v, py::array_t<float> x) {
                return array_from_tensor(vae_encode(v, tensor_from_array(x)).first);
            },
            py::arg("x"), "Posterior mean latent of a (N,3,H,W) batch.")
        .def(
            "decode",
            [](const VAEParams& v, py::array_t<float> z) {
                return array_from_tensor(vae_decode(v, tensor_from_array(z)));
            },
            py::arg("z"))
        .def(
            "protect",
            [](const VAEParams& v, py::array_t<float> x) {
                ImageBatch batch;
                batch.data = tensor_from_array(x);
                batch.ids.resize(batch.data.shape()[0]);
                return array_from_tensor(protect(v, batch).data);
            },
            py::arg("x"),
            "Embed the protective trigger: reconstruct the batch through the trigger model.");

    py::class_<EditorParams>(m, "Editor")
        .def_static(
            "load",
            [](const std::string& path) { return editor_from_checkpoint(Checkpoint::load(path)); },
            py::arg("path"))
        .def(
            "encode",
            [](const EditorParams& e, py::array_t<float> x) {
                return array_from_tensor(e.encode(tensor_from_array(x)));
            },
            py::arg("x"))
        .def(
            "decode",
            [](const EditorParams& e, py::array_t<float> z) {
                return array_from_tensor(e.decode(tensor_from_array(z)));
            },
            py::arg("z"))
        .def(
            "gate",
            [](const EditorParams& e, py::array_t<float> x) {
                return array_from_tensor(e.gate(tensor_from_array(x)));
            },
            py::arg("x"), "Detector response map in (0,1), shape (B,1,H/4,W/4).");

    // ---- config & pipeline -------------------------------------------------
    py::class_<RunConfig>(m, "RunConfig")
        .def_static("defaults", &RunConfig::defaults)
        .def_static("from_json", &RunConfig::from_json_text, py::arg("text"))
        .def_static("load", &RunConfig::load, py::arg("path"))
        .def("to_json", &RunConfig::to_json_text)
        .def("set", &RunConfig::apply_override, py::arg("key_equals_value"))
        .def("hash", &RunConfig::hash)
        .def_property(
            "seed", [](const RunConfig& c) { return c.seed; },
            [](RunConfig& c, std::uint64_t s) {
                c.seed = s;
                c.derive_seeds();
            })
        .def_property(
            "out_dir", [](const RunConfig& c) { return c.out_dir; },
            [](RunConfig& c, const std::string& d) { c.out_dir = d; });

    m.def("gen_data", [](const RunConfig& c) { step_gen_data(c); }, py::arg("config"));
    m.def("train_vae", [](const RunConfig& c) { step_train_vae(c); }, py::arg("config"));
    m.def("train_editor", [](const RunConfig& c) { step_train_editor(c); }, py::arg("config"));
    m.def("train_denoiser", [](const RunConfig& c) { step_train_denoiser(c); }, py::arg("config"));
    m.def("inject", [](const RunConfig& c) { step_inject(c); }, py::arg("config"));
    m.def("evaluate", [](const RunConfig& c) { step_evaluate(c); }, py::arg("config"));
    m.def(
        "report",
        [](const RunConfig& c) {
            std::ostringstream out;
            step_report(c, &out);
            return out.str();
        },
        py::arg("config"), "Render the evaluation report and return the markdown text.");
}
