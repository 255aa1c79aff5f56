// Copyright (c) 2026 the echodiff authors
// SPDX-License-Identifier: Apache-2.0

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <cstdio>
#include <optional>

#include "echodiff/checkpoint.hpp"
#include "echodiff/grad_check.hpp"
#include "echodiff/pipeline.hpp"
#include "echodiff/sampling.hpp"

namespace py = pybind11;
using namespace echodiff;

namespace {

template <typename T>
Tensor<T> tensor_from_array(const py::array_t<T, py::array::c_style | py::array::forcecast>& a) {
    Shape shape(static_cast<std::size_t>(a.ndim()));
    for (py::ssize_t i = 0; i < a.ndim(); ++i) shape[static_cast<std::size_t>(i)] = a.shape(i);
    std::vector<T> data(a.data(), a.data() + a.size());
    return Tensor<T>(std::move(shape), std::move(data));
}

template <typename T>
py::array_t<T> array_from_tensor(const Tensor<T>& t) {
    std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
    py::array_t<T> out(shape);
    std::copy(t.data().begin(), t.data().end(), out.mutable_data());
    return out;
}

DisplayImage display_from_array(const py::array_t<double, py::array::c_style | py::array::forcecast>& a) {
    if (a.ndim() != 2) throw UsageError("expected a 2-D image array");
    DisplayImage img;
    img.h = static_cast<int>(a.shape(0));
    img.w = static_cast<int>(a.shape(1));
    img.pix.assign(a.data(), a.data() + a.size());
    return img;
}

Mask mask_from_array(const py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast>& a) {
    if (a.ndim() != 2) throw UsageError("expected a 2-D mask array");
    Mask m;
    m.h = static_cast<int>(a.shape(0));
    m.w = static_cast<int>(a.shape(1));
    m.codes.assign(a.data(), a.data() + a.size());
    return m;
}

std::string config_value_to_string(const py::handle& v) {
    if (py::isinstance<py::bool_>(v)) return v.cast<bool>() ? "true" : "false";
    if (py::isinstance<py::int_>(v)) return std::to_string(v.cast<long long>());
    if (py::isinstance<py::float_>(v)) {
        char buf[40];
        std::snprintf(buf, sizeof(buf), "%.17g", v.cast<double>());
        return buf;
    }
    return v.cast<std::string>();
}

RunConfig config_from_dict(const py::dict& d) {
    RunConfig cfg;
    for (auto item : d) {
        cfg.apply_override(item.first.cast<std::string>() + "=" + config_value_to_string(item.second));
    }
    cfg.validate();
    return cfg;
}

py::dict report_to_dict(const MetricsReport& r) {
    py::dict out;
    out["fid"] = r.fid;
    out["fid_source"] = r.fid_source ? py::cast(*r.fid_source) : py::none();
    out["extractor"] = r.extractor_id;
    out["config_fingerprint"] = r.config_fingerprint;
    py::list rows;
    for (const auto& row : r.rows) {
        py::dict jr;
        jr["id"] = row.id;
        jr["mse"] = row.mse;
        jr["psnr_db"] = row.psnr_db ? py::cast(*row.psnr_db) : py::none();
        jr["ssim"] = row.ssim;
        rows.append(jr);
    }
    out["rows"] = rows;
    auto agg = [](const std::optional<MetricAggregate>& a) -> py::object {
        if (!a || a->count == 0) return py::none();
        py::dict d;
        d["mean"] = a->mean;
        d["stddev"] = a->stddev;
        d["count"] = a->count;
        return d;
    };
    out["mse"] = agg(r.mse_agg);
    out["psnr_db"] = agg(r.psnr_agg);
    out["ssim"] = agg(r.ssim_agg);
    return out;
}

/// Checkpointed model handle for single-image translation.
class Model {
public:
    explicit Model(const std::filesystem::path& path) : loaded_(load_checkpoint(path)) {}

    int side() const { return loaded_.config.image_side; }
    int reverse_steps() const { return loaded_.schedule.reverse_steps(); }
    std::string fingerprint() const { return loaded_.fingerprint; }

    py::array_t<float> translate_mask(const py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast>& m,
                                      std::uint64_t seed) {
        Mask mask = mask_from_array(m);
        if (mask.h != side() || mask.w != side()) mask = resize(mask, side());
        const auto guide = guide_to_tensor(mask, loaded_.config.model_onehot_mask);
        const auto result = reverse_sample(loaded_.state->gen, guide, seed, loaded_.schedule);
        const auto img = tensor_to_image(result.image);
        py::array_t<float> out({img.h, img.w});
        std::copy(img.pix.begin(), img.pix.end(), out.mutable_data());
        return out;
    }

private:
    LoadedCheckpoint loaded_;
};

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Adversarial denoising-diffusion domain translation core";

    py::register_exception_translator([](std::exception_ptr p) {
        try {
            if (p) std::rethrow_exception(p);
        } catch (const UsageError& e) {
            PyErr_SetString(PyExc_ValueError, e.what());
        } catch (const NumericError& e) {
            PyErr_SetString(PyExc_ArithmeticError, e.what());
        } catch (const Error& e) {
            PyErr_SetString(PyExc_RuntimeError, e.what());
        }
    });

    py::class_<NoiseSchedule>(m, "NoiseSchedule")
        .def_readonly("total_steps", &NoiseSchedule::total_steps)
        .def_readonly("span", &NoiseSchedule::span)
        .def_readonly("beta", &NoiseSchedule::beta)
        .def_readonly("alpha_bar", &NoiseSchedule::alpha_bar)
        .def("reverse_steps", &NoiseSchedule::reverse_steps)
        .def("alpha_bar_at", &NoiseSchedule::alpha_bar_at);

    m.def("make_schedule", &make_schedule, py::arg("total_steps"), py::arg("span"), py::arg("beta_min"),
          py::arg("beta_max"), py::arg("variance_floor_scale") = 1e-4, py::arg("variance_ceiling_scale") = 1.0);

    m.def("span_coefficients", [](const NoiseSchedule& s, int t) {
        const auto c = span_coefficients(s, t);
        py::dict d;
        d["t"] = c.t;
        d["alpha_span"] = c.alpha_span;
        d["beta_span"] = c.beta_span;
        d["posterior_mean_coeff_x0"] = c.posterior_mean_coeff_x0;
        d["posterior_mean_coeff_xt"] = c.posterior_mean_coeff_xt;
        d["posterior_variance"] = c.posterior_variance;
        return d;
    });

    m.def("forward_marginal",
          [](py::array_t<double> x0, int t, py::array_t<double> eps, const NoiseSchedule& s) {
              return array_from_tensor(forward_marginal(tensor_from_array<double>(x0), t,
                                                        tensor_from_array<double>(eps), s));
          },
          py::arg("x0"), py::arg("t"), py::arg("eps"), py::arg("schedule"));

    m.def("forward_span",
          [](py::array_t<double> x_prev, int t, py::array_t<double> eps, const NoiseSchedule& s) {
              return array_from_tensor(forward_span(tensor_from_array<double>(x_prev), t,
                                                    tensor_from_array<double>(eps), s));
          },
          py::arg("x_prev"), py::arg("t"), py::arg("eps"), py::arg("schedule"));

    m.def("posterior",
          [](py::array_t<double> x0_hat, py::array_t<double> x_t, int t, const NoiseSchedule& s) {
              const auto p = posterior(tensor_from_array<double>(x0_hat), tensor_from_array<double>(x_t), t, s);
              return py::make_tuple(array_from_tensor(p.mean), p.variance);
          },
          py::arg("x0_hat"), py::arg("x_t"), py::arg("t"), py::arg("schedule"));

    m.def("mse", [](py::array_t<double> a, py::array_t<double> b) {
        return mse(display_from_array(a), display_from_array(b));
    });
    m.def("psnr",
          [](py::array_t<double> a, py::array_t<double> b, double max_value) -> py::object {
              const auto v = psnr(display_from_array(a), display_from_array(b), max_value);
              return v ? py::cast(*v) : py::none();
          },
          py::arg("a"), py::arg("b"), py::arg("max_value") = 255.0);
    m.def("ssim",
          [](py::array_t<double> a, py::array_t<double> b, double max_value) {
              return ssim(display_from_array(a), display_from_array(b), max_value);
          },
          py::arg("a"), py::arg("b"), py::arg("max_value") = 255.0);
    m.def("extract_features", [](py::array_t<double> img) {
        const auto f = extract_features(display_from_array(img));
        py::array_t<double> out(static_cast<py::ssize_t>(f.size()));
        std::copy(f.begin(), f.end(), out.mutable_data());
        return out;
    });
    m.def("frechet_from_features",
          [](py::array_t<double, py::array::c_style | py::array::forcecast> a,
             py::array_t<double, py::array::c_style | py::array::forcecast> b) {
              auto unpack = [](const py::array_t<double, py::array::c_style | py::array::forcecast>& arr) {
                  if (arr.ndim() != 2) throw UsageError("expected [n, d] feature arrays");
                  std::vector<std::vector<double>> rows(static_cast<std::size_t>(arr.shape(0)));
                  for (py::ssize_t i = 0; i < arr.shape(0); ++i) {
                      rows[static_cast<std::size_t>(i)].assign(arr.data() + i * arr.shape(1),
                                                               arr.data() + (i + 1) * arr.shape(1));
                  }
                  return compute_feature_stats(rows);
              };
              return frechet_distance(unpack(a), unpack(b));
          });

    m.def("encode_mask_gray", [](py::array_t<std::uint8_t> mask) {
        const auto img = encode_mask_gray(mask_from_array(mask));
        py::array_t<float> out({img.h, img.w});
        std::copy(img.pix.begin(), img.pix.end(), out.mutable_data());
        return out;
    });
    m.def("decode_mask_gray", [](py::array_t<float, py::array::c_style | py::array::forcecast> guide) {
        if (guide.ndim() != 2) throw UsageError("expected a 2-D guide array");
        Image img;
        img.h = static_cast<int>(guide.shape(0));
        img.w = static_cast<int>(guide.shape(1));
        img.pix.assign(guide.data(), guide.data() + guide.size());
        const auto mask = decode_mask_gray(img);
        py::array_t<std::uint8_t> out({mask.h, mask.w});
        std::copy(mask.codes.begin(), mask.codes.end(), out.mutable_data());
        return out;
    });

    m.def("generate_phantoms",
          [](const std::filesystem::path& out, int n, const std::string& style, std::uint64_t seed, int side,
             bool force) { return run_phantom(out, n, style, seed, side, force).string(); },
          py::arg("out"), py::arg("n"), py::arg("style") = "a", py::arg("seed") = 1, py::arg("side") = 64,
          py::arg("force") = false);

    m.def("train",
          [](const std::filesystem::path& data, const std::filesystem::path& out, const py::dict& config,
             bool force) { return run_train(config_from_dict(config), data, out, force).string(); },
          py::arg("data"), py::arg("out"), py::arg("config") = py::dict(), py::arg("force") = false);

    m.def("translate",
          [](const std::filesystem::path& checkpoint, const std::filesystem::path& data,
             const std::filesystem::path& out, std::uint64_t seed, bool force) {
              const auto o = run_translate(checkpoint, data, out, seed, std::nullopt, false, force);
              py::dict d;
              d["manifest"] = o.manifest.string();
              d["samples"] = o.samples;
              d["generator_calls"] = o.generator_calls;
              return d;
          },
          py::arg("checkpoint"), py::arg("data"), py::arg("out"), py::arg("seed") = 1, py::arg("force") = false);

    m.def("evaluate",
          [](const std::filesystem::path& generated, const std::filesystem::path& reference,
             const std::optional<std::filesystem::path>& ground_truth,
             const std::optional<std::filesystem::path>& source, const std::filesystem::path& out,
             const py::dict& config, bool force) {
              return report_to_dict(
                  run_evaluate(generated, reference, ground_truth, source, out, config_from_dict(config), force));
          },
          py::arg("generated"), py::arg("reference"), py::arg("ground_truth") = py::none(),
          py::arg("source") = py::none(), py::arg("out"), py::arg("config") = py::dict(),
          py::arg("force") = false);

    m.def("config_fingerprint",
          [](const py::dict& config) { return config_from_dict(config).fingerprint(); },
          py::arg("config") = py::dict());

    py::class_<Model>(m, "Model")
        .def(py::init<const std::filesystem::path&>(), py::arg("checkpoint"))
        .def_property_readonly("side", &Model::side)
        .def_property_readonly("fingerprint", &Model::fingerprint)
        .def("reverse_steps", &Model::reverse_steps)
        .def("translate_mask", &Model::translate_mask, py::arg("mask"), py::arg("seed") = 1);
}
