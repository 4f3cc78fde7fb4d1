// SPDX-License-Identifier: Apache-2.0
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

#include "danet/app.hpp"
#include "danet/attention.hpp"
#include "danet/errors.hpp"
#include "danet/io.hpp"
#include "danet/train.hpp"
#include "danet/verify.hpp"

namespace py = pybind11;
using namespace danet;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;
using T64 = Tensor<double>;

T64 to_tensor(const Array& a) {
  Shape shape(a.shape(), a.shape() + a.ndim());
  return T64(shape, std::vector<double>(a.data(), a.data() + a.size()));
}

Array to_array(const T64& t) {
  Array out(std::vector<py::ssize_t>(t.shape().begin(), t.shape().end()));
  std::copy(t.data().begin(), t.data().end(), out.mutable_data());
  return out;
}

Conv2dParams<double> pointwise(const Array& weight, const Array& bias) {
  Conv2dParams<double> p;
  auto w = to_tensor(weight);
  if (w.dim() == 2) w = T64({w.size(0), w.size(1), 1, 1}, w.values());
  p.weight = w;
  p.bias = to_tensor(bias);
  p.has_bias = true;
  return p;
}

LabelMap to_labels(const py::array_t<std::int32_t, py::array::c_style | py::array::forcecast>& a) {
  if (a.ndim() != 3 && a.ndim() != 2) throw DimensionError("labels must be [n, h, w] or [h, w]");
  const bool batched = a.ndim() == 3;
  LabelMap m(batched ? a.shape(0) : 1, a.shape(batched ? 1 : 0), a.shape(batched ? 2 : 1));
  std::copy(a.data(), a.data() + a.size(), m.ids.begin());
  return m;
}

class PyModel {
 public:
  PyModel(const std::string& variant, std::uint64_t seed) : model_(config_for(variant), seed) {}
  explicit PyModel(Model<double> m) : model_(std::move(m)) {}

  Array forward(const Array& images) {
    NoGradGuard guard;
    return to_array(model_.forward(to_tensor(images)).main_logits);
  }
  Array predict(const Array& images, const std::vector<double>& scales) {
    return to_array(multi_scale_inference(model_, to_tensor(images), scales));
  }
  std::string variant() const { return variant_name(model_.config().variant); }
  std::int64_t parameter_count() const { return model_.parameter_count(); }
  void save(const std::string& path) const { save_model(model_, path); }

 private:
  static ModelConfig config_for(const std::string& variant) {
    ModelConfig cfg;
    cfg.variant = parse_variant(variant);
    return cfg;
  }
  Model<double> model_;
};

}  // namespace

PYBIND11_MODULE(_danet, m) {
  m.doc() = "Dual attention segmentation core";

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<DimensionError>(m, "DimensionError", PyExc_ValueError);
  py::register_exception<ContractError>(m, "ContractError", PyExc_ValueError);

  m.def(
      "position_attention",
      [](const Array& a, const Array& wb, const Array& bb, const Array& wc, const Array& bc, const Array& wd,
         const Array& bd, double alpha) {
        PositionAttentionParams<double> p{pointwise(wb, bb), pointwise(wc, bc), pointwise(wd, bd),
                                          T64::scalar(alpha)};
        const auto r = position_attention_forward(to_tensor(a), p);
        return py::make_tuple(to_array(r.features), to_array(r.map.matrix));
      },
      py::arg("a"), py::arg("wb"), py::arg("bb"), py::arg("wc"), py::arg("bc"), py::arg("wd"), py::arg("bd"),
      py::arg("alpha"), "Position attention on [n, c, h, w]; returns (features, attention [n, hw, hw]).");

  m.def(
      "channel_attention",
      [](const Array& a, double beta) {
        ChannelAttentionParams<double> p{T64::scalar(beta)};
        const auto r = channel_attention_forward(to_tensor(a), p);
        return py::make_tuple(to_array(r.features), to_array(r.map.matrix));
      },
      py::arg("a"), py::arg("beta"), "Channel attention on [n, c, h, w]; returns (features, attention [n, c, c]).");

  m.def("poly_lr", &poly_lr, py::arg("iteration"), py::arg("total"), py::arg("base_lr") = 0.01,
        py::arg("power") = 0.9);

  m.def(
      "mean_iou",
      [](const py::array_t<std::int32_t, py::array::c_style | py::array::forcecast>& pred,
         const py::array_t<std::int32_t, py::array::c_style | py::array::forcecast>& labels,
         std::int64_t num_classes) {
        const auto r = mean_iou(to_labels(pred), to_labels(labels), num_classes);
        py::dict d;
        d["mean_iou"] = r.mean_iou;
        d["pixel_accuracy"] = r.pixel_accuracy;
        d["per_class_iou"] = r.per_class_iou;
        d["confusion"] = r.confusion;
        return d;
      },
      py::arg("pred"), py::arg("labels"), py::arg("num_classes"));

  m.def(
      "generate_sample",
      [](std::uint64_t seed, std::int64_t height, std::int64_t width) {
        SceneConfig cfg;
        cfg.height = height;
        cfg.width = width;
        const auto s = generate_sample(cfg, seed);
        py::array_t<float> image({py::ssize_t{3}, py::ssize_t(s.height), py::ssize_t(s.width)});
        std::copy(s.image.begin(), s.image.end(), image.mutable_data());
        py::array_t<std::int32_t> labels({py::ssize_t(s.height), py::ssize_t(s.width)});
        std::copy(s.labels.begin(), s.labels.end(), labels.mutable_data());
        return py::make_tuple(image, labels);
      },
      py::arg("seed"), py::arg("height") = 64, py::arg("width") = 64,
      "One synthetic scene: (image [3, h, w] in [0, 1], labels [h, w]).");

  m.def(
      "quantize_minmax",
      [](const Array& values) {
        const auto q = io::quantize_minmax(std::span<const double>(values.data(), static_cast<size_t>(values.size())));
        py::array_t<std::uint8_t> out(std::vector<py::ssize_t>(values.shape(), values.shape() + values.ndim()));
        std::copy(q.begin(), q.end(), out.mutable_data());
        return out;
      },
      py::arg("values"));

  m.def(
      "verify",
      [](std::uint64_t seed, int trials) {
        py::list out;
        for (const auto& r : run_verification(seed, trials)) {
          py::dict d;
          d["name"] = r.name;
          d["passed"] = r.passed;
          d["worst"] = r.worst;
          d["tolerance"] = r.tolerance;
          d["detail"] = r.detail;
          out.append(d);
        }
        return out;
      },
      py::arg("seed") = 0, py::arg("trials") = 8, "Runs the self-check suite; one dict per property.");

  m.def(
      "run_cli",
      [](const std::vector<std::string>& args) {
        std::vector<std::string> all{"danet"};
        all.insert(all.end(), args.begin(), args.end());
        std::vector<const char*> argv;
        for (const auto& a : all) argv.push_back(a.c_str());
        std::ostringstream out, err;
        const int code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
        return py::make_tuple(code, out.str(), err.str());
      },
      py::arg("args"), "Runs a command line; returns (exit code, stdout, stderr).");

  py::class_<PyModel>(m, "Model")
      .def(py::init<const std::string&, std::uint64_t>(), py::arg("variant") = "dual", py::arg("seed") = 0)
      .def_static(
          "load", [](const std::string& path) { return PyModel(load_model<double>(path)); }, py::arg("path"))
      .def("forward", &PyModel::forward, py::arg("images"), "Main-head logits for [n, 3, h, w] images.")
      .def("predict", &PyModel::predict, py::arg("images"), py::arg("scales") = std::vector<double>{1.0},
           "Multi-scale class probabilities.")
      .def("save", &PyModel::save, py::arg("path"))
      .def_property_readonly("variant", &PyModel::variant)
      .def_property_readonly("parameter_count", &PyModel::parameter_count);
}
