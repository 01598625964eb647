// Python bindings for the numerics most useful from scripts: saliency,
// patch selection, schedules, the contrastive loss value and evaluation
// metrics. Arrays cross the boundary as numpy float32/float64.
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <stdexcept>

#include "ssit/eval.hpp"
#include "ssit/pretrain.hpp"
#include "ssit/saliency.hpp"
#include "ssit/tensor.hpp"

namespace py = pybind11;
using namespace ssit;

namespace {

Image image_from_array(const py::array_t<float, py::array::c_style |
                                                    py::array::forcecast>& a) {
  if (a.ndim() != 2 && a.ndim() != 3)
    throw std::invalid_argument("expected a HxW or HxWxC array");
  const size_t h = static_cast<size_t>(a.shape(0));
  const size_t w = static_cast<size_t>(a.shape(1));
  const size_t c = a.ndim() == 3 ? static_cast<size_t>(a.shape(2)) : 1;
  Image img(h, w, c);
  std::copy(a.data(), a.data() + h * w * c, img.pixels.begin());
  return img;
}

py::array_t<float> map_to_array(const SaliencyMap& m) {
  py::array_t<float> out({m.height, m.width});
  std::copy(m.values.begin(), m.values.end(), out.mutable_data());
  return out;
}

Tensor tensor_from_array(
    const py::array_t<float, py::array::c_style | py::array::forcecast>& a) {
  if (a.ndim() != 2) throw std::invalid_argument("expected a 2-D array");
  Shape shape{static_cast<size_t>(a.shape(0)), static_cast<size_t>(a.shape(1))};
  std::vector<float> data(a.data(), a.data() + a.size());
  return Tensor::from_data(shape, std::move(data));
}

py::array_t<float> tensor_to_array(const Tensor& t) {
  if (t.rank() != 2) throw std::invalid_argument("expected a 2-D tensor");
  py::array_t<float> out({t.dim(0), t.dim(1)});
  std::copy(t.data().begin(), t.data().end(), out.mutable_data());
  return out;
}

}  // namespace

PYBIND11_MODULE(_ssit, m) {
  m.doc() = "saliency-guided self-supervised transformer core";

  m.def(
      "fine_grained_saliency",
      [](const py::array_t<float, py::array::c_style | py::array::forcecast>&
             a) { return map_to_array(fine_grained_saliency(image_from_array(a))); },
      py::arg("image"));
  m.def(
      "spectral_residual_saliency",
      [](const py::array_t<float, py::array::c_style | py::array::forcecast>&
             a) {
        return map_to_array(spectral_residual_saliency(image_from_array(a)));
      },
      py::arg("image"));

  m.def(
      "patch_scores",
      [](const py::array_t<float, py::array::c_style | py::array::forcecast>&
             a,
         size_t patch) {
        if (a.ndim() != 2) throw std::invalid_argument("expected a 2-D map");
        SaliencyMap map(static_cast<size_t>(a.shape(0)),
                        static_cast<size_t>(a.shape(1)));
        std::copy(a.data(), a.data() + a.size(), map.values.begin());
        PatchScores s = patch_scores(map, patch);
        py::array_t<float> out({s.grid_h, s.grid_w});
        std::copy(s.scores.begin(), s.scores.end(), out.mutable_data());
        return out;
      },
      py::arg("map"), py::arg("patch"));

  m.def(
      "select_salient",
      [](const std::vector<float>& scores, double mask_ratio_percent) {
        PatchScores s;
        s.grid_h = 1;
        s.grid_w = scores.size();
        s.scores = scores;
        return select_salient(s, mask_ratio_percent).kept_indices;
      },
      py::arg("scores"), py::arg("mask_ratio_percent"));

  m.def(
      "contrastive_loss",
      [](const py::array_t<float, py::array::c_style | py::array::forcecast>&
             q,
         const py::array_t<float, py::array::c_style | py::array::forcecast>&
             k,
         double tau) {
        return contrastive_loss(tensor_from_array(q), tensor_from_array(k),
                                tau)
            .item();
      },
      py::arg("q"), py::arg("k"), py::arg("tau"));

  m.def(
      "schedules",
      [](size_t step, double base_lr, size_t warmup_epochs,
         size_t total_epochs, size_t steps_per_epoch, double alpha_lo,
         double alpha_hi) {
        ScheduleConfig cfg;
        cfg.base_lr = base_lr;
        cfg.warmup_epochs = warmup_epochs;
        cfg.total_epochs = total_epochs;
        cfg.steps_per_epoch = steps_per_epoch;
        cfg.alpha_lo = alpha_lo;
        cfg.alpha_hi = alpha_hi;
        return schedules(step, cfg);
      },
      py::arg("step"), py::arg("base_lr") = 1e-3,
      py::arg("warmup_epochs") = 5, py::arg("total_epochs") = 30,
      py::arg("steps_per_epoch") = 1, py::arg("alpha_lo") = 0.99,
      py::arg("alpha_hi") = 1.0);

  m.def(
      "quadratic_weighted_kappa",
      [](const std::vector<int>& truth, const std::vector<int>& pred,
         int grades) {
        return quadratic_weighted_kappa(confusion(truth, pred, grades));
      },
      py::arg("truth"), py::arg("pred"), py::arg("grades"));

  m.def("knn_classify", &knn_classify, py::arg("train_reprs"),
        py::arg("train_labels"), py::arg("queries"), py::arg("k"),
        py::arg("grades"));

  m.def(
      "softmax",
      [](const py::array_t<float, py::array::c_style | py::array::forcecast>&
             a) { return tensor_to_array(softmax(tensor_from_array(a))); },
      py::arg("x"));
  m.def(
      "gelu",
      [](const py::array_t<float, py::array::c_style | py::array::forcecast>&
             a) { return tensor_to_array(gelu(tensor_from_array(a))); },
      py::arg("x"));
}
