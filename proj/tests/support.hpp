#pragma once

// Helpers shared by the unit and acceptance suites: random model builders
// and a central finite-difference gradient oracle evaluated in double
// precision through forward_reference().

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "rlvs/backward.hpp"
#include "rlvs/forward.hpp"
#include "rlvs/model.hpp"
#include "rlvs/rng.hpp"

namespace rlvs::testing {

inline Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(shape);
  for (float& v : t.values()) v = static_cast<float>(rng.uniform(lo, hi));
  return t;
}

inline void randomize_parameters(Model& model, Rng& rng, double scale, bool with_bias) {
  for (Layer& l : model.layers()) {
    if (!l.has_parameters()) continue;
    const Shape ws = l.weights.shape();
    const double limit = scale * std::sqrt(6.0 / (static_cast<double>(ws.c) * ws.h * ws.w));
    for (float& w : l.weights.values()) w = static_cast<float>(rng.uniform(-limit, limit));
    for (float& b : l.bias) b = with_bias ? static_cast<float>(rng.uniform(-0.1, 0.3)) : 0.0f;
  }
}

// Random conv net exercising conv, relu, a pool, an inception-style concat,
// global average pooling and a dense classifier.
inline Model random_relevance_model(Rng& rng, bool with_bias) {
  const std::uint32_t size = 8 + static_cast<std::uint32_t>(rng.below(5));
  const std::uint32_t classes = 2 + static_cast<std::uint32_t>(rng.below(3));
  Model m(Shape{1, 3, size, size}, classes);
  const std::uint32_t k1 = rng.bernoulli(0.5) ? 3 : 5;
  std::string x = m.conv2d("conv1", std::string(kModelInput),
                           4 + static_cast<std::uint32_t>(rng.below(5)), k1, 1, k1 / 2);
  x = m.relu("relu1", x);
  x = rng.bernoulli(0.5) ? m.maxpool("pool1", x, 2, 2) : m.avgpool("pool1", x, 2, 2);
  const std::string a = m.relu("branch_a_relu", m.conv2d("branch_a", x, 2 + static_cast<std::uint32_t>(rng.below(4)), 1));
  const std::string b = m.relu("branch_b_relu", m.conv2d("branch_b", x, 2 + static_cast<std::uint32_t>(rng.below(4)), 3, 1, 1));
  x = m.concat("mixed", {a, b});
  x = m.relu("relu3", m.conv2d("conv3", x, 4 + static_cast<std::uint32_t>(rng.below(6)), 3, 1, 1));
  x = m.global_avgpool("gap", x);
  m.dense("fc", x, classes);
  randomize_parameters(m, rng, 1.0, with_bias);
  return m;
}

struct GradCheck {
  std::size_t checked = 0;    // entries with a non-negligible gradient
  std::size_t failed = 0;
  std::size_t skipped = 0;    // perturbation crossed a kink (ReLU/max switch)
  double max_rel_error = 0.0;
};

struct GradCheckOptions {
  double step = 1e-4;
  double tolerance = 1e-3;
  std::size_t samples = 100;
};

namespace detail {

// L = sum(g * logits) in double precision.
inline double linear_loss(const Model& m, const TensorD& x, const TensorD& g) {
  const TensorD logits = forward_reference(m, x);
  double acc = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) acc += logits[i] * g[i];
  return acc;
}

// Compares one analytic derivative with the central difference built from
// three loss evaluations; `step` is the exact perturbation applied. Away
// from ReLU/max kinks the network is piecewise linear in each entry, so the
// one-sided slopes agree to rounding; a disagreement larger than a tenth of
// the tolerance means the perturbation crossed a kink and the entry is
// skipped.
inline void record(GradCheck& out, double analytic, double lo, double mid, double hi,
                   double step, double tolerance) {
  const double numeric = (hi - lo) / (2.0 * step);
  const double forward_d = (hi - mid) / step;
  const double backward_d = (mid - lo) / step;
  const double scale = std::max(std::abs(forward_d), std::abs(backward_d));
  if (std::abs(forward_d - backward_d) > 0.1 * tolerance * scale + 1e-9) {
    ++out.skipped;
    return;
  }
  const double denom = std::max(std::abs(analytic), std::abs(numeric));
  if (denom < 1e-6) return;
  const double rel = std::abs(analytic - numeric) / denom;
  ++out.checked;
  out.max_rel_error = std::max(out.max_rel_error, rel);
  if (rel >= tolerance) ++out.failed;
}

}  // namespace detail

// Samples parameters of layer `layer_index` (weights and biases) until
// `samples` non-trivial entries have been compared.
inline GradCheck check_parameter_gradients(Model model, const Tensor& input, std::size_t layer_index,
                                           Rng& rng, GradCheckOptions opt = {}) {
  const Tensor g = random_tensor(forward(model, input).logits.shape(), rng);
  const auto fwd = forward(model, input, true);
  const Gradients grads = backward(model, *fwd.trace, g, {.input_grad = false});
  const TensorD xd = input.cast<double>();
  const TensorD gd = g.cast<double>();
  const double mid = detail::linear_loss(model, xd, gd);

  Layer& layer = model.layers()[layer_index];
  const std::size_t n_w = layer.weights.size();
  const std::size_t total = n_w + layer.bias.size();
  GradCheck out;
  for (std::size_t attempt = 0; attempt < 20 * opt.samples && out.checked < opt.samples; ++attempt) {
    const std::size_t idx = rng.below(total);
    float& p = idx < n_w ? layer.weights[idx] : layer.bias[idx - n_w];
    const double analytic = idx < n_w ? grads.layers[layer_index].weights[idx]
                                      : grads.layers[layer_index].bias[idx - n_w];
    const float orig = p;
    const float up = static_cast<float>(orig + opt.step);
    const float down = static_cast<float>(orig - opt.step);
    p = up;
    const double hi = detail::linear_loss(model, xd, gd);
    p = down;
    const double lo = detail::linear_loss(model, xd, gd);
    p = orig;
    const double step = (static_cast<double>(up) - static_cast<double>(down)) / 2.0;
    detail::record(out, analytic, lo, mid, hi, step, opt.tolerance);
  }
  return out;
}

// Samples input entries; exercises every layer on the path to the logits.
inline GradCheck check_input_gradients(const Model& model, const Tensor& input, Rng& rng,
                                       GradCheckOptions opt = {}) {
  const Tensor g = random_tensor(forward(model, input).logits.shape(), rng);
  const auto fwd = forward(model, input, true);
  const Gradients grads = backward(model, *fwd.trace, g);
  TensorD xd = input.cast<double>();
  const TensorD gd = g.cast<double>();
  const double mid = detail::linear_loss(model, xd, gd);
  GradCheck out;
  for (std::size_t attempt = 0; attempt < 20 * opt.samples && out.checked < opt.samples; ++attempt) {
    const std::size_t idx = rng.below(xd.size());
    const double orig = xd[idx];
    xd[idx] = orig + opt.step;
    const double hi = detail::linear_loss(model, xd, gd);
    xd[idx] = orig - opt.step;
    const double lo = detail::linear_loss(model, xd, gd);
    xd[idx] = orig;
    detail::record(out, grads.input[idx], lo, mid, hi, opt.step, opt.tolerance);
  }
  return out;
}

}  // namespace rlvs::testing
