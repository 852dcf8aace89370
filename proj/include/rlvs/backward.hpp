#pragma once

#include <vector>

#include "rlvs/forward.hpp"

namespace rlvs {

struct LayerGradients {
  Tensor weights;            // same shape as Layer::weights; empty if none
  std::vector<float> bias;   // same length as Layer::bias
};

struct Gradients {
  Tensor input;                        // d/d(input), input-shaped
  std::vector<LayerGradients> layers;  // one entry per model layer
  // d/d(layer output) for every layer; only kept on request.
  std::vector<Tensor> activations;
};

struct BackwardOptions {
  bool keep_activation_grads = false;
  bool input_grad = true;
};

// Backpropagates `output_grad` (shaped like the logits) through the graph
// recorded in `trace`. A terminal softmax is skipped, matching forward().
Gradients backward(const Model& model, const ForwardTrace& trace,
                   const Tensor& output_grad, BackwardOptions options = {});

}  // namespace rlvs
