#pragma once

#include <optional>
#include <vector>

#include "rlvs/model.hpp"
#include "rlvs/tensor.hpp"

namespace rlvs {

// Everything relevance propagation and backprop need from one forward pass.
// outputs[i] is layer i's output; for conv2d and dense layers that is the
// pre-activation z (biases included), since nonlinearities are separate
// layers. argmax[i] is filled for maxpool layers only and holds, per output
// element, the winning input offset within the batch item. `input` is what
// the first layer saw, i.e. after the model's input_mean was subtracted.
struct ForwardTrace {
  Tensor input;
  std::vector<Tensor> outputs;
  std::vector<std::vector<std::uint32_t>> argmax;

  std::uint32_t batch() const { return input.shape().n; }
  // Output of the producer feeding `slot` of layer `layer`.
  const Tensor& source(const Model& model, std::size_t layer,
                       std::size_t slot = 0) const;
  const Tensor& logits(const Model& model) const;
};

struct ForwardResult {
  Tensor logits;
  std::optional<ForwardTrace> trace;
};

// Runs the model on a batch. Logits are the output of Model::logits_index(),
// i.e. a terminal softmax is not applied. Throws kShapeMismatch naming the
// offending layer if the input does not match the declared shape.
ForwardResult forward(const Model& model, const Tensor& input,
                      bool capture = false);

// Double-precision evaluation of the same graph, used as a numerical
// reference in verification code.
TensorD forward_reference(const Model& model, const TensorD& input);

// Throws kTraceMismatch unless `trace` has the layout `model` produces.
void check_trace(const Model& model, const ForwardTrace& trace);

// Recomputes every layer from the trace's recorded inputs and reports
// whether all recorded outputs are reproduced bit-for-bit.
bool replay_matches(const Model& model, const ForwardTrace& trace);

// Max-shifted softmax over the channel axis at every (batch, y, x).
Tensor softmax_probs(const Tensor& logits);

}  // namespace rlvs
