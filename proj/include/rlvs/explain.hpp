#pragma once

#include <map>
#include <string>
#include <vector>

#include "rlvs/forward.hpp"
#include "rlvs/heatmap_raster.hpp"

namespace rlvs {

enum class Rule { kEpsilon, kAlphaBeta };
enum class BiasMode { kIncludeInDenominator, kExclude };

// Relevance rules for layer-wise relevance propagation.
//
// epsilon rule:  R_i = sum_j z_ij / (z_j + eps * sign(z_j)) * R_j, sign(0) = +1
// alpha-beta:    R_i = sum_j (alpha * z+_ij / z+_j - beta * z-_ij / z-_j) * R_j
//
// Rules are assigned per layer kind; conv2d, dense, avgpool and
// global_avgpool are the kinds that take a rule (pools act as convolutions
// with uniform positive weights). ReLU and flatten pass relevance through,
// maxpool routes it to the recorded argmax, concat splits it by channel.
struct RuleConfig {
  double epsilon = 1.0;
  double alpha = 1.0;
  double beta = 0.0;
  std::map<LayerKind, Rule> rules{{LayerKind::kDense, Rule::kEpsilon},
                                  {LayerKind::kConv2d, Rule::kAlphaBeta},
                                  {LayerKind::kAvgPool, Rule::kAlphaBeta},
                                  {LayerKind::kGlobalAvgPool, Rule::kAlphaBeta}};
  BiasMode bias_mode = BiasMode::kIncludeInDenominator;
  // When set, validate() also requires alpha - beta == 1.
  bool require_conservation = false;

  Rule rule_for(LayerKind kind) const;
  void validate() const;

  // alpha=1, beta=0 everywhere except an unstabilized (eps=0) epsilon rule
  // at dense layers; with bias excluded this conserves relevance exactly.
  static RuleConfig conserving();
};

// Relevance at every layer output plus the model input, batch-shaped like
// the trace. Layers that receive no relevance hold zero tensors.
struct RelevanceState {
  std::vector<Tensor> layers;
  Tensor input;
  std::size_t target_class = 0;
  std::vector<float> output_relevance;  // the target logit, per batch item
};

RelevanceState propagate_relevance(const Model& model, const ForwardTrace& trace,
                                   std::size_t target_class, const RuleConfig& rules);

// One input-resolution heatmap per batch item: the channel sum of the input
// relevance. Throws kNonFinite naming the layer if relevance blows up.
std::vector<Heatmap> lrp(const Model& model, const ForwardTrace& trace,
                         std::size_t target_class, const RuleConfig& rules = {});

struct LayerRelevanceSum {
  std::string layer;
  double sum = 0.0;
  // Whether every input-to-logits path passes through this layer. Only such
  // layers carry the whole relevance; a branch of a concat holds a share.
  bool on_every_path = true;
  double relative_deviation = 0.0;  // |sum - output| / |output|, 0 off-path
};

struct ConservationReport {
  double output_relevance = 0.0;
  std::vector<LayerRelevanceSum> layers;
  double input_sum = 0.0;
  double input_deviation = 0.0;

  // Largest deviation over on-path layers and the input.
  double max_deviation() const;
};

// Sums relevance per layer for batch item `item`. Deviations are relative
// to the output relevance (absolute when that is zero).
ConservationReport relevance_conservation(const RelevanceState& state, const Model& model,
                                          std::uint32_t item = 0);

// Sums relevance over channels for batch item `item`.
Heatmap channel_collapse(const Tensor& relevance, std::uint32_t item = 0);

}  // namespace rlvs
