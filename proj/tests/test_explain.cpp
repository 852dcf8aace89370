#include <algorithm>
#include <cmath>

#include "doctest.h"
#include "rlvs/explain.hpp"
#include "support.hpp"

using namespace rlvs;

namespace {

void set_weights(Layer& l, std::vector<float> w) { l.weights = Tensor(l.weights.shape(), std::move(w)); }

Model two_input_model(LayerKind kind, std::vector<float> weights) {
  Model m(Shape{1, 2, 1, 1}, 1);
  if (kind == LayerKind::kDense) {
    m.dense("fc", std::string(kModelInput), 1);
  } else {
    m.conv2d("conv", std::string(kModelInput), 1, 1);
  }
  set_weights(m.layers()[0], std::move(weights));
  return m;
}

Tensor two_values(float a, float b) { return Tensor(Shape{1, 2, 1, 1}, {a, b}); }

RuleConfig alpha_beta_everywhere(BiasMode mode) {
  RuleConfig r;
  r.rules[LayerKind::kDense] = Rule::kAlphaBeta;
  r.bias_mode = mode;
  return r;
}

std::size_t largest_logit(const Tensor& logits) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < logits.size(); ++i) {
    if (std::abs(logits[i]) > std::abs(logits[best])) best = i;
  }
  return best;
}

}  // namespace

TEST_CASE("epsilon rule on a two-input dense layer") {
  const Model m = two_input_model(LayerKind::kDense, {1.0f, 1.0f});
  const auto fr = forward(m, two_values(2.0f, 2.0f), true);
  REQUIRE(fr.logits[0] == doctest::Approx(4.0));
  const auto state = propagate_relevance(m, *fr.trace, 0, RuleConfig{});
  CHECK(state.output_relevance[0] == doctest::Approx(4.0));
  CHECK(state.input[0] == doctest::Approx(1.6).epsilon(1e-6));
  CHECK(state.input[1] == doctest::Approx(1.6).epsilon(1e-6));
}

TEST_CASE("alpha-beta rule keeps only positive contributions when beta is 0") {
  const Model m = two_input_model(LayerKind::kConv2d, {1.0f, -1.0f});
  const auto fr = forward(m, two_values(3.0f, 1.0f), true);
  REQUIRE(fr.logits[0] == doctest::Approx(2.0));
  const auto state = propagate_relevance(m, *fr.trace, 0, RuleConfig{});
  CHECK(state.input[0] == doctest::Approx(2.0));
  CHECK(state.input[1] == doctest::Approx(0.0));
  CHECK(state.input.sum() == doctest::Approx(2.0));
}

TEST_CASE("alpha-beta rule subtracts the negative share weighted by beta") {
  // z+ = 3, z- = -1; R = 2*2*(1, 0) - 1*2*(0, 1)
  const Model m = two_input_model(LayerKind::kConv2d, {1.0f, -1.0f});
  const auto fr = forward(m, two_values(3.0f, 1.0f), true);
  RuleConfig rules;
  rules.alpha = 2.0;
  rules.beta = 1.0;
  rules.require_conservation = true;
  const auto state = propagate_relevance(m, *fr.trace, 0, rules);
  CHECK(state.input[0] == doctest::Approx(4.0));
  CHECK(state.input[1] == doctest::Approx(-2.0));
  CHECK(state.input.sum() == doctest::Approx(2.0));
}

TEST_CASE("zero input distributes no relevance") {
  for (LayerKind kind : {LayerKind::kDense, LayerKind::kConv2d}) {
    Model m = two_input_model(kind, {0.7f, -0.4f});
    m.layers()[0].bias = {0.5f};
    const auto fr = forward(m, two_values(0.0f, 0.0f), true);
    for (const RuleConfig& rules : {RuleConfig{}, alpha_beta_everywhere(BiasMode::kExclude)}) {
      const auto maps = lrp(m, *fr.trace, 0, rules);
      REQUIRE(maps.size() == 1);
      CHECK(maps[0].values == std::vector<float>{0.0f});
    }
  }
}

TEST_CASE("rule config validation") {
  RuleConfig r;
  r.epsilon = -0.1;
  CHECK_THROWS_AS(r.validate(), Error);
  r = RuleConfig{};
  r.alpha = 2.0;
  r.beta = 0.5;
  CHECK_NOTHROW(r.validate());
  r.require_conservation = true;
  CHECK_THROWS_AS(r.validate(), Error);
  r.rules.erase(LayerKind::kDense);
  CHECK_THROWS_AS(r.rule_for(LayerKind::kDense), Error);
}

TEST_CASE("relevance is conserved on bias-free models") {
  Rng rng(20240101);
  double worst = 0.0;
  for (int model_index = 0; model_index < 20; ++model_index) {
    const Model m = testing::random_relevance_model(rng, false);
    for (int input_index = 0; input_index < 5; ++input_index) {
      const Tensor x = testing::random_tensor(m.input_shape(), rng);
      const auto fr = forward(m, x, true);
      const auto state =
          propagate_relevance(m, *fr.trace, largest_logit(fr.logits), RuleConfig::conserving());
      const auto report = relevance_conservation(state, m);
      worst = std::max(worst, report.max_deviation());
      double branches = 0.0;
      for (const auto& l : report.layers) {
        if (l.layer == "branch_a_relu" || l.layer == "branch_b_relu") branches += l.sum;
      }
      worst = std::max(worst, std::abs(branches - report.output_relevance) /
                                  std::abs(report.output_relevance));
    }
  }
  CHECK(worst < 1e-4);
}

TEST_CASE("branch layers are not treated as full cuts") {
  Rng rng(12);
  const Model m = testing::random_relevance_model(rng, false);
  const auto fr = forward(m, testing::random_tensor(m.input_shape(), rng), true);
  const auto report = relevance_conservation(propagate_relevance(m, *fr.trace, 0, {}), m);
  for (const auto& l : report.layers) {
    const bool branch = l.layer.rfind("branch_", 0) == 0;
    CHECK(l.on_every_path == !branch);
  }
}

TEST_CASE("zero target logit gives zero relevance everywhere") {
  Rng rng(7);
  Model m = testing::random_relevance_model(rng, false);
  Layer& fc = m.layers().back();
  std::fill(fc.weights.values().begin(), fc.weights.values().end(), 0.0f);
  const auto fr = forward(m, testing::random_tensor(m.input_shape(), rng), true);
  const auto report = relevance_conservation(propagate_relevance(m, *fr.trace, 0, {}), m);
  CHECK(report.output_relevance == 0.0);
  for (const auto& l : report.layers) CHECK(l.sum == 0.0);
  CHECK(report.input_sum == 0.0);
}

TEST_CASE("positive biases in the denominator leak relevance") {
  Rng rng(99);
  int checked = 0;
  for (int trial = 0; trial < 10; ++trial) {
    Model m = testing::random_relevance_model(rng, true);
    for (Layer& l : m.layers()) {
      for (float& b : l.bias) b = std::abs(b) + 0.05f;
    }
    const Tensor x = testing::random_tensor(m.input_shape(), rng);
    const auto fr = forward(m, x, true);
    const std::size_t target = largest_logit(fr.logits);
    if (fr.logits[target] <= 0.0f) continue;
    const auto state = propagate_relevance(
        m, *fr.trace, target, alpha_beta_everywhere(BiasMode::kIncludeInDenominator));
    const auto report = relevance_conservation(state, m);
    CHECK(report.input_sum <= report.output_relevance);
    CHECK(report.input_sum < report.output_relevance * (1.0 - 1e-6));
    ++checked;
  }
  CHECK(checked > 0);
}

TEST_CASE("alpha=1 beta=0 keeps every relevance value non-negative") {
  Rng rng(5);
  for (int trial = 0; trial < 10; ++trial) {
    const Model m = testing::random_relevance_model(rng, trial % 2 == 0);
    const auto fr = forward(m, testing::random_tensor(m.input_shape(), rng), true);
    std::size_t target = 0;
    for (std::size_t c = 0; c < fr.logits.size(); ++c) {
      if (fr.logits[c] > fr.logits[target]) target = c;
    }
    if (fr.logits[target] < 0.0f) continue;
    for (BiasMode mode : {BiasMode::kExclude, BiasMode::kIncludeInDenominator}) {
      const auto state = propagate_relevance(m, *fr.trace, target, alpha_beta_everywhere(mode));
      for (const Tensor& t : state.layers) {
        CHECK(*std::min_element(t.values().begin(), t.values().end()) >= 0.0f);
      }
      CHECK(*std::min_element(state.input.values().begin(), state.input.values().end()) >= 0.0f);
    }
  }
}

TEST_CASE("epsilon rule: exact at zero, shrinking for same-sign contributions") {
  Model m(Shape{1, 4, 1, 1}, 1);
  m.dense("fc", std::string(kModelInput), 1);
  set_weights(m.layers()[0], {0.5f, 1.0f, 0.25f, 2.0f});
  const auto fr = forward(m, Tensor(Shape{1, 4, 1, 1}, {1.0f, 2.0f, 3.0f, 0.5f}), true);
  const double out = fr.logits[0];
  RuleConfig r;
  r.epsilon = 0.0;
  CHECK(propagate_relevance(m, *fr.trace, 0, r).input.sum() == doctest::Approx(out).epsilon(1e-6));
  for (double eps : {0.01, 1.0, 10.0}) {
    r.epsilon = eps;
    const double in = propagate_relevance(m, *fr.trace, 0, r).input.sum();
    CHECK(std::abs(in) <= std::abs(out));
    CHECK(in == doctest::Approx(out * out / (out + eps)).epsilon(1e-5));
  }
}

TEST_CASE("relu passes relevance through unchanged") {
  Rng rng(11);
  const Model m = testing::random_relevance_model(rng, true);
  const auto fr = forward(m, testing::random_tensor(m.input_shape(), rng), true);
  const auto state = propagate_relevance(m, *fr.trace, 0, {});
  for (std::size_t i = 0; i < m.layers().size(); ++i) {
    const Layer& l = m.layer(i);
    if (l.kind != LayerKind::kRelu) continue;
    const int src = l.sources[0];
    REQUIRE(src >= 0);
    CHECK(state.layers[static_cast<std::size_t>(src)] == state.layers[i]);
  }
}

TEST_CASE("maxpool routes each output's relevance to its argmax") {
  Model m(Shape{1, 1, 4, 4}, 4);
  m.maxpool("pool", std::string(kModelInput), 2, 2);
  m.flatten("flat", "pool");
  m.dense("fc", "flat", 4);
  Rng rng(3);
  testing::randomize_parameters(m, rng, 1.0, false);
  const Tensor x = testing::random_tensor(m.input_shape(), rng);
  const auto fr = forward(m, x, true);
  const auto state = propagate_relevance(m, *fr.trace, 1, {});
  const Tensor& pooled = state.layers[0];
  for (std::uint32_t oy = 0; oy < 2; ++oy) {
    for (std::uint32_t ox = 0; ox < 2; ++ox) {
      std::uint32_t by = 0, bx = 0;
      for (std::uint32_t dy = 0; dy < 2; ++dy) {
        for (std::uint32_t dx = 0; dx < 2; ++dx) {
          if (x.at(0, 0, 2 * oy + dy, 2 * ox + dx) > x.at(0, 0, 2 * oy + by, 2 * ox + bx)) {
            by = dy;
            bx = dx;
          }
        }
      }
      for (std::uint32_t dy = 0; dy < 2; ++dy) {
        for (std::uint32_t dx = 0; dx < 2; ++dx) {
          const float expect = (dy == by && dx == bx) ? pooled.at(0, 0, oy, ox) : 0.0f;
          CHECK(state.input.at(0, 0, 2 * oy + dy, 2 * ox + dx) == expect);
        }
      }
    }
  }
}

TEST_CASE("concat splits relevance by channel position") {
  Model m(Shape{1, 2, 3, 3}, 2);
  const auto a = m.conv2d("a", std::string(kModelInput), 2, 1);
  const auto b = m.conv2d("b", std::string(kModelInput), 3, 3, 1, 1);
  m.concat("cat", {a, b});
  m.global_avgpool("gap", "cat");
  m.dense("fc", "gap", 2);
  Rng rng(8);
  testing::randomize_parameters(m, rng, 1.0, false);
  const auto fr = forward(m, testing::random_tensor(m.input_shape(), rng), true);
  const auto state = propagate_relevance(m, *fr.trace, 0, {});
  const Tensor& cat = state.layers[2];
  const std::size_t split = state.layers[0].size();
  for (std::size_t i = 0; i < split; ++i) CHECK(state.layers[0][i] == cat[i]);
  for (std::size_t i = 0; i < state.layers[1].size(); ++i) {
    CHECK(state.layers[1][i] == cat[split + i]);
  }
}

TEST_CASE("lrp heatmap is the channel sum at input resolution") {
  Rng rng(21);
  const Model m = testing::random_relevance_model(rng, false);
  Shape s = m.input_shape();
  s.n = 3;
  const auto fr = forward(m, testing::random_tensor(s, rng), true);
  const auto maps = lrp(m, *fr.trace, 1);
  const auto state = propagate_relevance(m, *fr.trace, 1, {});
  REQUIRE(maps.size() == 3);
  for (std::uint32_t b = 0; b < 3; ++b) {
    CHECK(maps[b].height == s.h);
    CHECK(maps[b].width == s.w);
    CHECK(maps[b].provenance.target_class == 1);
    CHECK(maps[b].values == channel_collapse(state.input, b).values);
  }
}

TEST_CASE("channel collapse") {
  const Heatmap flat = channel_collapse(Tensor(Shape{1, 3, 2, 2}, 0.1f));
  for (float v : flat.values) CHECK(v == doctest::Approx(0.3f));

  Tensor cancel(Shape{1, 3, 2, 2});
  for (std::uint32_t y = 0; y < 2; ++y) {
    for (std::uint32_t x = 0; x < 2; ++x) {
      cancel.at(0, 0, y, x) = 1.0f;
      cancel.at(0, 1, y, x) = -1.0f;
    }
  }
  for (float v : channel_collapse(cancel).values) CHECK(v == 0.0f);

  Rng rng(4);
  const Tensor t = testing::random_tensor(Shape{1, 3, 5, 7}, rng);
  const Heatmap h = channel_collapse(t);
  double oracle = 0.0;
  for (std::size_t i = 0; i < h.size(); ++i) {
    const std::size_t plane = h.size();
    oracle += static_cast<double>(static_cast<float>(static_cast<float>(t[i] + t[plane + i]) +
                                                     t[2 * plane + i]));
  }
  CHECK(h.sum() == oracle);
}

TEST_CASE("relevance errors") {
  const Model m = two_input_model(LayerKind::kDense, {1.0f, 1.0f});
  const auto fr = forward(m, two_values(1.0f, 2.0f), true);
  CHECK_THROWS_AS(propagate_relevance(m, *fr.trace, 1, {}), Error);

  ForwardTrace broken = *fr.trace;
  broken.outputs.clear();
  CHECK_THROWS_AS(lrp(m, broken, 0), Error);

  Model nan_model = two_input_model(LayerKind::kDense, {1.0f, NAN});
  const auto nan_fr = forward(nan_model, two_values(1.0f, 2.0f), true);
  try {
    lrp(nan_model, *nan_fr.trace, 0);
    FAIL("expected a non-finite relevance error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kNonFinite);
    CHECK(std::string(e.what()).find("fc") != std::string::npos);
  }

  Model sm(Shape{1, 2, 1, 1}, 2);
  sm.dense("fc", std::string(kModelInput), 2);
  sm.softmax("probs", "fc");
  set_weights(sm.layers()[0], {1.0f, 0.0f, 0.0f, 1.0f});
  const auto sm_fr = forward(sm, two_values(1.0f, 2.0f), true);
  const auto state = propagate_relevance(sm, *sm_fr.trace, 1, {});
  CHECK(state.output_relevance[0] == doctest::Approx(2.0));
}
