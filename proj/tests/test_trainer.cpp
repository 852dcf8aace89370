#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "doctest.h"
#include "rlvs/forward.hpp"
#include "rlvs/trainer.hpp"

using namespace rlvs;

namespace {

// Constant-colour patches: cancer is reddish, non-cancer bluish, with
// per-sample brightness jitter. Linearly separable through the mean colour.
LabeledSet toy_set(std::uint32_t n, std::uint32_t p, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<Tensor> items;
  LabeledSet set;
  for (std::uint32_t i = 0; i < n; ++i) {
    const int label = static_cast<int>(i % 2);
    const double j = rng.uniform(-0.1, 0.1);
    const float rgb[3] = {static_cast<float>((label ? 0.8 : 0.3) + j), 0.4f + static_cast<float>(j),
                          static_cast<float>((label ? 0.3 : 0.8) + j)};
    Tensor t(Shape{1, 3, p, p});
    for (std::uint32_t c = 0; c < 3; ++c) std::fill(t.plane(0, c).begin(), t.plane(0, c).end(), rgb[c]);
    items.push_back(t);
    set.labels.push_back(label);
    set.cases.push_back(i / 4);
  }
  set.images = stack(items);
  return set;
}

TrainConfig toy_config() {
  TrainConfig cfg;
  cfg.learning_rate = 0.05;
  cfg.batch_size = 16;
  cfg.max_epochs = 6;
  cfg.folds = 1;
  cfg.translate = false;
  cfg.rotate = false;
  cfg.seed = 3;
  return cfg;
}

Tensor ramp(std::uint32_t p) {
  Tensor t(Shape{1, 3, p, p});
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = static_cast<float>(i);
  return t;
}

}  // namespace

TEST_CASE("sample_batch honours the class ratio") {
  ClassPools pools;
  for (std::size_t i = 0; i < 300; ++i) (i < 100 ? pools.cancer : pools.normal).push_back(i);
  Rng rng(1);
  for (auto [ratio, pos] : {std::pair{0.5, 64}, std::pair{0.8, 102}}) {
    CAPTURE(ratio);
    const auto idx = sample_batch(pools, ratio, 128, rng);
    REQUIRE(idx.size() == 128);
    const auto n_pos = std::count_if(idx.begin(), idx.end(), [](std::size_t i) { return i < 100; });
    CHECK(n_pos == pos);
    // Draws are without replacement while the pool lasts: at 0.8 the 100
    // cancer samples all appear once and two more repeat.
    std::set<std::size_t> distinct(idx.begin(), idx.end());
    CHECK(distinct.size() == (pos == 64 ? 128u : 126u));
  }
}

TEST_CASE("minority class is oversampled with replacement") {
  ClassPools pools{{0, 1, 2}, {3, 4, 5, 6, 7, 8, 9, 10, 11, 12}};
  Rng rng(2);
  const auto idx = sample_batch(pools, 0.5, 10, rng);
  const auto n_pos = std::count_if(idx.begin(), idx.end(), [](std::size_t i) { return i < 3; });
  CHECK(n_pos == 5);
  std::set<std::size_t> pos(idx.begin(), idx.begin() + 5);
  CHECK(pos == std::set<std::size_t>{0, 1, 2});
}

TEST_CASE("degenerate batch of two takes one per class") {
  ClassPools pools{{0}, {1}};
  Rng rng(3);
  const auto idx = sample_batch(pools, 0.5, 2, rng);
  CHECK(idx == std::vector<std::size_t>{0, 1});
  CHECK_THROWS_AS(sample_batch(ClassPools{{}, {1}}, 0.5, 2, rng), Error);
}

TEST_CASE("config validation") {
  TrainConfig cfg;
  cfg.validate();
  cfg.cancer_ratio = 0.0;
  CHECK_THROWS_AS(cfg.validate(), Error);
  cfg.cancer_ratio = 1.0;
  CHECK_THROWS_AS(cfg.validate(), Error);
  cfg.cancer_ratio = 0.001;  // rounds to zero cancer samples in 128
  CHECK_THROWS_AS(cfg.validate(), Error);
  cfg = TrainConfig{};
  cfg.batch_size = 1;
  CHECK_THROWS_AS(cfg.validate(), Error);
}

TEST_CASE("step schedule divides by ten every ten epochs") {
  TrainConfig cfg;
  CHECK(cfg.lr_at(0) == doctest::Approx(1e-3));
  CHECK(cfg.lr_at(9) == doctest::Approx(1e-3));
  CHECK(cfg.lr_at(10) == doctest::Approx(1e-4));
  CHECK(cfg.lr_at(20) == doctest::Approx(1e-5));
  CHECK(cfg.lr_at(49) == doctest::Approx(1e-7));
}

TEST_CASE("config json round trip") {
  TrainConfig cfg;
  cfg.learning_rate = 0.02;
  cfg.cancer_ratio = 0.8;
  cfg.folds = 5;
  cfg.seed = 99;
  cfg.rotate = false;
  const TrainConfig back = TrainConfig::from_json(cfg.to_json());
  CHECK(back.to_json() == cfg.to_json());
  CHECK_THROWS_AS(TrainConfig::from_json("{\"cancer_ratio\": 2}"), Error);
  CHECK_THROWS_AS(TrainConfig::from_json("not json"), Error);
}

TEST_CASE("augmentation with both flags off is the identity") {
  const Tensor x = ramp(8);
  Rng rng(4);
  CHECK(augment(x, AugmentFlags{}, 2, rng) == x);
}

TEST_CASE("rotations compose and preserve pixel values") {
  const Tensor x = ramp(6);
  CHECK(rotate90(rotate90(x, 2), 2) == x);
  CHECK(rotate90(rotate90(x, 1), 3) == x);
  CHECK(rotate90(x, 4) == x);
  const Tensor r = rotate90(x, 1);
  // Counter-clockwise: top-right corner moves to the top-left.
  CHECK(r.at(0, 0, 0, 0) == x.at(0, 0, 0, 5));
  std::vector<float> a(x.values().begin(), x.values().end());
  std::vector<float> b(r.values().begin(), r.values().end());
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  CHECK(a == b);
}

TEST_CASE("translation reflects at the borders") {
  const Tensor x = ramp(5);
  CHECK(translate_reflect(x, 0, 0) == x);
  const Tensor t = translate_reflect(x, 2, 0);
  CHECK(t.at(0, 0, 0, 2) == x.at(0, 0, 0, 0));
  CHECK(t.at(0, 0, 0, 0) == x.at(0, 0, 0, 2));  // -2 reflects to 2
  CHECK(t.at(0, 0, 0, 1) == x.at(0, 0, 0, 1));
  Rng rng(5);
  const Tensor a = augment(x, AugmentFlags{true, true}, 2, rng);
  CHECK(a.shape() == x.shape());
}

TEST_CASE("zero epochs returns the initial model") {
  const Model init = reference_model(16, 7);
  TrainConfig cfg = toy_config();
  cfg.max_epochs = 0;
  const TrainResult r = train(init, toy_set(16, 16, 1), cfg);
  CHECK(r.model == init);
  CHECK(r.log.empty());
}

TEST_CASE("single-class data is rejected") {
  LabeledSet set = toy_set(8, 16, 1);
  std::fill(set.labels.begin(), set.labels.end(), 1);
  CHECK_THROWS_AS(train(reference_model(16, 7), set, toy_config()), Error);
}

TEST_CASE("separable toy data is learned") {
  const LabeledSet set = toy_set(64, 16, 2);
  Model m = reference_model(16, 11);
  std::vector<EpochLog> log;
  TrainConfig cfg = toy_config();
  cfg.batches_per_epoch = 8;
  const double before = mean_cross_entropy(m, set);
  train_epochs(m, set, &set, cfg, 6, -1, log);
  REQUIRE(log.size() == 6);
  CHECK(log.front().val_loss < before);
  for (std::size_t e = 1; e < 5; ++e) CHECK(log[e].val_loss < log[e - 1].val_loss);
  CHECK(predict_labels(m, set.images) == set.labels);
}

TEST_CASE("training stores the per-channel training mean") {
  const LabeledSet set = toy_set(16, 16, 4);
  const Shape s = set.images.shape();
  std::vector<double> oracle(s.c, 0.0);
  for (std::uint32_t n = 0; n < s.n; ++n)
    for (std::uint32_t c = 0; c < s.c; ++c)
      for (std::uint32_t h = 0; h < s.h; ++h)
        for (std::uint32_t w = 0; w < s.w; ++w) oracle[c] += set.images.at(n, c, h, w);
  TrainConfig cfg = toy_config();
  cfg.max_epochs = 1;
  cfg.folds = 1;
  const TrainResult r = train(reference_model(16, 3), set, cfg);
  REQUIRE(r.model.meta().input_mean.size() == s.c);
  for (std::uint32_t c = 0; c < s.c; ++c) {
    CHECK(r.model.meta().input_mean[c] ==
          doctest::Approx(oracle[c] / (double(s.n) * s.plane())).epsilon(1e-6));
  }

  cfg.center_inputs = false;
  CHECK(train(reference_model(16, 3), set, cfg).model.meta().input_mean.empty());
}

TEST_CASE("training is bitwise deterministic") {
  const LabeledSet set = toy_set(32, 16, 3);
  TrainConfig cfg = toy_config();
  cfg.folds = 2;
  cfg.max_epochs = 3;
  cfg.translate = true;
  cfg.rotate = true;
  const Model init = reference_model(16, 5);
  const TrainResult a = train(init, set, cfg);
  const TrainResult b = train(init, set, cfg);
  CHECK(a.model == b.model);
  CHECK(a.best_epoch == b.best_epoch);
  CHECK(a.best_epoch >= 1);
  CHECK(a.best_epoch <= 3);
  // Two folds of three epochs, then the final run.
  CHECK(a.log.size() == 6 + a.best_epoch);
  const auto best = std::min_element(a.mean_val_loss.begin(), a.mean_val_loss.end());
  CHECK(static_cast<std::uint32_t>(best - a.mean_val_loss.begin()) + 1 == a.best_epoch);
  cfg.seed = 4;
  CHECK_FALSE(train(init, set, cfg).model == a.model);
}

TEST_CASE("train log csv") {
  std::vector<EpochLog> log{{1, 0, 0.7, 0.6, 0.01}, {1, -1, 0.5, std::nan(""), 0.01}};
  const auto path = std::filesystem::temp_directory_path() / "rlvs_train_log.csv";
  write_train_log(log, path);
  std::ifstream in(path);
  std::string header, a, b;
  std::getline(in, header);
  std::getline(in, a);
  std::getline(in, b);
  CHECK(header == "epoch,fold,train_loss,val_loss,lr");
  CHECK(a == "1,0,0.7,0.6,0.01");
  CHECK(b == "1,full,0.5,,0.01");
}

TEST_CASE("reference model shape") {
  const Model m = reference_model(32, 1);
  CHECK(m.class_count() == 2);
  const auto out = forward(m, Tensor(Shape{2, 3, 32, 32}, 0.5f));
  CHECK(out.logits.shape() == Shape{2, 2, 1, 1});
}
