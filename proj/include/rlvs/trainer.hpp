#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "rlvs/datagen.hpp"
#include "rlvs/model.hpp"
#include "rlvs/rng.hpp"

namespace rlvs {

struct TrainConfig {
  double learning_rate = 1e-3;
  double lr_decay = 0.1;           // multiplied in every `decay_every` epochs
  std::uint32_t decay_every = 10;
  std::uint32_t batch_size = 128;
  std::uint32_t max_epochs = 50;
  double cancer_ratio = 0.5;       // share of cancer samples per batch
  bool translate = true;
  bool rotate = true;
  std::uint32_t max_shift = 0;     // translation range in px; 0 = patch / 8
  std::uint32_t folds = 3;         // < 2 disables cross-validation
  std::uint32_t batches_per_epoch = 0;  // 0 = ceil(train size / batch size)
  double weight_decay = 0.0;
  // Store the training set's per-channel mean in the model's input_mean
  // (when the initial model has none) so inputs are zero-centred.
  bool center_inputs = true;
  std::uint64_t seed = 0;

  void validate() const;
  // Learning rate for the epoch with 0-based index `epoch`: the base rate
  // for epochs 0-9, a tenth of it for 10-19, and so on.
  double lr_at(std::uint32_t epoch) const;
  std::string to_json() const;
  static TrainConfig from_json(const std::string& text);
};

// Images as one (N, 3, P, P) tensor scaled to [0, 1].
struct LabeledSet {
  Tensor images;
  std::vector<int> labels;
  std::vector<std::uint32_t> cases;

  std::size_t size() const { return labels.size(); }
  Tensor item(std::size_t i) const { return images.slice_item(static_cast<std::uint32_t>(i)); }
};

LabeledSet to_labeled(const Dataset& data, bool train_split);
std::vector<float> channel_means(const Tensor& images);
LabeledSet subset(const LabeledSet& set, const std::vector<std::size_t>& indices);

struct ClassPools {
  std::vector<std::size_t> cancer;
  std::vector<std::size_t> normal;
};

ClassPools class_pools(const std::vector<int>& labels);

// round(ratio * batch) cancer indices followed by the non-cancer remainder.
// Within a class, indices are drawn without replacement while the pool
// lasts and with replacement beyond that (minority oversampling).
std::vector<std::size_t> sample_batch(const ClassPools& pools, double ratio,
                                      std::uint32_t batch_size, Rng& rng);

struct AugmentFlags {
  bool translate = false;
  bool rotate = false;
};

// Translation: crop of a reflect-padded canvas with offsets in
// [-max_shift, max_shift]. Rotation: 0, 90, 180 or 270 degrees.
Tensor augment(const Tensor& image, AugmentFlags flags, std::uint32_t max_shift, Rng& rng);
// Counter-clockwise rotation by quarter_turns * 90 degrees (square images).
Tensor rotate90(const Tensor& image, int quarter_turns);
// Content moved by (dx, dy) with reflected borders.
Tensor translate_reflect(const Tensor& image, int dx, int dy);

struct EpochLog {
  std::uint32_t epoch = 0;
  int fold = -1;                 // -1: final run on the full training split
  double train_loss = 0.0;
  double val_loss = 0.0;         // NaN without validation data
  double lr = 0.0;
};

struct TrainResult {
  Model model;
  std::vector<EpochLog> log;
  std::uint32_t best_epoch = 0;
  std::vector<double> mean_val_loss;  // per epoch, averaged over folds
};

// Mean softmax cross-entropy of `model` on `set`.
double mean_cross_entropy(const Model& model, const LabeledSet& set, std::uint32_t batch = 64);
// Class probabilities, (N, classes, 1, 1).
Tensor predict_probs(const Model& model, const Tensor& images, std::uint32_t batch = 64);
std::vector<int> predict_labels(const Model& model, const Tensor& images, std::uint32_t batch = 64);

// Runs `epochs` epochs of minibatch SGD from `model`. `log` receives one
// row per epoch; `val` may be empty.
void train_epochs(Model& model, const LabeledSet& train, const LabeledSet* val,
                  const TrainConfig& cfg, std::uint32_t epochs, int fold,
                  std::vector<EpochLog>& log);

// k-fold cross-validation over cases picks the epoch with the lowest mean
// validation loss; the model is then retrained from `init` on the whole
// set for that many epochs.
TrainResult train(const Model& init, const LabeledSet& train_set, const TrainConfig& cfg);

void write_train_log(const std::vector<EpochLog>& log, const std::filesystem::path& path);

// conv(3->16, 5x5)/ReLU/maxpool2 -> parallel 1x1 and 3x3 branches (8 each)
// with ReLU, concatenated -> conv(->32, 3x3)/ReLU -> global average pool ->
// dense(->2). He-uniform initialized from `seed`.
Model reference_model(std::uint32_t patch_size, std::uint64_t seed);

}  // namespace rlvs
