#include "rlvs/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <sstream>

#include "json.hpp"
#include "rlvs/backward.hpp"
#include "rlvs/forward.hpp"

namespace rlvs {
namespace {

using nlohmann::json;

std::uint32_t reflect(long i, std::uint32_t n) {
  if (n == 1) return 0;
  const long period = 2L * (n - 1);
  long m = i % period;
  if (m < 0) m += period;
  return static_cast<std::uint32_t>(m < static_cast<long>(n) ? m : period - m);
}

// Softmax cross-entropy per item and its gradient w.r.t. the logits,
// scaled by 1 / batch.
double cross_entropy(const Tensor& logits, const std::vector<int>& labels, Tensor* grad) {
  const Shape s = logits.shape();
  double total = 0.0;
  for (std::uint32_t b = 0; b < s.n; ++b) {
    const float* z = logits.item(b).data();
    double mx = z[0];
    for (std::uint32_t c = 1; c < s.c; ++c) mx = std::max(mx, static_cast<double>(z[c]));
    double sum = 0.0;
    for (std::uint32_t c = 0; c < s.c; ++c) sum += std::exp(z[c] - mx);
    const double log_sum = std::log(sum) + mx;
    total += log_sum - z[labels[b]];
    if (grad) {
      float* g = grad->item(b).data();
      for (std::uint32_t c = 0; c < s.c; ++c) {
        const double p = std::exp(z[c] - log_sum);
        g[c] = static_cast<float>((p - (static_cast<int>(c) == labels[b] ? 1.0 : 0.0)) / s.n);
      }
    }
  }
  return total / s.n;
}

Tensor gather(const LabeledSet& set, const std::vector<std::size_t>& idx, const TrainConfig& cfg,
              Rng* rng) {
  const Shape is = set.images.shape();
  Tensor batch(is.with_batch(static_cast<std::uint32_t>(idx.size())));
  const std::size_t item = is.item_count();
  const AugmentFlags flags{cfg.translate, cfg.rotate};
  const std::uint32_t shift = cfg.max_shift ? cfg.max_shift : std::max<std::uint32_t>(1, is.h / 8);
  for (std::size_t k = 0; k < idx.size(); ++k) {
    Tensor x = set.item(idx[k]);
    if (rng && (flags.translate || flags.rotate)) x = augment(x, flags, shift, *rng);
    std::copy(x.values().begin(), x.values().end(), batch.data() + k * item);
  }
  return batch;
}

void sgd_step(Model& model, const Gradients& g, double lr, double weight_decay) {
  auto& layers = model.layers();
  for (std::size_t i = 0; i < layers.size(); ++i) {
    Layer& l = layers[i];
    if (!l.has_parameters()) continue;
    const auto gw = g.layers[i].weights.values();
    auto w = l.weights.values();
    for (std::size_t k = 0; k < w.size(); ++k) {
      w[k] -= static_cast<float>(lr * (gw[k] + weight_decay * w[k]));
    }
    for (std::size_t k = 0; k < l.bias.size(); ++k) {
      l.bias[k] -= static_cast<float>(lr * g.layers[i].bias[k]);
    }
  }
}

std::vector<int> fold_of(const LabeledSet& set, std::uint32_t folds, std::uint64_t seed) {
  std::vector<std::uint32_t> cases(set.cases.begin(), set.cases.end());
  std::sort(cases.begin(), cases.end());
  cases.erase(std::unique(cases.begin(), cases.end()), cases.end());
  Rng rng(seed, "folds", 0);
  std::vector<int> fold(set.size());
  if (cases.size() >= folds) {
    std::shuffle(cases.begin(), cases.end(), rng.engine());
    std::map<std::uint32_t, int> of_case;
    for (std::size_t i = 0; i < cases.size(); ++i) of_case[cases[i]] = static_cast<int>(i % folds);
    for (std::size_t i = 0; i < set.size(); ++i) fold[i] = of_case[set.cases[i]];
  } else {
    std::vector<std::size_t> order(set.size());
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng.engine());
    for (std::size_t i = 0; i < order.size(); ++i) fold[order[i]] = static_cast<int>(i % folds);
  }
  return fold;
}

}  // namespace

void TrainConfig::validate() const {
  auto bad = [](const std::string& what) { throw Error(ErrorCode::kInvalidArgument, "train config", what); };
  if (batch_size < 2) bad("batch size must be >= 2");
  if (!(cancer_ratio > 0.0 && cancer_ratio < 1.0)) bad("class ratio outside (0, 1)");
  const auto pos = std::llround(cancer_ratio * batch_size);
  if (pos < 1 || pos > static_cast<long long>(batch_size) - 1) {
    bad("class ratio leaves one class without samples in a batch");
  }
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) bad("learning rate must be > 0");
  if (!(lr_decay > 0.0 && lr_decay <= 1.0)) bad("lr decay outside (0, 1]");
  if (decay_every == 0) bad("decay interval 0");
  if (weight_decay < 0.0) bad("weight decay < 0");
}

double TrainConfig::lr_at(std::uint32_t epoch) const {
  return learning_rate * std::pow(lr_decay, static_cast<double>(epoch / decay_every));
}

std::string TrainConfig::to_json() const {
  return json{{"learning_rate", learning_rate}, {"lr_decay", lr_decay},
              {"decay_every", decay_every},     {"batch_size", batch_size},
              {"max_epochs", max_epochs},       {"cancer_ratio", cancer_ratio},
              {"translate", translate},         {"rotate", rotate},
              {"max_shift", max_shift},         {"folds", folds},
              {"batches_per_epoch", batches_per_epoch},
              {"weight_decay", weight_decay},   {"center_inputs", center_inputs},
              {"seed", seed}}
      .dump();
}

TrainConfig TrainConfig::from_json(const std::string& text) {
  TrainConfig c;
  try {
    const json j = json::parse(text);
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.lr_decay = j.value("lr_decay", c.lr_decay);
    c.decay_every = j.value("decay_every", c.decay_every);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.max_epochs = j.value("max_epochs", c.max_epochs);
    c.cancer_ratio = j.value("cancer_ratio", c.cancer_ratio);
    c.translate = j.value("translate", c.translate);
    c.rotate = j.value("rotate", c.rotate);
    c.max_shift = j.value("max_shift", c.max_shift);
    c.folds = j.value("folds", c.folds);
    c.batches_per_epoch = j.value("batches_per_epoch", c.batches_per_epoch);
    c.weight_decay = j.value("weight_decay", c.weight_decay);
    c.center_inputs = j.value("center_inputs", c.center_inputs);
    c.seed = j.value("seed", c.seed);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kInvalidArgument, "train config", e.what());
  }
  c.validate();
  return c;
}

LabeledSet to_labeled(const Dataset& data, bool train_split) {
  std::vector<Tensor> images;
  LabeledSet set;
  for (const Sample& s : data.samples) {
    if (s.train != train_split) continue;
    images.push_back(image_to_tensor(s.image));
    set.labels.push_back(s.label);
    set.cases.push_back(s.case_id);
  }
  if (images.empty()) {
    throw Error(ErrorCode::kEmptyInput, "to_labeled",
                std::string("no ") + (train_split ? "training" : "test") + " samples");
  }
  set.images = stack(images);
  return set;
}

LabeledSet subset(const LabeledSet& set, const std::vector<std::size_t>& indices) {
  LabeledSet out;
  const Shape s = set.images.shape();
  out.images = Tensor(s.with_batch(static_cast<std::uint32_t>(indices.size())));
  const std::size_t item = s.item_count();
  for (std::size_t k = 0; k < indices.size(); ++k) {
    const float* src = set.images.data() + indices[k] * item;
    std::copy(src, src + item, out.images.data() + k * item);
    out.labels.push_back(set.labels[indices[k]]);
    out.cases.push_back(set.cases[indices[k]]);
  }
  return out;
}

ClassPools class_pools(const std::vector<int>& labels) {
  ClassPools p;
  for (std::size_t i = 0; i < labels.size(); ++i) (labels[i] == kCancer ? p.cancer : p.normal).push_back(i);
  return p;
}

std::vector<std::size_t> sample_batch(const ClassPools& pools, double ratio,
                                      std::uint32_t batch_size, Rng& rng) {
  if (pools.cancer.empty() || pools.normal.empty()) {
    throw Error(ErrorCode::kSingleClass, "sample_batch", "both classes need at least one sample");
  }
  const auto n_pos = static_cast<std::size_t>(std::llround(ratio * batch_size));
  std::vector<std::size_t> out;
  auto draw = [&](const std::vector<std::size_t>& pool, std::size_t k) {
    std::vector<std::size_t> copy = pool;
    const std::size_t fresh = std::min(k, copy.size());
    for (std::size_t i = 0; i < fresh; ++i) {
      std::swap(copy[i], copy[i + rng.below(copy.size() - i)]);
      out.push_back(copy[i]);
    }
    for (std::size_t i = fresh; i < k; ++i) out.push_back(pool[rng.below(pool.size())]);
  };
  draw(pools.cancer, n_pos);
  draw(pools.normal, batch_size - n_pos);
  return out;
}

Tensor rotate90(const Tensor& image, int quarter_turns) {
  const Shape s = image.shape();
  if (s.h != s.w) throw Error(ErrorCode::kShapeMismatch, "rotate90", "image must be square");
  const int q = ((quarter_turns % 4) + 4) % 4;
  if (q == 0) return image;
  Tensor out(s);
  const std::uint32_t n = s.w;
  for (std::uint32_t b = 0; b < s.n; ++b) {
    for (std::uint32_t c = 0; c < s.c; ++c) {
      for (std::uint32_t y = 0; y < n; ++y) {
        for (std::uint32_t x = 0; x < n; ++x) {
          std::uint32_t sx = x, sy = y;
          switch (q) {
            case 1: sx = n - 1 - y; sy = x; break;
            case 2: sx = n - 1 - x; sy = n - 1 - y; break;
            case 3: sx = y; sy = n - 1 - x; break;
          }
          out.at(b, c, y, x) = image.at(b, c, sy, sx);
        }
      }
    }
  }
  return out;
}

Tensor translate_reflect(const Tensor& image, int dx, int dy) {
  const Shape s = image.shape();
  Tensor out(s);
  for (std::uint32_t b = 0; b < s.n; ++b) {
    for (std::uint32_t c = 0; c < s.c; ++c) {
      for (std::uint32_t y = 0; y < s.h; ++y) {
        const std::uint32_t sy = reflect(static_cast<long>(y) - dy, s.h);
        for (std::uint32_t x = 0; x < s.w; ++x) {
          out.at(b, c, y, x) = image.at(b, c, sy, reflect(static_cast<long>(x) - dx, s.w));
        }
      }
    }
  }
  return out;
}

Tensor augment(const Tensor& image, AugmentFlags flags, std::uint32_t max_shift, Rng& rng) {
  Tensor out = image;
  if (flags.translate && max_shift > 0) {
    const auto range = 2 * static_cast<std::uint64_t>(max_shift) + 1;
    const int dx = static_cast<int>(rng.below(range)) - static_cast<int>(max_shift);
    const int dy = static_cast<int>(rng.below(range)) - static_cast<int>(max_shift);
    out = translate_reflect(out, dx, dy);
  }
  if (flags.rotate) out = rotate90(out, static_cast<int>(rng.below(4)));
  return out;
}

Tensor predict_probs(const Model& model, const Tensor& images, std::uint32_t batch) {
  const Shape s = images.shape();
  Tensor out(Shape{s.n, model.class_count(), 1, 1});
  const std::size_t item = s.item_count();
  for (std::uint32_t first = 0; first < s.n; first += batch) {
    const std::uint32_t count = std::min(batch, s.n - first);
    Tensor chunk(s.with_batch(count));
    std::copy(images.data() + first * item, images.data() + (first + count) * item, chunk.data());
    const Tensor p = softmax_probs(forward(model, chunk).logits);
    std::copy(p.values().begin(), p.values().end(), out.data() + first * std::size_t{model.class_count()});
  }
  return out;
}

std::vector<int> predict_labels(const Model& model, const Tensor& images, std::uint32_t batch) {
  const Tensor p = predict_probs(model, images, batch);
  std::vector<int> out;
  for (std::uint32_t b = 0; b < p.shape().n; ++b) {
    const float* v = p.item(b).data();
    out.push_back(static_cast<int>(std::max_element(v, v + p.shape().c) - v));
  }
  return out;
}

double mean_cross_entropy(const Model& model, const LabeledSet& set, std::uint32_t batch) {
  const Shape s = set.images.shape();
  const std::size_t item = s.item_count();
  double total = 0.0;
  for (std::uint32_t first = 0; first < s.n; first += batch) {
    const std::uint32_t count = std::min(batch, s.n - first);
    Tensor chunk(s.with_batch(count));
    std::copy(set.images.data() + first * item, set.images.data() + (first + count) * item, chunk.data());
    const std::vector<int> labels(set.labels.begin() + first, set.labels.begin() + first + count);
    total += cross_entropy(forward(model, chunk).logits, labels, nullptr) * count;
  }
  return total / s.n;
}

void train_epochs(Model& model, const LabeledSet& train, const LabeledSet* val,
                  const TrainConfig& cfg, std::uint32_t epochs, int fold,
                  std::vector<EpochLog>& log) {
  cfg.validate();
  const ClassPools pools = class_pools(train.labels);
  const std::uint32_t n_batches =
      cfg.batches_per_epoch
          ? cfg.batches_per_epoch
          : static_cast<std::uint32_t>((train.size() + cfg.batch_size - 1) / cfg.batch_size);
  BackwardOptions opts;
  opts.input_grad = false;
  for (std::uint32_t epoch = 1; epoch <= epochs; ++epoch) {
    Rng rng(cfg.seed, "sampling", static_cast<std::uint64_t>(fold + 1) * 1000003ULL + epoch);
    const double lr = cfg.lr_at(epoch - 1);
    double loss_sum = 0.0;
    for (std::uint32_t b = 0; b < n_batches; ++b) {
      const auto idx = sample_batch(pools, cfg.cancer_ratio, cfg.batch_size, rng);
      const Tensor x = gather(train, idx, cfg, &rng);
      std::vector<int> labels;
      for (std::size_t i : idx) labels.push_back(train.labels[i]);
      const auto fr = forward(model, x, true);
      Tensor grad(fr.logits.shape());
      const double loss = cross_entropy(fr.logits, labels, &grad);
      if (!std::isfinite(loss)) {
        throw Error(ErrorCode::kNonFinite, "train",
                    "loss is not finite at epoch " + std::to_string(epoch) + ", batch " +
                        std::to_string(b) + (fold >= 0 ? ", fold " + std::to_string(fold) : ""));
      }
      loss_sum += loss;
      sgd_step(model, backward(model, *fr.trace, grad, opts), lr, cfg.weight_decay);
    }
    EpochLog row;
    row.epoch = epoch;
    row.fold = fold;
    row.train_loss = loss_sum / n_batches;
    row.val_loss = val ? mean_cross_entropy(model, *val) : std::numeric_limits<double>::quiet_NaN();
    row.lr = lr;
    log.push_back(row);
  }
}

std::vector<float> channel_means(const Tensor& images) {
  const Shape s = images.shape();
  std::vector<double> sum(s.c, 0.0);
  for (std::uint32_t n = 0; n < s.n; ++n) {
    for (std::uint32_t c = 0; c < s.c; ++c) {
      for (float v : images.plane(n, c)) sum[c] += v;
    }
  }
  std::vector<float> out(s.c, 0.0f);
  const double count = static_cast<double>(s.n) * s.plane();
  if (count > 0) {
    for (std::uint32_t c = 0; c < s.c; ++c) out[c] = static_cast<float>(sum[c] / count);
  }
  return out;
}

TrainResult train(const Model& init, const LabeledSet& train_set, const TrainConfig& cfg) {
  cfg.validate();
  TrainResult result{init, {}, 0, {}};
  if (cfg.max_epochs == 0) return result;
  const ClassPools pools = class_pools(train_set.labels);
  if (pools.cancer.empty() || pools.normal.empty()) {
    throw Error(ErrorCode::kSingleClass, "train", "training split needs both classes");
  }
  Model start = init;
  if (cfg.center_inputs && start.meta().input_mean.empty()) {
    start.meta().input_mean = channel_means(train_set.images);
  }
  result.model = start;

  result.best_epoch = cfg.max_epochs;
  if (cfg.folds >= 2) {
    const auto fold = fold_of(train_set, cfg.folds, cfg.seed);
    result.mean_val_loss.assign(cfg.max_epochs, 0.0);
    for (std::uint32_t f = 0; f < cfg.folds; ++f) {
      std::vector<std::size_t> tr, va;
      for (std::size_t i = 0; i < train_set.size(); ++i) (fold[i] == static_cast<int>(f) ? va : tr).push_back(i);
      const LabeledSet tr_set = subset(train_set, tr);
      const LabeledSet va_set = subset(train_set, va);
      const ClassPools fp = class_pools(tr_set.labels);
      if (fp.cancer.empty() || fp.normal.empty() || va.empty()) {
        throw Error(ErrorCode::kSingleClass, "train",
                    "fold " + std::to_string(f) + " lacks a class or validation data");
      }
      Model m = start;
      const std::size_t first = result.log.size();
      train_epochs(m, tr_set, &va_set, cfg, cfg.max_epochs, static_cast<int>(f), result.log);
      for (std::uint32_t e = 0; e < cfg.max_epochs; ++e) {
        result.mean_val_loss[e] += result.log[first + e].val_loss / cfg.folds;
      }
    }
    const auto best = std::min_element(result.mean_val_loss.begin(), result.mean_val_loss.end());
    result.best_epoch = static_cast<std::uint32_t>(best - result.mean_val_loss.begin()) + 1;
  }
  train_epochs(result.model, train_set, nullptr, cfg, result.best_epoch, -1, result.log);
  return result;
}

void write_train_log(const std::vector<EpochLog>& log, const std::filesystem::path& path) {
  std::ostringstream os;
  os.precision(8);
  os << "epoch,fold,train_loss,val_loss,lr\n";
  for (const auto& r : log) {
    os << r.epoch << ',' << (r.fold < 0 ? std::string("full") : std::to_string(r.fold)) << ','
       << r.train_loss << ',';
    if (std::isfinite(r.val_loss)) os << r.val_loss;
    os << ',' << r.lr << '\n';
  }
  detail::write_text(path, os.str());
}

Model reference_model(std::uint32_t patch_size, std::uint64_t seed) {
  ModelMeta meta;
  meta.name = "reference";
  meta.seed = seed;
  Model m(Shape{1, 3, patch_size, patch_size}, 2, meta);
  std::string x = m.conv2d("conv1", std::string(kModelInput), 16, 5, 1, 2);
  x = m.relu("relu1", x);
  x = m.maxpool("pool1", x, 2, 2);
  const std::string a = m.relu("mix_1x1_relu", m.conv2d("mix_1x1", x, 8, 1));
  const std::string b = m.relu("mix_3x3_relu", m.conv2d("mix_3x3", x, 8, 3, 1, 1));
  x = m.concat("mix", {a, b});
  x = m.relu("relu3", m.conv2d("conv3", x, 32, 3, 1, 1));
  x = m.global_avgpool("gap", x);
  m.dense("fc", x, 2);
  init_he_uniform(m, seed);
  return m;
}

}  // namespace rlvs
