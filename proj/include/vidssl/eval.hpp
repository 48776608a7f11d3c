// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "vidssl/data/batch.hpp"
#include "vidssl/model/encoder.hpp"
#include "vidssl/optim.hpp"

namespace vidssl {

struct ProbeConfig {
  std::size_t epochs = 60;
  double base_lr = 4.0;
  double warmup_fraction = 8.0 / 60.0;
  double weight_decay = 0.0;
  double momentum = 0.9;
  std::size_t batch_size = 64;
  std::size_t views = 3;  // clips per video at extraction and inference
  double train_fraction = 0.8;

  void validate() const {
    if (epochs == 0) throw ConfigError("probe: epochs must be positive");
    if (!(base_lr > 0)) throw ConfigError("probe: base_lr must be positive");
    if (weight_decay != 0.0) throw ConfigError("probe: weight decay is fixed at 0");
    if (warmup_fraction < 0 || warmup_fraction > 1) throw ConfigError("probe: warmup_fraction outside [0,1]");
    if (batch_size == 0 || views == 0) throw ConfigError("probe: batch_size and views must be positive");
    if (!(train_fraction > 0 && train_fraction < 1)) throw ConfigError("probe: train_fraction outside (0,1)");
  }
};

/// Pooled features, video-major: row v * views + j is clip j of video v.
struct FeatureSet {
  std::size_t dim = 0;
  std::size_t views = 1;
  std::size_t num_classes = 0;
  std::vector<double> x;
  std::vector<std::uint32_t> labels;  // per video

  std::size_t num_videos() const { return labels.size(); }
  const double* row(std::size_t video, std::size_t view) const {
    return x.data() + (video * views + view) * dim;
  }
};

struct EvalResult {
  double accuracy = 0;
  std::size_t num_classes = 0;
  std::vector<std::size_t> confusion;  // [true, predicted]
  std::size_t train_videos = 0, test_videos = 0;
  double final_train_loss = 0;
};

/// `views` starts spread uniformly over the video (one centred start when 1).
inline std::vector<std::size_t> uniform_starts(std::size_t length, const ClipSampleSpec& spec,
                                               std::size_t views) {
  const auto span = spec.span();
  if (span > length) throw ConfigError("uniform_starts: clip longer than the video");
  const auto last = length - span;
  std::vector<std::size_t> s(views);
  for (std::size_t j = 0; j < views; ++j)
    s[j] = views == 1 ? last / 2
                      : static_cast<std::size_t>(std::lround(static_cast<double>(j * last) /
                                                             static_cast<double>(views - 1)));
  return s;
}

/// Un-augmented clip: centre crop, no colour or flip.
inline std::vector<float> plain_clip(const Dataset& data, std::size_t video, std::size_t start,
                                     const ClipSampleSpec& spec, std::size_t size) {
  AugmentParams p;
  p.crop = base_crop(data.height, data.width, size);
  return apply_augment(data, video, clip_frame_indices(start, data.length, spec, 1.0), p, size);
}

/// Frozen eval-mode features of `videos` (all videos when empty).
template <class T>
FeatureSet extract_features(const Encoder& enc, const ParamSet<T>& params, BufferSet<T> buffers,
                            const Dataset& data, const ClipSampleSpec& spec, std::size_t views,
                            std::vector<std::size_t> videos = {}, std::size_t chunk = 32) {
  if (videos.empty()) {
    videos.resize(data.size());
    std::iota(videos.begin(), videos.end(), 0);
  }
  const std::size_t S = enc.config().input_size;
  FeatureSet fs;
  fs.dim = enc.output_dim();
  fs.views = views;
  fs.num_classes = data.num_classes;
  fs.x.reserve(videos.size() * views * fs.dim);
  const std::size_t per = 3 * spec.frames * S * S;
  const std::size_t total = videos.size() * views;
  for (std::size_t first = 0; first < total; first += chunk) {
    const std::size_t n = std::min(chunk, total - first);
    std::vector<T> buf;
    buf.reserve(n * per);
    for (std::size_t r = first; r < first + n; ++r) {
      const auto vid = videos[r / views];
      const auto starts = uniform_starts(data.length, spec, views);
      const auto clip = plain_clip(data, vid, starts[r % views], spec, S);
      buf.insert(buf.end(), clip.begin(), clip.end());
    }
    const auto f = enc.forward(params, buffers, Tensor<T>::constant({n, 3, spec.frames, S, S}, std::move(buf)),
                               Mode::kEval);
    for (T v : f.values()) fs.x.push_back(static_cast<double>(v));
  }
  for (auto v : videos) fs.labels.push_back(data.videos[v].label);
  return fs;
}

/// 80/20-style split by video, stratified by class. Every class with at least
/// two videos lands on both sides.
inline void stratified_split(const std::vector<std::uint32_t>& labels, std::size_t num_classes,
                             double train_fraction, std::uint64_t seed,
                             std::vector<std::size_t>& train, std::vector<std::size_t>& test) {
  train.clear();
  test.clear();
  std::vector<std::vector<std::size_t>> by_class(num_classes);
  for (std::size_t v = 0; v < labels.size(); ++v) {
    if (labels[v] >= num_classes) throw DataError("split: label outside class range");
    by_class[labels[v]].push_back(v);
  }
  std::size_t present = 0;
  for (const auto& c : by_class) present += !c.empty();
  if (present < 2) throw DataError("split: need at least two classes, found " + std::to_string(present));
  for (std::size_t c = 0; c < num_classes; ++c) {
    auto ids = by_class[c];
    Rng rng(derive_seed(seed, "split", c));
    for (std::size_t i = ids.size(); i > 1; --i)
      std::swap(ids[i - 1], ids[static_cast<std::size_t>(rng.integer(0, static_cast<std::int64_t>(i - 1)))]);
    auto k = static_cast<std::size_t>(std::floor(train_fraction * static_cast<double>(ids.size())));
    if (ids.size() >= 2) k = std::clamp<std::size_t>(k, 1, ids.size() - 1);
    else k = ids.size();
    train.insert(train.end(), ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(k));
    test.insert(test.end(), ids.begin() + static_cast<std::ptrdiff_t>(k), ids.end());
  }
  std::sort(train.begin(), train.end());
  std::sort(test.begin(), test.end());
}

namespace detail {

using MatD = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline void softmax_rows(MatD& z) {
  for (Eigen::Index i = 0; i < z.rows(); ++i) {
    const double mx = z.row(i).maxCoeff();
    z.row(i) = (z.row(i).array() - mx).exp();
    z.row(i) /= z.row(i).sum();
  }
}

/// Averages softmax scores over each video's views and tallies predictions.
inline void score_views(const MatD& probs, const std::vector<std::uint32_t>& labels, std::size_t views,
                        std::size_t C, EvalResult& res) {
  res.num_classes = C;
  res.confusion.assign(C * C, 0);
  std::size_t correct = 0;
  for (std::size_t v = 0; v < labels.size(); ++v) {
    Eigen::RowVectorXd mean = Eigen::RowVectorXd::Zero(static_cast<Eigen::Index>(C));
    for (std::size_t j = 0; j < views; ++j) mean += probs.row(static_cast<Eigen::Index>(v * views + j));
    Eigen::Index pred = 0;
    mean.maxCoeff(&pred);
    res.confusion[labels[v] * C + static_cast<std::size_t>(pred)]++;
    correct += static_cast<std::size_t>(pred) == labels[v];
  }
  res.test_videos = labels.size();
  res.accuracy = labels.empty() ? 0.0 : static_cast<double>(correct) / static_cast<double>(labels.size());
}

}  // namespace detail

/// Softmax linear classifier on frozen features. Features are standardised
/// with train-split statistics and scaled by 1/sqrt(dim).
inline EvalResult linear_probe(const FeatureSet& fs, const ProbeConfig& cfg, std::uint64_t seed) {
  using detail::MatD;
  cfg.validate();
  if (fs.views == 0 || fs.x.size() != fs.num_videos() * fs.views * fs.dim)
    throw ShapeError("probe: feature matrix does not match videos x views x dim");
  const std::size_t C = fs.num_classes, D = fs.dim, V = fs.views;
  std::vector<std::size_t> train, test;
  stratified_split(fs.labels, C, cfg.train_fraction, seed, train, test);

  const auto gather = [&](const std::vector<std::size_t>& ids) {
    MatD m(static_cast<Eigen::Index>(ids.size() * V), static_cast<Eigen::Index>(D));
    for (std::size_t i = 0; i < ids.size(); ++i)
      for (std::size_t j = 0; j < V; ++j)
        m.row(static_cast<Eigen::Index>(i * V + j)) =
            Eigen::Map<const Eigen::RowVectorXd>(fs.row(ids[i], j), static_cast<Eigen::Index>(D));
    return m;
  };
  MatD xtr = gather(train), xte = gather(test);
  for (const auto& v : fs.x)
    if (!std::isfinite(v)) throw NumericError("probe: non-finite feature");
  const Eigen::RowVectorXd mu = xtr.colwise().mean();
  Eigen::RowVectorXd sd = ((xtr.rowwise() - mu).array().square().colwise().mean()).sqrt();
  for (Eigen::Index j = 0; j < sd.size(); ++j) sd[j] = sd[j] > 1e-12 ? sd[j] : 1.0;
  const double gain = 1.0 / std::sqrt(static_cast<double>(D));
  const auto norm = [&](MatD& m) {
    m = ((m.rowwise() - mu).array().rowwise() / sd.array()).matrix() * gain;
  };
  norm(xtr);
  norm(xte);
  std::vector<std::uint32_t> ytr;
  for (auto v : train)
    for (std::size_t j = 0; j < V; ++j) ytr.push_back(fs.labels[v]);

  const std::size_t n = static_cast<std::size_t>(xtr.rows());
  const std::size_t bs = std::min(cfg.batch_size, n);
  const std::size_t per_epoch = (n + bs - 1) / bs;
  OptimConfig sched;
  sched.base_lr = cfg.base_lr;
  sched.total_iters = cfg.epochs * per_epoch;
  sched.warmup_iters = static_cast<std::size_t>(std::lround(cfg.warmup_fraction * sched.total_iters));

  MatD W = MatD::Zero(static_cast<Eigen::Index>(D), static_cast<Eigen::Index>(C));
  Eigen::RowVectorXd b = Eigen::RowVectorXd::Zero(static_cast<Eigen::Index>(C));
  MatD vW = W;
  Eigen::RowVectorXd vb = b;
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(derive_seed(seed, "probe.shuffle"));
  std::size_t it = 0;
  double epoch_loss = 0;
  for (std::size_t e = 0; e < cfg.epochs; ++e) {
    for (std::size_t i = n; i > 1; --i)
      std::swap(order[i - 1], order[static_cast<std::size_t>(rng.integer(0, static_cast<std::int64_t>(i - 1)))]);
    epoch_loss = 0;
    for (std::size_t s = 0; s < n; s += bs, ++it) {
      const std::size_t m = std::min(bs, n - s);
      MatD xb(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(D));
      for (std::size_t r = 0; r < m; ++r) xb.row(static_cast<Eigen::Index>(r)) = xtr.row(static_cast<Eigen::Index>(order[s + r]));
      MatD p = (xb * W).rowwise() + b;
      detail::softmax_rows(p);
      for (std::size_t r = 0; r < m; ++r) {
        const auto y = static_cast<Eigen::Index>(ytr[order[s + r]]);
        epoch_loss -= std::log(std::max(p(static_cast<Eigen::Index>(r), y), 1e-300));
        p(static_cast<Eigen::Index>(r), y) -= 1.0;
      }
      p /= static_cast<double>(m);
      const double lr = lr_at(it, sched);
      vW = cfg.momentum * vW + xb.transpose() * p;
      vb = cfg.momentum * vb + p.colwise().sum();
      W -= lr * vW;
      b -= lr * vb;
    }
    epoch_loss /= static_cast<double>(n);
  }
  if (!std::isfinite(epoch_loss) || !W.allFinite()) throw NumericError("probe: training diverged");

  MatD probs = (xte * W).rowwise() + b;
  detail::softmax_rows(probs);
  std::vector<std::uint32_t> yte;
  for (auto v : test) yte.push_back(fs.labels[v]);
  EvalResult res;
  detail::score_views(probs, yte, V, C, res);
  res.train_videos = train.size();
  res.final_train_loss = epoch_loss;
  return res;
}

struct FinetuneConfig {
  std::size_t steps = 300;
  std::size_t batch_size = 16;
  double base_lr = 0.1;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  std::size_t views = 3;
  double train_fraction = 0.8;
  bool augment = true;  // spatial + colour groups on training clips

  void validate() const {
    if (batch_size == 0 || views == 0) throw ConfigError("finetune: batch_size and views must be positive");
    if (!(base_lr > 0)) throw ConfigError("finetune: base_lr must be positive");
    if (!(train_fraction > 0 && train_fraction < 1)) throw ConfigError("finetune: train_fraction outside (0,1)");
  }
};

/// Trains every encoder weight plus a fresh linear head on labelled clips.
/// Works on copies; the caller's parameters are untouched.
template <class T>
EvalResult finetune(const Encoder& enc, const ParamSet<T>& pretrained, const BufferSet<T>& pre_buffers,
                    const Dataset& data, const ClipSampleSpec& spec, const FinetuneConfig& cfg,
                    std::uint64_t seed) {
  cfg.validate();
  const std::size_t C = data.num_classes, D = enc.output_dim(), S = enc.config().input_size;
  std::vector<std::uint32_t> labels;
  for (const auto& v : data.videos) labels.push_back(v.label);
  std::vector<std::size_t> train, test;
  stratified_split(labels, C, cfg.train_fraction, seed, train, test);

  ParamSet<T> params = pretrained.clone();
  BufferSet<T> buffers = pre_buffers;
  {
    Rng rng(derive_seed(seed, "finetune.head"));
    const double limit = std::sqrt(6.0 / static_cast<double>(D + C));
    std::vector<T> w(D * C);
    for (auto& v : w) v = static_cast<T>(rng.uniform(-limit, limit));
    params.add("cls.weight", {D, C}, std::move(w));
    params.add("cls.bias", {1, C}, std::vector<T>(C, T(0)), true, true);
  }
  OptimConfig opt;
  opt.base_lr = cfg.base_lr;
  opt.momentum = cfg.momentum;
  opt.weight_decay = cfg.weight_decay;
  opt.total_iters = std::max<std::size_t>(cfg.steps, 1);
  AugmentConfig aug;
  aug.output_size = S;
  aug.groups = cfg.augment ? std::set<AugGroup>{AugGroup::kSpatial, AugGroup::kColor} : std::set<AugGroup>{};
  const std::size_t B = std::min(cfg.batch_size, train.size());
  double last = 0;
  for (std::size_t k = 0; k < cfg.steps; ++k) {
    Rng rng(derive_seed(seed, "finetune.batch", k));
    std::vector<T> buf;
    std::vector<T> onehot(B * C, T(0));
    for (std::size_t i = 0; i < B; ++i) {
      const auto vid = train[static_cast<std::size_t>(rng.integer(0, static_cast<std::int64_t>(train.size() - 1)))];
      const auto start = static_cast<std::size_t>(rng.integer(0, static_cast<std::int64_t>(data.length - spec.span())));
      const auto clip = augment_clip(data, vid, start, spec, aug, derive_seed(seed, "finetune.aug", k, i));
      buf.insert(buf.end(), clip.begin(), clip.end());
      onehot[i * C + data.videos[vid].label] = T(-1.0 / static_cast<double>(B));
    }
    const auto f = enc.forward(params, buffers, Tensor<T>::constant({B, 3, spec.frames, S, S}, std::move(buf)),
                               Mode::kTrain);
    const auto logits = add(matmul(f, params["cls.weight"]), params["cls.bias"]);
    const auto loss = sum(mul(log_softmax_rows(logits), Tensor<T>::constant({B, C}, std::move(onehot))));
    backward(loss);
    last = static_cast<double>(loss.item());
    if (!std::isfinite(last)) throw NumericError("finetune: non-finite loss at step " + std::to_string(k));
    sgd_step(params, opt, k);
  }

  const auto fs = extract_features(enc, params, buffers, data, spec, cfg.views, test);
  detail::MatD x(static_cast<Eigen::Index>(test.size() * cfg.views), static_cast<Eigen::Index>(D));
  for (std::size_t r = 0; r < test.size() * cfg.views; ++r)
    for (std::size_t j = 0; j < D; ++j) x(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(j)) = fs.x[r * D + j];
  detail::MatD W(static_cast<Eigen::Index>(D), static_cast<Eigen::Index>(C));
  Eigen::RowVectorXd b(static_cast<Eigen::Index>(C));
  for (std::size_t i = 0; i < D * C; ++i) W(static_cast<Eigen::Index>(i / C), static_cast<Eigen::Index>(i % C)) = params["cls.weight"][i];
  for (std::size_t c = 0; c < C; ++c) b[static_cast<Eigen::Index>(c)] = params["cls.bias"][c];
  detail::MatD probs = (x * W).rowwise() + b;
  detail::softmax_rows(probs);
  EvalResult res;
  detail::score_views(probs, fs.labels, cfg.views, C, res);
  res.train_videos = train.size();
  res.final_train_loss = last;
  return res;
}

}  // namespace vidssl
