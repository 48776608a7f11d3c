// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "vidssl/data/batch.hpp"
#include "vidssl/model/encoder.hpp"
#include "vidssl/model/head.hpp"
#include "vidssl/optim.hpp"
#include "vidssl/ssl/losses.hpp"
#include "vidssl/ssl/momentum.hpp"

namespace vidssl {

enum class Method { kMoCo, kSimCLR, kBYOL, kSwAV };
enum class Aggregation { kSequential, kParallel };

inline std::string to_string(Method m) {
  switch (m) {
    case Method::kMoCo: return "moco";
    case Method::kSimCLR: return "simclr";
    case Method::kBYOL: return "byol";
    case Method::kSwAV: return "swav";
  }
  return "?";
}

inline Method parse_method(const std::string& s) {
  for (auto m : {Method::kMoCo, Method::kSimCLR, Method::kBYOL, Method::kSwAV})
    if (s == to_string(m)) return m;
  throw ConfigError("unknown method '" + s + "' (expected moco, simclr, byol or swav)");
}

inline bool uses_momentum_encoder(Method m) { return m == Method::kMoCo || m == Method::kBYOL; }

struct FrameworkConfig {
  Method method = Method::kSimCLR;
  EncoderConfig encoder;
  HeadConfig projection;
  HeadConfig predictor{2, 1024, 256, true, HeadRole::kPrediction};
  double alpha = 0.1;
  double m_base = 0.994;
  std::size_t queue_capacity = 0;
  bool shuffle_bn = true;
  std::size_t shuffle_bn_groups = 4;
  std::size_t num_prototypes = 0;
  SKConfig sk;
  Aggregation aggregation = Aggregation::kParallel;
  InfoNceVariant infonce_variant = InfoNceVariant::kSumInside;

  std::size_t embed_dim() const { return projection.output_dim; }

  /// Desk-scale recipe for one method.
  static FrameworkConfig defaults(Method m) {
    FrameworkConfig c;
    c.method = m;
    switch (m) {
      case Method::kMoCo:
        c.projection = {3, 128, 128, false, HeadRole::kProjection};
        c.m_base = 0.994;
        c.queue_capacity = 1024;
        c.aggregation = Aggregation::kSequential;
        break;
      case Method::kSimCLR:
        c.projection = {3, 128, 128, true, HeadRole::kProjection};
        break;
      case Method::kBYOL:
        c.projection = {2, 1024, 256, true, HeadRole::kProjection};
        c.predictor = {2, 1024, 256, true, HeadRole::kPrediction};
        c.m_base = 0.996;
        c.aggregation = Aggregation::kSequential;
        break;
      case Method::kSwAV:
        c.projection = {3, 128, 128, true, HeadRole::kProjection};
        c.num_prototypes = 32;
        break;
    }
    return c;
  }

  void validate() const {
    const auto name = to_string(method);
    if (!(alpha > 0)) throw ConfigError("framework: temperature must be positive");
    if (!(m_base >= 0 && m_base <= 1)) throw ConfigError("framework: m_base outside [0,1]");
    if (projection.role != HeadRole::kProjection)
      throw ConfigError("framework: projection head must have the projection role");
    if ((method == Method::kMoCo) != (queue_capacity > 0))
      throw ConfigError(method == Method::kMoCo ? "moco requires a positive queue capacity"
                                                : name + " does not use a negative queue");
    if ((method == Method::kSwAV) != (num_prototypes > 0))
      throw ConfigError(method == Method::kSwAV ? "swav requires prototypes"
                                                : name + " does not use prototypes");
    if (method == Method::kBYOL) {
      if (predictor.role != HeadRole::kPrediction)
        throw ConfigError("byol predictor must have the prediction role");
      if (predictor.output_dim != projection.output_dim)
        throw ConfigError("byol predictor output must match the projection dimension");
    }
    if (aggregation == Aggregation::kSequential && !uses_momentum_encoder(method))
      throw ConfigError(name + " evaluates its loss over all clips at once; sequential "
                               "aggregation applies to moco and byol only");
    if (shuffle_bn && shuffle_bn_groups == 0) throw ConfigError("shuffle_bn_groups must be positive");
    sk.validate();
  }
};

/// Everything a method mutates during training.
template <class T>
struct FrameworkState {
  FrameworkConfig cfg;
  Encoder encoder;
  Head projection;
  std::optional<Head> predictor;
  ParamSet<T> online;      // theta: encoder + projection
  ParamSet<T> momentum;    // theta_m
  ParamSet<T> pred;        // theta_p
  ParamSet<T> prototypes;  // single entry "prototypes" [K, d]
  BufferSet<T> online_buffers, momentum_buffers, pred_buffers;
  std::optional<EmbeddingQueue<T>> queue;
  std::size_t iteration = 0;
  std::size_t total_iters = 1;
  std::vector<T> pending_keys;  // momentum keys of the last forward, queued on update

  FrameworkState(const FrameworkState&) = delete;
  FrameworkState& operator=(const FrameworkState&) = delete;
  FrameworkState(FrameworkState&&) = default;

  FrameworkState(FrameworkConfig c, std::size_t total, std::uint64_t seed)
      : cfg(std::move(c)),
        encoder((cfg.validate(), cfg.encoder)),
        projection(cfg.projection, encoder.output_dim(), "proj."),
        total_iters(total) {
    if (total_iters == 0) throw ConfigError("framework: total iterations must be positive");
    encoder.init(online, online_buffers, derive_seed(seed, "init.encoder"));
    projection.init(online, online_buffers, derive_seed(seed, "init.projection"));
    if (uses_momentum_encoder(cfg.method)) {
      momentum = online.clone();
      momentum_buffers = online_buffers;
    }
    if (cfg.method == Method::kBYOL) {
      predictor.emplace(cfg.predictor, cfg.embed_dim(), "pred.");
      predictor->init(pred, pred_buffers, derive_seed(seed, "init.predictor"));
    }
    if (cfg.method == Method::kMoCo) queue.emplace(cfg.queue_capacity, cfg.embed_dim());
    if (cfg.method == Method::kSwAV) {
      const auto K = cfg.num_prototypes, d = cfg.embed_dim();
      Rng rng(derive_seed(seed, "init.prototypes"));
      std::vector<T> w(K * d);
      for (auto& v : w) v = static_cast<T>(rng.normal());
      prototypes.add("prototypes", {K, d}, std::move(w));
      normalize_prototypes();
    }
    validate();
  }

  /// Rejects component combinations the method does not define.
  void validate() const {
    const auto name = to_string(cfg.method);
    if (queue.has_value() != (cfg.method == Method::kMoCo))
      throw ConfigError("framework state: " + name + (queue ? " must not carry" : " needs") +
                        " a negative queue");
    if ((momentum.size() > 0) != uses_momentum_encoder(cfg.method))
      throw ConfigError("framework state: momentum weights inconsistent with " + name);
    if ((pred.size() > 0) != (cfg.method == Method::kBYOL))
      throw ConfigError("framework state: predictor inconsistent with " + name);
    if ((prototypes.size() > 0) != (cfg.method == Method::kSwAV))
      throw ConfigError("framework state: prototypes inconsistent with " + name);
    for (const auto& [n, e] : momentum)
      if (!online.contains(n) || online[n].shape() != e.tensor.shape())
        throw ConfigError("framework state: momentum parameter " + n + " has no online twin");
  }

  void normalize_prototypes() {
    if (prototypes.size() == 0) return;
    auto w = prototypes["prototypes"].mutable_values();
    const auto d = cfg.embed_dim();
    for (std::size_t k = 0; k < w.size() / d; ++k) {
      double s = 0;
      for (std::size_t j = 0; j < d; ++j) s += static_cast<double>(w[k * d + j]) * w[k * d + j];
      const T inv = static_cast<T>(1.0 / std::sqrt(s));
      for (std::size_t j = 0; j < d; ++j) w[k * d + j] *= inv;
    }
  }

  void zero_grad() {
    online.zero_grad();
    momentum.zero_grad();
    pred.zero_grad();
    prototypes.zero_grad();
  }

  /// Pooled encoder features [N, C].
  Tensor<T> features(const Tensor<T>& clips, Mode mode) {
    return encoder.forward(online, online_buffers, clips, mode);
  }
};

struct StepResult {
  double loss = 0;
  std::vector<double> sub_losses;   // one per view (query role)
  double lr = 0;
  double m = 0;                     // momentum used for theta_m (MoCo/BYOL)
  std::size_t queue_fill = 0;       // before this step's push
  std::size_t denominator = 0;      // contrastive denominator size per query
  double momentum_grad_max = 0;     // |grad| over theta_m, must be exactly 0
  double sk_branch_grad_max = 0;    // |grad| reaching the SK input, must be exactly 0
  double prototype_grad_norm = 0;   // gradient via the prediction branch
  double embed_norm_dev = 0;        // max | |e| - 1 | over loss inputs
};

namespace detail {

template <class T>
double max_norm_dev(const Tensor<T>& x) {
  const auto d = x.dim(1);
  double dev = 0;
  for (std::size_t i = 0; i < x.dim(0); ++i) {
    double s = 0;
    for (std::size_t j = 0; j < d; ++j) s += static_cast<double>(x[i * d + j]) * x[i * d + j];
    dev = std::max(dev, std::abs(std::sqrt(s) - 1.0));
  }
  return dev;
}

/// Masks for query clips `rows` against N batch keys followed by `extra`
/// queue keys. Positives: same video, different clip. Queue keys are always
/// negatives; batch clips of other videos are negatives iff `batch_negatives`.
inline void contrast_masks(const std::vector<std::size_t>& rows, const ClipBatch& batch,
                           std::size_t extra, bool batch_negatives,
                           std::vector<std::uint8_t>& pos, std::vector<std::uint8_t>& valid) {
  const auto N = batch.num_clips(), M = N + extra;
  pos.assign(rows.size() * M, 0);
  valid.assign(rows.size() * M, 0);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const auto n = rows[r];
    for (std::size_t j = 0; j < M; ++j) {
      if (j >= N) {
        valid[r * M + j] = 1;
      } else if (j != n) {
        const bool same = batch.group[j] == batch.group[n];
        pos[r * M + j] = same;
        valid[r * M + j] = same || batch_negatives;
      }
    }
  }
}

inline std::vector<std::size_t> view_rows(const ClipBatch& b, std::size_t v) {
  std::vector<std::size_t> r(b.videos_per_batch);
  std::iota(r.begin(), r.end(), v * b.videos_per_batch);
  return r;
}

inline std::vector<std::size_t> all_rows(const ClipBatch& b) {
  std::vector<std::size_t> r(b.num_clips());
  std::iota(r.begin(), r.end(), 0);
  return r;
}

template <class T>
Tensor<T> online_projection(FrameworkState<T>& st, const Tensor<T>& clips) {
  const auto f = st.encoder.forward(st.online, st.online_buffers, clips, Mode::kTrain);
  return st.projection.forward(st.online, st.online_buffers, f, Mode::kTrain);
}

/// Loss-space query embedding of one view group.
template <class T>
Tensor<T> online_query(FrameworkState<T>& st, const Tensor<T>& clips) {
  auto z = online_projection(st, clips);
  if (st.cfg.method == Method::kBYOL) z = st.predictor->forward(st.pred, st.pred_buffers, z, Mode::kTrain);
  return l2_normalize(z, 1);
}

/// Unit-norm momentum embeddings of all clips, detached.
template <class T>
Tensor<T> momentum_keys(FrameworkState<T>& st, const ClipBatch& batch) {
  const auto B = batch.videos_per_batch;
  const std::size_t groups = st.cfg.method == Method::kMoCo && st.cfg.shuffle_bn
                                 ? std::gcd(B, st.cfg.shuffle_bn_groups)
                                 : 1;
  std::vector<Tensor<T>> parts;
  for (std::size_t v = 0; v < batch.views; ++v) {
    const auto f = st.encoder.forward(st.momentum, st.momentum_buffers, batch.clips<T>(v * B, B),
                                      Mode::kTrain, groups);
    const auto z = st.projection.forward(st.momentum, st.momentum_buffers, f, Mode::kTrain);
    parts.push_back(stop_gradient(l2_normalize(z, 1)));
  }
  auto keys = concat_rows(parts);
  if (st.queue) st.pending_keys.assign(keys.values().begin(), keys.values().end());
  return keys;
}

template <class T>
Tensor<T> moco_rows_loss(FrameworkState<T>& st, const ClipBatch& batch,
                         const std::vector<std::size_t>& rows, const Tensor<T>& q,
                         const Tensor<T>& keys, const Tensor<T>& queue_snap, StepResult& res) {
  const std::size_t extra = queue_snap.defined() ? queue_snap.dim(0) : 0;
  const auto km = extra ? concat_rows<T>({keys, queue_snap}) : keys;
  std::vector<std::uint8_t> pos, valid;
  contrast_masks(rows, batch, extra, false, pos, valid);
  res.denominator = static_cast<std::size_t>(std::count(valid.begin(), valid.begin() + static_cast<std::ptrdiff_t>(km.dim(0)), 1));
  res.embed_norm_dev = std::max({res.embed_norm_dev, max_norm_dev(q), max_norm_dev(keys)});
  return infonce_sum(q, km, pos, valid, st.cfg.alpha, st.cfg.infonce_variant);
}

template <class T>
Tensor<T> byol_rows_loss(const ClipBatch& batch, const std::vector<std::size_t>& rows,
                         const Tensor<T>& q, const Tensor<T>& keys, StepResult& res) {
  std::vector<std::uint8_t> pos, valid;
  contrast_masks(rows, batch, 0, false, pos, valid);
  res.embed_norm_dev = std::max({res.embed_norm_dev, max_norm_dev(q), max_norm_dev(keys)});
  return scale(neg_cosine_sum(q, keys, pos), T(2));
}

template <class T>
Tensor<T> simclr_loss(FrameworkState<T>& st, const ClipBatch& batch, StepResult& res) {
  const auto B = batch.videos_per_batch;
  std::vector<Tensor<T>> parts;
  for (std::size_t v = 0; v < batch.views; ++v) parts.push_back(online_query(st, batch.clips<T>(v * B, B)));
  const auto z = concat_rows(parts);
  std::vector<std::uint8_t> pos, valid;
  contrast_masks(all_rows(batch), batch, 0, true, pos, valid);
  res.denominator = static_cast<std::size_t>(std::count(valid.begin(), valid.begin() + static_cast<std::ptrdiff_t>(z.dim(0)), 1));
  res.embed_norm_dev = std::max(res.embed_norm_dev, max_norm_dev(z));
  const auto total = infonce_sum(z, z, pos, valid, st.cfg.alpha, st.cfg.infonce_variant);
  return scale(total, static_cast<T>(1.0 / static_cast<double>(batch.num_clips())));
}

/// SwAV targets: each clip takes the mean SK assignment of the other clips
/// of its video.
inline std::vector<double> swav_targets(const std::vector<double>& assign, const ClipBatch& batch,
                                        std::size_t K) {
  const auto N = batch.num_clips();
  std::vector<double> t(N * K, 0.0);
  for (std::size_t n = 0; n < N; ++n) {
    std::size_t cnt = 0;
    for (std::size_t m = 0; m < N; ++m)
      if (m != n && batch.group[m] == batch.group[n]) {
        for (std::size_t k = 0; k < K; ++k) t[n * K + k] += assign[m * K + k];
        ++cnt;
      }
    for (std::size_t k = 0; k < K; ++k) t[n * K + k] /= static_cast<double>(cnt);
  }
  return t;
}

template <class T>
Tensor<T> swav_full_loss(FrameworkState<T>& st, const ClipBatch& batch, StepResult& res,
                         Tensor<T>* sk_probe) {
  const auto B = batch.videos_per_batch;
  std::vector<Tensor<T>> parts;
  for (std::size_t v = 0; v < batch.views; ++v) parts.push_back(online_query(st, batch.clips<T>(v * B, B)));
  const auto z = concat_rows(parts);
  res.embed_norm_dev = std::max(res.embed_norm_dev, max_norm_dev(z));
  const auto scores = matmul(z, transpose(st.prototypes["prototypes"]));
  // The SK input is routed through a probe leaf so tests can observe that
  // nothing flows back along it.
  Tensor<T> probe = Tensor<T>::variable(scores.shape(), std::vector<T>(scores.numel(), T(1)));
  if (sk_probe) *sk_probe = probe;
  const auto sk_in = stop_gradient(mul(scores, probe));
  const auto N = scores.dim(0), K = scores.dim(1);
  const auto assign = sinkhorn_knopp(std::vector<double>(sk_in.values().begin(), sk_in.values().end()),
                                     N, K, st.cfg.sk);
  return swav_loss(scores, swav_targets(assign, batch, K), st.cfg.alpha);
}

}  // namespace detail

/// Builds the whole symmetric loss in one graph (parallel form) without
/// touching optimizer state. Used for gradient checks and loss evaluation.
template <class T>
Tensor<T> batch_loss(FrameworkState<T>& st, const ClipBatch& batch, StepResult* diag = nullptr,
                     Tensor<T>* sk_probe = nullptr) {
  StepResult local;
  StepResult& res = diag ? *diag : local;
  const auto N = batch.num_clips(), B = batch.videos_per_batch;
  const T inv_n = static_cast<T>(1.0 / static_cast<double>(N));
  switch (st.cfg.method) {
    case Method::kSimCLR:
      return detail::simclr_loss(st, batch, res);
    case Method::kSwAV:
      return detail::swav_full_loss(st, batch, res, sk_probe);
    case Method::kMoCo:
    case Method::kBYOL: {
      const auto keys = detail::momentum_keys(st, batch);
      std::vector<Tensor<T>> parts;
      for (std::size_t v = 0; v < batch.views; ++v)
        parts.push_back(detail::online_query(st, batch.clips<T>(v * B, B)));
      const auto q = concat_rows(parts);
      const auto rows = detail::all_rows(batch);
      const auto total = st.cfg.method == Method::kMoCo
                             ? detail::moco_rows_loss(st, batch, rows, q, keys,
                                                      st.queue->snapshot(), res)
                             : detail::byol_rows_loss(batch, rows, q, keys, res);
      return scale(total, inv_n);
    }
  }
  throw ConfigError("batch_loss: unknown method");
}

/// Forward + backward for one batch; leaves gradients in the parameter sets.
template <class T>
StepResult compute_gradients(FrameworkState<T>& st, const ClipBatch& batch,
                             std::optional<Aggregation> aggregation = std::nullopt) {
  if (batch.views < 2) throw ConfigError("train_step: batch needs at least two clips per video");
  const auto agg = aggregation.value_or(st.cfg.aggregation);
  if (agg == Aggregation::kSequential && !uses_momentum_encoder(st.cfg.method))
    throw ConfigError("sequential aggregation applies to moco and byol only");
  StepResult res;
  res.queue_fill = st.queue ? st.queue->size() : 0;
  res.m = uses_momentum_encoder(st.cfg.method)
              ? momentum_schedule(std::min(st.iteration, st.total_iters), st.total_iters, st.cfg.m_base)
              : 0.0;
  const auto N = batch.num_clips(), B = batch.videos_per_batch;
  const T inv_n = static_cast<T>(1.0 / static_cast<double>(N));
  st.zero_grad();

  if (agg == Aggregation::kParallel) {
    Tensor<T> probe;
    const auto loss = batch_loss(st, batch, &res, &probe);
    backward(loss);
    res.loss = static_cast<double>(loss.item());
    if (probe.defined())
      for (T g : probe.grad()) res.sk_branch_grad_max = std::max<double>(res.sk_branch_grad_max, std::abs(g));
  } else {
    const auto keys = detail::momentum_keys(st, batch);
    const auto snap = st.queue ? st.queue->snapshot() : Tensor<T>{};
    for (std::size_t v = 0; v < batch.views; ++v) {
      const auto rows = detail::view_rows(batch, v);
      const auto q = detail::online_query(st, batch.clips<T>(v * B, B));
      const auto sub = st.cfg.method == Method::kMoCo
                           ? detail::moco_rows_loss(st, batch, rows, q, keys, snap, res)
                           : detail::byol_rows_loss(batch, rows, q, keys, res);
      const auto scaled = scale(sub, inv_n);
      backward(scaled);
      res.loss += static_cast<double>(scaled.item());
      res.sub_losses.push_back(static_cast<double>(sub.item()) / static_cast<double>(B));
    }
  }
  if (uses_momentum_encoder(st.cfg.method)) res.momentum_grad_max = static_cast<double>(st.momentum.max_abs_grad());
  if (st.prototypes.size()) {
    double s = 0;
    for (T g : st.prototypes.grad("prototypes")) s += static_cast<double>(g) * g;
    res.prototype_grad_norm = std::sqrt(s);
  }
  if (!std::isfinite(res.loss)) throw NumericError("train_step: non-finite loss");
  return res;
}

/// Optimizer step, prototype freeze/renormalization, EMA of theta_m and the
/// queue push, then k <- k + 1.
template <class T>
void apply_update(FrameworkState<T>& st, const OptimConfig& opt, StepResult& res) {
  res.lr = lr_at(std::min(st.iteration, opt.total_iters), opt);
  const auto n = std::min(st.iteration, opt.total_iters);
  sgd_step(st.online, opt, n);
  if (st.pred.size()) sgd_step(st.pred, opt, n);
  if (st.prototypes.size()) {
    if (st.iteration < st.cfg.sk.freeze_prototypes_iters) {
      st.prototypes.zero_grad();
    } else {
      sgd_step(st.prototypes, opt, n);
      st.normalize_prototypes();
    }
  }
  if (uses_momentum_encoder(st.cfg.method)) momentum_update(st.online, st.momentum, res.m);
  if (st.queue) {
    st.queue->push(st.pending_keys);
    st.pending_keys.clear();
  }
  ++st.iteration;
}

template <class T>
StepResult train_step(FrameworkState<T>& st, const ClipBatch& batch, const OptimConfig& opt) {
  auto res = compute_gradients(st, batch);
  apply_update(st, opt, res);
  return res;
}

}  // namespace vidssl
