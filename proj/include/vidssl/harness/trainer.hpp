// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <chrono>
#include <fstream>
#include <sstream>
#include <string>

#include "vidssl/harness/checkpoint.hpp"

namespace vidssl {

inline constexpr const char* kMetricsHeader = "iter,loss,lr,m,queue_fill,wall_ms";

struct MetricsRow {
  std::size_t iter = 0;
  double loss = 0, lr = 0, m = 0;
  std::size_t queue_fill = 0;
  double wall_ms = 0;

  std::string csv() const {
    std::ostringstream os;
    os.precision(17);
    os << iter << ',' << loss << ',' << lr << ',' << m << ',' << queue_fill << ',';
    os.precision(6);
    os << wall_ms;
    return os.str();
  }
};

/// Pre-training loop state: config, framework state and the batch stream.
/// Batch k depends only on (seed, k), so a resumed trainer draws exactly the
/// batches an uninterrupted one would.
template <class T>
class Trainer {
 public:
  explicit Trainer(RunConfig cfg)
      : cfg_((cfg.sync(), cfg.validate(), std::move(cfg))), state_(cfg_.framework, cfg_.iterations, cfg_.seed) {}
  explicit Trainer(Checkpoint<T>&& ck) : cfg_(std::move(ck.config)), state_(std::move(ck.state)) {}

  const RunConfig& config() const { return cfg_; }
  FrameworkState<T>& state() { return state_; }
  const FrameworkState<T>& state() const { return state_; }
  std::size_t iteration() const { return state_.iteration; }
  bool done() const { return state_.iteration >= cfg_.iterations; }

  ClipBatch batch(const Dataset& data, std::size_t k) const {
    return make_batch(data, cfg_.batch_size, cfg_.clips, cfg_.augment, derive_seed(cfg_.seed, "pretrain.batch", k));
  }

  MetricsRow step(const Dataset& data) {
    const auto t0 = std::chrono::steady_clock::now();
    const auto k = state_.iteration;
    const auto res = train_step(state_, batch(data, k), cfg_.optim);
    MetricsRow row{k, res.loss, res.lr, res.m, res.queue_fill, 0};
    row.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    return row;
  }

  void save(const std::string& path) const { save_checkpoint(path, cfg_, state_); }

  /// Frozen-feature linear probe of the online encoder.
  EvalResult probe(const Dataset& data) const {
    const auto fs = extract_features(state_.encoder, state_.online, state_.online_buffers, data, cfg_.clips,
                                     cfg_.probe.views);
    return linear_probe(fs, cfg_.probe, derive_seed(cfg_.seed, "probe"));
  }

  EvalResult finetune(const Dataset& data) const {
    return vidssl::finetune(state_.encoder, state_.online, state_.online_buffers, data, cfg_.clips, cfg_.finetune,
                            derive_seed(cfg_.seed, "finetune"));
  }

 private:
  RunConfig cfg_;
  FrameworkState<T> state_;
};

}  // namespace vidssl
