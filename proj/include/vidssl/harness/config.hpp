// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>

#include "vidssl/data/batch.hpp"
#include "vidssl/eval.hpp"
#include "vidssl/optim.hpp"
#include "vidssl/ssl/framework.hpp"

namespace vidssl {

enum class Precision { kF32, kF64 };

/// Everything needed to reproduce one run. Encoder frames/stride/input size
/// are tied to the clip spec and augmentation output size by sync().
struct RunConfig {
  FrameworkConfig framework = FrameworkConfig::defaults(Method::kSimCLR);
  ClipSampleSpec clips;
  AugmentConfig augment;
  OptimConfig optim;
  double warmup_fraction = 8.0 / 60.0;
  std::size_t batch_size = 16;
  std::size_t iterations = 2000;
  std::size_t checkpoint_every = 500;
  std::uint64_t seed = 0;
  Precision precision = Precision::kF32;
  DatasetSpec data;
  std::string dataset_path = "data/synth.bin";
  std::string output_dir = "runs/default";
  ProbeConfig probe;
  FinetuneConfig finetune;

  /// Desk recipe for one method: optimizer, head and queue defaults.
  static RunConfig defaults(Method m);

  Method method() const { return framework.method; }
  /// Copies shared fields into the nested configs (encoder clip shape,
  /// optimizer horizon and warmup, data seed).
  void sync();
  void validate() const;
};

/// Strict YAML reader: unknown keys, wrong types and out-of-range values are
/// ConfigErrors. Missing keys keep the method defaults.
RunConfig parse_config(const std::string& yaml_text);
RunConfig load_config(const std::string& path);

/// Canonical text form. Round-trips exactly through parse_config.
std::string to_yaml(const RunConfig& cfg, bool annotated = false);

/// FNV-1a of the canonical text, as 16 hex digits.
std::string config_hash(const RunConfig& cfg);

/// Output directory after the VIDSSL_OUTPUT_DIR override.
std::string resolved_output_dir(const RunConfig& cfg);

}  // namespace vidssl
