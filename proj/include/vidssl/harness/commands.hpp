// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <ostream>
#include <string>
#include <vector>

#include "vidssl/harness/config.hpp"

namespace vidssl::cli {

enum ExitCode : int {
  kOk = 0,
  kChecksFailed = 1,
  kConfigError = 2,
  kDataError = 3,
  kNumericError = 4,
};

/// Runs `body`, mapping the error families to exit codes and printing the
/// message to `err`.
int guarded(const std::function<int()>& body, std::ostream& err);

/// Writes the synthetic dataset described by cfg.data to `out_path`
/// (cfg.dataset_path when empty).
void gen_data(const RunConfig& cfg, const std::string& out_path = "");

/// Dataset at cfg.dataset_path; DataError when missing or inconsistent.
Dataset load_dataset_for(const RunConfig& cfg);

struct PretrainOptions {
  std::string resume;          // checkpoint to continue from
  std::size_t stop_after = 0;  // stop at this iteration (0 = run to the end)
  bool quiet = false;
};

/// Trains, writing metrics.csv, config.yaml and checkpoint.bin in the output
/// directory. Returns the checkpoint path.
std::string pretrain(const RunConfig& cfg, const PretrainOptions& opts, std::ostream& log);

/// Linear probe of a checkpoint's encoder; appends a row to probe.csv.
EvalResult probe(const std::string& checkpoint, std::ostream& log);
/// Fine-tunes a copy of a checkpoint's encoder; appends to finetune.csv.
EvalResult finetune(const std::string& checkpoint, std::ostream& log);

struct AblationRow {
  std::string axis, value;
  double sort_key = 0;
  double final_loss = 0;
  double accuracy = 0;
  std::string config_hash;
};

/// Applies one axis value to a copy of `base`.
RunConfig ablation_config(const RunConfig& base, const std::string& axis, const std::string& value);
/// Axis values used when none are given.
std::vector<std::string> default_axis_values(const RunConfig& base, const std::string& axis);

/// Pre-trains and probes once per value; writes ablate_<axis>.csv.
std::vector<AblationRow> ablate(const RunConfig& base, const std::string& axis,
                                const std::vector<std::string>& values, std::ostream& log);

/// Prints the oracle report table; true when every check passes.
bool oracle_check(std::uint64_t seed, std::ostream& out);

}  // namespace vidssl::cli
