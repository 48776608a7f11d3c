// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <vector>

#include "vidssl/oracles.hpp"

namespace vidssl::checks {

using oracle::OracleReport;

/// Main-path InfoNCE (single-query and batched) against direct exponential
/// sums: B <= 8, rho <= 4, d <= 16, with and without queue negatives.
OracleReport infonce_vs_oracle(std::size_t instances, std::uint64_t seed);
OracleReport byol_vs_oracle(std::size_t instances, std::uint64_t seed);
/// Targets come from the main-path Sinkhorn-Knopp.
OracleReport swav_vs_oracle(std::size_t instances, std::uint64_t seed);

/// 2 L + 2 |pos| against the summed squared distance of unit vectors.
OracleReport byol_mse_identity(std::size_t instances, std::uint64_t seed);

struct SinkhornReports {
  OracleReport converged_residual;  // oracle rows and columns, absolute
  OracleReport row_sums;            // main path, absolute
  OracleReport column_sums;         // main path vs converged oracle, relative
};
/// N x K cosine scores between random unit embeddings of width d and random
/// unit prototypes.
SinkhornReports sinkhorn_vs_oracle(std::size_t instances, std::size_t N, std::size_t K,
                                   std::size_t d, std::size_t iterations, double epsilon,
                                   std::uint64_t seed);

/// Live momentum weights after `steps` MoCo steps of a small encoder vs the
/// recorded-history replay.
OracleReport ema_vs_replay(std::size_t steps, std::uint64_t seed);

/// Backprop vs central differences in f64 (h = 1e-5), one report per op
/// family over `trials` random instances each.
std::vector<OracleReport> op_gradients(std::size_t trials, std::uint64_t seed);

struct NetworkGradReport {
  OracleReport raw;                 // every sampled coordinate
  std::size_t coords = 0;
  std::size_t kink_crossings = 0;   // +-h evaluations switch a relu or max-pool branch
  double smooth_max_rel = 0;        // over coordinates without a crossing
};

/// Desk encoder + heads + loss per method, `coords` finite-difference
/// coordinates per parameter tensor.
std::vector<NetworkGradReport> network_gradients(std::size_t coords, std::uint64_t seed);

/// Everything `oracle-check` runs.
std::vector<OracleReport> oracle_suite(std::uint64_t seed);

}  // namespace vidssl::checks
