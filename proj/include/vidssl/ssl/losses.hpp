// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "vidssl/autodiff/ops.hpp"

namespace vidssl {

enum class InfoNceVariant {
  kSumInside,       // -log(sum_pos e / sum_all e)
  kMeanOfPositives  // mean over positives of -log(e_p / sum_all e)
};

namespace detail {

template <class T>
void require_unit_rows(const Tensor<T>& x, const char* what, double tol = 1e-4) {
  const auto d = x.dim(1);
  for (std::size_t i = 0; i < x.dim(0); ++i) {
    double s = 0;
    for (std::size_t j = 0; j < d; ++j) s += static_cast<double>(x[i * d + j]) * x[i * d + j];
    if (std::abs(std::sqrt(s) - 1.0) > tol)
      throw NumericError(std::string(what) + ": row " + std::to_string(i) + " has norm " +
                         std::to_string(std::sqrt(s)) + ", expected unit");
  }
}

}  // namespace detail

/// Sum over rows of lse(valid logits) - lse(positive logits), or the
/// per-positive mean form. Masks are N x M over `logits` [N, M].
template <class T>
Tensor<T> infonce_from_logits(const Tensor<T>& logits, const std::vector<std::uint8_t>& pos,
                              const std::vector<std::uint8_t>& valid,
                              InfoNceVariant variant = InfoNceVariant::kSumInside) {
  const auto N = logits.dim(0), M = logits.dim(1);
  const auto lse_all = masked_row_logsumexp(logits, valid);
  if (variant == InfoNceVariant::kSumInside)
    return sub(sum(lse_all), sum(masked_row_logsumexp(logits, pos)));
  std::vector<T> w(N * M, T(0));
  for (std::size_t i = 0; i < N; ++i) {
    std::size_t np = 0;
    for (std::size_t j = 0; j < M; ++j) np += pos[i * M + j] != 0;
    for (std::size_t j = 0; j < M; ++j)
      if (pos[i * M + j]) w[i * M + j] = T(1) / static_cast<T>(np);
  }
  return sub(sum(lse_all), sum(mul(logits, Tensor<T>::constant({N, M}, std::move(w)))));
}

/// Batched InfoNCE. q [N,d] and keys [M,d] must be unit rows. pos/valid are
/// N x M masks; valid (the denominator set) must contain pos. Returns the sum
/// of per-query losses; callers divide by their own count.
template <class T>
Tensor<T> infonce_sum(const Tensor<T>& q, const Tensor<T>& keys,
                      const std::vector<std::uint8_t>& pos, const std::vector<std::uint8_t>& valid,
                      double alpha, InfoNceVariant variant = InfoNceVariant::kSumInside) {
  if (q.rank() != 2 || keys.rank() != 2 || q.dim(1) != keys.dim(1))
    throw ShapeError("infonce: embedding shapes " + to_string(q.shape()) + " and " +
                     to_string(keys.shape()) + " disagree");
  const auto N = q.dim(0), M = keys.dim(0);
  if (pos.size() != N * M || valid.size() != N * M) throw ShapeError("infonce: mask size");
  std::vector<std::size_t> npos(N, 0);
  for (std::size_t i = 0; i < N; ++i)
    for (std::size_t j = 0; j < M; ++j) {
      if (pos[i * M + j] && !valid[i * M + j])
        throw ShapeError("infonce: positive outside the denominator set");
      npos[i] += pos[i * M + j] != 0;
    }
  for (std::size_t i = 0; i < N; ++i)
    if (npos[i] == 0) throw ShapeError("infonce: query " + std::to_string(i) + " has no positives");
  detail::require_unit_rows(q, "infonce query");
  detail::require_unit_rows(keys, "infonce key");

  const auto logits = scale(matmul(q, transpose(keys)), static_cast<T>(1.0 / alpha));
  return infonce_from_logits(logits, pos, valid, variant);
}

/// Single-query form: q [d], positives [P,d], negatives [K,d] (K may be 0).
template <class T>
Tensor<T> infonce_loss(const Tensor<T>& q, const Tensor<T>& positives, const Tensor<T>& negatives,
                       double alpha, InfoNceVariant variant = InfoNceVariant::kSumInside) {
  const auto d = q.numel();
  const auto qr = reshape(q, {1, d});
  const std::size_t P = positives.defined() ? positives.dim(0) : 0;
  const std::size_t K = negatives.defined() ? negatives.dim(0) : 0;
  if (P == 0) throw ShapeError("infonce: empty positive set");
  const auto keys = K ? concat_rows<T>({positives, negatives}) : positives;
  std::vector<std::uint8_t> pos(P + K, 0), valid(P + K, 1);
  std::fill_n(pos.begin(), P, 1);
  return infonce_sum(qr, keys, pos, valid, alpha, variant);
}

/// Sum over queries of -sum_pos cos(q_i, k_j). Inputs are normalized here;
/// strict mode rejects zero rows.
template <class T>
Tensor<T> neg_cosine_sum(const Tensor<T>& q, const Tensor<T>& keys,
                         const std::vector<std::uint8_t>& pos,
                         Strictness strict = Strictness::kLenient) {
  if (q.rank() != 2 || keys.rank() != 2 || q.dim(1) != keys.dim(1))
    throw ShapeError("byol: embedding shapes " + to_string(q.shape()) + " and " +
                     to_string(keys.shape()) + " disagree");
  const auto N = q.dim(0), M = keys.dim(0);
  if (pos.size() != N * M) throw ShapeError("byol: mask size");
  std::vector<T> w(N * M);
  for (std::size_t k = 0; k < w.size(); ++k) w[k] = pos[k] ? T(-1) : T(0);
  const auto cos = matmul(l2_normalize(q, 1, strict), transpose(l2_normalize(keys, 1, strict)));
  return sum(mul(cos, Tensor<T>::constant({N, M}, std::move(w))));
}

/// -sum_{k in pos} q^T k / (|q||k|) for one query q [d] and positives [P,d].
template <class T>
Tensor<T> byol_loss(const Tensor<T>& q, const Tensor<T>& positives,
                    Strictness strict = Strictness::kLenient) {
  const auto d = q.numel();
  return neg_cosine_sum(reshape(q, {1, d}), positives,
                        std::vector<std::uint8_t>(positives.dim(0), 1), strict);
}

struct SKConfig {
  std::size_t iterations = 3;
  double epsilon = 0.05;
  std::size_t freeze_prototypes_iters = 0;

  void validate() const {
    if (iterations < 1) throw ConfigError("sinkhorn: iterations must be >= 1");
    if (!(epsilon > 0)) throw ConfigError("sinkhorn: epsilon must be positive");
  }
};

/// Equipartitioned soft assignment of N samples to K prototypes. Columns are
/// scaled to N/K and rows to 1, alternately, ending on rows. Plain numbers:
/// the result never carries gradients.
inline std::vector<double> sinkhorn_knopp(const std::vector<double>& scores, std::size_t N,
                                          std::size_t K, const SKConfig& cfg) {
  cfg.validate();
  if (N == 0 || K == 0 || scores.size() != N * K) throw ShapeError("sinkhorn: bad extents");
  double mx = -INFINITY;
  for (double s : scores) {
    if (!std::isfinite(s)) throw NumericError("sinkhorn: non-finite score");
    mx = std::max(mx, s);
  }
  std::vector<double> Q(N * K);
  for (std::size_t i = 0; i < Q.size(); ++i) Q[i] = std::exp((scores[i] - mx) / cfg.epsilon);
  const double col_target = static_cast<double>(N) / static_cast<double>(K);
  for (std::size_t it = 0; it < cfg.iterations; ++it) {
    for (std::size_t j = 0; j < K; ++j) {
      double s = 0;
      for (std::size_t i = 0; i < N; ++i) s += Q[i * K + j];
      const double f = col_target / s;
      for (std::size_t i = 0; i < N; ++i) Q[i * K + j] *= f;
    }
    for (std::size_t i = 0; i < N; ++i) {
      double s = 0;
      for (std::size_t j = 0; j < K; ++j) s += Q[i * K + j];
      for (std::size_t j = 0; j < K; ++j) Q[i * K + j] /= s;
    }
  }
  return Q;
}

/// Mean over rows of KL(target_i || softmax(scores_i / alpha)).
template <class T>
Tensor<T> swav_loss(const Tensor<T>& scores, const std::vector<double>& targets, double alpha) {
  if (scores.rank() != 2 || targets.size() != scores.numel())
    throw ShapeError("swav: target/score extents disagree for " + to_string(scores.shape()));
  const auto N = scores.dim(0), K = scores.dim(1);
  double neg_entropy = 0;
  for (std::size_t i = 0; i < N; ++i) {
    double s = 0;
    for (std::size_t j = 0; j < K; ++j) {
      const double p = targets[i * K + j];
      if (p < 0) throw NumericError("swav: negative target probability");
      s += p;
      if (p > 0) neg_entropy += p * std::log(p);
    }
    if (std::abs(s - 1.0) > 1e-5)
      throw NumericError("swav: target row " + std::to_string(i) + " sums to " + std::to_string(s));
  }
  std::vector<T> w(N * K);
  for (std::size_t k = 0; k < w.size(); ++k) w[k] = static_cast<T>(-targets[k] / static_cast<double>(N));
  const auto logp = log_softmax_rows(scale(scores, static_cast<T>(1.0 / alpha)));
  const auto cross = sum(mul(logp, Tensor<T>::constant({N, K}, std::move(w))));
  return add(cross, Tensor<T>::scalar(static_cast<T>(neg_entropy / static_cast<double>(N))));
}

}  // namespace vidssl
