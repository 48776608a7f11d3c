// SPDX-License-Identifier: Apache-2.0
#pragma once

// Brute-force reference computations. Everything here runs in double on plain
// vectors and deliberately avoids the Tensor op library.

#include <algorithm>
#include <cmath>
#include <functional>
#include <iomanip>
#include <map>
#include <ostream>
#include <string>
#include <vector>

#include "vidssl/autodiff/param_set.hpp"
#include "vidssl/error.hpp"

namespace vidssl::oracle {

using Vec = std::vector<double>;
using Mat = std::vector<Vec>;

struct OracleReport {
  std::string check;
  double max_abs_err = 0;
  double max_rel_err = 0;
  std::size_t instances = 0;
  double tolerance = 0;
  bool pass = true;

  /// pass is re-derived from the relative error.
  void record(double expected, double actual, double rel_floor = 1e-12) {
    const double abs = std::abs(expected - actual);
    const double rel = abs / std::max(std::abs(expected), rel_floor);
    max_abs_err = std::max(max_abs_err, abs);
    max_rel_err = std::max(max_rel_err, std::isnan(rel) ? INFINITY : rel);
    pass = max_rel_err <= tolerance;
  }

  /// Absolute check: the error is taken relative to unit scale.
  void record_abs(double err) {
    max_abs_err = std::max(max_abs_err, err);
    max_rel_err = std::max(max_rel_err, std::isnan(err) ? INFINITY : err);
    pass = max_rel_err <= tolerance;
  }
};

inline void print_reports(std::ostream& os, const std::vector<OracleReport>& reports) {
  os << std::left << std::setw(34) << "check" << std::setw(12) << "instances" << std::setw(14)
     << "max_abs" << std::setw(14) << "max_rel" << std::setw(12) << "tolerance"
     << "result\n";
  for (const auto& r : reports)
    os << std::left << std::setw(34) << r.check << std::setw(12) << r.instances
       << std::setw(14) << std::scientific << std::setprecision(3) << r.max_abs_err
       << std::setw(14) << r.max_rel_err << std::setw(12) << r.tolerance << std::defaultfloat
       << (r.pass ? "PASS" : "FAIL") << "\n";
}

inline double dot(const Vec& a, const Vec& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

/// -log( sum_pos e^{s/a} / sum_all e^{s/a} ) with plain exponential sums.
/// Logits are rescaled by a common factor only when the direct sums overflow.
inline double infonce_bruteforce(const Vec& q, const Mat& pos, const Mat& neg, double alpha) {
  if (pos.empty()) throw ConfigError("infonce oracle: no positives");
  double num = 0, den = 0;
  for (const auto& k : pos) num += std::exp(dot(q, k) / alpha);
  den = num;
  for (const auto& k : neg) den += std::exp(dot(q, k) / alpha);
  if (std::isfinite(num) && std::isfinite(den) && num > 0) return -std::log(num / den);
  double shift = -INFINITY;
  for (const auto& k : pos) shift = std::max(shift, dot(q, k) / alpha);
  for (const auto& k : neg) shift = std::max(shift, dot(q, k) / alpha);
  num = den = 0;
  for (const auto& k : pos) num += std::exp(dot(q, k) / alpha - shift);
  den = num;
  for (const auto& k : neg) den += std::exp(dot(q, k) / alpha - shift);
  return -std::log(num / den);
}

/// -sum_k cos(q, k).
inline double byol_bruteforce(const Vec& q, const Mat& pos) {
  double l = 0;
  for (const auto& k : pos) l -= dot(q, k) / std::sqrt(dot(q, q) * dot(k, k));
  return l;
}

/// Mean over rows of sum_j p log(p / softmax(s/alpha)_j).
inline double swav_bruteforce(const Mat& scores, const Mat& targets, double alpha) {
  double total = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    double z = 0;
    for (double s : scores[i]) z += std::exp(s / alpha);
    for (std::size_t j = 0; j < scores[i].size(); ++j) {
      const double p = targets[i][j];
      if (p <= 0) continue;
      const double qj = std::exp(scores[i][j] / alpha) / z;
      total += p * std::log(p / qj);
    }
  }
  return total / static_cast<double>(scores.size());
}

struct SinkhornResult {
  Mat assignment;
  double row_residual = 0;
  double col_residual = 0;
  std::size_t rounds = 0;
};

/// Alternating normalization run to convergence: rows sum to 1, columns to
/// N/K. Stops when both residuals drop below `tol` or after `max_rounds`.
inline SinkhornResult sinkhorn_converged(const Mat& scores, double eps, double tol = 1e-10,
                                         std::size_t max_rounds = 10000) {
  const std::size_t n = scores.size(), k = scores.at(0).size();
  double mx = -INFINITY;
  for (const auto& r : scores)
    for (double v : r) mx = std::max(mx, v);
  SinkhornResult res;
  Mat q(n, Vec(k));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < k; ++j) q[i][j] = std::exp((scores[i][j] - mx) / eps);
  const double col_target = static_cast<double>(n) / static_cast<double>(k);
  const auto residuals = [&] {
    double rr = 0, cr = 0;
    for (std::size_t i = 0; i < n; ++i) {
      double s = 0;
      for (double v : q[i]) s += v;
      rr = std::max(rr, std::abs(s - 1.0));
    }
    for (std::size_t j = 0; j < k; ++j) {
      double s = 0;
      for (std::size_t i = 0; i < n; ++i) s += q[i][j];
      cr = std::max(cr, std::abs(s - col_target));
    }
    res.row_residual = rr;
    res.col_residual = cr;
    return std::max(rr, cr);
  };
  for (res.rounds = 0; res.rounds < max_rounds; ++res.rounds) {
    for (std::size_t j = 0; j < k; ++j) {
      double s = 0;
      for (std::size_t i = 0; i < n; ++i) s += q[i][j];
      for (std::size_t i = 0; i < n; ++i) q[i][j] *= col_target / s;
    }
    for (std::size_t i = 0; i < n; ++i) {
      double s = 0;
      for (double v : q[i]) s += v;
      for (double& v : q[i]) v /= s;
    }
    if (residuals() < tol) {
      ++res.rounds;
      break;
    }
  }
  res.assignment = std::move(q);
  return res;
}

/// Central differences of a scalar function of all parameters. When
/// `max_coords_per_param` is nonzero, only that many evenly spaced coordinates
/// of each parameter are probed (the rest are reported as NaN).
template <class T>
std::map<std::string, Vec> finite_diff(const std::function<double()>& f, ParamSet<T>& params,
                                       double h, std::size_t max_coords_per_param = 0) {
  if (!(h >= 1e-7 && h <= 1e-3)) throw ConfigError("finite_diff: step out of range");
  std::map<std::string, Vec> out;
  for (auto& [name, e] : params) {
    auto vals = e.tensor.mutable_values();
    Vec g(vals.size(), NAN);
    std::size_t step = 1;
    if (max_coords_per_param && vals.size() > max_coords_per_param)
      step = vals.size() / max_coords_per_param;
    for (std::size_t i = 0; i < vals.size(); i += step) {
      const T orig = vals[i];
      vals[i] = static_cast<T>(orig + h);
      const double fp = f();
      vals[i] = static_cast<T>(orig - h);
      const double fm = f();
      vals[i] = orig;
      if (!std::isfinite(fp) || !std::isfinite(fm))
        throw NumericError("finite_diff: non-finite objective at " + name);
      g[i] = (fp - fm) / (2 * h);
    }
    out[name] = std::move(g);
  }
  return out;
}

/// theta_m(k+1) = m_k theta_m(k) + (1 - m_k) theta(k+1), replayed from
/// recorded snapshots. history[k] is theta after step k; m[k] the momentum used.
inline Vec ema_replay(const Vec& initial, const Mat& history, const Vec& momentum) {
  Vec tm = initial;
  for (std::size_t k = 0; k < history.size(); ++k)
    for (std::size_t i = 0; i < tm.size(); ++i)
      tm[i] = momentum[k] * tm[i] + (1.0 - momentum[k]) * history[k][i];
  return tm;
}

}  // namespace vidssl::oracle
