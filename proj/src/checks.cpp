// SPDX-License-Identifier: Apache-2.0
#include "vidssl/harness/checks.hpp"

#include <cmath>
#include <functional>

#include "vidssl/ssl/framework.hpp"

namespace vidssl::checks {

using oracle::Mat;
using oracle::Vec;
using TD = Tensor<double>;

namespace {

Vec unit_vec(std::size_t d, Rng& rng) {
  Vec v(d);
  double s = 0;
  for (auto& x : v) s += (x = rng.normal()) * x;
  for (auto& x : v) x /= std::sqrt(s);
  return v;
}

TD rows(const Mat& m, std::size_t d) {
  std::vector<double> v;
  for (const auto& r : m) v.insert(v.end(), r.begin(), r.end());
  return TD::constant({m.size(), d}, std::move(v));
}

std::size_t pick(Rng& rng, std::size_t lo, std::size_t hi) {
  return static_cast<std::size_t>(rng.integer(static_cast<std::int64_t>(lo), static_cast<std::int64_t>(hi)));
}

Vec values(std::size_t n, Rng& rng, double lo = -1, double hi = 1) {
  Vec v(n);
  for (auto& x : v) x = rng.uniform(lo, hi);
  return v;
}

/// Fixed random weighting that turns any tensor into a scalar.
TD project(const TD& x, std::uint64_t seed = 7) {
  Rng rng(seed);
  return sum(mul(x, TD::constant(x.shape(), values(x.numel(), rng))));
}

/// Worst relative error of backprop against central differences, with a 1e-4
/// floor so exact zeros compare sanely.
double grad_error(ParamSet<double>& ps, const std::function<TD()>& build, std::size_t coords = 0) {
  ps.zero_grad();
  backward(build());
  const auto fd = oracle::finite_diff<double>([&] { return build().item(); }, ps, 1e-5, coords);
  double worst = 0;
  for (const auto& [name, g] : fd) {
    const auto bp = ps.grad(name);
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (std::isnan(g[i])) continue;
      worst = std::max(worst, std::abs(bp[i] - g[i]) / std::max({std::abs(bp[i]), std::abs(g[i]), 1e-4}));
    }
  }
  return worst;
}

/// Central differences with branch tracing: coordinates whose +-h
/// evaluations take a different relu/max-pool branch than the base point are
/// counted separately.
void traced_grad_error(ParamSet<double>& ps, const std::function<TD()>& build, std::size_t coords,
                       checks::NetworkGradReport& rep) {
  ps.zero_grad();
  std::uint64_t base = 0xcbf29ce484222325ull;
  branch_trace = &base;
  const auto loss = build();
  branch_trace = nullptr;
  backward(loss);
  const double h = 1e-5;
  for (auto& [name, e] : ps) {
    auto vals = e.tensor.mutable_values();
    const auto bp = ps.grad(name);
    std::size_t step = 1;
    if (coords && vals.size() > coords) step = vals.size() / coords;
    for (std::size_t i = 0; i < vals.size(); i += step) {
      const double orig = vals[i];
      std::uint64_t hp = 0xcbf29ce484222325ull, hm = hp;
      vals[i] = orig + h;
      branch_trace = &hp;
      const double fp = build().item();
      vals[i] = orig - h;
      branch_trace = &hm;
      const double fm = build().item();
      branch_trace = nullptr;
      vals[i] = orig;
      const double fd = (fp - fm) / (2 * h);
      const double err = std::abs(bp[i] - fd) / std::max({std::abs(bp[i]), std::abs(fd), 1e-4});
      rep.raw.record_abs(err);
      ++rep.coords;
      if (hp != base || hm != base) ++rep.kink_crossings;
      else rep.smooth_max_rel = std::max(rep.smooth_max_rel, err);
    }
  }
}

}  // namespace

OracleReport infonce_vs_oracle(std::size_t instances, std::uint64_t seed) {
  OracleReport r{"infonce vs brute force", 0, 0, instances, 1e-6};
  Rng rng(derive_seed(seed, "check.infonce"));
  for (std::size_t inst = 0; inst < instances; ++inst) {
    const auto B = pick(rng, 1, 8), rho = pick(rng, 2, 4), d = pick(rng, 2, 16);
    const auto Q = inst % 2 ? pick(rng, 1, 16) : 0;  // queue negatives
    const std::size_t N = B * rho, M = N + Q;
    const double alpha = inst % 3 ? 0.1 : 0.5;
    Mat e(N), queue(Q);
    for (auto& x : e) x = unit_vec(d, rng);
    for (auto& x : queue) x = unit_vec(d, rng);
    Mat keys = e;
    keys.insert(keys.end(), queue.begin(), queue.end());
    std::vector<std::uint8_t> pos(N * M, 0), valid(N * M, 0);
    double expect = 0;
    for (std::size_t i = 0; i < N; ++i) {
      Mat p, n;
      for (std::size_t j = 0; j < M; ++j) {
        if (j == i) continue;
        valid[i * M + j] = 1;
        const bool same = j < N && i % B == j % B;
        pos[i * M + j] = same;
        (same ? p : n).push_back(keys[j]);
      }
      const double o = oracle::infonce_bruteforce(e[i], p, n, alpha);
      expect += o;
      const auto single = infonce_loss(TD::constant({d}, e[i]), rows(p, d), n.empty() ? TD{} : rows(n, d), alpha);
      r.record(o, single.item());
    }
    r.record(expect, infonce_sum(rows(e, d), rows(keys, d), pos, valid, alpha).item());
  }
  return r;
}

OracleReport byol_vs_oracle(std::size_t instances, std::uint64_t seed) {
  OracleReport r{"byol vs brute force", 0, 0, instances, 1e-6};
  Rng rng(derive_seed(seed, "check.byol"));
  for (std::size_t inst = 0; inst < instances; ++inst) {
    const auto P = pick(rng, 1, 3), d = pick(rng, 2, 16);
    Vec q(d);
    for (auto& v : q) v = rng.normal();
    Mat pos(P, Vec(d));
    for (auto& row : pos)
      for (auto& v : row) v = rng.normal();
    r.record(oracle::byol_bruteforce(q, pos), byol_loss(TD::constant({d}, q), rows(pos, d)).item());
  }
  return r;
}

OracleReport swav_vs_oracle(std::size_t instances, std::uint64_t seed) {
  OracleReport r{"swav vs brute force", 0, 0, instances, 1e-6};
  Rng rng(derive_seed(seed, "check.swav"));
  for (std::size_t inst = 0; inst < instances; ++inst) {
    const auto N = pick(rng, 2, 8) * pick(rng, 2, 4), K = pick(rng, 2, 16);
    std::vector<double> s(N * K);
    for (auto& v : s) v = rng.uniform(-1, 1);
    const auto t = sinkhorn_knopp(s, N, K, SKConfig{});
    Mat sm(N, Vec(K)), tm(N, Vec(K));
    for (std::size_t i = 0; i < N; ++i)
      for (std::size_t k = 0; k < K; ++k) sm[i][k] = s[i * K + k], tm[i][k] = t[i * K + k];
    r.record(oracle::swav_bruteforce(sm, tm, 0.1), swav_loss(TD::constant({N, K}, s), t, 0.1).item());
  }
  return r;
}

OracleReport byol_mse_identity(std::size_t instances, std::uint64_t seed) {
  OracleReport r{"byol normalized-mse identity", 0, 0, instances, 1e-6};
  Rng rng(derive_seed(seed, "check.byol_mse"));
  for (std::size_t inst = 0; inst < instances; ++inst) {
    const auto P = pick(rng, 1, 4), d = pick(rng, 2, 16);
    const auto q = unit_vec(d, rng);
    Mat pos(P);
    for (auto& row : pos) row = unit_vec(d, rng);
    const double L = byol_loss(TD::constant({d}, q), rows(pos, d)).item();
    double mse = 0;
    for (const auto& k : pos)
      for (std::size_t j = 0; j < d; ++j) mse += (q[j] - k[j]) * (q[j] - k[j]);
    r.record_abs(std::abs(2 * L + 2.0 * static_cast<double>(P) - mse));
  }
  return r;
}

SinkhornReports sinkhorn_vs_oracle(std::size_t instances, std::size_t N, std::size_t K, std::size_t d,
                                   std::size_t iterations, double epsilon, std::uint64_t seed) {
  SinkhornReports out{{"sinkhorn oracle residual", 0, 0, instances, 1e-10},
                      {"sinkhorn row sums", 0, 0, instances, 1e-6},
                      {"sinkhorn columns vs converged", 0, 0, instances, 0.05}};
  Rng rng(derive_seed(seed, "check.sinkhorn"));
  for (std::size_t inst = 0; inst < instances; ++inst) {
    Mat emb(N), proto(K), scores(N, Vec(K));
    for (auto& row : emb) row = unit_vec(d, rng);
    for (auto& row : proto) row = unit_vec(d, rng);
    std::vector<double> flat;
    for (std::size_t i = 0; i < N; ++i)
      for (std::size_t k = 0; k < K; ++k) flat.push_back(scores[i][k] = oracle::dot(emb[i], proto[k]));
    const auto ref = oracle::sinkhorn_converged(scores, epsilon, 1e-13, 100000);
    out.converged_residual.record_abs(std::max(ref.row_residual, ref.col_residual));
    const auto q = sinkhorn_knopp(flat, N, K, SKConfig{iterations, epsilon, 0});
    for (std::size_t i = 0; i < N; ++i) {
      double s = 0;
      for (std::size_t k = 0; k < K; ++k) s += q[i * K + k];
      out.row_sums.record_abs(std::abs(s - 1.0));
    }
    for (std::size_t k = 0; k < K; ++k) {
      double got = 0, want = 0;
      for (std::size_t i = 0; i < N; ++i) got += q[i * K + k], want += ref.assignment[i][k];
      out.column_sums.record(want, got);
    }
  }
  return out;
}

OracleReport ema_vs_replay(std::size_t steps, std::uint64_t seed) {
  OracleReport r{"momentum encoder vs ema replay", 0, 0, steps, 1e-7};
  DatasetSpec ds;
  ds.num_videos = 32;
  ds.num_classes = 4;
  ds.length = 24;
  ds.seed = seed;
  const auto data = gen_dataset(ds);
  const auto cfg = FrameworkConfig::defaults(Method::kMoCo);
  FrameworkState<double> st(cfg, steps, seed);
  OptimConfig opt;
  opt.total_iters = steps;
  AugmentConfig aug;
  const ClipSampleSpec spec{2, cfg.encoder.frames, cfg.encoder.stride, kUnbounded};
  std::vector<std::string> names;
  Vec init;
  for (const auto& [n, e] : st.momentum) {
    names.push_back(n);
    init.insert(init.end(), e.tensor.values().begin(), e.tensor.values().end());
  }
  Mat history;
  Vec ms;
  for (std::size_t k = 0; k < steps; ++k) {
    const auto res = train_step(st, make_batch(data, 4, spec, aug, derive_seed(seed, "check.ema", k)), opt);
    Vec snap;
    for (const auto& n : names) snap.insert(snap.end(), st.online[n].values().begin(), st.online[n].values().end());
    history.push_back(std::move(snap));
    ms.push_back(res.m);
  }
  const auto ref = oracle::ema_replay(init, history, ms);
  std::size_t i = 0;
  for (const auto& n : names)
    for (double v : st.momentum[n].values()) r.record_abs(std::abs(v - ref[i++]));
  return r;
}

std::vector<OracleReport> op_gradients(std::size_t trials, std::uint64_t seed) {
  Rng rng(derive_seed(seed, "check.op_grad"));
  std::vector<OracleReport> out;
  const auto run = [&](const std::string& name, const std::function<double(std::size_t)>& trial) {
    OracleReport r{"grad " + name, 0, 0, trials, 1e-4};
    for (std::size_t t = 0; t < trials; ++t) r.record_abs(trial(t));
    out.push_back(r);
  };

  run("elementwise", [&](std::size_t) {
    ParamSet<double> ps;
    ps.add("a", {3, 4}, values(12, rng, 0.2, 2.0));
    ps.add("b", {1, 4}, values(4, rng, 0.2, 2.0));
    return grad_error(ps, [&] {
      auto x = mul(add(ps["a"], ps["b"]), sub(ps["a"], ps["b"]));
      x = add(relu(x), exp(scale(ps["a"], 0.3)));
      x = sub(log(add(ps["a"], ps["a"])), neg(x));
      return add(project(x), scale(mean(x), 2.0));
    });
  });
  run("matmul transpose", [&](std::size_t) {
    ParamSet<double> ps;
    ps.add("a", {3, 4}, values(12, rng));
    ps.add("b", {2, 4}, values(8, rng));
    return grad_error(ps, [&] { return project(matmul(ps["a"], transpose(ps["b"]))); });
  });
  run("rows reshape", [&](std::size_t) {
    ParamSet<double> ps;
    ps.add("a", {4, 3}, values(12, rng));
    ps.add("b", {2, 3}, values(6, rng));
    return grad_error(ps, [&] {
      const auto c = concat_rows<double>({ps["a"], ps["b"]});
      const auto g = gather_rows(c, {5, 0, 0, 3});
      return add(project(reshape(slice_rows(c, 1, 5), {2, 6})), project(g, 9));
    });
  });
  run("conv3d", [&](std::size_t t) {
    ParamSet<double> ps;
    ps.add("x", {2, 2, 4, 5, 5}, values(400, rng));
    ps.add("w", {3, 2, 3, 3, 3}, values(162, rng));
    const std::size_t s = t % 2 ? 2 : 1;
    return grad_error(ps, [&] { return project(conv3d(ps["x"], ps["w"], {1, s, s}, {1, 1, 1})); });
  });
  run("max_pool3d", [&](std::size_t) {
    ParamSet<double> ps;
    ps.add("x", {2, 2, 2, 6, 6}, values(288, rng));
    return grad_error(ps, [&] { return project(max_pool3d(ps["x"], {1, 3, 3}, {1, 2, 2}, {0, 1, 1})); });
  });
  run("batchnorm", [&](std::size_t t) {
    ParamSet<double> ps;
    ps.add("x", {8, 4}, values(32, rng, -2, 2));
    ps.add("g", {4}, values(4, rng, 0.5, 1.5));
    ps.add("b", {4}, values(4, rng));
    auto stats = RunningStats<double>::identity(4);
    const Mode mode = t % 3 == 2 ? Mode::kEval : Mode::kTrain;
    const std::size_t groups = t % 3 == 1 ? 2 : 1;
    return grad_error(ps, [&] { return project(batchnorm(ps["x"], ps["g"], ps["b"], stats, mode, {0.1, 1e-5, groups})); });
  });
  run("l2_normalize", [&](std::size_t t) {
    ParamSet<double> ps;
    ps.add("x", {4, 8}, values(32, rng));
    return grad_error(ps, [&] { return project(l2_normalize(ps["x"], t % 2)); });
  });
  run("global_avg_pool", [&](std::size_t) {
    ParamSet<double> ps;
    ps.add("x", {2, 3, 2, 3, 4}, values(144, rng));
    return grad_error(ps, [&] { return project(global_avg_pool(ps["x"])); });
  });
  run("softmax primitives", [&](std::size_t) {
    ParamSet<double> ps;
    ps.add("x", {3, 5}, values(15, rng, -3, 3));
    std::vector<std::uint8_t> mask(15);
    for (std::size_t i = 0; i < 15; ++i) mask[i] = (i % 5 == 0) || rng.bernoulli(0.5);
    return grad_error(ps, [&] {
      return add(project(log_softmax_rows(ps["x"])), project(masked_row_logsumexp(ps["x"], mask), 3));
    });
  });
  run("losses", [&](std::size_t t) {
    const std::size_t B = 3, rho = 2, N = B * rho, d = 5, K = 4;
    ParamSet<double> ps;
    ps.add("z", {N, d}, values(N * d, rng));
    ps.add("c", {K, d}, values(K * d, rng));
    std::vector<std::uint8_t> pos(N * N, 0), valid(N * N, 0);
    for (std::size_t i = 0; i < N; ++i)
      for (std::size_t j = 0; j < N; ++j)
        if (i != j) pos[i * N + j] = i % B == j % B, valid[i * N + j] = 1;
    Vec targets(N * K);
    for (std::size_t i = 0; i < N; ++i) {
      double s = 0;
      for (std::size_t k = 0; k < K; ++k) s += (targets[i * K + k] = rng.uniform(0.1, 1));
      for (std::size_t k = 0; k < K; ++k) targets[i * K + k] /= s;
    }
    const auto variant = t % 2 ? InfoNceVariant::kMeanOfPositives : InfoNceVariant::kSumInside;
    return grad_error(ps, [&] {
      const auto z = l2_normalize(ps["z"], 1);
      const auto c = l2_normalize(ps["c"], 1);
      auto l = infonce_sum(z, z, pos, valid, 0.2, variant);
      l = add(l, neg_cosine_sum(z, z, pos));
      return add(l, swav_loss(matmul(z, transpose(c)), targets, 0.2));
    });
  });
  return out;
}

std::vector<NetworkGradReport> network_gradients(std::size_t coords, std::uint64_t seed) {
  DatasetSpec ds;
  ds.num_videos = 12;
  ds.num_classes = 3;
  ds.length = 16;
  ds.seed = seed;
  const auto data = gen_dataset(ds);
  std::vector<NetworkGradReport> out;
  for (auto m : {Method::kSimCLR, Method::kMoCo, Method::kBYOL, Method::kSwAV}) {
    const auto cfg = FrameworkConfig::defaults(m);
    FrameworkState<double> st(cfg, 10, seed);
    // Zero-initialised residual scales put ReLU inputs exactly on the kink,
    // where central differences average two one-sided slopes.
    Rng rng(derive_seed(seed, "check.net_grad", static_cast<std::uint64_t>(m)));
    for (auto* ps : {&st.online, &st.pred})
      for (auto& [n, e] : *ps)
        for (auto& v : e.tensor.mutable_values()) v += rng.uniform(-0.05, 0.05);
    if (st.queue) {
      Vec k;
      for (int r = 0; r < 8; ++r) {
        const auto u = unit_vec(cfg.embed_dim(), rng);
        k.insert(k.end(), u.begin(), u.end());
      }
      st.queue->push(k);
    }
    AugmentConfig aug;
    const auto batch = make_batch(data, 3, ClipSampleSpec{2, cfg.encoder.frames, cfg.encoder.stride, kUnbounded},
                                  aug, derive_seed(seed, "check.net_grad.batch"));
    std::function<TD()> loss = [&] { return batch_loss(st, batch); };
    Vec targets;
    const auto B = batch.videos_per_batch;
    const auto queries = [&] {
      std::vector<TD> p;
      for (std::size_t v = 0; v < batch.views; ++v) p.push_back(detail::online_query(st, batch.clips<double>(v * B, B)));
      return concat_rows(p);
    };
    if (m == Method::kSwAV) {
      // SK targets are constants of the loss; hold them fixed.
      const auto scores = matmul(queries(), transpose(st.prototypes["prototypes"]));
      const auto assign = sinkhorn_knopp(Vec(scores.values().begin(), scores.values().end()), scores.dim(0),
                                         scores.dim(1), cfg.sk);
      targets = detail::swav_targets(assign, batch, scores.dim(1));
      loss = [&] { return swav_loss(matmul(queries(), transpose(st.prototypes["prototypes"])), targets, cfg.alpha); };
    }
    NetworkGradReport r{{"grad network " + to_string(m), 0, 0, 1, 1e-3}};
    for (auto* ps : {&st.online, &st.pred, &st.prototypes})
      if (ps->size()) traced_grad_error(*ps, loss, coords, r);
    r.raw.instances = r.coords;
    out.push_back(r);
  }
  return out;
}

std::vector<OracleReport> oracle_suite(std::uint64_t seed) {
  std::vector<OracleReport> out{infonce_vs_oracle(100, seed), byol_vs_oracle(100, seed),
                                swav_vs_oracle(100, seed), byol_mse_identity(100, seed)};
  const auto sk = sinkhorn_vs_oracle(20, 16, 8, 128, 3, 0.05, seed);
  out.push_back(sk.converged_residual);
  out.push_back(sk.row_sums);
  out.push_back(sk.column_sums);
  out.push_back(ema_vs_replay(50, seed));
  return out;
}

}  // namespace vidssl::checks
