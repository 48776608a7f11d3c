// SPDX-License-Identifier: Apache-2.0
#include "vidssl/harness/commands.hpp"

#include <algorithm>
#include <charconv>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "vidssl/harness/checks.hpp"
#include "vidssl/harness/trainer.hpp"

namespace vidssl::cli {

namespace fs = std::filesystem;

int guarded(const std::function<int()>& body, std::ostream& err) {
  try {
    return body();
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kConfigError;
  } catch (const ShapeError& e) {
    err << "config error: " << e.what() << "\n";
    return kConfigError;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << "\n";
    return kDataError;
  } catch (const NumericError& e) {
    err << "numeric error: " << e.what() << "\n";
    return kNumericError;
  } catch (const fs::filesystem_error& e) {
    err << "data error: " << e.what() << "\n";
    return kDataError;
  }
}

void gen_data(const RunConfig& cfg, const std::string& out_path) {
  const auto path = out_path.empty() ? cfg.dataset_path : out_path;
  const auto parent = fs::path(path).parent_path();
  std::error_code ec;
  if (!parent.empty()) fs::create_directories(parent, ec);
  if (ec) throw DataError("cannot create " + parent.string() + ": " + ec.message());
  write_dataset(gen_dataset(cfg.data, cfg.clips.span()), path);
}

Dataset load_dataset_for(const RunConfig& cfg) {
  if (!fs::exists(cfg.dataset_path))
    throw DataError("dataset " + cfg.dataset_path + " not found (run gen-data first)");
  auto d = read_dataset(cfg.dataset_path);
  if (d.length < cfg.clips.span())
    throw DataError("dataset videos have " + std::to_string(d.length) + " frames, clips need " +
                    std::to_string(cfg.clips.span()));
  if (d.size() < cfg.batch_size)
    throw DataError("dataset has " + std::to_string(d.size()) + " videos, fewer than batch_size");
  std::vector<bool> seen(d.num_classes, false);
  for (const auto& v : d.videos) seen[v.label] = true;
  if (std::count(seen.begin(), seen.end(), true) < 2) throw DataError("dataset needs at least two classes");
  return d;
}

namespace {

std::string dir_of(const RunConfig& cfg) {
  const auto dir = resolved_output_dir(cfg);
  fs::create_directories(dir);
  return dir;
}

/// Keeps header and rows with iter < k; appends nothing.
void truncate_metrics(const std::string& path, std::size_t k) {
  std::vector<std::string> keep;
  if (std::ifstream is(path); is) {
    std::string line;
    while (std::getline(is, line)) {
      if (keep.empty()) {
        keep.push_back(line);
        continue;
      }
      if (std::stoull(line.substr(0, line.find(','))) < k) keep.push_back(line);
    }
  }
  std::ofstream os(path, std::ios::trunc);
  if (keep.empty() || keep.front() != kMetricsHeader) keep.insert(keep.begin(), kMetricsHeader);
  for (const auto& l : keep) os << l << "\n";
}

template <class T>
std::string pretrain_impl(const RunConfig& cfg_in, const PretrainOptions& opts, std::ostream& log) {
  std::optional<Trainer<T>> tr;
  if (opts.resume.empty()) {
    tr.emplace(cfg_in);
  } else {
    tr.emplace(load_checkpoint<T>(opts.resume));
    if (config_hash(tr->config()) != config_hash(cfg_in))
      log << "note: resuming with the checkpoint's own config\n";
  }
  const auto& cfg = tr->config();
  const auto data = load_dataset_for(cfg);
  const auto dir = dir_of(cfg);
  const auto ckpt = (fs::path(dir) / "checkpoint.bin").string();
  const auto metrics = (fs::path(dir) / "metrics.csv").string();
  {
    std::ofstream os(fs::path(dir) / "config.yaml");
    os << to_yaml(cfg, true);
  }
  truncate_metrics(metrics, tr->iteration());
  std::ofstream mcsv(metrics, std::ios::app);
  const std::size_t stop = opts.stop_after ? std::min(opts.stop_after, cfg.iterations) : cfg.iterations;
  std::size_t last_good = tr->iteration();
  if (opts.resume.empty()) tr->save(ckpt);
  while (tr->iteration() < stop) {
    MetricsRow row;
    try {
      row = tr->step(data);
    } catch (const NumericError& e) {
      throw NumericError(std::string(e.what()) + " at iteration " + std::to_string(tr->iteration()) +
                         "; last good checkpoint " + ckpt + " (iteration " + std::to_string(last_good) + ")");
    }
    mcsv << row.csv() << "\n";
    if (!opts.quiet && (row.iter % 50 == 0 || row.iter + 1 == stop))
      log << "iter " << row.iter << " loss " << row.loss << " lr " << row.lr << "\n";
    if (tr->iteration() % cfg.checkpoint_every == 0 || tr->iteration() == stop) {
      mcsv.flush();
      tr->save(ckpt);
      last_good = tr->iteration();
    }
  }
  return ckpt;
}

std::pair<RunConfig, std::uint32_t> peek(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open checkpoint " + path);
  return read_checkpoint_header(is);
}

void append_row(const std::string& path, const std::string& header, const std::string& row) {
  const bool fresh = !fs::exists(path);
  std::ofstream os(path, std::ios::app);
  if (fresh) os << header << "\n";
  os << row << "\n";
}

template <class T>
EvalResult eval_impl(const std::string& path, bool fine, std::ostream& log) {
  Trainer<T> tr(load_checkpoint<T>(path));
  const auto data = load_dataset_for(tr.config());
  const auto res = fine ? tr.finetune(data) : tr.probe(data);
  const auto dir = dir_of(tr.config());
  std::ostringstream row;
  row.precision(17);
  row << path << ',' << tr.iteration() << ',' << res.accuracy << ',' << res.train_videos << ','
      << res.test_videos << ',' << config_hash(tr.config());
  append_row((fs::path(dir) / (fine ? "finetune.csv" : "probe.csv")).string(),
             "checkpoint,iteration,accuracy,train_videos,test_videos,config_hash", row.str());
  log << (fine ? "finetune" : "probe") << " accuracy " << res.accuracy << " (" << res.test_videos
      << " test videos)\n";
  return res;
}

std::string group_label(const std::set<AugGroup>& g) {
  std::string s;
  for (auto [grp, c] : {std::pair{AugGroup::kTemporal, "T"}, {AugGroup::kSpatial, "S"}, {AugGroup::kColor, "C"}})
    if (g.count(grp)) s += std::string(s.empty() ? "" : "+") + c;
  return s.empty() ? "none" : s;
}

std::size_t parse_count(const std::string& v, const std::string& axis) {
  std::size_t n = 0;
  auto r = std::from_chars(v.data(), v.data() + v.size(), n);
  if (v.empty() || r.ec != std::errc() || r.ptr != v.data() + v.size())
    throw ConfigError("ablate " + axis + ": '" + v + "' is not a non-negative integer");
  return n;
}

template <class T>
std::pair<double, double> pretrain_and_probe(const RunConfig& cfg, const Dataset& data) {
  Trainer<T> tr(cfg);
  double last = 0;
  while (!tr.done()) last = tr.step(data).loss;
  return {last, tr.probe(data).accuracy};
}

}  // namespace

std::string pretrain(const RunConfig& cfg, const PretrainOptions& opts, std::ostream& log) {
  const auto precision = opts.resume.empty() ? cfg.precision : peek(opts.resume).first.precision;
  return precision == Precision::kF32 ? pretrain_impl<float>(cfg, opts, log)
                                      : pretrain_impl<double>(cfg, opts, log);
}

EvalResult probe(const std::string& path, std::ostream& log) {
  return peek(path).second == 4 ? eval_impl<float>(path, false, log) : eval_impl<double>(path, false, log);
}

EvalResult finetune(const std::string& path, std::ostream& log) {
  return peek(path).second == 4 ? eval_impl<float>(path, true, log) : eval_impl<double>(path, true, log);
}

std::vector<std::string> default_axis_values(const RunConfig& base, const std::string& axis) {
  if (axis == "rho") return {"1", "2", "3"};
  if (axis == "tmax") return {"0", std::to_string(base.data.length / 4), "inf"};
  if (axis == "aug-groups") return {"none", "S", "S+C", "T+S", "T+S+C"};
  if (axis == "mlp-depth") return {"2", "3", "4"};
  if (axis == "toggles") return {"full", "no-lars", "no-mlp-bn", "no-shuffle-bn"};
  throw ConfigError("unknown ablation axis '" + axis + "' (rho, tmax, aug-groups, mlp-depth, toggles)");
}

RunConfig ablation_config(const RunConfig& base, const std::string& axis, const std::string& value) {
  RunConfig c = base;
  if (axis == "rho") {
    c.clips.rho = parse_count(value, axis);
  } else if (axis == "tmax") {
    c.clips.t_max = value == "inf" ? kUnbounded : parse_count(value, axis);
  } else if (axis == "aug-groups") {
    c.augment.groups.clear();
    if (value != "none") {
      std::string tok;
      for (std::size_t i = 0; i <= value.size(); ++i) {
        if (i == value.size() || value[i] == '+') {
          if (tok == "T") c.augment.groups.insert(AugGroup::kTemporal);
          else if (tok == "S") c.augment.groups.insert(AugGroup::kSpatial);
          else if (tok == "C") c.augment.groups.insert(AugGroup::kColor);
          else throw ConfigError("ablate aug-groups: unknown group '" + tok + "' (use T, S, C joined by +)");
          tok.clear();
        } else {
          tok += value[i];
        }
      }
    }
  } else if (axis == "mlp-depth") {
    c.framework.projection.num_layers = parse_count(value, axis);
  } else if (axis == "toggles") {
    if (value == "no-lars") c.optim.use_lars = false;
    else if (value == "no-mlp-bn") c.framework.projection.use_bn = c.framework.predictor.use_bn = false;
    else if (value == "no-shuffle-bn") c.framework.shuffle_bn = false;
    else if (value != "full") throw ConfigError("ablate toggles: unknown toggle '" + value + "'");
  } else {
    default_axis_values(base, axis);  // throws for unknown axes
  }
  c.sync();
  c.validate();
  return c;
}

std::vector<AblationRow> ablate(const RunConfig& base, const std::string& axis,
                                const std::vector<std::string>& values, std::ostream& log) {
  default_axis_values(base, axis);
  if (values.empty()) throw ConfigError("ablate: axis " + axis + " has no values");
  std::vector<RunConfig> cfgs;
  for (const auto& v : values) cfgs.push_back(ablation_config(base, axis, v));
  const auto data = load_dataset_for(base);
  std::vector<AblationRow> rows;
  for (std::size_t i = 0; i < values.size(); ++i) {
    const auto& c = cfgs[i];
    AblationRow row{axis, values[i], static_cast<double>(i), 0, 0, config_hash(c)};
    if (axis == "tmax") row.sort_key = c.clips.t_max == kUnbounded ? INFINITY : static_cast<double>(c.clips.t_max);
    if (axis == "aug-groups") row.value = group_label(c.augment.groups);
    const auto [loss, acc] = c.precision == Precision::kF32 ? pretrain_and_probe<float>(c, data)
                                                            : pretrain_and_probe<double>(c, data);
    row.final_loss = loss;
    row.accuracy = acc;
    log << axis << "=" << row.value << " loss " << loss << " probe " << acc << "\n";
    rows.push_back(row);
  }
  std::stable_sort(rows.begin(), rows.end(), [](const auto& a, const auto& b) { return a.sort_key < b.sort_key; });
  std::ofstream os(fs::path(dir_of(base)) / ("ablate_" + axis + ".csv"));
  os << "axis,value,method,seed,iterations,final_loss,probe_accuracy,config_hash\n";
  os.precision(17);
  for (const auto& r : rows)
    os << r.axis << ',' << r.value << ',' << to_string(base.method()) << ',' << base.seed << ','
       << base.iterations << ',' << r.final_loss << ',' << r.accuracy << ',' << r.config_hash << "\n";
  return rows;
}

bool oracle_check(std::uint64_t seed, std::ostream& out) {
  const auto reports = checks::oracle_suite(seed);
  oracle::print_reports(out, reports);
  return std::all_of(reports.begin(), reports.end(), [](const auto& r) { return r.pass; });
}

}  // namespace vidssl::cli
