// SPDX-License-Identifier: Apache-2.0
#pragma once

// Checkpoint file, little-endian:
//   char[8]  magic "VSSLCKPT"
//   u32      version (1)
//   u32      bytes per value (4 = f32, 8 = f64)
//   u64      config length, then the canonical config text
//   u64      iteration k
//   u64      root seed (with k, the full generator state: every draw is
//            derived from (seed, purpose, k, ...))
//   u32      array count, then per array:
//              u32 name length, name, u32 ndim, u64 dims[ndim], values
// Array names: theta/, theta.velocity/, theta_m/, theta_p/,
// theta_p.velocity/, prototypes/, prototypes.velocity/, bn/, bn_m/, bn_p/
// and "queue".

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "vidssl/data/dataset_io.hpp"
#include "vidssl/harness/config.hpp"

namespace vidssl {

inline constexpr char kCheckpointMagic[8] = {'V', 'S', 'S', 'L', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Wrong magic or unsupported version.
class CheckpointVersionError : public DataError {
 public:
  using DataError::DataError;
};

/// File ends early or has trailing bytes.
class CheckpointTruncatedError : public DataError {
 public:
  using DataError::DataError;
};

/// Stored array missing, unexpected or shaped differently from the config.
class CheckpointShapeError : public DataError {
 public:
  using DataError::DataError;
};

template <class T>
struct Checkpoint {
  RunConfig config;
  FrameworkState<T> state;
};

namespace detail {

struct RawArray {
  Shape shape;
  std::vector<char> bytes;
};

template <class T>
std::map<std::string, std::pair<Shape, std::vector<T>>> collect_arrays(const FrameworkState<T>& st) {
  std::map<std::string, std::pair<Shape, std::vector<T>>> out;
  const auto params = [&](const ParamSet<T>& ps, const std::string& tag, bool velocity) {
    for (const auto& [n, e] : ps) {
      const auto v = e.tensor.values();
      out[tag + "/" + n] = {e.tensor.shape(), std::vector<T>(v.begin(), v.end())};
      if (velocity) out[tag + ".velocity/" + n] = {e.tensor.shape(), e.velocity};
    }
  };
  const auto buffers = [&](const BufferSet<T>& bs, const std::string& tag) {
    for (const auto& [n, s] : bs) {
      out[tag + "/" + n + ".mean"] = {{s.mean.size()}, s.mean};
      out[tag + "/" + n + ".var"] = {{s.var.size()}, s.var};
    }
  };
  params(st.online, "theta", true);
  params(st.momentum, "theta_m", false);
  params(st.pred, "theta_p", true);
  params(st.prototypes, "prototypes", true);
  buffers(st.online_buffers, "bn");
  buffers(st.momentum_buffers, "bn_m");
  buffers(st.pred_buffers, "bn_p");
  if (st.queue) out["queue"] = {{st.queue->size(), st.queue->dim()}, st.queue->contents()};
  return out;
}

inline std::string shape_str(const Shape& s) {
  std::string r = "[";
  for (std::size_t i = 0; i < s.size(); ++i) r += (i ? "," : "") + std::to_string(s[i]);
  return r + "]";
}

template <class V>
V read_or_truncated(std::istream& is, const char* what) {
  V v{};
  if (!is.read(reinterpret_cast<char*>(&v), sizeof(V)))
    throw CheckpointTruncatedError(std::string("checkpoint truncated while reading ") + what);
  return v;
}

}  // namespace detail

template <class T>
void write_checkpoint(std::ostream& os, const RunConfig& cfg, const FrameworkState<T>& st) {
  if (!st.pending_keys.empty()) throw ConfigError("checkpoint: state has un-queued keys (mid-step)");
  os.write(kCheckpointMagic, 8);
  io::put<std::uint32_t>(os, kCheckpointVersion);
  io::put<std::uint32_t>(os, sizeof(T));
  const auto text = to_yaml(cfg);
  io::put<std::uint64_t>(os, text.size());
  os.write(text.data(), static_cast<std::streamsize>(text.size()));
  io::put<std::uint64_t>(os, st.iteration);
  io::put<std::uint64_t>(os, cfg.seed);
  const auto arrays = detail::collect_arrays(st);
  io::put<std::uint32_t>(os, static_cast<std::uint32_t>(arrays.size()));
  for (const auto& [name, a] : arrays) {
    io::put<std::uint32_t>(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    io::put<std::uint32_t>(os, static_cast<std::uint32_t>(a.first.size()));
    for (auto d : a.first) io::put<std::uint64_t>(os, d);
    os.write(reinterpret_cast<const char*>(a.second.data()),
             static_cast<std::streamsize>(a.second.size() * sizeof(T)));
  }
}

/// Writes to a temporary file, then renames over `path`, so an interrupted
/// save never clobbers the previous checkpoint.
template <class T>
void save_checkpoint(const std::string& path, const RunConfig& cfg, const FrameworkState<T>& st) {
  const auto parent = std::filesystem::path(path).parent_path();
  if (!parent.empty()) std::filesystem::create_directories(parent);
  const auto tmp = path + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary);
    if (!os) throw DataError("cannot open " + tmp + " for writing");
    write_checkpoint(os, cfg, st);
    if (!os) throw DataError("write failed: " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

/// Reads just the header: config and value width.
inline std::pair<RunConfig, std::uint32_t> read_checkpoint_header(std::istream& is) {
  char magic[8];
  if (!is.read(magic, 8)) throw CheckpointTruncatedError("checkpoint truncated in header");
  if (std::memcmp(magic, kCheckpointMagic, 8) != 0)
    throw CheckpointVersionError("not a vidssl checkpoint (bad magic)");
  const auto version = detail::read_or_truncated<std::uint32_t>(is, "version");
  if (version != kCheckpointVersion)
    throw CheckpointVersionError("checkpoint version " + std::to_string(version) + ", expected " +
                                 std::to_string(kCheckpointVersion));
  const auto width = detail::read_or_truncated<std::uint32_t>(is, "value width");
  if (width != 4 && width != 8) throw CheckpointVersionError("unsupported value width " + std::to_string(width));
  const auto len = detail::read_or_truncated<std::uint64_t>(is, "config length");
  if (len > (1u << 24)) throw CheckpointTruncatedError("implausible config length");
  std::string text(len, '\0');
  if (!is.read(text.data(), static_cast<std::streamsize>(len)))
    throw CheckpointTruncatedError("checkpoint truncated in config");
  return {parse_config(text), width};
}

template <class T>
Checkpoint<T> read_checkpoint(std::istream& is) {
  auto [cfg, width] = read_checkpoint_header(is);
  if (width != sizeof(T))
    throw CheckpointVersionError("checkpoint stores " + std::to_string(width * 8) + "-bit values, reader expects " +
                                 std::to_string(sizeof(T) * 8));
  const auto k = detail::read_or_truncated<std::uint64_t>(is, "iteration");
  const auto seed = detail::read_or_truncated<std::uint64_t>(is, "seed");
  if (seed != cfg.seed) throw CheckpointShapeError("checkpoint seed disagrees with its config");
  if (k > cfg.iterations) throw CheckpointShapeError("checkpoint iteration beyond the configured total");
  Checkpoint<T> ck{cfg, FrameworkState<T>(cfg.framework, cfg.iterations, cfg.seed)};
  auto& st = ck.state;
  st.iteration = k;

  auto expected = detail::collect_arrays(st);
  const auto n = detail::read_or_truncated<std::uint32_t>(is, "array count");
  std::map<std::string, std::vector<T>> loaded;
  for (std::uint32_t a = 0; a < n; ++a) {
    const auto name_len = detail::read_or_truncated<std::uint32_t>(is, "array name length");
    if (name_len > 4096) throw CheckpointTruncatedError("implausible array name length");
    std::string name(name_len, '\0');
    if (!is.read(name.data(), name_len)) throw CheckpointTruncatedError("checkpoint truncated in array name");
    const auto ndim = detail::read_or_truncated<std::uint32_t>(is, "ndim");
    if (ndim > 8) throw CheckpointShapeError("array " + name + " has " + std::to_string(ndim) + " dimensions");
    Shape shape(ndim);
    std::size_t count = 1;
    for (auto& d : shape) count *= (d = detail::read_or_truncated<std::uint64_t>(is, "dims"));
    auto it = expected.find(name);
    const bool queue = name == "queue";
    if (it == expected.end() && !queue)
      throw CheckpointShapeError("checkpoint array " + name + " does not exist in the configured model");
    if (queue) {
      if (!st.queue || ndim != 2 || shape[1] != st.queue->dim() || shape[0] > st.queue->capacity())
        throw CheckpointShapeError("checkpoint array queue has shape " + detail::shape_str(shape) +
                                   ", config allows at most [" + std::to_string(st.queue ? st.queue->capacity() : 0) +
                                   "," + std::to_string(st.queue ? st.queue->dim() : 0) + "]");
    } else if (shape != it->second.first) {
      throw CheckpointShapeError("shape mismatch for parameter " + name + ": checkpoint " + detail::shape_str(shape) +
                                 ", config " + detail::shape_str(it->second.first));
    }
    std::vector<T> values(count);
    if (!is.read(reinterpret_cast<char*>(values.data()), static_cast<std::streamsize>(count * sizeof(T))))
      throw CheckpointTruncatedError("checkpoint truncated in array " + name);
    loaded[name] = std::move(values);
  }
  if (is.peek() != std::char_traits<char>::eof()) throw CheckpointTruncatedError("trailing bytes after checkpoint");
  for (const auto& [name, _] : expected)
    if (!loaded.count(name) && name != "queue")
      throw CheckpointShapeError("checkpoint lacks parameter " + name);

  const auto restore = [&](ParamSet<T>& ps, const std::string& tag, bool velocity) {
    for (auto& [n, e] : ps) {
      const auto& v = loaded.at(tag + "/" + n);
      std::copy(v.begin(), v.end(), e.tensor.mutable_values().begin());
      if (velocity) e.velocity = loaded.at(tag + ".velocity/" + n);
    }
  };
  const auto restore_bn = [&](BufferSet<T>& bs, const std::string& tag) {
    for (auto& [n, s] : bs) {
      s.mean = loaded.at(tag + "/" + n + ".mean");
      s.var = loaded.at(tag + "/" + n + ".var");
    }
  };
  restore(st.online, "theta", true);
  restore(st.momentum, "theta_m", false);
  restore(st.pred, "theta_p", true);
  restore(st.prototypes, "prototypes", true);
  restore_bn(st.online_buffers, "bn");
  restore_bn(st.momentum_buffers, "bn_m");
  restore_bn(st.pred_buffers, "bn_p");
  if (st.queue) {
    st.queue->clear();
    if (loaded.count("queue")) st.queue->push(loaded.at("queue"));
  }
  return ck;
}

template <class T>
Checkpoint<T> load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open checkpoint " + path);
  return read_checkpoint<T>(is);
}

}  // namespace vidssl
