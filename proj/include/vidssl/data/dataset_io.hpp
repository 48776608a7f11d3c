// SPDX-License-Identifier: Apache-2.0
#pragma once

// Dataset file, little-endian:
//   char[8]  magic "VSSLDATA"
//   u32      version (1)
//   u32      num_videos, num_classes, length, channels (3), height, width
//   u64      generator seed
//   u32[num_videos]  labels
//   f32[num_videos * length * channels * height * width]  frames, video-major

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>

#include "vidssl/data/synthetic.hpp"

namespace vidssl {

static_assert(std::endian::native == std::endian::little,
              "binary formats are written in host order and require a little-endian host");

inline constexpr char kDatasetMagic[8] = {'V', 'S', 'S', 'L', 'D', 'A', 'T', 'A'};
inline constexpr std::uint32_t kDatasetVersion = 1;

namespace io {

template <class V>
void put(std::ostream& os, V v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(V));
}

template <class V>
V get(std::istream& is, const char* what) {
  V v{};
  if (!is.read(reinterpret_cast<char*>(&v), sizeof(V)))
    throw DataError(std::string("truncated file while reading ") + what);
  return v;
}

}  // namespace io

inline void write_dataset(const Dataset& d, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot open " + path + " for writing");
  os.write(kDatasetMagic, 8);
  io::put<std::uint32_t>(os, kDatasetVersion);
  io::put<std::uint32_t>(os, static_cast<std::uint32_t>(d.videos.size()));
  io::put<std::uint32_t>(os, static_cast<std::uint32_t>(d.num_classes));
  io::put<std::uint32_t>(os, static_cast<std::uint32_t>(d.length));
  io::put<std::uint32_t>(os, 3);
  io::put<std::uint32_t>(os, static_cast<std::uint32_t>(d.height));
  io::put<std::uint32_t>(os, static_cast<std::uint32_t>(d.width));
  io::put<std::uint64_t>(os, d.seed);
  for (const auto& v : d.videos) io::put<std::uint32_t>(os, v.label);
  for (const auto& v : d.videos)
    os.write(reinterpret_cast<const char*>(v.frames.data()),
             static_cast<std::streamsize>(v.frames.size() * sizeof(float)));
  if (!os) throw DataError("write failed: " + path);
}

/// Latent generator parameters are not stored; only frames and labels.
inline Dataset read_dataset(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open dataset " + path);
  char magic[8];
  if (!is.read(magic, 8) || std::memcmp(magic, kDatasetMagic, 8) != 0)
    throw DataError("not a dataset file: " + path);
  if (io::get<std::uint32_t>(is, "version") != kDatasetVersion)
    throw DataError("unsupported dataset version in " + path);
  Dataset d;
  const auto n = io::get<std::uint32_t>(is, "num_videos");
  d.num_classes = io::get<std::uint32_t>(is, "num_classes");
  d.length = io::get<std::uint32_t>(is, "length");
  if (io::get<std::uint32_t>(is, "channels") != 3) throw DataError("dataset must have 3 channels");
  d.height = io::get<std::uint32_t>(is, "height");
  d.width = io::get<std::uint32_t>(is, "width");
  d.seed = io::get<std::uint64_t>(is, "seed");
  d.videos.resize(n);
  for (auto& v : d.videos) {
    v.label = io::get<std::uint32_t>(is, "labels");
    if (v.label >= d.num_classes) throw DataError("label out of range in " + path);
  }
  for (auto& v : d.videos) {
    v.frames.resize(d.length * d.frame_size());
    if (!is.read(reinterpret_cast<char*>(v.frames.data()),
                 static_cast<std::streamsize>(v.frames.size() * sizeof(float))))
      throw DataError("truncated frame data in " + path);
  }
  return d;
}

}  // namespace vidssl
