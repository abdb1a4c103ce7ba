// Copyright 2026 The geovit Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

// Binary tensor records and the checkpoint container.
//
// Tensor record (little-endian):
//   "GVT1" | u32 dtype tag (0 = float32, 1 = float64) | u32 rank |
//   rank x i64 extents | row-major element buffer
//
// Checkpoint file: a text manifest followed by a blob of tensor records.
//   GEOVIT-CHECKPOINT 1
//   <key> = <value>                          (config scalars, any number)
//   tensor <path> <offset> <dtype> <d0>x<d1>x...
//   end
//   <blob>                                   (offsets are relative to it)

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "geovit/tensor.hpp"

namespace geovit {

static_assert(std::endian::native == std::endian::little, "serialization assumes a little-endian host");

namespace detail {

template <typename V>
void put(std::string& out, V v) {
  char buf[sizeof(V)];
  std::memcpy(buf, &v, sizeof(V));
  out.append(buf, sizeof(V));
}

template <typename V>
V take(const std::string& in, std::size_t& pos) {
  if (pos + sizeof(V) > in.size()) throw FormatError("tensor record truncated");
  V v;
  std::memcpy(&v, in.data() + pos, sizeof(V));
  pos += sizeof(V);
  return v;
}

inline std::string shape_token(const Shape& s) {
  std::string t;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) t += 'x';
    t += std::to_string(s[i]);
  }
  return t;
}

inline Shape parse_shape_token(const std::string& t) {
  Shape s;
  std::stringstream ss(t);
  std::string part;
  while (std::getline(ss, part, 'x')) {
    try {
      s.push_back(std::stoll(part));
    } catch (const std::exception&) {
      throw FormatError("bad shape token '" + t + "'");
    }
  }
  if (s.empty()) throw FormatError("empty shape token");
  return s;
}

}  // namespace detail

template <typename T>
std::string serialize_tensor(const Tensor<T>& t) {
  std::string out("GVT1");
  detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(dtype_of<T>()));
  detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
  for (auto e : t.shape()) detail::put<std::int64_t>(out, e);
  out.append(reinterpret_cast<const char*>(t.data().data()), sizeof(T) * static_cast<std::size_t>(t.numel()));
  return out;
}

/// Decodes one record starting at `pos`, converting to T when the stored dtype differs.
template <typename T>
Tensor<T> deserialize_tensor(const std::string& in, std::size_t& pos) {
  if (pos + 4 > in.size() || in.compare(pos, 4, "GVT1") != 0) throw FormatError("tensor record: bad magic");
  pos += 4;
  const auto tag = detail::take<std::uint32_t>(in, pos);
  const auto rank = detail::take<std::uint32_t>(in, pos);
  if (tag > 1) throw FormatError("tensor record: unknown dtype tag " + std::to_string(tag));
  if (rank == 0 || rank > 16) throw FormatError("tensor record: bad rank " + std::to_string(rank));
  Shape shape(rank);
  for (auto& e : shape) {
    e = detail::take<std::int64_t>(in, pos);
    if (e <= 0) throw FormatError("tensor record: non-positive extent");
  }
  const auto n = static_cast<std::size_t>(numel_of(shape));
  std::vector<T> data(n);
  auto read_as = [&]<typename S>(S) {
    if (pos + n * sizeof(S) > in.size()) throw FormatError("tensor record: payload truncated");
    std::vector<S> raw(n);
    std::memcpy(raw.data(), in.data() + pos, n * sizeof(S));
    pos += n * sizeof(S);
    for (std::size_t i = 0; i < n; ++i) data[i] = static_cast<T>(raw[i]);
  };
  if (tag == 0)
    read_as(float{});
  else
    read_as(double{});
  return Tensor<T>(std::move(shape), std::move(data));
}

struct ManifestEntry {
  std::string path;
  std::uint64_t offset = 0;
  DType dtype = DType::Float32;
  Shape shape;
};

/// Named tensors plus free-form config scalars.
template <typename T>
struct Checkpoint {
  std::map<std::string, std::string> meta;
  std::map<std::string, Tensor<T>> tensors;

  const Tensor<T>& at(const std::string& path) const {
    auto it = tensors.find(path);
    if (it == tensors.end()) throw CheckpointError("checkpoint: missing parameter '" + path + "'");
    return it->second;
  }
  bool contains(const std::string& path) const { return tensors.count(path) != 0; }

  std::string meta_or(const std::string& key, const std::string& fallback) const {
    auto it = meta.find(key);
    return it == meta.end() ? fallback : it->second;
  }
  double meta_number(const std::string& key) const {
    auto it = meta.find(key);
    if (it == meta.end()) throw CheckpointError("checkpoint: missing config key '" + key + "'");
    try {
      return std::stod(it->second);
    } catch (const std::exception&) {
      throw CheckpointError("checkpoint: config key '" + key + "' is not numeric");
    }
  }
};

template <typename T>
void save_checkpoint(const std::string& path, const Checkpoint<T>& ckpt) {
  std::string blob;
  std::ostringstream head;
  head << "GEOVIT-CHECKPOINT 1\n";
  for (const auto& [k, v] : ckpt.meta) {
    if (k.find_first_of(" \n=") != std::string::npos || v.find('\n') != std::string::npos) {
      throw CheckpointError("checkpoint: invalid config entry '" + k + "'");
    }
    head << k << " = " << v << '\n';
  }
  for (const auto& [name, t] : ckpt.tensors) {
    head << "tensor " << name << ' ' << blob.size() << ' ' << dtype_name(dtype_of<T>()) << ' '
         << detail::shape_token(t.shape()) << '\n';
    blob += serialize_tensor(t);
  }
  head << "end\n";
  std::ofstream f(path, std::ios::binary);
  if (!f) throw CheckpointError("checkpoint: cannot open '" + path + "' for writing");
  const std::string h = head.str();
  f.write(h.data(), static_cast<std::streamsize>(h.size()));
  f.write(blob.data(), static_cast<std::streamsize>(blob.size()));
  if (!f) throw CheckpointError("checkpoint: write failed for '" + path + "'");
}

namespace detail {

struct RawCheckpoint {
  std::map<std::string, std::string> meta;
  std::vector<ManifestEntry> entries;
  std::string blob;
};

inline RawCheckpoint read_raw_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw CheckpointError("checkpoint: cannot open '" + path + "'");
  std::string line;
  if (!std::getline(f, line) || line != "GEOVIT-CHECKPOINT 1") {
    throw FormatError("checkpoint: '" + path + "' lacks the GEOVIT-CHECKPOINT header");
  }
  RawCheckpoint raw;
  bool ended = false;
  while (std::getline(f, line)) {
    if (line == "end") {
      ended = true;
      break;
    }
    if (line.rfind("tensor ", 0) == 0) {
      std::istringstream ls(line.substr(7));
      ManifestEntry e;
      std::string dtype, shape;
      if (!(ls >> e.path >> e.offset >> dtype >> shape)) throw FormatError("checkpoint: bad tensor line '" + line + "'");
      if (dtype == "float32")
        e.dtype = DType::Float32;
      else if (dtype == "float64")
        e.dtype = DType::Float64;
      else
        throw FormatError("checkpoint: unknown dtype '" + dtype + "'");
      e.shape = parse_shape_token(shape);
      raw.entries.push_back(std::move(e));
      continue;
    }
    const auto eq = line.find(" = ");
    if (eq == std::string::npos) throw FormatError("checkpoint: bad manifest line '" + line + "'");
    raw.meta[line.substr(0, eq)] = line.substr(eq + 3);
  }
  if (!ended) throw FormatError("checkpoint: manifest not terminated");
  raw.blob.assign(std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>());
  return raw;
}

}  // namespace detail

/// Manifest only (config scalars and tensor entries); the blob is not decoded.
inline std::pair<std::map<std::string, std::string>, std::vector<ManifestEntry>> read_manifest(
    const std::string& path) {
  auto raw = detail::read_raw_checkpoint(path);
  return {std::move(raw.meta), std::move(raw.entries)};
}

template <typename T>
Checkpoint<T> load_checkpoint(const std::string& path) {
  auto raw = detail::read_raw_checkpoint(path);
  Checkpoint<T> ckpt;
  ckpt.meta = std::move(raw.meta);
  for (const auto& e : raw.entries) {
    std::size_t pos = e.offset;
    auto t = deserialize_tensor<T>(raw.blob, pos);
    if (t.shape() != e.shape) {
      throw FormatError("checkpoint: tensor '" + e.path + "' shape disagrees with manifest");
    }
    if (!ckpt.tensors.emplace(e.path, std::move(t)).second) {
      throw CheckpointError("checkpoint: duplicate parameter '" + e.path + "'");
    }
  }
  return ckpt;
}

}  // namespace geovit
