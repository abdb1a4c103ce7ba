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

// Field and image file formats:
//   .flo   Middlebury: float 202021.25, int32 width, int32 height, (u, v) float32 pairs, row-major, little-endian.
//   KITTI  16-bit RGB PNG: u = (R - 2^15) / 64, v = (G - 2^15) / 64, valid = B > 0.
//   .pfm   "Pf" grayscale: text header, negative scale = little-endian, rows stored bottom-up.
//   PNG    8-bit RGB images, mapped to [0, 1].

#include <png.h>

#include <algorithm>
#include <bit>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <limits>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "geovit/geometry.hpp"

namespace geovit {

namespace detail {

inline std::string read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw FormatError("cannot open '" + path + "'");
  return std::string(std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>());
}

inline void write_file(const std::string& path, const std::string& bytes) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw FormatError("cannot open '" + path + "' for writing");
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw FormatError("write failed for '" + path + "'");
}

template <typename V>
void append_le(std::string& out, V v) {
  char buf[sizeof(V)];
  std::memcpy(buf, &v, sizeof(V));
  out.append(buf, sizeof(V));
}

template <typename V>
V read_le(const std::string& in, std::size_t pos) {
  V v;
  std::memcpy(&v, in.data() + pos, sizeof(V));
  return v;
}

inline float byteswap_float(float f) {
  std::uint32_t u;
  std::memcpy(&u, &f, 4);
  u = (u >> 24) | ((u >> 8) & 0xff00u) | ((u << 8) & 0xff0000u) | (u << 24);
  std::memcpy(&f, &u, 4);
  return f;
}

}  // namespace detail

static_assert(std::endian::native == std::endian::little, "file formats assume a little-endian host");

// ---------------------------------------------------------------------------
// Middlebury .flo

inline constexpr float kFloMagic = 202021.25f;
// Middlebury marks unknown flow with components above 1e9.
inline constexpr float kFloUnknown = 1e10f;

template <typename T>
std::string encode_flo(const GeoField<T>& f) {
  if (f.kind != FieldKind::Flow) throw ShapeError("write_flo: field is not a flow");
  const auto H = f.height(), W = f.width(), P = H * W;
  std::string out;
  out.reserve(static_cast<std::size_t>(12 + 8 * P));
  detail::append_le<float>(out, kFloMagic);
  detail::append_le<std::int32_t>(out, static_cast<std::int32_t>(W));
  detail::append_le<std::int32_t>(out, static_cast<std::int32_t>(H));
  for (std::int64_t i = 0; i < P; ++i) {
    const bool ok = f.is_valid(i);
    detail::append_le<float>(out, ok ? static_cast<float>(f.data[i]) : kFloUnknown);
    detail::append_le<float>(out, ok ? static_cast<float>(f.data[P + i]) : kFloUnknown);
  }
  return out;
}

template <typename T = float>
GeoField<T> decode_flo(const std::string& in) {
  if (in.size() < 12) throw FormatError("flo: file too short");
  if (detail::read_le<float>(in, 0) != kFloMagic) throw FormatError("flo: bad magic");
  const auto W = detail::read_le<std::int32_t>(in, 4), H = detail::read_le<std::int32_t>(in, 8);
  if (W <= 0 || H <= 0) throw FormatError("flo: non-positive dimensions");
  const auto P = static_cast<std::int64_t>(W) * H;
  if (in.size() < static_cast<std::size_t>(12 + 8 * P)) throw FormatError("flo: truncated payload");
  std::vector<T> data(static_cast<std::size_t>(2 * P));
  for (std::int64_t i = 0; i < P; ++i) {
    data[i] = static_cast<T>(detail::read_le<float>(in, static_cast<std::size_t>(12 + 8 * i)));
    data[P + i] = static_cast<T>(detail::read_le<float>(in, static_cast<std::size_t>(16 + 8 * i)));
  }
  std::vector<std::uint8_t> valid(static_cast<std::size_t>(P), 1);
  bool any_invalid = false;
  for (std::int64_t i = 0; i < P; ++i) {
    const double u = data[i], v = data[P + i];
    if (std::isfinite(u) && std::isfinite(v) && std::abs(u) <= 1e9 && std::abs(v) <= 1e9) continue;
    valid[i] = 0;
    data[i] = data[P + i] = T(0);
    any_invalid = true;
  }
  if (!any_invalid) valid.clear();
  return GeoField<T>(FieldKind::Flow, Tensor<T>({2, H, W}, std::move(data)), std::move(valid));
}

template <typename T>
void write_flo(const std::string& path, const GeoField<T>& f) {
  detail::write_file(path, encode_flo(f));
}

template <typename T = float>
GeoField<T> read_flo(const std::string& path) {
  return decode_flo<T>(detail::read_file(path));
}

// ---------------------------------------------------------------------------
// PNG (libpng)

namespace detail {

struct PngRaster {
  std::int64_t width = 0, height = 0;
  int channels = 0, bit_depth = 0;
  std::vector<std::uint16_t> samples;  // row-major, interleaved channels
};

inline void png_error_handler(png_structp png, png_const_charp msg) {
  auto* buf = static_cast<char*>(png_get_error_ptr(png));
  if (buf) std::snprintf(buf, 256, "%s", msg);
  png_longjmp(png, 1);
}

inline void png_warning_handler(png_structp, png_const_charp) {}

// Reads any PNG; palette and low-depth gray are expanded, alpha is kept.
inline PngRaster read_png_raw(const std::string& path) {
  std::unique_ptr<FILE, int (*)(FILE*)> fp(std::fopen(path.c_str(), "rb"), &std::fclose);
  if (!fp) throw FormatError("cannot open '" + path + "'");
  unsigned char sig[8];
  if (std::fread(sig, 1, 8, fp.get()) != 8 || png_sig_cmp(sig, 0, 8)) throw FormatError("'" + path + "' is not a PNG");
  char err[256] = "libpng error";
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, err, png_error_handler, png_warning_handler);
  if (!png) throw FormatError("png: out of memory");
  png_infop info = png_create_info_struct(png);
  PngRaster r;
  std::vector<png_bytep> rows;
  std::vector<unsigned char> bytes;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw FormatError("png '" + path + "': " + err);
  }
  png_init_io(png, fp.get());
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);
  const auto color = png_get_color_type(png, info);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && png_get_bit_depth(png, info) < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (png_get_bit_depth(png, info) == 16) png_set_swap(png);
  png_read_update_info(png, info);
  r.width = png_get_image_width(png, info);
  r.height = png_get_image_height(png, info);
  r.channels = png_get_channels(png, info);
  r.bit_depth = png_get_bit_depth(png, info);
  const auto rowbytes = png_get_rowbytes(png, info);
  bytes.resize(rowbytes * static_cast<std::size_t>(r.height));
  rows.resize(static_cast<std::size_t>(r.height));
  for (std::int64_t y = 0; y < r.height; ++y) rows[y] = bytes.data() + y * rowbytes;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  const auto n = static_cast<std::size_t>(r.width * r.height * r.channels);
  r.samples.resize(n);
  if (r.bit_depth == 16) {
    std::memcpy(r.samples.data(), bytes.data(), n * 2);
  } else {
    for (std::size_t i = 0; i < n; ++i) r.samples[i] = bytes[i];
  }
  return r;
}

inline void write_png_raw(const std::string& path, const PngRaster& r) {
  std::unique_ptr<FILE, int (*)(FILE*)> fp(std::fopen(path.c_str(), "wb"), &std::fclose);
  if (!fp) throw FormatError("cannot open '" + path + "' for writing");
  const int color = r.channels == 3 ? PNG_COLOR_TYPE_RGB : r.channels == 4 ? PNG_COLOR_TYPE_RGBA : PNG_COLOR_TYPE_GRAY;
  const auto rowbytes = static_cast<std::size_t>(r.width * r.channels * (r.bit_depth / 8));
  std::vector<unsigned char> bytes(rowbytes * static_cast<std::size_t>(r.height));
  if (r.bit_depth == 16) {
    std::memcpy(bytes.data(), r.samples.data(), bytes.size());
  } else {
    for (std::size_t i = 0; i < bytes.size(); ++i) bytes[i] = static_cast<unsigned char>(r.samples[i]);
  }
  std::vector<png_bytep> rows(static_cast<std::size_t>(r.height));
  for (std::int64_t y = 0; y < r.height; ++y) rows[y] = bytes.data() + y * rowbytes;
  char err[256] = "libpng error";
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, err, png_error_handler, png_warning_handler);
  if (!png) throw FormatError("png: out of memory");
  png_infop info = png_create_info_struct(png);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw FormatError("png '" + path + "': " + err);
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(r.width), static_cast<png_uint_32>(r.height), r.bit_depth, color,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  if (r.bit_depth == 16) png_set_swap(png);
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// KITTI 16-bit flow PNG

/// Invalid pixels are written as (0, 0, 0). Flow is rounded to 1/64 px and
/// saturates at the 16-bit range (about +-512 px).
template <typename T>
void write_kitti_png(const std::string& path, const GeoField<T>& f) {
  if (f.kind != FieldKind::Flow) throw ShapeError("write_kitti_png: field is not a flow");
  detail::PngRaster r;
  r.width = f.width();
  r.height = f.height();
  r.channels = 3;
  r.bit_depth = 16;
  const auto P = f.pixels();
  r.samples.assign(static_cast<std::size_t>(3 * P), 0);
  auto quant = [](double v) {
    return static_cast<std::uint16_t>(std::clamp(std::round(v * 64.0 + 32768.0), 0.0, 65535.0));
  };
  for (std::int64_t i = 0; i < P; ++i) {
    if (!f.is_valid(i)) continue;
    r.samples[3 * i] = quant(f.data[i]);
    r.samples[3 * i + 1] = quant(f.data[P + i]);
    r.samples[3 * i + 2] = 1;
  }
  detail::write_png_raw(path, r);
}

template <typename T = float>
GeoField<T> read_kitti_png(const std::string& path) {
  auto r = detail::read_png_raw(path);
  if (r.bit_depth != 16) throw FormatError("kitti png: expected 16-bit samples, got " + std::to_string(r.bit_depth));
  if (r.channels != 3) throw FormatError("kitti png: expected 3 channels, got " + std::to_string(r.channels));
  const auto P = r.width * r.height;
  std::vector<T> data(static_cast<std::size_t>(2 * P));
  std::vector<std::uint8_t> valid(static_cast<std::size_t>(P));
  for (std::int64_t i = 0; i < P; ++i) {
    valid[i] = r.samples[3 * i + 2] > 0;
    data[i] = valid[i] ? static_cast<T>((static_cast<double>(r.samples[3 * i]) - 32768.0) / 64.0) : T(0);
    data[P + i] = valid[i] ? static_cast<T>((static_cast<double>(r.samples[3 * i + 1]) - 32768.0) / 64.0) : T(0);
  }
  return GeoField<T>(FieldKind::Flow, Tensor<T>({2, r.height, r.width}, std::move(data)), std::move(valid));
}

// ---------------------------------------------------------------------------
// PFM

template <typename T>
std::string encode_pfm(const GeoField<T>& f) {
  if (f.channels() != 1) throw ShapeError("write_pfm: expected a single-channel field");
  const auto H = f.height(), W = f.width();
  std::string out = "Pf\n" + std::to_string(W) + " " + std::to_string(H) + "\n-1\n";
  const float missing = std::numeric_limits<float>::infinity();
  for (std::int64_t y = H - 1; y >= 0; --y)
    for (std::int64_t x = 0; x < W; ++x)
      detail::append_le<float>(out, f.is_valid(y * W + x) ? static_cast<float>(f.data[y * W + x]) : missing);
  return out;
}

/// `kind` says how to interpret the map (disparity or depth).
template <typename T = float>
GeoField<T> decode_pfm(const std::string& in, FieldKind kind = FieldKind::Disparity) {
  if (kind == FieldKind::Flow) throw ShapeError("read_pfm: flow is not stored as PFM here");
  std::size_t pos = 0;
  auto token = [&]() {
    while (pos < in.size() && std::isspace(static_cast<unsigned char>(in[pos]))) ++pos;
    const auto start = pos;
    while (pos < in.size() && !std::isspace(static_cast<unsigned char>(in[pos]))) ++pos;
    if (start == pos) throw FormatError("pfm: truncated header");
    return in.substr(start, pos - start);
  };
  if (token() != "Pf") throw FormatError("pfm: expected a 'Pf' (grayscale) header");
  std::int64_t W, H;
  double scale;
  try {
    W = std::stoll(token());
    H = std::stoll(token());
    scale = std::stod(token());
  } catch (const std::exception&) {
    throw FormatError("pfm: malformed header");
  }
  if (W <= 0 || H <= 0) throw FormatError("pfm: non-positive dimensions");
  if (scale == 0 || !std::isfinite(scale)) throw FormatError("pfm: scale must be nonzero");
  if (pos >= in.size() || !std::isspace(static_cast<unsigned char>(in[pos]))) throw FormatError("pfm: truncated header");
  ++pos;  // single whitespace before the raster
  const bool big_endian = scale > 0;
  if (in.size() < pos + static_cast<std::size_t>(4 * W * H)) throw FormatError("pfm: truncated payload");
  std::vector<T> data(static_cast<std::size_t>(W * H));
  for (std::int64_t y = H - 1; y >= 0; --y)
    for (std::int64_t x = 0; x < W; ++x) {
      float v = detail::read_le<float>(in, pos);
      pos += 4;
      if (big_endian) v = detail::byteswap_float(v);
      data[y * W + x] = static_cast<T>(v);
    }
  // Non-finite or out-of-domain entries (common for missing ground truth) are masked.
  std::vector<std::uint8_t> valid(static_cast<std::size_t>(W * H), 1);
  bool any_invalid = false;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const bool ok = std::isfinite(static_cast<double>(data[i])) &&
                    (kind == FieldKind::Disparity ? data[i] >= T(0) : data[i] > T(0));
    valid[i] = ok;
    any_invalid |= !ok;
  }
  if (!any_invalid) valid.clear();
  return GeoField<T>(kind, Tensor<T>({1, H, W}, std::move(data)), std::move(valid));
}

template <typename T>
void write_pfm(const std::string& path, const GeoField<T>& f) {
  detail::write_file(path, encode_pfm(f));
}

template <typename T = float>
GeoField<T> read_pfm(const std::string& path, FieldKind kind = FieldKind::Disparity) {
  return decode_pfm<T>(detail::read_file(path), kind);
}

// ---------------------------------------------------------------------------
// 8-bit images

/// [3, H, W] in [0, 1]. Gray images are replicated, alpha is dropped, 16-bit is rescaled.
template <typename T = float>
Tensor<T> read_image_png(const std::string& path) {
  auto r = detail::read_png_raw(path);
  const double maxv = r.bit_depth == 16 ? 65535.0 : 255.0;
  const auto P = r.width * r.height;
  std::vector<T> out(static_cast<std::size_t>(3 * P));
  for (std::int64_t i = 0; i < P; ++i)
    for (int c = 0; c < 3; ++c) {
      const int src = r.channels >= 3 ? c : 0;
      out[c * P + i] = static_cast<T>(r.samples[i * r.channels + src] / maxv);
    }
  return Tensor<T>({3, r.height, r.width}, std::move(out));
}

template <typename T>
void write_image_png(const std::string& path, const Tensor<T>& img) {
  if (img.rank() != 3 || img.dim(0) != 3) throw ShapeError("write_image_png: expected [3, H, W]");
  detail::PngRaster r;
  r.height = img.dim(1);
  r.width = img.dim(2);
  r.channels = 3;
  r.bit_depth = 8;
  const auto P = r.width * r.height;
  r.samples.resize(static_cast<std::size_t>(3 * P));
  for (std::int64_t i = 0; i < P; ++i)
    for (int c = 0; c < 3; ++c) {
      const double v = std::clamp(static_cast<double>(img[c * P + i]), 0.0, 1.0);
      r.samples[i * 3 + c] = static_cast<std::uint16_t>(std::lround(v * 255.0));
    }
  detail::write_png_raw(path, r);
}

// ---------------------------------------------------------------------------
// Dispatch on file extension

/// .flo and .png hold flow; .pfm holds disparity or depth (`scalar_kind`).
template <typename T = float>
GeoField<T> read_field(const std::string& path, FieldKind scalar_kind = FieldKind::Disparity) {
  const auto ext = std::filesystem::path(path).extension().string();
  if (ext == ".flo") return read_flo<T>(path);
  if (ext == ".png") return read_kitti_png<T>(path);
  if (ext == ".pfm") return read_pfm<T>(path, scalar_kind);
  throw FormatError("unrecognized field file extension '" + ext + "' (expected .flo, .png or .pfm)");
}

template <typename T>
void write_field(const std::string& path, const GeoField<T>& f) {
  const auto ext = std::filesystem::path(path).extension().string();
  if (ext == ".flo") return write_flo(path, f);
  if (ext == ".png") return write_kitti_png(path, f);
  if (ext == ".pfm") return write_pfm(path, f);
  throw FormatError("unrecognized field file extension '" + ext + "' (expected .flo, .png or .pfm)");
}

}  // namespace geovit
