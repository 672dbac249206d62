// Copyright 2026 the hyfusion authors
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

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "hyfusion/tensor.hpp"

static_assert(std::endian::native == std::endian::little,
              "hyfusion: HSC1 I/O assumes a little-endian host");

namespace hyfusion {

/// Hyperspectral raster: band-sequential values (band, then row, then col)
/// with a value-range and optional per-band wavelengths in nm.
struct HsiCube {
  std::int64_t height = 0;
  std::int64_t width = 0;
  std::int64_t bands = 0;
  std::vector<double> values;  // band-sequential, length h*w*b
  double lo = 0.0;
  double hi = 1.0;
  std::vector<double> wavelengths;  // empty or size == bands

  HsiCube() = default;
  HsiCube(std::int64_t h, std::int64_t w, std::int64_t b, double fill = 0.0)
      : height(h),
        width(w),
        bands(b),
        values(static_cast<std::size_t>(h * w * b), fill) {
    require(h > 0 && w > 0 && b > 0, "HsiCube: extents must be positive");
  }

  std::int64_t numel() const { return height * width * bands; }

  double& at(std::int64_t band, std::int64_t y, std::int64_t x) {
    return values[static_cast<std::size_t>((band * height + y) * width + x)];
  }
  double at(std::int64_t band, std::int64_t y, std::int64_t x) const {
    return values[static_cast<std::size_t>((band * height + y) * width + x)];
  }

  void validate() const {
    require(height > 0 && width > 0 && bands > 0,
            "HsiCube: extents must be positive");
    require(static_cast<std::int64_t>(values.size()) == numel(),
            "HsiCube: value count does not match extents");
    require(wavelengths.empty() ||
                static_cast<std::int64_t>(wavelengths.size()) == bands,
            "HsiCube: wavelength count must equal band count");
    double mn = values[0], mx = values[0];
    for (double v : values) {
      require(std::isfinite(v), "HsiCube: non-finite value");
      mn = std::min(mn, v);
      mx = std::max(mx, v);
    }
    require(lo <= mn && mx <= hi,
            "HsiCube: values escape the declared range [" +
                std::to_string(lo) + "," + std::to_string(hi) + "]");
  }
};

/// Band-sequential layout is exactly [1, bands, H, W] row-major.
template <typename Real = double>
Tensor<Real> to_tensor(const HsiCube& c) {
  Tensor<Real> t(Shape{1, c.bands, c.height, c.width});
  for (std::size_t i = 0; i < c.values.size(); ++i)
    t.data()[i] = static_cast<Real>(c.values[i]);
  return t;
}

template <typename Real>
HsiCube from_tensor(const Tensor<Real>& t, double lo = 0.0, double hi = 1.0,
                    std::vector<double> wavelengths = {}) {
  const Shape& s = t.shape();
  require(s.size() == 4 && s[0] == 1,
          "from_tensor: expected [1,bands,H,W], got " + shape_str(s));
  HsiCube c(s[2], s[3], s[1]);
  for (std::size_t i = 0; i < c.values.size(); ++i)
    c.values[i] = static_cast<double>(t.data()[i]);
  c.lo = lo;
  c.hi = hi;
  c.wavelengths = std::move(wavelengths);
  return c;
}

// ---------------------------------------------------------------------------
// HSC1 cube file format
//
//   bytes 0..7   magic "HSCUBE01"
//   u32 LE       height, width, bands
//   f64 LE       lo, hi
//   u8           wavelength presence flag
//   f64 LE x b   wavelengths (only when flag == 1)
//   f32 LE       band-sequential payload, h*w*b samples
// ---------------------------------------------------------------------------

inline constexpr char kCubeMagic[8] = {'H', 'S', 'C', 'U', 'B', 'E', '0', '1'};
inline constexpr std::int64_t kMaxCubeExtent = 1 << 20;
inline constexpr std::int64_t kMaxCubeSamples = std::int64_t(1) << 33;

namespace detail {

template <typename POD>
void put(std::ostream& os, POD v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

template <typename POD>
bool get(std::istream& is, POD& v) {
  is.read(reinterpret_cast<char*>(&v), sizeof(v));
  return static_cast<bool>(is);
}

}  // namespace detail

inline void write_cube(const HsiCube& c, const std::filesystem::path& path) {
  c.validate();
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  require(static_cast<bool>(os), "write_cube: cannot open " + path.string());
  os.write(kCubeMagic, sizeof(kCubeMagic));
  detail::put(os, static_cast<std::uint32_t>(c.height));
  detail::put(os, static_cast<std::uint32_t>(c.width));
  detail::put(os, static_cast<std::uint32_t>(c.bands));
  detail::put(os, c.lo);
  detail::put(os, c.hi);
  detail::put(os, static_cast<std::uint8_t>(c.wavelengths.empty() ? 0 : 1));
  for (double w : c.wavelengths) detail::put(os, w);
  for (double v : c.values) detail::put(os, static_cast<float>(v));
  os.flush();
  require(static_cast<bool>(os), "write_cube: write failed for " + path.string());
}

inline HsiCube read_cube(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  require(static_cast<bool>(is), "read_cube: cannot open " + path.string());
  char magic[8];
  is.read(magic, sizeof(magic));
  require(static_cast<bool>(is) && std::memcmp(magic, kCubeMagic, 8) == 0,
          "read_cube: unrecognized format (bad magic) in " + path.string());
  std::uint32_t h = 0, w = 0, b = 0;
  std::uint8_t flag = 0;
  HsiCube c;
  require(detail::get(is, h) && detail::get(is, w) && detail::get(is, b) &&
              detail::get(is, c.lo) && detail::get(is, c.hi) &&
              detail::get(is, flag),
          "read_cube: truncated header in " + path.string());
  require(h > 0 && w > 0 && b > 0 && h <= kMaxCubeExtent &&
              w <= kMaxCubeExtent && b <= kMaxCubeExtent &&
              static_cast<std::int64_t>(h) * w * b <= kMaxCubeSamples,
          "read_cube: extent overflow (" + std::to_string(h) + "x" +
              std::to_string(w) + "x" + std::to_string(b) + ") in " +
              path.string());
  require(flag == 0 || flag == 1,
          "read_cube: bad wavelength flag in " + path.string());
  c.height = h;
  c.width = w;
  c.bands = b;
  if (flag) {
    c.wavelengths.resize(b);
    for (auto& v : c.wavelengths)
      require(detail::get(is, v),
              "read_cube: truncated wavelength table in " + path.string());
  }
  c.values.resize(static_cast<std::size_t>(c.numel()));
  for (auto& v : c.values) {
    float f = 0;
    require(detail::get(is, f),
            "read_cube: payload length mismatch in " + path.string());
    v = static_cast<double>(f);
  }
  is.peek();
  require(is.eof(),
          "read_cube: payload length mismatch (trailing bytes) in " +
              path.string());
  return c;
}

}  // namespace hyfusion
