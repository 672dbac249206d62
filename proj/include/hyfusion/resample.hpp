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

#include <sstream>

#include "hyfusion/cube.hpp"
#include "hyfusion/tensor.hpp"

namespace hyfusion {

// ---------------------------------------------------------------------------
// Observation operators: X_h = spatial degradation of Y (blur + decimate),
// X_m = spectral degradation of Y (band mixing), plus the plain resamplers
// used to build the cross-modal drafts. Everything here is differentiable
// end to end; cube-level wrappers run the same ops tape-free.
// ---------------------------------------------------------------------------

/// Separable Gaussian blur followed by s x s block-mean decimation.
/// sigma = 0.5*s with half-width ceil(3*sigma); taps are normalized to sum 1,
/// so constants are preserved. Reflect boundary. Decimating by block means
/// keeps the operator symmetric under 90-degree rotations, which odd-tap
/// strided sampling cannot be for even s.
struct BlurOperator {
  std::vector<double> taps;  // odd length, sums to 1
  std::int64_t stride = 1;

  static BlurOperator gaussian(std::int64_t stride) {
    require(stride >= 1, "BlurOperator: stride must be >= 1");
    const double sigma = 0.5 * static_cast<double>(stride);
    const auto r = static_cast<std::int64_t>(std::ceil(3.0 * sigma));
    BlurOperator b;
    b.stride = stride;
    b.taps.resize(static_cast<std::size_t>(2 * r + 1));
    double sum = 0;
    for (std::int64_t i = -r; i <= r; ++i) {
      const double t = std::exp(-0.5 * static_cast<double>(i * i) / (sigma * sigma));
      b.taps[static_cast<std::size_t>(i + r)] = t;
      sum += t;
    }
    for (auto& t : b.taps) t /= sum;
    return b;
  }

  void validate() const {
    require(stride >= 1, "BlurOperator: stride must be >= 1");
    require(!taps.empty() && taps.size() % 2 == 1,
            "BlurOperator: taps must have odd length");
    double s = 0;
    for (double t : taps) s += t;
    require(std::abs(s - 1.0) <= 1e-12,
            "BlurOperator: taps must sum to 1, got " + std::to_string(s));
  }
};

/// Row-stochastic spectral response matrix D (out_bands x in_bands).
struct SpectralResponse {
  std::int64_t out_bands = 0;
  std::int64_t in_bands = 0;
  std::vector<double> response;  // row-major

  double at(std::int64_t o, std::int64_t i) const {
    return response[static_cast<std::size_t>(o * in_bands + i)];
  }

  /// Contiguous block averaging: in_bands split into out_bands nearly-equal
  /// groups; each output band is the mean of its group.
  static SpectralResponse block_average(std::int64_t in_bands,
                                        std::int64_t out_bands) {
    require(in_bands >= out_bands && out_bands >= 1,
            "SpectralResponse: need in_bands >= out_bands >= 1");
    SpectralResponse d;
    d.in_bands = in_bands;
    d.out_bands = out_bands;
    d.response.assign(static_cast<std::size_t>(in_bands * out_bands), 0.0);
    for (std::int64_t o = 0; o < out_bands; ++o) {
      const std::int64_t b0 = o * in_bands / out_bands;
      const std::int64_t b1 = (o + 1) * in_bands / out_bands;
      for (std::int64_t i = b0; i < b1; ++i)
        d.response[static_cast<std::size_t>(o * in_bands + i)] =
            1.0 / static_cast<double>(b1 - b0);
    }
    d.validate();
    return d;
  }

  /// CSV matrix, one row per output band, in_bands comma-separated columns.
  static SpectralResponse from_csv(const std::filesystem::path& path) {
    std::ifstream is(path);
    require(static_cast<bool>(is),
            "SpectralResponse: cannot open " + path.string());
    SpectralResponse d;
    std::string line;
    std::int64_t cols = -1;
    while (std::getline(is, line)) {
      if (line.find_first_not_of(" \t\r,") == std::string::npos) continue;
      std::stringstream ss(line);
      std::string cell;
      std::int64_t n = 0;
      while (std::getline(ss, cell, ',')) {
        try {
          d.response.push_back(std::stod(cell));
        } catch (const std::exception&) {
          fail("SpectralResponse: bad number '" + cell + "' in " +
               path.string());
        }
        ++n;
      }
      require(cols < 0 || n == cols,
              "SpectralResponse: ragged rows in " + path.string());
      cols = n;
      ++d.out_bands;
    }
    require(d.out_bands >= 1 && cols >= 1,
            "SpectralResponse: empty matrix in " + path.string());
    d.in_bands = cols;
    d.validate();
    return d;
  }

  void validate() const {
    require(out_bands >= 1 && in_bands >= 1 &&
                static_cast<std::int64_t>(response.size()) ==
                    out_bands * in_bands,
            "SpectralResponse: malformed matrix");
    for (std::int64_t o = 0; o < out_bands; ++o) {
      double s = 0;
      for (std::int64_t i = 0; i < in_bands; ++i) {
        require(at(o, i) >= 0.0, "SpectralResponse: negative entry at row " +
                                     std::to_string(o));
        s += at(o, i);
      }
      require(std::abs(s - 1.0) <= 1e-12,
              "SpectralResponse: row " + std::to_string(o) +
                  " sums to " + std::to_string(s) + ", expected 1");
    }
  }
};

/// Y[N,b,H,W] -> X_h[N,b,H/s,W/s]: per-band blur then decimate.
template <typename Real>
Tensor<Real> degrade_spatial(const Tensor<Real>& y, const BlurOperator& blur) {
  blur.validate();
  const Shape& s = y.shape();
  require(s.size() == 4, "degrade_spatial: input must be [N,b,H,W]");
  require(s[2] % blur.stride == 0 && s[3] % blur.stride == 0,
          "degrade_spatial: stride " + std::to_string(blur.stride) +
              " must divide extents " + shape_str(s));
  Tensor<Real> t = reflect_filter1d(y, blur.taps, 0);
  t = reflect_filter1d(t, blur.taps, 1);
  return block_mean2d(t, blur.stride);
}

/// Y[N,b,H,W] -> X_m[N,b_m,H,W]: per-pixel linear band mixing by D.
template <typename Real>
Tensor<Real> degrade_spectral(const Tensor<Real>& y,
                              const SpectralResponse& d) {
  d.validate();
  const Shape& s = y.shape();
  require(s.size() == 4, "degrade_spectral: input must be [N,b,H,W]");
  require(s[1] == d.in_bands,
          "degrade_spectral: cube has " + std::to_string(s[1]) +
              " bands but D expects " + std::to_string(d.in_bands));
  Tensor<Real> w(Shape{d.out_bands, d.in_bands, 1, 1});
  for (std::size_t i = 0; i < d.response.size(); ++i)
    w.data()[i] = static_cast<Real>(d.response[i]);
  Tensor<Real> zero_bias(Shape{d.out_bands}, Real(0));
  return conv2d(y, w, zero_bias, 0);
}

// Cube-level wrappers (tape-free; metadata carried through). Resampling can
// overshoot the source range (bicubic lobes), so the declared range is
// widened to keep the cube invariant intact.

inline HsiCube widen_range(HsiCube c) {
  for (double v : c.values) {
    c.lo = std::min(c.lo, v);
    c.hi = std::max(c.hi, v);
  }
  return c;
}

inline HsiCube degrade_spatial(const HsiCube& y, const BlurOperator& blur) {
  Tensor<double> t = degrade_spatial(to_tensor(y), blur);
  return widen_range(from_tensor(t, y.lo, y.hi, y.wavelengths));
}

inline HsiCube degrade_spectral(const HsiCube& y, const SpectralResponse& d) {
  Tensor<double> t = degrade_spectral(to_tensor(y), d);
  return widen_range(from_tensor(t, y.lo, y.hi));
}

inline HsiCube upsample_bilinear(const HsiCube& x, std::int64_t factor) {
  Tensor<double> t = upsample_bilinear(to_tensor(x), factor);
  return widen_range(from_tensor(t, x.lo, x.hi, x.wavelengths));
}

inline HsiCube downsample_bicubic(const HsiCube& x, std::int64_t factor) {
  Tensor<double> t = downsample_bicubic(to_tensor(x), factor);
  return widen_range(from_tensor(t, x.lo, x.hi, x.wavelengths));
}

}  // namespace hyfusion
