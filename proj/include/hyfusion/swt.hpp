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

#include "hyfusion/tensor.hpp"

namespace hyfusion {

// ---------------------------------------------------------------------------
// Undecimated (stationary) 2-D wavelet transform, periodic boundary, filters
// dilated a-trous by 2^(level-1). Normalization: lowpass taps sum to 1 (DC
// preserving), highpass to 0; with that scaling the synthesis filters equal
// the analysis filters, so the inverse is the adjoint filter bank.
//
// Subband letters name (horizontal, vertical) filters: HL is highpass along
// x and lowpass along y, i.e. it responds to vertical edge columns.
// ---------------------------------------------------------------------------

enum class Wavelet { haar, db2 };

inline const char* wavelet_name(Wavelet w) {
  return w == Wavelet::haar ? "haar" : "db2";
}

inline Wavelet wavelet_from_name(const std::string& s) {
  if (s == "haar") return Wavelet::haar;
  if (s == "db2") return Wavelet::db2;
  fail("unknown wavelet '" + s + "' (expected haar or db2)");
}

inline std::vector<double> wavelet_lowpass(Wavelet w) {
  if (w == Wavelet::haar) return {0.5, 0.5};
  const double s3 = std::sqrt(3.0);
  return {(1 + s3) / 8, (3 + s3) / 8, (3 - s3) / 8, (1 - s3) / 8};
}

inline std::vector<double> wavelet_highpass(Wavelet w) {
  // quadrature mirror of the lowpass: g[k] = (-1)^k h[L-1-k]
  auto h = wavelet_lowpass(w);
  std::vector<double> g(h.size());
  for (std::size_t k = 0; k < h.size(); ++k)
    g[k] = (k % 2 == 0 ? 1.0 : -1.0) * h[h.size() - 1 - k];
  return g;
}

template <typename Real>
struct SwtLevel {
  Tensor<Real> ll, hl, lh, hh;
};

template <typename Real>
struct SwtPyramid {
  Wavelet wavelet = Wavelet::haar;
  std::int64_t levels = 0;
  Shape input_shape;                  // [N,C,H,W] of the analyzed tensor
  std::vector<SwtLevel<Real>> level;  // level[j] holds scale j+1, all full size

  /// Subbands flattened in loss order: per level LL, HL, LH, HH.
  std::vector<const Tensor<Real>*> subbands() const {
    std::vector<const Tensor<Real>*> out;
    for (const auto& l : level) {
      out.push_back(&l.ll);
      out.push_back(&l.hl);
      out.push_back(&l.lh);
      out.push_back(&l.hh);
    }
    return out;
  }
};

template <typename Real>
SwtPyramid<Real> swt_forward(const Tensor<Real>& x, std::int64_t levels,
                             Wavelet wavelet) {
  const Shape& s = x.shape();
  require(s.size() == 4, "swt_forward: input must be [N,C,H,W]");
  require(levels >= 1, "swt_forward: need at least one level");
  const auto h = wavelet_lowpass(wavelet);
  const auto g = wavelet_highpass(wavelet);
  const std::int64_t flen = static_cast<std::int64_t>(h.size());
  const std::int64_t support =
      (flen - 1) * (std::int64_t(1) << (levels - 1)) + 1;
  require(support <= s[2] && support <= s[3],
          "swt_forward: " + std::to_string(levels) +
              " levels need dilated filter support " +
              std::to_string(support) + " but extents are " + shape_str(s));

  SwtPyramid<Real> pyr;
  pyr.wavelet = wavelet;
  pyr.levels = levels;
  pyr.input_shape = s;
  Tensor<Real> approx = x;
  for (std::int64_t lvl = 0; lvl < levels; ++lvl) {
    const std::int64_t dil = std::int64_t(1) << lvl;
    Tensor<Real> lox = circular_filter1d(approx, h, dil, 1, +1);
    Tensor<Real> hix = circular_filter1d(approx, g, dil, 1, +1);
    SwtLevel<Real> lev;
    lev.ll = circular_filter1d(lox, h, dil, 0, +1);
    lev.lh = circular_filter1d(lox, g, dil, 0, +1);
    lev.hl = circular_filter1d(hix, h, dil, 0, +1);
    lev.hh = circular_filter1d(hix, g, dil, 0, +1);
    approx = lev.ll;
    pyr.level.push_back(std::move(lev));
  }
  return pyr;
}

template <typename Real>
Tensor<Real> swt_inverse(const SwtPyramid<Real>& pyr) {
  require(pyr.levels >= 1 &&
              static_cast<std::int64_t>(pyr.level.size()) == pyr.levels,
          "swt_inverse: malformed pyramid");
  for (const auto& l : pyr.level) {
    require(l.ll.defined() && l.hl.defined() && l.lh.defined() &&
                l.hh.defined(),
            "swt_inverse: missing subband");
    require(l.ll.shape() == pyr.input_shape &&
                l.hl.shape() == pyr.input_shape &&
                l.lh.shape() == pyr.input_shape &&
                l.hh.shape() == pyr.input_shape,
            "swt_inverse: subband shape does not match pyramid config");
  }
  const auto h = wavelet_lowpass(pyr.wavelet);
  const auto g = wavelet_highpass(pyr.wavelet);
  Tensor<Real> approx = pyr.level.back().ll;
  for (std::int64_t lvl = pyr.levels - 1; lvl >= 0; --lvl) {
    const std::int64_t dil = std::int64_t(1) << lvl;
    const auto& lev = pyr.level[static_cast<std::size_t>(lvl)];
    // synthesis: convolution (sign -1) with the same taps, summed over bands
    Tensor<Real> ll_y = circular_filter1d(approx, h, dil, 0, -1);
    Tensor<Real> lh_y = circular_filter1d(lev.lh, g, dil, 0, -1);
    Tensor<Real> hl_y = circular_filter1d(lev.hl, h, dil, 0, -1);
    Tensor<Real> hh_y = circular_filter1d(lev.hh, g, dil, 0, -1);
    Tensor<Real> low = circular_filter1d(add(ll_y, lh_y), h, dil, 1, -1);
    Tensor<Real> high = circular_filter1d(add(hl_y, hh_y), g, dil, 1, -1);
    approx = add(low, high);
  }
  return approx;
}

}  // namespace hyfusion
