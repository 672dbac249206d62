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

#include "hyfusion/swt.hpp"
#include "hyfusion/tensor.hpp"

namespace hyfusion {

// ---------------------------------------------------------------------------
// Training objective: L1 + lambda1 * SAM + lambda2 * SWT, all mean-reduced
// so the weights are extent-independent.
// ---------------------------------------------------------------------------

struct LossConfig {
  double lambda_sam = 0.01;
  double lambda_swt = 0.01;
  std::vector<double> lambda_j;  // per-subband weights; empty = all 1.0
  double sam_eps = 1e-8;
  double sam_clamp = 1e-7;  // cosine clamp margin before arccos
  std::int64_t swt_levels = 1;
  Wavelet swt_wavelet = Wavelet::haar;

  void validate() const {
    require(lambda_sam >= 0 && lambda_swt >= 0,
            "LossConfig: lambda weights must be >= 0");
    require(sam_eps > 0, "LossConfig: sam_eps must be > 0");
    require(sam_clamp > 0, "LossConfig: sam_clamp must be > 0");
    require(swt_levels >= 1, "LossConfig: swt_levels must be >= 1");
    for (double l : lambda_j)
      require(l >= 0, "LossConfig: lambda_j weights must be >= 0");
    require(lambda_j.empty() ||
                static_cast<std::int64_t>(lambda_j.size()) == 4 * swt_levels,
            "LossConfig: lambda_j must have one weight per subband (4 per "
            "level)");
  }
};

/// Mean absolute difference over all elements.
template <typename Real>
Tensor<Real> l1_loss(const Tensor<Real>& y, const Tensor<Real>& y_hat) {
  check_same_shape(y, y_hat, "l1_loss");
  return mean_all(abs_t(sub(y, y_hat)));
}

/// Mean per-pixel spectral angle in radians. Spectra live on the channel
/// axis of [N,b,H,W]; eps is added to each norm and the cosine is clamped to
/// [-1+margin, 1-margin] before arccos, keeping gradients finite everywhere.
template <typename Real>
Tensor<Real> sam_loss(const Tensor<Real>& y, const Tensor<Real>& y_hat,
                      Real eps, Real clamp_margin = Real(1e-7)) {
  check_same_shape(y, y_hat, "sam_loss");
  require(y.shape().size() == 4, "sam_loss: inputs must be [N,b,H,W]");
  Tensor<Real> a = nchw_to_tokens(y);      // [N, HW, b]
  Tensor<Real> b = nchw_to_tokens(y_hat);
  Tensor<Real> dot = sum_lastdim(mul(a, b));
  Tensor<Real> na = add_scalar(sqrt_t(sum_lastdim(mul(a, a))), eps);
  Tensor<Real> nb = add_scalar(sqrt_t(sum_lastdim(mul(b, b))), eps);
  Tensor<Real> cosine = div(dot, mul(na, nb));
  return mean_all(acos_clamp(cosine, clamp_margin));
}

/// Weighted sum over all subbands of all levels (LL included) of the mean
/// absolute subband difference.
template <typename Real>
Tensor<Real> swt_loss(const Tensor<Real>& y, const Tensor<Real>& y_hat,
                      const LossConfig& cfg) {
  cfg.validate();
  check_same_shape(y, y_hat, "swt_loss");
  auto py = swt_forward(y, cfg.swt_levels, cfg.swt_wavelet);
  auto ph = swt_forward(y_hat, cfg.swt_levels, cfg.swt_wavelet);
  auto sy = py.subbands();
  auto sh = ph.subbands();
  Tensor<Real> acc;
  for (std::size_t j = 0; j < sy.size(); ++j) {
    const double lj = cfg.lambda_j.empty() ? 1.0 : cfg.lambda_j[j];
    if (lj == 0.0) continue;
    Tensor<Real> term =
        scale(mean_all(abs_t(sub(*sy[j], *sh[j]))), static_cast<Real>(lj));
    acc = acc.defined() ? add(acc, term) : term;
  }
  if (!acc.defined()) acc = Tensor<Real>(Shape{1}, Real(0));
  return acc;
}

/// Total loss plus the raw (unweighted) term values for logging. Terms with
/// zero weight are neither computed nor added, so lambda1 = lambda2 = 0 is
/// exactly the L1 loss.
template <typename Real>
struct LossParts {
  Tensor<Real> total;
  double l1 = 0.0, sam = 0.0, swt = 0.0;
};

template <typename Real>
LossParts<Real> total_loss_parts(const Tensor<Real>& y,
                                 const Tensor<Real>& y_hat,
                                 const LossConfig& cfg) {
  cfg.validate();
  LossParts<Real> parts;
  parts.total = l1_loss(y, y_hat);
  parts.l1 = static_cast<double>(parts.total.data()[0]);
  if (cfg.lambda_sam > 0) {
    Tensor<Real> sam = sam_loss(y, y_hat, static_cast<Real>(cfg.sam_eps),
                                static_cast<Real>(cfg.sam_clamp));
    parts.sam = static_cast<double>(sam.data()[0]);
    parts.total =
        add(parts.total, scale(sam, static_cast<Real>(cfg.lambda_sam)));
  }
  if (cfg.lambda_swt > 0) {
    Tensor<Real> swt = swt_loss(y, y_hat, cfg);
    parts.swt = static_cast<double>(swt.data()[0]);
    parts.total =
        add(parts.total, scale(swt, static_cast<Real>(cfg.lambda_swt)));
  }
  return parts;
}

/// l1 + lambda1 * sam + lambda2 * swt.
template <typename Real>
Tensor<Real> total_loss(const Tensor<Real>& y, const Tensor<Real>& y_hat,
                        const LossConfig& cfg) {
  return total_loss_parts(y, y_hat, cfg).total;
}

}  // namespace hyfusion
