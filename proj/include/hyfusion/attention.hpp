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

#include "hyfusion/params.hpp"
#include "hyfusion/tensor.hpp"

namespace hyfusion {

// ---------------------------------------------------------------------------
// Windowed multi-head self-attention (W-MSA), its shifted variant (SW-MSA)
// with cyclic shift + cross-region masking, and the two-path transformer
// layer combining them through learnable scalars.
// ---------------------------------------------------------------------------

inline constexpr double kAttnMaskValue = -1e9;

template <typename Real>
struct WindowAttentionParams {
  std::int64_t dim = 0;     // C
  std::int64_t heads = 1;   // h, divides C
  std::int64_t window = 8;  // w
  Tensor<Real> qkv_w;       // [3C, C]
  Tensor<Real> qkv_b;       // [3C]
  Tensor<Real> out_w;       // [C, C]
  Tensor<Real> out_b;       // [C]
  Tensor<Real> bias_table;  // [(2w-1)^2, heads]
  std::vector<std::int32_t> bias_index;  // [w^2 * w^2], values < (2w-1)^2
};

/// Relative-position index map: entry (i,j) addresses the bias-table row for
/// token offset (iy-jy, ix-jx) inside a w x w window.
inline std::vector<std::int32_t> relative_position_index(std::int64_t w) {
  std::vector<std::int32_t> idx(static_cast<std::size_t>(w * w * w * w));
  for (std::int64_t iy = 0; iy < w; ++iy)
    for (std::int64_t ix = 0; ix < w; ++ix)
      for (std::int64_t jy = 0; jy < w; ++jy)
        for (std::int64_t jx = 0; jx < w; ++jx) {
          const std::int64_t i = iy * w + ix, j = jy * w + jx;
          const std::int64_t rel =
              (iy - jy + w - 1) * (2 * w - 1) + (ix - jx + w - 1);
          idx[static_cast<std::size_t>(i * w * w + j)] =
              static_cast<std::int32_t>(rel);
        }
  return idx;
}

template <typename Real>
WindowAttentionParams<Real> make_window_attention(ParamStore<Real>& store,
                                                  const std::string& prefix,
                                                  std::int64_t dim,
                                                  std::int64_t heads,
                                                  std::int64_t window) {
  require(dim >= 1 && heads >= 1 && dim % heads == 0,
          "WindowAttentionParams: C must be divisible by heads");
  require(window >= 1, "WindowAttentionParams: window must be >= 1");
  WindowAttentionParams<Real> p;
  p.dim = dim;
  p.heads = heads;
  p.window = window;
  p.qkv_w = store.add(prefix + ".qkv.weight", {3 * dim, dim},
                      Init::fanin_uniform, dim);
  p.qkv_b = store.add(prefix + ".qkv.bias", {3 * dim}, Init::zeros);
  p.out_w = store.add(prefix + ".out.weight", {dim, dim}, Init::fanin_uniform,
                      dim);
  p.out_b = store.add(prefix + ".out.bias", {dim}, Init::zeros);
  p.bias_table = store.add(prefix + ".bias_table",
                           {(2 * window - 1) * (2 * window - 1), heads},
                           Init::zeros);
  p.bias_index = relative_position_index(window);
  return p;
}

/// Additive attention mask for shifted windows: tokens that came from
/// different pre-shift cells of the image must not attend. Cells are the
/// rectangles cut by the shifted window grid; the id image is rolled exactly
/// like the data and compared pairwise per window. Shape [nW, w^2, w^2].
template <typename Real>
Tensor<Real> make_shift_mask(std::int64_t H, std::int64_t W, std::int64_t w,
                             std::int64_t shift) {
  require(shift >= 1 && shift < w, "make_shift_mask: need 1 <= shift < w");
  require(H % w == 0 && W % w == 0, "make_shift_mask: extents must divide w");
  auto cell_of = [&](std::int64_t pos, std::int64_t) {
    // rolling by -shift makes window k cover original [k*w + shift,
    // (k+1)*w + shift), so cell boundaries sit at shift, shift+w, ...
    if (pos < shift) return std::int64_t(0);
    return (pos - shift) / w + 1;
  };
  Tensor<Real> ids(Shape{1, 1, H, W});
  for (std::int64_t y = 0; y < H; ++y)
    for (std::int64_t x = 0; x < W; ++x)
      ids.data()[static_cast<std::size_t>(y * W + x)] = static_cast<Real>(
          cell_of(y, H) * 1000 + cell_of(x, W));
  Tensor<Real> rolled = cyclic_shift(ids, -shift, -shift);
  Tensor<Real> win = window_partition(rolled, w);  // [nW, w^2, 1]
  const std::int64_t nW = win.shape()[0], T = w * w;
  Tensor<Real> mask(Shape{nW, T, T});
  for (std::int64_t b = 0; b < nW; ++b)
    for (std::int64_t i = 0; i < T; ++i)
      for (std::int64_t j = 0; j < T; ++j)
        mask.data()[static_cast<std::size_t>((b * T + i) * T + j)] =
            win.data()[static_cast<std::size_t>(b * T + i)] ==
                    win.data()[static_cast<std::size_t>(b * T + j)]
                ? Real(0)
                : static_cast<Real>(kAttnMaskValue);
  return mask;
}

/// Core windowed attention. `mask` may be undefined (W-MSA) or a per-window
/// additive mask (SW-MSA). When `attn_probs_out` is given, the post-softmax
/// attention tensor [B*nW*heads, w^2, w^2] is copied out for inspection.
template <typename Real>
Tensor<Real> windowed_attention(const Tensor<Real>& x,
                                const WindowAttentionParams<Real>& p,
                                const Tensor<Real>* mask,
                                Tensor<Real>* attn_probs_out = nullptr) {
  const Shape& s = x.shape();
  require(s.size() == 4, "windowed_attention: input must be [N,C,H,W]");
  require(s[1] == p.dim, "windowed_attention: channel mismatch");
  require(s[2] % p.window == 0 && s[3] % p.window == 0,
          "windowed_attention: window " + std::to_string(p.window) +
              " must divide extents " + shape_str(s) +
              " (the model pads upstream)");
  const std::int64_t N = s[0], C = s[1], H = s[2], W = s[3];
  const std::int64_t w = p.window, T = w * w, d = C / p.heads;

  Tensor<Real> win = window_partition(x, w);            // [Bw, T, C]
  Tensor<Real> qkv = linear(win, p.qkv_w, p.qkv_b);     // [Bw, T, 3C]
  Tensor<Real> q = split_heads(slice_lastdim(qkv, 0, C), p.heads);
  Tensor<Real> k = split_heads(slice_lastdim(qkv, C, C), p.heads);
  Tensor<Real> v = split_heads(slice_lastdim(qkv, 2 * C, C), p.heads);
  q = scale(q, static_cast<Real>(1.0 / std::sqrt(static_cast<double>(d))));
  Tensor<Real> scores = bmm(q, k, /*trans_b=*/true);    // [Bw*h, T, T]
  scores = add_rel_pos_bias(scores, p.bias_table, p.bias_index, p.heads);
  if (mask) scores = add_window_mask(scores, *mask, p.heads);
  Tensor<Real> probs = softmax_lastdim(scores);
  if (attn_probs_out) *attn_probs_out = probs.clone_values();
  Tensor<Real> ctx = merge_heads(bmm(probs, v, false), p.heads);
  Tensor<Real> out = linear(ctx, p.out_w, p.out_b);
  return window_merge(out, w, N, C, H, W);
}

/// Window attention with no shift.
template <typename Real>
Tensor<Real> w_msa(const Tensor<Real>& x, const WindowAttentionParams<Real>& p,
                   Tensor<Real>* attn_probs_out = nullptr) {
  return windowed_attention(x, p, static_cast<const Tensor<Real>*>(nullptr),
                             attn_probs_out);
}

/// Shifted-window attention: cyclic shift by (-shift,-shift), masked window
/// attention, inverse shift. shift = 0 degenerates to w_msa (mask disabled).
template <typename Real>
Tensor<Real> sw_msa(const Tensor<Real>& x, const WindowAttentionParams<Real>& p,
                    std::int64_t shift, Tensor<Real>* attn_probs_out = nullptr) {
  require(shift >= 0 && shift < p.window,
          "sw_msa: shift must satisfy 0 <= shift < window, got " +
              std::to_string(shift));
  if (shift == 0) return w_msa(x, p, attn_probs_out);
  const Shape& s = x.shape();
  require(s.size() == 4, "sw_msa: input must be [N,C,H,W]");
  Tensor<Real> mask = make_shift_mask<Real>(s[2], s[3], p.window, shift);
  Tensor<Real> shifted = cyclic_shift(x, -shift, -shift);
  Tensor<Real> out = windowed_attention(shifted, p, &mask, attn_probs_out);
  return cyclic_shift(out, shift, shift);
}

// ---------------------------------------------------------------------------
// Improved Swin Transformer Layer: two pre-norm transformer paths (W-MSA and
// SW-MSA) blended by learnable scalars beta1, beta2.
// ---------------------------------------------------------------------------

template <typename Real>
struct IstlPathParams {
  Tensor<Real> ln1_g, ln1_b;
  WindowAttentionParams<Real> attn;
  Tensor<Real> ln2_g, ln2_b;
  Tensor<Real> mlp_w1, mlp_b1;  // C -> r*C
  Tensor<Real> mlp_w2, mlp_b2;  // r*C -> C
};

template <typename Real>
struct IstlParams {
  IstlPathParams<Real> path_w;   // shift 0
  IstlPathParams<Real> path_sw;  // shift s_w
  Tensor<Real> beta1, beta2;     // [1] each, unconstrained
  std::int64_t shift = 0;        // s_w in [1, w-1]
  Real mlp_slope = Real(0.2);
  Real ln_eps = Real(1e-5);
};

template <typename Real>
IstlPathParams<Real> make_istl_path(ParamStore<Real>& store,
                                    const std::string& prefix,
                                    std::int64_t dim, std::int64_t heads,
                                    std::int64_t window, std::int64_t mlp_ratio) {
  IstlPathParams<Real> p;
  p.ln1_g = store.add(prefix + ".ln1.gamma", {dim}, Init::ones);
  p.ln1_b = store.add(prefix + ".ln1.beta", {dim}, Init::zeros);
  p.attn = make_window_attention(store, prefix + ".attn", dim, heads, window);
  p.ln2_g = store.add(prefix + ".ln2.gamma", {dim}, Init::ones);
  p.ln2_b = store.add(prefix + ".ln2.beta", {dim}, Init::zeros);
  const std::int64_t hidden = mlp_ratio * dim;
  p.mlp_w1 = store.add(prefix + ".mlp.w1", {hidden, dim}, Init::fanin_uniform,
                       dim);
  p.mlp_b1 = store.add(prefix + ".mlp.b1", {hidden}, Init::zeros);
  p.mlp_w2 = store.add(prefix + ".mlp.w2", {dim, hidden}, Init::fanin_uniform,
                       hidden);
  p.mlp_b2 = store.add(prefix + ".mlp.b2", {dim}, Init::zeros);
  return p;
}

template <typename Real>
IstlParams<Real> make_istl(ParamStore<Real>& store, const std::string& prefix,
                           std::int64_t dim, std::int64_t heads,
                           std::int64_t window, std::int64_t shift,
                           std::int64_t mlp_ratio, Real mlp_slope = Real(0.2)) {
  require(shift >= 1 && shift < window,
          "IstlParams: SW shift must lie in [1, w-1]");
  IstlParams<Real> p;
  p.path_w = make_istl_path(store, prefix + ".w", dim, heads, window, mlp_ratio);
  p.path_sw =
      make_istl_path(store, prefix + ".sw", dim, heads, window, mlp_ratio);
  p.beta1 = store.add(prefix + ".beta1", {1}, Init::ones);
  p.beta2 = store.add(prefix + ".beta2", {1}, Init::ones);
  p.shift = shift;
  p.mlp_slope = mlp_slope;
  return p;
}

/// One pre-norm transformer path: x + MSA(LN(x)), then + MLP(LN(.)).
template <typename Real>
Tensor<Real> istl_path(const Tensor<Real>& x, const IstlPathParams<Real>& p,
                       std::int64_t shift, Real mlp_slope, Real ln_eps) {
  const Shape& s = x.shape();
  const std::int64_t H = s[2], W = s[3];
  Tensor<Real> xt = nchw_to_tokens(x);
  Tensor<Real> n1 = layer_norm(xt, p.ln1_g, p.ln1_b, ln_eps);
  Tensor<Real> a = sw_msa(tokens_to_nchw(n1, H, W), p.attn, shift);
  Tensor<Real> t = add(x, a);
  Tensor<Real> tt = nchw_to_tokens(t);
  Tensor<Real> n2 = layer_norm(tt, p.ln2_g, p.ln2_b, ln_eps);
  Tensor<Real> m = linear(n2, p.mlp_w1, p.mlp_b1);
  m = leaky_relu(m, mlp_slope);
  m = linear(m, p.mlp_w2, p.mlp_b2);
  return add(t, tokens_to_nchw(m, H, W));
}

/// ISTL(x) = beta1 * Path_W(x) + beta2 * Path_SW(x). Extents that do not
/// divide the window are reflect-padded here and cropped after.
template <typename Real>
Tensor<Real> istl(const Tensor<Real>& x, const IstlParams<Real>& p) {
  const Shape& s = x.shape();
  require(s.size() == 4, "istl: input must be [N,C,H,W]");
  const std::int64_t w = p.path_w.attn.window;
  const std::int64_t H = s[2], W = s[3];
  const std::int64_t padb = (w - H % w) % w, padr = (w - W % w) % w;
  Tensor<Real> in = x;
  if (padb || padr) in = pad_reflect2d(x, 0, padb, 0, padr);
  Tensor<Real> pw = istl_path(in, p.path_w, 0, p.mlp_slope, p.ln_eps);
  Tensor<Real> psw = istl_path(in, p.path_sw, p.shift, p.mlp_slope, p.ln_eps);
  Tensor<Real> out =
      add(mul_scalar_t(pw, p.beta1), mul_scalar_t(psw, p.beta2));
  if (padb || padr) out = crop2d(out, 0, 0, H, W);
  return out;
}

}  // namespace hyfusion
