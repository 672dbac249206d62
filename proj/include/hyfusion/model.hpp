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

#include "hyfusion/attention.hpp"
#include "hyfusion/params.hpp"
#include "hyfusion/resample.hpp"

namespace hyfusion {

// ---------------------------------------------------------------------------
// The dual-coupled fusion network: two branches (SpeNet at HR extents,
// SpaNet at LR extents) each built from a shallow conv plus a chain of
// dense-connected ERFB blocks of ISTL stages, fused by channel concatenation
// and reconstructed with a 3x3 conv over a global bilinear residual.
// ---------------------------------------------------------------------------

struct ModelConfig {
  std::int64_t bands = 172;     // hyperspectral band count b
  std::int64_t msi_bands = 4;   // multispectral band count b_m (4 or 6)
  std::int64_t scale = 4;       // spatial ratio s between HR and LR
  std::int64_t channels = 32;   // base width C
  std::int64_t growth = 16;     // dense growth g
  std::int64_t blocks = 2;      // ERFB blocks per branch
  std::int64_t window = 8;      // attention window w
  std::int64_t shift = 4;       // SW-MSA shift s_w
  std::int64_t heads = 4;
  std::int64_t mlp_ratio = 2;
  double leaky_slope = 0.2;
  bool dense = true;                  // dense connections (ablation switch)
  bool spanet_upsample_after = true;  // upsample after (vs before) deep extraction

  static constexpr std::int64_t kDenseStages = 4;  // fixed by the recurrence

  /// Desk-scale default: full machinery at laptop-friendly width.
  static ModelConfig desk() { return ModelConfig{}; }

  /// Toy config for single-sample runs and fast experiments.
  static ModelConfig toy() {
    ModelConfig c;
    c.bands = 31;
    c.msi_bands = 4;
    c.channels = 16;
    c.growth = 8;
    c.blocks = 1;
    return c;
  }

  /// Micro config for exhaustive finite-difference checks.
  static ModelConfig micro() {
    ModelConfig c;
    c.bands = 3;
    c.msi_bands = 2;
    c.scale = 2;
    c.channels = 8;
    c.growth = 4;
    c.blocks = 1;
    c.window = 2;
    c.shift = 1;
    c.heads = 2;
    return c;
  }

  void validate() const {
    require(bands >= 1 && msi_bands >= 1 && scale >= 1 && channels >= 1 &&
                growth >= 1 && blocks >= 1 && window >= 1 && heads >= 1 &&
                mlp_ratio >= 1,
            "ModelConfig: extents must be positive");
    require(channels % heads == 0,
            "ModelConfig: channels must be divisible by heads");
    require(shift >= 1 && shift < window,
            "ModelConfig: shift must lie in [1, window-1]");
    require(leaky_slope > 0 && leaky_slope < 1,
            "ModelConfig: leaky slope must lie in (0,1)");
  }

  /// Input channels of dense stage j (1-based); the recurrence gives
  /// C + (j-1)*g, or just the previous stage's width when not dense.
  std::int64_t stage_in_channels(std::int64_t j) const {
    if (dense) return channels + (j - 1) * growth;
    return j == 1 ? channels : growth;
  }
  std::int64_t final_in_channels() const {
    return dense ? channels + kDenseStages * growth : growth;
  }
};

template <typename Real>
struct ErfbStageParams {
  Tensor<Real> proj_w, proj_b;  // 1x1 projection to C
  IstlParams<Real> istl;
  Tensor<Real> conv_w, conv_b;  // 3x3 fusion conv
};

template <typename Real>
struct ErfbParams {
  std::vector<ErfbStageParams<Real>> stages;  // 4 dense stages -> g channels
  ErfbStageParams<Real> final_stage;          // -> C channels, 0.2-scaled
};

/// Intermediate activations Z0..Z5 of one ERFB pass.
template <typename Real>
struct ErfbTrace {
  std::vector<Tensor<Real>> z;  // z[0] = block input, z[5] = block output
};

template <typename Real>
struct BranchParams {
  Tensor<Real> shallow_w, shallow_b;
  std::vector<ErfbParams<Real>> erfbs;
};

template <typename Real>
struct FusionOutput {
  Tensor<Real> y_star;
  Tensor<Real> z_h, z_m, z_hm;  // branch features and their concatenation
  std::vector<ErfbTrace<Real>> spe_traces, spa_traces;
};

namespace detail {

template <typename Real>
ErfbStageParams<Real> make_erfb_stage(ParamStore<Real>& store,
                                      const std::string& prefix,
                                      const ModelConfig& cfg,
                                      std::int64_t in_ch, std::int64_t out_ch) {
  ErfbStageParams<Real> p;
  p.proj_w = store.add(prefix + ".proj.weight", {cfg.channels, in_ch, 1, 1},
                       Init::fanin_uniform, in_ch);
  p.proj_b = store.add(prefix + ".proj.bias", {cfg.channels}, Init::zeros);
  p.istl = make_istl<Real>(store, prefix + ".istl", cfg.channels, cfg.heads,
                           cfg.window, cfg.shift, cfg.mlp_ratio,
                           static_cast<Real>(cfg.leaky_slope));
  p.conv_w = store.add(prefix + ".conv.weight", {out_ch, cfg.channels, 3, 3},
                       Init::fanin_uniform, 9 * cfg.channels);
  p.conv_b = store.add(prefix + ".conv.bias", {out_ch}, Init::zeros);
  return p;
}

template <typename Real>
ErfbParams<Real> make_erfb(ParamStore<Real>& store, const std::string& prefix,
                           const ModelConfig& cfg) {
  ErfbParams<Real> p;
  for (std::int64_t j = 1; j <= ModelConfig::kDenseStages; ++j)
    p.stages.push_back(make_erfb_stage(store,
                                       prefix + ".stage" + std::to_string(j),
                                       cfg, cfg.stage_in_channels(j),
                                       cfg.growth));
  p.final_stage = make_erfb_stage(store, prefix + ".final", cfg,
                                  cfg.final_in_channels(), cfg.channels);
  return p;
}

template <typename Real>
BranchParams<Real> make_branch(ParamStore<Real>& store,
                               const std::string& prefix,
                               const ModelConfig& cfg) {
  BranchParams<Real> p;
  const std::int64_t draft_ch = cfg.bands + cfg.msi_bands;
  p.shallow_w = store.add(prefix + ".shallow.weight",
                          {cfg.channels, draft_ch, 3, 3}, Init::fanin_uniform,
                          9 * draft_ch);
  p.shallow_b = store.add(prefix + ".shallow.bias", {cfg.channels},
                          Init::zeros);
  for (std::int64_t b = 0; b < cfg.blocks; ++b)
    p.erfbs.push_back(
        make_erfb(store, prefix + ".erfb" + std::to_string(b), cfg));
  return p;
}

}  // namespace detail

/// Quasi-spectral draft (SpeNet input): bilinear-upsampled LR-HSI stacked on
/// the HR-MSI, HSI channels first. [*,b,h,w] + [*,b_m,s*h,s*w] -> [*,b+b_m,H,W].
template <typename Real>
Tensor<Real> make_quasi_spectral_draft(const Tensor<Real>& x_h,
                                       const Tensor<Real>& x_m,
                                       std::int64_t scale) {
  const Shape& hs = x_h.shape();
  const Shape& ms = x_m.shape();
  require(hs.size() == 4 && ms.size() == 4 && hs[0] == ms[0],
          "make_quasi_spectral_draft: inputs must share batch");
  require(ms[2] == hs[2] * scale && ms[3] == hs[3] * scale,
          "make_quasi_spectral_draft: HR extents " + shape_str(ms) +
              " are not scale x LR extents " + shape_str(hs));
  Tensor<Real> up = upsample_bilinear(x_h, scale);
  return concat_channels<Real>({up, x_m});
}

/// Quasi-spatial draft (SpaNet input): LR-HSI stacked on bicubic-downsampled
/// HR-MSI, HSI channels first. -> [*, b+b_m, h, w].
template <typename Real>
Tensor<Real> make_quasi_spatial_draft(const Tensor<Real>& x_h,
                                      const Tensor<Real>& x_m,
                                      std::int64_t scale) {
  const Shape& hs = x_h.shape();
  const Shape& ms = x_m.shape();
  require(hs.size() == 4 && ms.size() == 4 && hs[0] == ms[0],
          "make_quasi_spatial_draft: inputs must share batch");
  require(ms[2] == hs[2] * scale && ms[3] == hs[3] * scale,
          "make_quasi_spatial_draft: HR extents " + shape_str(ms) +
              " are not scale x LR extents " + shape_str(hs));
  Tensor<Real> down = downsample_bicubic(x_m, scale);
  return concat_channels<Real>({x_h, down});
}

/// One ERFB pass. Stage j concatenates Z0..Z_{j-1} (or takes Z_{j-1} alone
/// when dense connections are ablated), projects to C with a 1x1 conv, runs
/// ISTL, then a 3x3 conv + LeakyReLU to g channels. The final stage maps the
/// accumulated features back to C, scales by 0.2 and adds Z0.
template <typename Real>
std::pair<Tensor<Real>, ErfbTrace<Real>> erfb_forward(
    const Tensor<Real>& z0, const ErfbParams<Real>& p, const ModelConfig& cfg) {
  require(z0.shape().size() == 4 && z0.shape()[1] == cfg.channels,
          "erfb_forward: input must be [N,C,H,W] with C = " +
              std::to_string(cfg.channels));
  ErfbTrace<Real> trace;
  trace.z.push_back(z0);
  std::vector<Tensor<Real>> feats{z0};
  for (std::size_t j = 0; j < p.stages.size(); ++j) {
    const auto& st = p.stages[j];
    Tensor<Real> in = cfg.dense
                          ? (feats.size() == 1 ? feats[0]
                                               : concat_channels<Real>(feats))
                          : feats.back();
    Tensor<Real> x = conv2d(in, st.proj_w, st.proj_b, 0);
    x = istl(x, st.istl);
    x = conv2d(x, st.conv_w, st.conv_b, 1);
    x = leaky_relu(x, static_cast<Real>(cfg.leaky_slope));
    feats.push_back(x);
    trace.z.push_back(x);
  }
  const auto& fs = p.final_stage;
  Tensor<Real> in = cfg.dense ? concat_channels<Real>(feats) : feats.back();
  Tensor<Real> x = conv2d(in, fs.proj_w, fs.proj_b, 0);
  x = istl(x, fs.istl);
  x = conv2d(x, fs.conv_w, fs.conv_b, 1);
  Tensor<Real> z5 = add(scale(x, Real(0.2)), z0);
  trace.z.push_back(z5);
  return {z5, trace};
}

/// Shallow 3x3 conv + LeakyReLU, then the configured ERFB chain.
template <typename Real>
Tensor<Real> branch_forward(const Tensor<Real>& draft,
                            const BranchParams<Real>& p,
                            const ModelConfig& cfg,
                            std::vector<ErfbTrace<Real>>* traces = nullptr) {
  Tensor<Real> x = conv2d(draft, p.shallow_w, p.shallow_b, 1);
  x = leaky_relu(x, static_cast<Real>(cfg.leaky_slope));
  for (const auto& erfb : p.erfbs) {
    auto [z5, trace] = erfb_forward(x, erfb, cfg);
    x = z5;
    if (traces) traces->push_back(std::move(trace));
  }
  return x;
}

/// Exact learnable-scalar count of the full model, from the same bookkeeping
/// the constructors use.
inline std::int64_t param_count(const ModelConfig& cfg) {
  cfg.validate();
  const std::int64_t C = cfg.channels, h = cfg.heads, w = cfg.window,
                     r = cfg.mlp_ratio;
  const std::int64_t attn = (3 * C * C + 3 * C) + (C * C + C) +
                            (2 * w - 1) * (2 * w - 1) * h;
  const std::int64_t path = 2 * C + attn + 2 * C + (r * C * C + r * C) +
                            (C * r * C + C);
  const std::int64_t istl_n = 2 * path + 2;
  auto stage = [&](std::int64_t cin, std::int64_t cout) {
    return (cin * C + C) + istl_n + (9 * C * cout + cout);
  };
  std::int64_t erfb = stage(cfg.final_in_channels(), C);
  for (std::int64_t j = 1; j <= ModelConfig::kDenseStages; ++j)
    erfb += stage(cfg.stage_in_channels(j), cfg.growth);
  const std::int64_t draft_ch = cfg.bands + cfg.msi_bands;
  const std::int64_t branch =
      (9 * draft_ch * C + C) + cfg.blocks * erfb;
  const std::int64_t rec = 9 * (2 * C) * cfg.bands + cfg.bands;
  return 2 * branch + rec;
}

template <typename Real>
class FusionModel {
 public:
  FusionModel(ModelConfig cfg, std::uint64_t seed)
      : cfg_(cfg), store_(seed) {
    cfg_.validate();
    spe_ = detail::make_branch(store_, "spe", cfg_);
    spa_ = detail::make_branch(store_, "spa", cfg_);
    // zero-init so the untrained model reproduces the bilinear baseline
    rec_w_ = store_.add("rec.weight", {cfg_.bands, 2 * cfg_.channels, 3, 3},
                        Init::zeros);
    rec_b_ = store_.add("rec.bias", {cfg_.bands}, Init::zeros);
  }

  const ModelConfig& config() const { return cfg_; }
  ParamStore<Real>& params() { return store_; }
  const ParamStore<Real>& params() const { return store_; }
  BranchParams<Real>& spe_params() { return spe_; }
  BranchParams<Real>& spa_params() { return spa_; }
  Tensor<Real>& rec_weight() { return rec_w_; }
  Tensor<Real>& rec_bias() { return rec_b_; }

  /// Full forward pass: Y* = f_Rec(Concat(Z_h, Z_m)) + bilinear(X_h).
  FusionOutput<Real> fuse(const Tensor<Real>& x_h, const Tensor<Real>& x_m,
                          bool want_traces = false) const {
    const Shape& hs = x_h.shape();
    const Shape& ms = x_m.shape();
    require(hs.size() == 4 && ms.size() == 4,
            "fuse: inputs must be [N,b,h,w] and [N,b_m,H,W]");
    require(hs[1] == cfg_.bands,
            "fuse: LR-HSI has " + std::to_string(hs[1]) + " bands, config says " +
                std::to_string(cfg_.bands));
    require(ms[1] == cfg_.msi_bands,
            "fuse: HR-MSI has " + std::to_string(ms[1]) +
                " bands, config says " + std::to_string(cfg_.msi_bands));

    FusionOutput<Real> out;
    Tensor<Real> spe_draft = make_quasi_spectral_draft(x_h, x_m, cfg_.scale);
    out.z_h = branch_forward(spe_draft, spe_, cfg_,
                             want_traces ? &out.spe_traces : nullptr);

    Tensor<Real> spa_draft = make_quasi_spatial_draft(x_h, x_m, cfg_.scale);
    if (cfg_.spanet_upsample_after) {
      out.z_m = branch_forward(spa_draft, spa_, cfg_,
                               want_traces ? &out.spa_traces : nullptr);
      out.z_m = upsample_bilinear(out.z_m, cfg_.scale);
    } else {
      out.z_m = branch_forward(upsample_bilinear(spa_draft, cfg_.scale), spa_,
                               cfg_, want_traces ? &out.spa_traces : nullptr);
    }

    out.z_hm = concat_channels<Real>({out.z_h, out.z_m});
    Tensor<Real> rec = conv2d(out.z_hm, rec_w_, rec_b_, 1);
    out.y_star = add(rec, upsample_bilinear(x_h, cfg_.scale));
    return out;
  }

 private:
  ModelConfig cfg_;
  ParamStore<Real> store_;
  BranchParams<Real> spe_, spa_;
  Tensor<Real> rec_w_, rec_b_;
};

}  // namespace hyfusion
