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

#include <json.hpp>

#include "hyfusion/model.hpp"

namespace hyfusion {

// ---------------------------------------------------------------------------
// Gradient-based effective receptive fields: seed a unit upstream gradient
// at the center output pixel (summed over channels), backpropagate to the
// input, accumulate |grad| over channels and random input samples, normalize
// the map to max 1.
// ---------------------------------------------------------------------------

template <typename Real>
struct ErfFragment {
  std::function<Tensor<Real>(const Tensor<Real>&)> forward;
  std::int64_t channels = 1;
  std::string tag;
};

struct ErfMap {
  std::int64_t height = 0, width = 0;
  std::int64_t center_y = 0, center_x = 0;
  std::vector<double> values;  // normalized to [0,1], max exactly 1
  std::string tag;
  std::uint64_t seed = 0;
  std::int64_t samples = 0;
  nlohmann::json metadata;

  double at(std::int64_t y, std::int64_t x) const {
    return values[static_cast<std::size_t>(y * width + x)];
  }
};

template <typename Real>
ErfMap erf_map(const ErfFragment<Real>& frag, std::int64_t height,
               std::int64_t width, std::int64_t samples, std::uint64_t seed) {
  require(samples >= 1, "erf_map: need at least one sample");
  require(height >= 1 && width >= 1, "erf_map: bad extents");
  Rng rng(seed);
  ErfMap map;
  map.height = height;
  map.width = width;
  map.center_y = height / 2;
  map.center_x = width / 2;
  map.tag = frag.tag;
  map.seed = seed;
  map.samples = samples;
  map.values.assign(static_cast<std::size_t>(height * width), 0.0);

  for (std::int64_t s = 0; s < samples; ++s) {
    Tensor<Real> input(Shape{1, frag.channels, height, width});
    for (auto& v : input.data())
      v = static_cast<Real>(rng.uniform(-1.0, 1.0));
    input.set_requires_grad(true);
    {
      Graph<Real> tape;
      Tensor<Real> out = frag.forward(input);
      require(out.shape() == input.shape(),
              "erf_map: fragment must preserve extents, got " +
                  shape_str(out.shape()));
      Tensor<Real> probe =
          sum_all(crop2d(out, map.center_y, map.center_x, 1, 1));
      tape.backward(probe);
    }
    const auto& g = *input.grad();
    for (std::int64_t c = 0; c < frag.channels; ++c)
      for (std::int64_t i = 0; i < height * width; ++i) {
        const double gv = static_cast<double>(
            g[static_cast<std::size_t>(c * height * width + i)]);
        require(std::isfinite(gv), "erf_map: non-finite gradient");
        map.values[static_cast<std::size_t>(i)] += std::abs(gv);
      }
  }
  double mx = 0;
  for (double v : map.values) mx = std::max(mx, v);
  require(mx > 0, "erf_map: gradient map is identically zero");
  for (auto& v : map.values) v /= mx;
  map.metadata = {{"tag", map.tag},
                  {"seed", seed},
                  {"samples", samples},
                  {"extents", {height, width}},
                  {"center", {map.center_y, map.center_x}},
                  {"probe", "unit upstream gradient at the center output "
                            "pixel summed over channels; |grad| accumulated "
                            "over channels and samples; max-normalized"},
                  {"input", "uniform(-1,1) per element"},
                  {"weights", "random initialization (untrained)"}};
  return map;
}

struct ErfStats {
  std::int64_t support_area = 0;
  double radius_p90 = 0;
};

/// Pixel count above tau and the radius holding 90% of the map mass.
inline ErfStats erf_stats(const ErfMap& map, double tau) {
  require(tau > 0 && tau < 1, "erf_stats: tau must lie in (0,1)");
  ErfStats st;
  std::vector<std::pair<double, double>> by_radius;  // (distance, value)
  double total = 0;
  for (std::int64_t y = 0; y < map.height; ++y)
    for (std::int64_t x = 0; x < map.width; ++x) {
      const double v = map.at(y, x);
      if (v > tau) ++st.support_area;
      const double dy = static_cast<double>(y - map.center_y);
      const double dx = static_cast<double>(x - map.center_x);
      by_radius.emplace_back(std::sqrt(dy * dy + dx * dx), v);
      total += v;
    }
  std::sort(by_radius.begin(), by_radius.end());
  double acc = 0;
  for (const auto& [r, v] : by_radius) {
    acc += v;
    if (acc >= 0.9 * total) {
      st.radius_p90 = r;
      break;
    }
  }
  return st;
}

/// True when every pixel of `inner`'s tau-support also lies in `outer`'s.
inline bool erf_support_subset(const ErfMap& inner, const ErfMap& outer,
                               double tau) {
  require(inner.height == outer.height && inner.width == outer.width,
          "erf_support_subset: map extents differ");
  for (std::size_t i = 0; i < inner.values.size(); ++i)
    if (inner.values[i] > tau && !(outer.values[i] > tau)) return false;
  return true;
}

inline std::int64_t erf_support_area(const ErfMap& map, double tau) {
  std::int64_t n = 0;
  for (double v : map.values)
    if (v > tau) ++n;
  return n;
}

/// 8-bit PGM with gamma 0.5 for visibility.
inline void write_pgm(const ErfMap& map, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  require(static_cast<bool>(os), "write_pgm: cannot open " + path.string());
  os << "P5\n" << map.width << " " << map.height << "\n255\n";
  for (double v : map.values) {
    const int byte =
        static_cast<int>(std::lround(255.0 * std::sqrt(std::max(0.0, v))));
    os.put(static_cast<char>(std::min(255, byte)));
  }
  require(static_cast<bool>(os), "write_pgm: write failed");
}

/// Raw CSV (full precision, one row per image row).
inline void write_erf_csv(const ErfMap& map, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::trunc);
  require(static_cast<bool>(os), "write_erf_csv: cannot open " + path.string());
  os.precision(17);
  for (std::int64_t y = 0; y < map.height; ++y) {
    for (std::int64_t x = 0; x < map.width; ++x)
      os << (x ? "," : "") << map.at(y, x);
    os << "\n";
  }
  require(static_cast<bool>(os), "write_erf_csv: write failed");
}

// ---------------------------------------------------------------------------
// The three compared configurations, built from ONE parameter draw so the
// support comparison is between matched initializations:
//   a) plain stack: no dense reuse, window attention only
//   b) dense connections, window attention only
//   c) dense connections + the two-path layer (the full block)
// (a) and (b) are realized by masking (c)'s parameters: zeroing beta2
// removes the shifted path; zeroing the projection columns of all but the
// immediately-preceding feature removes dense reuse. Masked weights are
// mathematically identical to removed connections.
// ---------------------------------------------------------------------------

// Defaults keep every config in the connectivity-crisp regime (see the
// notes below): tiny windows bound the per-hop softmax dilution at 1/4, the
// split gain keeps hull-interior values orders of magnitude above the
// support threshold, and positive weights rule out sign cancellation.
struct ErfFragmentConfig {
  std::int64_t channels = 8;
  std::int64_t growth = 4;
  std::int64_t window = 2;
  std::int64_t shift = 1;
  std::int64_t heads = 2;
  std::int64_t mlp_ratio = 2;
  double leaky_slope = 0.2;
  // Gain applied to weight matrices on top of the fan-in draw (biases and
  // norms untouched). Fan-in init decays gradient magnitude so fast that the
  // tau-support would measure attenuation, not connectivity; the split gain
  // keeps attention soft (qk) while strengthening the value/conv chain so
  // every reachable pixel stays above tau.
  double qk_gain = 1.0;
  double value_gain = 2.0;
  // Stage depth of the compared blocks. Per-hop gradient mass decays a few
  // decades per attention hop, so the pinned tau support reads connectivity
  // only while hull-edge values stay above tau; two dense stages plus the
  // final stage keep every config inside that crisp regime.
  std::int64_t stages = 2;
  // Positive weights stop sign cancellation along gradient paths, so the
  // accumulated |grad| mass spreads like a conserved quantity and the
  // tau-support reads connectivity instead of interference noise.
  bool positive_weights = true;
};

template <typename Real>
class ErfConfigSet {
 public:
  ErfConfigSet(const ErfFragmentConfig& fc, std::uint64_t seed)
      : store_(std::make_shared<ParamStore<Real>>(seed)) {
    require(fc.stages >= 1, "ErfConfigSet: need at least one stage");
    cfg_.bands = 1;  // unused by the block itself
    cfg_.msi_bands = 1;
    cfg_.channels = fc.channels;
    cfg_.growth = fc.growth;
    cfg_.blocks = 1;
    cfg_.window = fc.window;
    cfg_.shift = fc.shift;
    cfg_.heads = fc.heads;
    cfg_.mlp_ratio = fc.mlp_ratio;
    cfg_.leaky_slope = fc.leaky_slope;
    cfg_.dense = true;
    // like detail::make_erfb but with a configurable dense-stage count
    erfb_ = std::make_shared<ErfbParams<Real>>();
    for (std::int64_t j = 1; j <= fc.stages; ++j)
      erfb_->stages.push_back(detail::make_erfb_stage(
          *store_, "erfb.stage" + std::to_string(j), cfg_,
          cfg_.channels + (j - 1) * cfg_.growth, cfg_.growth));
    erfb_->final_stage = detail::make_erfb_stage(
        *store_, "erfb.final", cfg_,
        cfg_.channels + fc.stages * cfg_.growth, cfg_.channels);
    for (auto& [name, t] : store_->items()) {
      if (fc.positive_weights &&
          (name.ends_with("weight") || name.ends_with("w1") ||
           name.ends_with("w2")))
        for (auto& v : t.data()) v = std::abs(v);
      if (name.ends_with("qkv.weight")) {
        // rows [0, 2C): Q and K; rows [2C, 3C): V
        const std::int64_t C = cfg_.channels;
        for (std::int64_t o = 0; o < 3 * C; ++o)
          for (std::int64_t i = 0; i < C; ++i)
            t.data()[static_cast<std::size_t>(o * C + i)] *= static_cast<Real>(
                o < 2 * C ? fc.qk_gain : fc.value_gain);
      } else if (name.ends_with("out.weight") || name.ends_with("w1") ||
                 name.ends_with("w2") || name.ends_with("proj.weight") ||
                 name.ends_with("conv.weight")) {
        for (auto& v : t.data()) v *= static_cast<Real>(fc.value_gain);
      }
    }
    fc_ = fc;
  }

  const ErfFragmentConfig& fragment_config() const { return fc_; }

  /// config 'a' | 'b' | 'c'.
  ErfFragment<Real> fragment(char which) const {
    require(which == 'a' || which == 'b' || which == 'c',
            "ErfConfigSet: config must be one of a, b, c");
    auto store = store_;
    auto erfb = erfb_;
    ModelConfig cfg = cfg_;
    ErfFragment<Real> frag;
    frag.channels = cfg.channels;
    frag.tag = std::string(1, which);
    frag.forward = [store, erfb, cfg, which](const Tensor<Real>& x) {
      ErfbParams<Real> masked = mask_params(*erfb, cfg, which);
      auto [z5, trace] = erfb_forward(x, masked, cfg);
      return z5;
    };
    return frag;
  }

 private:
  static ErfbParams<Real> mask_params(const ErfbParams<Real>& src,
                                      const ModelConfig& cfg, char which) {
    ErfbParams<Real> p = src;  // shares tensor storage
    if (which == 'c') return p;
    auto zero_clone = [](Tensor<Real> t) {
      Tensor<Real> z = t.clone_values();
      std::fill(z.data().begin(), z.data().end(), Real(0));
      return z;
    };
    auto keep_last_g_columns = [&](const Tensor<Real>& w, std::int64_t cin) {
      Tensor<Real> masked = w.clone_values();
      const std::int64_t keep_from = cin - cfg.growth;
      for (std::int64_t o = 0; o < cfg.channels; ++o)
        for (std::int64_t i = 0; i < keep_from; ++i)
          masked.data()[static_cast<std::size_t>(o * cin + i)] = Real(0);
      return masked;
    };
    // b and a: remove the shifted-window path
    for (auto* st : stage_list(p)) st->istl.beta2 = zero_clone(st->istl.beta2);
    if (which == 'a') {
      // remove dense reuse: stage j reads only Z_{j-1}
      for (std::size_t j = 1; j < p.stages.size(); ++j)
        p.stages[j].proj_w = keep_last_g_columns(p.stages[j].proj_w,
                                                 p.stages[j].proj_w.shape()[1]);
      p.final_stage.proj_w = keep_last_g_columns(
          p.final_stage.proj_w, p.final_stage.proj_w.shape()[1]);
    }
    return p;
  }

  static std::vector<ErfbStageParams<Real>*> stage_list(ErfbParams<Real>& p) {
    std::vector<ErfbStageParams<Real>*> out;
    for (auto& st : p.stages) out.push_back(&st);
    out.push_back(&p.final_stage);
    return out;
  }

  ModelConfig cfg_;
  std::shared_ptr<ParamStore<Real>> store_;
  std::shared_ptr<ErfbParams<Real>> erfb_;
  ErfFragmentConfig fc_;
};

}  // namespace hyfusion
