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

#include "hyfusion/cube.hpp"
#include "hyfusion/resample.hpp"

namespace hyfusion {

// ---------------------------------------------------------------------------
// Synthetic hyperspectral scenes: a linear mixing model with smooth random
// endmember spectra and simplex-valued abundance blob maps. Stands in for a
// real sensor corpus at desk scale.
// ---------------------------------------------------------------------------

struct SceneSpec {
  std::uint64_t seed = 0;
  std::int64_t height = 128;
  std::int64_t width = 128;
  std::int64_t bands = 31;
  std::int64_t endmembers = 5;       // E = 1 degenerates to a flat scene
  double spectral_smoothness = 4.0;  // Gaussian length-scale over band index
  std::int64_t blob_count = 6;
  double blob_softness = 0.25;       // blob sigma as a fraction of extent

  void validate() const {
    require(height > 0 && width > 0 && bands > 0,
            "SceneSpec: extents must be positive");
    require(endmembers >= 1, "SceneSpec: need at least one endmember");
    require(blob_count >= 1, "SceneSpec: need at least one blob");
    require(spectral_smoothness > 0 && blob_softness > 0,
            "SceneSpec: smoothness parameters must be positive");
  }
};

namespace detail {

/// Smooth endmember spectra in [0.05, 0.95], one per endmember.
inline std::vector<std::vector<double>> scene_spectra(const SceneSpec& spec,
                                                      Rng& rng) {
  std::vector<std::vector<double>> spectra;
  const std::int64_t B = spec.bands;
  const auto r =
      static_cast<std::int64_t>(std::ceil(3.0 * spec.spectral_smoothness));
  for (std::int64_t e = 0; e < spec.endmembers; ++e) {
    std::vector<double> raw(static_cast<std::size_t>(B));
    for (auto& v : raw) v = rng.normal();
    std::vector<double> smooth(static_cast<std::size_t>(B), 0.0);
    for (std::int64_t k = 0; k < B; ++k) {
      double acc = 0, wsum = 0;
      for (std::int64_t d = -r; d <= r; ++d) {
        const std::int64_t i = reflect(k + d, B);
        const double w =
            std::exp(-0.5 * static_cast<double>(d * d) /
                     (spec.spectral_smoothness * spec.spectral_smoothness));
        acc += w * raw[static_cast<std::size_t>(i)];
        wsum += w;
      }
      smooth[static_cast<std::size_t>(k)] = acc / wsum;
    }
    double mn = smooth[0], mx = smooth[0];
    for (double v : smooth) {
      mn = std::min(mn, v);
      mx = std::max(mx, v);
    }
    const double span = mx - mn;
    for (auto& v : smooth)
      v = span > 1e-12 ? 0.05 + 0.9 * (v - mn) / span : 0.5;
    spectra.push_back(std::move(smooth));
  }
  return spectra;
}

/// Raw (unnormalized) abundance blob fields, one per endmember.
inline std::vector<std::vector<double>> scene_fields(const SceneSpec& spec,
                                                     Rng& rng) {
  const std::int64_t H = spec.height, W = spec.width, n = H * W;
  std::vector<std::vector<double>> fields(
      static_cast<std::size_t>(spec.endmembers),
      std::vector<double>(static_cast<std::size_t>(n), 1e-3));
  if (spec.endmembers == 1) return fields;
  const double base_sigma =
      spec.blob_softness * static_cast<double>(std::min(H, W));
  for (auto& field : fields)
    for (std::int64_t blob = 0; blob < spec.blob_count; ++blob) {
      const double cy = rng.uniform(0, static_cast<double>(H));
      const double cx = rng.uniform(0, static_cast<double>(W));
      const double sigma = base_sigma * rng.uniform(0.6, 1.4);
      const double amp = rng.uniform(0.3, 1.0);
      for (std::int64_t y = 0; y < H; ++y)
        for (std::int64_t x = 0; x < W; ++x) {
          const double dy = static_cast<double>(y) - cy;
          const double dx = static_cast<double>(x) - cx;
          field[static_cast<std::size_t>(y * W + x)] +=
              amp * std::exp(-0.5 * (dy * dy + dx * dx) / (sigma * sigma));
        }
    }
  return fields;
}

}  // namespace detail

/// Ground-truth scene Y(p) = sum_e a_e(p) * s_e, clipped to [0,1].
/// Deterministic per seed; per-pixel abundances are non-negative and sum
/// to 1 by construction.
inline HsiCube synth_scene(const SceneSpec& spec) {
  spec.validate();
  Rng rng(spec.seed);
  const auto spectra = detail::scene_spectra(spec, rng);
  const auto fields = detail::scene_fields(spec, rng);
  const std::int64_t n = spec.height * spec.width;
  HsiCube cube(spec.height, spec.width, spec.bands);
  cube.lo = 0.0;
  cube.hi = 1.0;
  for (std::int64_t p = 0; p < n; ++p) {
    double total = 0;
    for (const auto& f : fields) total += f[static_cast<std::size_t>(p)];
    for (std::int64_t k = 0; k < spec.bands; ++k) {
      double v = 0;
      for (std::int64_t e = 0; e < spec.endmembers; ++e)
        v += fields[static_cast<std::size_t>(e)][static_cast<std::size_t>(p)] /
             total *
             spectra[static_cast<std::size_t>(e)][static_cast<std::size_t>(k)];
      cube.values[static_cast<std::size_t>(k * n + p)] =
          std::min(1.0, std::max(0.0, v));
    }
  }
  return cube;
}

/// Per-pixel abundance sums of a scene build (for the simplex invariant).
inline std::vector<double> scene_abundance_sums(const SceneSpec& spec) {
  spec.validate();
  Rng rng(spec.seed);
  detail::scene_spectra(spec, rng);  // consume the spectra draws
  const auto fields = detail::scene_fields(spec, rng);
  const std::int64_t n = spec.height * spec.width;
  std::vector<double> sums(static_cast<std::size_t>(n), 0.0);
  for (std::int64_t p = 0; p < n; ++p) {
    double total = 0;
    for (const auto& f : fields) total += f[static_cast<std::size_t>(p)];
    for (const auto& f : fields)
      sums[static_cast<std::size_t>(p)] += f[static_cast<std::size_t>(p)] / total;
  }
  return sums;
}

/// One training sample: ground truth plus its simulated observation pair.
struct Sample {
  HsiCube y;    // HR-HSI ground truth
  HsiCube x_h;  // LR-HSI
  HsiCube x_m;  // HR-MSI
};

/// Wald-protocol pair: X_h = blur+decimate(Y), X_m = band-mix(Y).
inline Sample make_pair(const HsiCube& y, const BlurOperator& blur,
                        const SpectralResponse& d) {
  Sample s;
  s.y = y;
  s.x_h = degrade_spatial(y, blur);
  s.x_m = degrade_spectral(y, d);
  return s;
}

struct AugmentConfig {
  std::int64_t crop_h = 0;  // HR crop extents; 0 keeps full size
  std::int64_t crop_w = 0;
  bool rotate = true;
};

namespace detail {

inline HsiCube rot90_cube(const HsiCube& c, int quarter_turns) {
  const int k = ((quarter_turns % 4) + 4) % 4;
  if (k == 0) return c;
  const std::int64_t H = c.height, W = c.width;
  const std::int64_t Ho = (k % 2 == 0) ? H : W;
  const std::int64_t Wo = (k % 2 == 0) ? W : H;
  HsiCube out(Ho, Wo, c.bands);
  out.lo = c.lo;
  out.hi = c.hi;
  out.wavelengths = c.wavelengths;
  for (std::int64_t b = 0; b < c.bands; ++b)
    for (std::int64_t y = 0; y < H; ++y)
      for (std::int64_t x = 0; x < W; ++x) {
        std::int64_t oy = 0, ox = 0;
        switch (k) {
          case 1:  // 90 deg counter-clockwise
            oy = W - 1 - x;
            ox = y;
            break;
          case 2:
            oy = H - 1 - y;
            ox = W - 1 - x;
            break;
          default:  // 270
            oy = x;
            ox = H - 1 - y;
            break;
        }
        out.at(b, oy, ox) = c.at(b, y, x);
      }
  return out;
}

inline HsiCube crop_cube(const HsiCube& c, std::int64_t y0, std::int64_t x0,
                         std::int64_t h, std::int64_t w) {
  require(y0 >= 0 && x0 >= 0 && y0 + h <= c.height && x0 + w <= c.width,
          "augment: crop window exceeds source extents");
  HsiCube out(h, w, c.bands);
  out.lo = c.lo;
  out.hi = c.hi;
  out.wavelengths = c.wavelengths;
  for (std::int64_t b = 0; b < c.bands; ++b)
    for (std::int64_t y = 0; y < h; ++y)
      for (std::int64_t x = 0; x < w; ++x)
        out.at(b, y, x) = c.at(b, y0 + y, x0 + x);
  return out;
}

}  // namespace detail

/// Applies one random crop + rotation consistently to (Y, X_h, X_m) so that
/// registration is preserved: the LR crop window is the HR window divided by
/// the scale, and all three rasters turn by the same multiple of 90 degrees.
inline Sample augment(const Sample& s, std::int64_t scale,
                      const AugmentConfig& cfg, Rng& rng) {
  require(scale >= 1, "augment: scale must be >= 1");
  require(s.y.height == s.x_h.height * scale &&
              s.y.width == s.x_h.width * scale &&
              s.y.height == s.x_m.height && s.y.width == s.x_m.width,
          "augment: sample rasters are not a registered pair");
  Sample out = s;
  if (cfg.crop_h > 0 || cfg.crop_w > 0) {
    const std::int64_t ch = cfg.crop_h > 0 ? cfg.crop_h : s.y.height;
    const std::int64_t cw = cfg.crop_w > 0 ? cfg.crop_w : s.y.width;
    require(ch % scale == 0 && cw % scale == 0,
            "augment: crop extents must be divisible by the scale");
    require(ch <= s.y.height && cw <= s.y.width,
            "augment: crop larger than source");
    const std::int64_t ly_max = s.x_h.height - ch / scale;
    const std::int64_t lx_max = s.x_h.width - cw / scale;
    const std::int64_t ly = ly_max > 0 ? static_cast<std::int64_t>(rng.below(
                                             static_cast<std::uint64_t>(ly_max + 1)))
                                       : 0;
    const std::int64_t lx = lx_max > 0 ? static_cast<std::int64_t>(rng.below(
                                             static_cast<std::uint64_t>(lx_max + 1)))
                                       : 0;
    out.x_h = detail::crop_cube(out.x_h, ly, lx, ch / scale, cw / scale);
    out.y = detail::crop_cube(out.y, ly * scale, lx * scale, ch, cw);
    out.x_m = detail::crop_cube(out.x_m, ly * scale, lx * scale, ch, cw);
  }
  if (cfg.rotate) {
    const int k = static_cast<int>(rng.below(4));
    out.y = detail::rot90_cube(out.y, k);
    out.x_h = detail::rot90_cube(out.x_h, k);
    out.x_m = detail::rot90_cube(out.x_m, k);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Dataset manifests: JSON lines, one record per sample.
// ---------------------------------------------------------------------------

struct ManifestRecord {
  std::int64_t id = 0;
  std::uint64_t seed = 0;
  std::string split;  // train | val | test
  std::string y_path, x_h_path, x_m_path;
};

inline void write_manifest(const std::vector<ManifestRecord>& records,
                           const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::trunc);
  require(static_cast<bool>(os), "write_manifest: cannot open " + path.string());
  for (const auto& r : records) {
    nlohmann::json j{{"id", r.id},
                     {"seed", r.seed},
                     {"split", r.split},
                     {"y", r.y_path},
                     {"x_h", r.x_h_path},
                     {"x_m", r.x_m_path}};
    os << j.dump() << "\n";
  }
  require(static_cast<bool>(os), "write_manifest: write failed");
}

inline std::vector<ManifestRecord> read_manifest(
    const std::filesystem::path& path) {
  std::ifstream is(path);
  require(static_cast<bool>(is), "read_manifest: cannot open " + path.string());
  std::vector<ManifestRecord> out;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
    require(!j.is_discarded(), "read_manifest: bad JSON line in " + path.string());
    ManifestRecord r;
    r.id = j.at("id").get<std::int64_t>();
    r.seed = j.at("seed").get<std::uint64_t>();
    r.split = j.at("split").get<std::string>();
    r.y_path = j.at("y").get<std::string>();
    r.x_h_path = j.at("x_h").get<std::string>();
    r.x_m_path = j.at("x_m").get<std::string>();
    require(r.split == "train" || r.split == "val" || r.split == "test",
            "read_manifest: unknown split tag '" + r.split + "'");
    out.push_back(std::move(r));
  }
  return out;
}

struct Dataset {
  std::vector<Sample> train, val, test;
};

/// Loads every cube referenced by a manifest; paths are relative to the
/// manifest's directory.
inline Dataset load_dataset(const std::filesystem::path& manifest_path) {
  const auto base = manifest_path.parent_path();
  Dataset ds;
  for (const auto& r : read_manifest(manifest_path)) {
    Sample s;
    s.y = read_cube(base / r.y_path);
    s.x_h = read_cube(base / r.x_h_path);
    s.x_m = read_cube(base / r.x_m_path);
    auto& bucket = r.split == "train" ? ds.train
                   : r.split == "val" ? ds.val
                                      : ds.test;
    bucket.push_back(std::move(s));
  }
  return ds;
}

}  // namespace hyfusion
