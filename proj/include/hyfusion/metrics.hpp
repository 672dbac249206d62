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

#include <iomanip>
#include <limits>

#include <json.hpp>

#include "hyfusion/cube.hpp"

namespace hyfusion {

// ---------------------------------------------------------------------------
// Evaluation metrics: PSNR (dB), SAM (degrees), RMSE (native units), ERGAS.
// All pure functions of two equally-shaped cubes.
// ---------------------------------------------------------------------------

inline void check_same_cube(const HsiCube& a, const HsiCube& b,
                            const char* op) {
  require(a.height == b.height && a.width == b.width && a.bands == b.bands,
          std::string(op) + ": cube extents differ");
}

inline double mse_of(const HsiCube& y, const HsiCube& y_hat) {
  double acc = 0;
  for (std::size_t i = 0; i < y.values.size(); ++i) {
    const double d = y.values[i] - y_hat.values[i];
    acc += d * d;
  }
  return acc / static_cast<double>(y.values.size());
}

/// 10*log10(peak^2 / MSE); +infinity when the cubes are identical.
inline double psnr(const HsiCube& y, const HsiCube& y_hat, double peak) {
  check_same_cube(y, y_hat, "psnr");
  require(peak > 0, "psnr: peak must be positive");
  const double mse = mse_of(y, y_hat);
  if (mse == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(peak * peak / mse);
}

/// Reference-peak default: max value of Y.
inline double default_peak(const HsiCube& y) {
  double m = y.values.empty() ? 1.0 : y.values[0];
  for (double v : y.values) m = std::max(m, v);
  require(m > 0, "default_peak: reference cube has non-positive peak");
  return m;
}

inline double rmse(const HsiCube& y, const HsiCube& y_hat) {
  check_same_cube(y, y_hat, "rmse");
  return std::sqrt(mse_of(y, y_hat));
}

/// Mean per-pixel spectral angle in degrees. Pixels where either spectrum is
/// all-zero are excluded from the mean; the excluded count is reported.
inline double sam_metric(const HsiCube& y, const HsiCube& y_hat,
                         std::int64_t* excluded_out = nullptr) {
  check_same_cube(y, y_hat, "sam_metric");
  const std::int64_t n = y.height * y.width, b = y.bands;
  double acc = 0;
  std::int64_t used = 0, excluded = 0;
  for (std::int64_t p = 0; p < n; ++p) {
    double dot = 0, na = 0, nb = 0;
    for (std::int64_t k = 0; k < b; ++k) {
      const double a = y.values[static_cast<std::size_t>(k * n + p)];
      const double c = y_hat.values[static_cast<std::size_t>(k * n + p)];
      dot += a * c;
      na += a * a;
      nb += c * c;
    }
    if (na == 0.0 || nb == 0.0) {
      ++excluded;
      continue;
    }
    double cosine = dot / (std::sqrt(na) * std::sqrt(nb));
    cosine = std::min(1.0, std::max(-1.0, cosine));
    acc += std::acos(cosine);
    ++used;
  }
  if (excluded_out) *excluded_out = excluded;
  require(used > 0, "sam_metric: every pixel had an all-zero spectrum");
  return acc / static_cast<double>(used) * (180.0 / 3.14159265358979323846);
}

/// 100 * (1/scale) * sqrt(mean_b (RMSE_b / mu_b)^2), mu_b = reference band
/// mean. Errors (naming the band) when any band mean is zero.
inline double ergas(const HsiCube& y, const HsiCube& y_hat, double scale) {
  check_same_cube(y, y_hat, "ergas");
  require(scale > 0, "ergas: scale ratio must be positive");
  const std::int64_t n = y.height * y.width;
  double acc = 0;
  for (std::int64_t b = 0; b < y.bands; ++b) {
    double mu = 0, se = 0;
    for (std::int64_t p = 0; p < n; ++p) {
      const double a = y.values[static_cast<std::size_t>(b * n + p)];
      const double c = y_hat.values[static_cast<std::size_t>(b * n + p)];
      mu += a;
      se += (a - c) * (a - c);
    }
    mu /= static_cast<double>(n);
    require(mu != 0.0,
            "ergas: reference band " + std::to_string(b) + " has zero mean");
    const double rmse_b = std::sqrt(se / static_cast<double>(n));
    acc += (rmse_b / mu) * (rmse_b / mu);
  }
  return 100.0 / scale *
         std::sqrt(acc / static_cast<double>(y.bands));
}

struct MetricReport {
  double psnr_db = 0;  // +inf sentinel when identical
  double sam_deg = 0;
  double rmse = 0;
  double ergas = 0;
  double data_peak = 0;
  double scale_ratio = 0;
  std::int64_t sam_excluded_pixels = 0;

  nlohmann::json to_json() const {
    nlohmann::json j;
    if (std::isinf(psnr_db))
      j["psnr_db"] = "+inf";
    else
      j["psnr_db"] = psnr_db;
    j["sam_deg"] = sam_deg;
    j["rmse"] = rmse;
    j["ergas"] = ergas;
    j["data_peak"] = data_peak;
    j["scale_ratio"] = scale_ratio;
    j["sam_excluded_pixels"] = sam_excluded_pixels;
    return j;
  }

  std::string to_table() const {
    std::ostringstream os;
    os << std::left;
    auto row = [&](const char* name, double v, const char* unit) {
      os << "  " << std::setw(10) << name;
      if (std::isinf(v))
        os << std::setw(14) << "+inf";
      else
        os << std::setw(14) << std::setprecision(6) << std::fixed << v;
      os << unit << "\n";
    };
    os << "metric      value         unit\n";
    row("PSNR", psnr_db, "dB");
    row("SAM", sam_deg, "deg");
    row("RMSE", rmse, "native");
    row("ERGAS", ergas, "-");
    return os.str();
  }
};

inline MetricReport evaluate_metrics(const HsiCube& y, const HsiCube& y_hat,
                                     double scale_ratio, double peak = 0.0) {
  MetricReport r;
  r.data_peak = peak > 0 ? peak : default_peak(y);
  r.scale_ratio = scale_ratio;
  r.psnr_db = psnr(y, y_hat, r.data_peak);
  r.sam_deg = sam_metric(y, y_hat, &r.sam_excluded_pixels);
  r.rmse = rmse(y, y_hat);
  r.ergas = ergas(y, y_hat, scale_ratio);
  return r;
}

}  // namespace hyfusion
