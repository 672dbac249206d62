#include <catch2/catch_amalgamated.hpp>

#include "hyfusion/losses.hpp"
#include "hyfusion/metrics.hpp"

using namespace hyfusion;

namespace {

HsiCube random_cube(std::int64_t h, std::int64_t w, std::int64_t b, Rng& rng,
                    double lo = 0.05, double hi = 1.0) {
  HsiCube c(h, w, b);
  for (auto& v : c.values) v = rng.uniform(lo, hi);
  return c;
}

}  // namespace

TEST_CASE("psnr examples") {
  Rng rng(90);
  HsiCube y = random_cube(4, 4, 3, rng);
  SECTION("identical cubes give the infinity sentinel") {
    CHECK(std::isinf(psnr(y, y, 1.0)));
    MetricReport r;
    r.psnr_db = std::numeric_limits<double>::infinity();
    CHECK(r.to_json()["psnr_db"] == "+inf");
  }
  SECTION("closed form: peak 1, MSE 0.01 -> 20 dB") {
    HsiCube z = y;
    for (auto& v : z.values) v = 0.0;
    HsiCube o = z;
    for (auto& v : o.values) v = 0.1;
    o.hi = 0.1;
    CHECK(psnr(z, o, 1.0) == Catch::Approx(20.0).margin(1e-12));
  }
  SECTION("random pair vs direct formula") {
    HsiCube z = random_cube(4, 4, 3, rng);
    double mse = 0;
    for (std::size_t i = 0; i < y.values.size(); ++i) {
      const double d = y.values[i] - z.values[i];
      mse += d * d;
    }
    mse /= static_cast<double>(y.values.size());
    const double want = 10.0 * std::log10(0.9 * 0.9 / mse);
    CHECK(psnr(y, z, 0.9) == Catch::Approx(want).margin(1e-10));
  }
}

TEST_CASE("sam_metric examples") {
  SECTION("identical cubes give ~0 degrees") {
    Rng rng(91);
    HsiCube y = random_cube(3, 3, 5, rng);
    CHECK(sam_metric(y, y) == Catch::Approx(0.0).margin(1e-4));
  }
  SECTION("orthogonal two-band pixel gives 90 degrees") {
    HsiCube y(1, 1, 2);
    y.values = {1.0, 0.0};
    HsiCube z(1, 1, 2);
    z.values = {0.0, 1.0};
    CHECK(sam_metric(y, z) == Catch::Approx(90.0).margin(1e-10));
  }
  SECTION("zero-spectrum pixels are excluded and counted") {
    Rng rng(92);
    HsiCube y = random_cube(2, 2, 3, rng);
    HsiCube z = y;
    for (std::int64_t b = 0; b < 3; ++b) y.at(b, 0, 0) = 0.0;
    std::int64_t excluded = 0;
    const double d = sam_metric(y, z, &excluded);
    CHECK(excluded == 1);
    CHECK(d == Catch::Approx(0.0).margin(1e-6));
    // all pixels excluded -> error
    HsiCube zero(2, 2, 3, 0.0);
    CHECK_THROWS_AS(sam_metric(zero, z), Error);
  }
  SECTION("degree-radian consistency with sam_loss") {
    Rng rng(93);
    HsiCube y = random_cube(4, 4, 6, rng, 0.2, 1.0);
    HsiCube z = random_cube(4, 4, 6, rng, 0.2, 1.0);
    const double rad =
        sam_loss(to_tensor(y), to_tensor(z), 1e-12, 1e-12).data()[0];
    CHECK(sam_metric(y, z) ==
          Catch::Approx(rad * 180.0 / 3.14159265358979323846).margin(1e-6));
  }
}

TEST_CASE("rmse examples and the psnr identity") {
  Rng rng(94);
  HsiCube y = random_cube(4, 4, 2, rng);
  SECTION("identical gives zero, constant offset gives |c|") {
    CHECK(rmse(y, y) == 0.0);
    HsiCube z = y;
    for (auto& v : z.values) v += 0.25;
    z.hi += 0.25;
    CHECK(rmse(y, z) == Catch::Approx(0.25).margin(1e-12));
  }
  SECTION("psnr == 20*log10(peak/rmse)") {
    HsiCube z = random_cube(4, 4, 2, rng);
    const double peak = default_peak(y);
    const double want = 20.0 * std::log10(peak / rmse(y, z));
    CHECK(psnr(y, z, peak) == Catch::Approx(want).margin(1e-10));
  }
  SECTION("argument symmetry") {
    HsiCube z = random_cube(4, 4, 2, rng);
    CHECK(rmse(y, z) == rmse(z, y));
    CHECK(sam_metric(y, z) == Catch::Approx(sam_metric(z, y)).margin(1e-12));
  }
}

TEST_CASE("ergas examples") {
  Rng rng(95);
  SECTION("identical cubes give zero") {
    HsiCube y = random_cube(4, 4, 3, rng);
    CHECK(ergas(y, y, 4.0) == 0.0);
  }
  SECTION("single band with RMSE equal to the band mean gives 25 at scale 4") {
    HsiCube y(2, 2, 1);
    y.values = {0.5, 0.5, 0.5, 0.5};
    HsiCube z = y;
    for (auto& v : z.values) v = 0.0;
    // RMSE_b = 0.5 = mu_b -> 100/4 * 1 = 25
    CHECK(ergas(y, z, 4.0) == Catch::Approx(25.0).margin(1e-12));
  }
  SECTION("random pair vs per-band oracle") {
    HsiCube y = random_cube(4, 4, 3, rng);
    HsiCube z = random_cube(4, 4, 3, rng);
    double acc = 0;
    for (std::int64_t b = 0; b < 3; ++b) {
      double mu = 0, se = 0;
      for (std::int64_t p = 0; p < 16; ++p) {
        mu += y.values[static_cast<std::size_t>(b * 16 + p)];
        const double d = y.values[static_cast<std::size_t>(b * 16 + p)] -
                         z.values[static_cast<std::size_t>(b * 16 + p)];
        se += d * d;
      }
      mu /= 16;
      acc += se / 16 / (mu * mu);
    }
    const double want = 100.0 / 4.0 * std::sqrt(acc / 3.0);
    CHECK(ergas(y, z, 4.0) == Catch::Approx(want).margin(1e-10));
  }
  SECTION("zero-mean band is an error naming the band") {
    HsiCube y(2, 2, 2, 0.0);
    for (std::int64_t p = 0; p < 4; ++p) y.values[static_cast<std::size_t>(p)] = 0.3;
    HsiCube z = y;
    try {
      ergas(y, z, 4.0);
      FAIL("expected error");
    } catch (const Error& e) {
      CHECK(std::string(e.what()).find("band 1") != std::string::npos);
    }
  }
}

TEST_CASE("error monotonicity: scaling the error field") {
  Rng rng(96);
  HsiCube y = random_cube(4, 4, 3, rng);
  HsiCube z = random_cube(4, 4, 3, rng);
  auto scaled_error = [&](double alpha) {
    HsiCube out = y;
    for (std::size_t i = 0; i < y.values.size(); ++i)
      out.values[i] = y.values[i] + alpha * (z.values[i] - y.values[i]);
    out.lo = -10;
    out.hi = 10;
    return out;
  };
  const double peak = default_peak(y);
  double prev_rmse = rmse(y, scaled_error(1.0));
  double prev_psnr = psnr(y, scaled_error(1.0), peak);
  for (double a : {1.5, 2.0, 3.0}) {
    const double r = rmse(y, scaled_error(a));
    const double p = psnr(y, scaled_error(a), peak);
    CHECK(r > prev_rmse);
    CHECK(p < prev_psnr);
    prev_rmse = r;
    prev_psnr = p;
  }
}

TEST_CASE("metric report renders a table and JSON") {
  Rng rng(97);
  HsiCube y = random_cube(4, 4, 3, rng);
  HsiCube z = random_cube(4, 4, 3, rng);
  MetricReport r = evaluate_metrics(y, z, 4.0);
  CHECK(r.to_json().contains("psnr_db"));
  CHECK(r.to_table().find("PSNR") != std::string::npos);
  CHECK(r.scale_ratio == 4.0);
  CHECK(r.data_peak == default_peak(y));
}
