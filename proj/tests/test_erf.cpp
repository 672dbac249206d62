#include <catch2/catch_amalgamated.hpp>

#include "hyfusion/attention.hpp"
#include "hyfusion/erf.hpp"

using namespace hyfusion;
using T = Tensor<double>;
namespace fs = std::filesystem;

TEST_CASE("identity fragment yields a single-pixel map") {
  ErfFragment<double> frag;
  frag.channels = 2;
  frag.tag = "identity";
  frag.forward = [](const T& x) { return reshape(x, x.shape()); };
  ErfMap map = erf_map(frag, 9, 9, 4, 1);
  CHECK(map.at(4, 4) == 1.0);
  auto st = erf_stats(map, 1e-6);
  CHECK(st.support_area == 1);
  CHECK(st.radius_p90 == 0.0);
}

TEST_CASE("a single 3x3 convolution has a 3x3 footprint") {
  ParamStore<double> store(2);
  auto& w = store.add("w", {2, 2, 3, 3}, Init::fanin_uniform, 18);
  auto& b = store.add("b", {2}, Init::zeros);
  ErfFragment<double> frag;
  frag.channels = 2;
  frag.tag = "conv3";
  frag.forward = [&](const T& x) { return conv2d(x, w, b, 1); };
  ErfMap map = erf_map(frag, 9, 9, 4, 3);
  auto st = erf_stats(map, 1e-6);
  CHECK(st.support_area == 9);
  for (std::int64_t y = 0; y < 9; ++y)
    for (std::int64_t x = 0; x < 9; ++x) {
      const bool in_foot = std::abs(y - 4) <= 1 && std::abs(x - 4) <= 1;
      CHECK((map.at(y, x) > 1e-6) == in_foot);
    }
}

TEST_CASE("map is normalized, deterministic, and center-anchored") {
  ErfConfigSet<double> set(ErfFragmentConfig{}, 7);
  ErfMap m1 = erf_map(set.fragment('c'), 24, 24, 4, 5);
  ErfMap m2 = erf_map(set.fragment('c'), 24, 24, 4, 5);
  CHECK(m1.values == m2.values);
  double mx = 0;
  for (double v : m1.values) {
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
    mx = std::max(mx, v);
  }
  CHECK(mx == 1.0);
  // residual path makes the center self-dependent
  CHECK(m1.at(12, 12) == 1.0);
}

TEST_CASE("ERF support grows from single ISTL to shifted to dense block") {
  // the fusion-level monotonicity claim: nonzero-gradient support of
  //   (1) one two-path layer with the shifted path disabled
  //   (2) one two-path layer
  //   (3) a 4-stage dense block
  // strictly grows, measured at matched extents and seed
  const std::int64_t H = 48, W = 48;
  ErfFragmentConfig fc;
  fc.window = 8;
  fc.shift = 4;
  fc.stages = 4;  // the block named by the claim
  ErfConfigSet<double> set(fc, 11);

  ParamStore<double> istl_store(11);
  auto istl_params = make_istl<double>(istl_store, "one", 8, 2, 8, 4, 2);

  ErfFragment<double> istl_noshift;
  istl_noshift.channels = 8;
  istl_noshift.tag = "istl_w_only";
  istl_noshift.forward = [&](const T& x) {
    IstlParams<double> p = istl_params;
    p.beta2 = T::from_data({1}, {0.0});
    return istl(x, p);
  };
  ErfFragment<double> istl_full;
  istl_full.channels = 8;
  istl_full.tag = "istl";
  istl_full.forward = [&](const T& x) { return istl(x, istl_params); };

  ErfMap m1 = erf_map(istl_noshift, H, W, 8, 3);
  ErfMap m2 = erf_map(istl_full, H, W, 8, 3);
  ErfMap m3 = erf_map(set.fragment('c'), H, W, 8, 3);

  const double tau = 1e-6;
  CHECK(erf_support_subset(m1, m2, tau));
  CHECK(erf_support_subset(m2, m3, tau));
  CHECK(erf_support_area(m1, tau) < erf_support_area(m2, tau));
  CHECK(erf_support_area(m2, tau) < erf_support_area(m3, tau));
}

TEST_CASE("config ordering a/b/c: support nests with strict a-to-c growth") {
  ErfFragmentConfig fc;
  const double tau = 1e-6;
  for (std::uint64_t seed : {1ull, 2ull}) {
    ErfConfigSet<double> set(fc, seed);
    ErfMap ma = erf_map(set.fragment('a'), 48, 48, 8, seed);
    ErfMap mb = erf_map(set.fragment('b'), 48, 48, 8, seed);
    ErfMap mc = erf_map(set.fragment('c'), 48, 48, 8, seed);
    INFO("seed " << seed);
    CHECK(erf_support_subset(ma, mb, tau));
    CHECK(erf_support_subset(mb, mc, tau));
    CHECK(erf_support_area(ma, tau) < erf_support_area(mc, tau));
    auto sa = erf_stats(ma, tau);
    auto sc = erf_stats(mc, tau);
    CHECK(sc.support_area >= sa.support_area);
    CHECK(sc.radius_p90 >= sa.radius_p90);
  }
}

TEST_CASE("pgm and csv exports") {
  ErfFragment<double> frag;
  frag.channels = 1;
  frag.tag = "identity";
  frag.forward = [](const T& x) { return reshape(x, x.shape()); };
  ErfMap map = erf_map(frag, 5, 5, 1, 1);
  const fs::path dir = fs::temp_directory_path() / "hyf_erf_io";
  fs::create_directories(dir);
  write_pgm(map, dir / "m.pgm");
  write_erf_csv(map, dir / "m.csv");
  {
    std::ifstream is(dir / "m.pgm", std::ios::binary);
    std::string header;
    std::getline(is, header);
    CHECK(header == "P5");
  }
  {
    std::ifstream is(dir / "m.csv");
    std::string line;
    int rows = 0;
    while (std::getline(is, line)) {
      ++rows;
      CHECK(std::count(line.begin(), line.end(), ',') == 4);
    }
    CHECK(rows == 5);
  }
  CHECK(map.metadata.contains("probe"));
  fs::remove_all(dir);
}
