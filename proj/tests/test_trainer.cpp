#include <catch2/catch_amalgamated.hpp>

#include "hyfusion/trainer.hpp"

using namespace hyfusion;
namespace fs = std::filesystem;
using T = Tensor<double>;

namespace {

ModelConfig tiny_cfg() {
  ModelConfig c = ModelConfig::micro();  // bands 3, msi 2, scale 2, w 2
  return c;
}

Dataset tiny_dataset(int n_train, int n_val, std::uint64_t seed0) {
  auto blur = BlurOperator::gaussian(2);
  auto d = SpectralResponse::block_average(3, 2);
  Dataset ds;
  for (int i = 0; i < n_train + n_val; ++i) {
    SceneSpec spec;
    spec.seed = seed0 + static_cast<std::uint64_t>(i);
    spec.height = 16;
    spec.width = 16;
    spec.bands = 3;
    spec.endmembers = 3;
    spec.blob_count = 3;
    auto s = make_pair(synth_scene(spec), blur, d);
    (i < n_train ? ds.train : ds.val).push_back(std::move(s));
  }
  return ds;
}

std::vector<char> file_bytes(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  REQUIRE(static_cast<bool>(is));
  return std::vector<char>((std::istreambuf_iterator<char>(is)), {});
}

}  // namespace

TEST_CASE("adam closed-form behavior") {
  TrainConfig tc;
  SECTION("zero gradient from zero state leaves parameters unchanged") {
    ParamStore<double> store(1);
    auto& p = store.add("p", {3}, Init::ones);
    p.zero_grad();
    AdamMoments<double> st;
    adam_step(store, st, 1, 0.1, tc);
    for (double v : p.data()) CHECK(v == 1.0);
    // moments decay: feed one nonzero step then a zero step
    (*p.grad())[0] = 1.0;
    adam_step(store, st, 2, 0.0, tc);
    const double m_after = st[0].m[0];
    p.zero_grad();
    adam_step(store, st, 3, 0.0, tc);
    CHECK(st[0].m[0] == Catch::Approx(tc.adam_beta1 * m_after).margin(1e-18));
  }
  SECTION("first step with g=1, lr=0.1 moves by -0.1/(1+1e-8)") {
    ParamStore<double> store(1);
    auto& p = store.add("p", {1}, Init::zeros);
    (*p.grad())[0] = 1.0;
    AdamMoments<double> st;
    adam_step(store, st, 1, 0.1, tc);
    CHECK(p.data()[0] == Catch::Approx(-0.1 / (1.0 + 1e-8)).margin(1e-15));
  }
  SECTION("100-step quadratic matches an independent reference trace") {
    // reference: hand-rolled Adam on f(x) = 0.5 x^2 (gradient x)
    double x_ref = 1.3, m = 0, v = 0;
    std::vector<double> trace;
    for (int t = 1; t <= 100; ++t) {
      const double g = x_ref;
      m = 0.9 * m + 0.1 * g;
      v = 0.999 * v + 0.001 * g * g;
      const double mh = m / (1.0 - std::pow(0.9, t));
      const double vh = v / (1.0 - std::pow(0.999, t));
      x_ref -= 0.05 * mh / (std::sqrt(vh) + 1e-8);
      trace.push_back(x_ref);
    }
    ParamStore<double> store(1);
    auto& p = store.add("x", {1}, Init::zeros);
    p.data()[0] = 1.3;
    AdamMoments<double> st;
    for (int t = 1; t <= 100; ++t) {
      p.zero_grad();
      {
        Graph<double> tape;
        T loss = scale(mul(p, p), 0.5);
        tape.backward(loss);
      }
      adam_step(store, st, t, 0.05, tc);
      CHECK(p.data()[0] ==
            Catch::Approx(trace[static_cast<std::size_t>(t - 1)]).margin(1e-12));
    }
  }
  SECTION("non-finite gradients reject the step without mutation") {
    ParamStore<double> store(1);
    auto& p = store.add("p", {2}, Init::ones);
    (*p.grad())[0] = std::numeric_limits<double>::quiet_NaN();
    AdamMoments<double> st;
    CHECK_THROWS_AS(adam_step(store, st, 1, 0.1, tc), Error);
    for (double v : p.data()) CHECK(v == 1.0);
  }
}

TEST_CASE("cosine_lr schedule") {
  CHECK(cosine_lr(0, 1000, 1e-4, 0.0) == Catch::Approx(1e-4).margin(1e-18));
  CHECK(cosine_lr(500, 1000, 1e-4, 0.0) == Catch::Approx(5e-5).margin(1e-15));
  CHECK(cosine_lr(1000, 1000, 1e-4, 0.0) == Catch::Approx(0.0).margin(1e-18));
  CHECK(cosine_lr(1001, 1000, 1e-4, 2e-6) == 2e-6);
  CHECK(cosine_lr(0, 10, 1e-4, 1e-5) == Catch::Approx(1e-4));
  CHECK(cosine_lr(10, 10, 1e-4, 1e-5) == Catch::Approx(1e-5));
}

TEST_CASE("zero learning rate leaves parameters bit-identical") {
  auto ds = tiny_dataset(2, 1, 400);
  FusionModel<double> model(tiny_cfg(), 5);
  std::vector<double> before;
  for (auto& [n, t] : model.params().items())
    before.insert(before.end(), t.data().begin(), t.data().end());
  TrainConfig tc;
  tc.lr0 = 0.0;
  tc.lr_min = 0.0;
  tc.epochs = 2;
  tc.batch = 2;
  const fs::path dir = fs::temp_directory_path() / "hyf_train_lr0";
  fs::remove_all(dir);
  LossConfig lc;
  train(model, ds, tc, lc, dir);
  std::vector<double> after;
  for (auto& [n, t] : model.params().items())
    after.insert(after.end(), t.data().begin(), t.data().end());
  CHECK(before == after);
  fs::remove_all(dir);
}

TEST_CASE("loss on a fixed batch decreases over the first 20 steps") {
  auto ds = tiny_dataset(2, 0, 500);
  FusionModel<double> model(tiny_cfg(), 6);
  std::vector<const Sample*> batch{&ds.train[0], &ds.train[1]};
  auto tensors = stack_samples<double>(batch);
  LossConfig lc;
  TrainConfig tc;
  tc.lr0 = 1e-3;  // aggressive enough to move in 20 steps
  AdamMoments<double> adam;
  double first = 0, last = 0;
  for (int step = 0; step < 20; ++step) {
    Graph<double> tape;
    auto out = model.fuse(tensors.x_h, tensors.x_m);
    auto parts = total_loss_parts(tensors.y, out.y_star, lc);
    const double v = parts.total.data()[0];
    if (step == 0) first = v;
    last = v;
    model.params().zero_grads();
    tape.backward(parts.total);
    adam_step(model.params(), adam, step + 1, tc.lr0, tc);
  }
  CHECK(last < first);
}

TEST_CASE("training logs are deterministic per seed") {
  auto run = [&](const fs::path& dir) {
    auto ds = tiny_dataset(3, 1, 600);
    FusionModel<double> model(tiny_cfg(), 7);
    TrainConfig tc;
    tc.epochs = 2;
    tc.batch = 2;
    tc.seed = 11;
    LossConfig lc;
    fs::remove_all(dir);
    train(model, ds, tc, lc, dir);
    return file_bytes(dir / "log.jsonl");
  };
  const auto base = fs::temp_directory_path();
  auto a = run(base / "hyf_det_a");
  auto b = run(base / "hyf_det_b");
  CHECK(a == b);
  fs::remove_all(base / "hyf_det_a");
  fs::remove_all(base / "hyf_det_b");
}

TEST_CASE("checkpoint save/load round trip is bit-exact") {
  FusionModel<double> m1(tiny_cfg(), 8);
  AdamMoments<double> adam;
  // touch the moments with one real step
  auto ds = tiny_dataset(1, 0, 700);
  auto tensors = stack_samples<double>({&ds.train[0]});
  LossConfig lc;
  TrainConfig tc;
  {
    Graph<double> tape;
    auto parts = total_loss_parts(tensors.y, m1.fuse(tensors.x_h, tensors.x_m).y_star, lc);
    m1.params().zero_grads();
    tape.backward(parts.total);
    adam_step(m1.params(), adam, 1, 1e-4, tc);
  }
  CheckpointMeta meta;
  meta.step = 1;
  meta.epoch = 1;
  meta.total_steps = 10;
  meta.seed = 8;
  meta.rng_state = Rng(123).save_state();
  meta.config = {{"model", to_json(m1.config())}};
  const fs::path dir = fs::temp_directory_path() / "hyf_ckpt";
  fs::remove_all(dir);
  save_checkpoint(dir, m1.params(), &adam, meta);

  FusionModel<double> m2(tiny_cfg(), 999);  // different init, overwritten
  AdamMoments<double> adam2;
  CheckpointMeta back = load_checkpoint(dir, m2.params(), &adam2);
  CHECK(back.step == 1);
  CHECK(back.rng_state == meta.rng_state);
  for (std::size_t i = 0; i < m1.params().items().size(); ++i) {
    CHECK(m1.params().items()[i].second.data() ==
          m2.params().items()[i].second.data());
    CHECK(adam[i].m == adam2[i].m);
    CHECK(adam[i].v == adam2[i].v);
  }
  // saving again from the loaded state gives byte-identical blobs
  const fs::path dir2 = fs::temp_directory_path() / "hyf_ckpt2";
  fs::remove_all(dir2);
  save_checkpoint(dir2, m2.params(), &adam2, back);
  CHECK(file_bytes(dir / "params.bin") == file_bytes(dir2 / "params.bin"));
  fs::remove_all(dir);
  fs::remove_all(dir2);
}

TEST_CASE("interrupted training resumes bit-exactly") {
  const auto base = fs::temp_directory_path();
  const fs::path dir_full = base / "hyf_resume_full";
  const fs::path dir_split = base / "hyf_resume_split";
  fs::remove_all(dir_full);
  fs::remove_all(dir_split);

  TrainConfig tc;
  tc.epochs = 4;
  tc.batch = 2;
  tc.seed = 21;
  tc.augment = true;  // exercises rng state across the boundary
  tc.crop_h = 12;
  tc.crop_w = 12;
  LossConfig lc;

  auto ds = tiny_dataset(4, 2, 800);
  {
    FusionModel<double> model(tiny_cfg(), 31);
    train(model, ds, tc, lc, dir_full);
  }
  {
    FusionModel<double> model(tiny_cfg(), 31);
    TrainConfig tc_stop = tc;
    tc_stop.stop_after_epoch = 2;
    auto r = train(model, ds, tc_stop, lc, dir_split);
    CHECK(r.interrupted);
  }
  {
    FusionModel<double> model(tiny_cfg(), 777);  // init is overwritten
    auto r = train(model, ds, tc, lc, dir_split, /*resume=*/true);
    CHECK(r.final_step == 8);
  }
  CHECK(file_bytes(dir_full / "ckpt_last" / "params.bin") ==
        file_bytes(dir_split / "ckpt_last" / "params.bin"));
  CHECK(file_bytes(dir_full / "log.jsonl") ==
        file_bytes(dir_split / "log.jsonl"));
  fs::remove_all(dir_full);
  fs::remove_all(dir_split);
}

TEST_CASE("non-finite loss aborts with the last good checkpoint") {
  auto ds = tiny_dataset(2, 0, 900);
  FusionModel<double> model(tiny_cfg(), 12);
  model.rec_bias().data()[0] = std::numeric_limits<double>::quiet_NaN();
  TrainConfig tc;
  tc.epochs = 1;
  LossConfig lc;
  const fs::path dir = fs::temp_directory_path() / "hyf_abort";
  fs::remove_all(dir);
  CHECK_THROWS_AS(train(model, ds, tc, lc, dir), Error);
  CHECK(fs::exists(dir / "ckpt_abort" / "manifest.json"));
  fs::remove_all(dir);
}

TEST_CASE("resume rejects a mismatched config") {
  auto ds = tiny_dataset(2, 1, 950);
  const fs::path dir = fs::temp_directory_path() / "hyf_resume_bad";
  fs::remove_all(dir);
  TrainConfig tc;
  tc.epochs = 2;
  tc.stop_after_epoch = 1;
  LossConfig lc;
  {
    FusionModel<double> model(tiny_cfg(), 1);
    train(model, ds, tc, lc, dir);
  }
  FusionModel<double> model(tiny_cfg(), 1);
  TrainConfig tc2 = tc;
  tc2.stop_after_epoch = 0;
  tc2.lr0 = 5e-4;  // differs from the checkpointed run
  CHECK_THROWS_AS(train(model, ds, tc2, lc, dir, true), Error);
  fs::remove_all(dir);
}
