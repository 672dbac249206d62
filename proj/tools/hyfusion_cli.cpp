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

#include <CLI11.hpp>
#include <json.hpp>
#include <iostream>

#include "hyfusion/config_json.hpp"
#include "hyfusion/erf.hpp"
#include "hyfusion/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace hyfusion;

namespace {

struct CommonOpts {
  std::string config_path;
  std::string out_dir;
  std::uint64_t seed = 0;
  bool seed_set = false;
  bool force = false;
  std::string precision = "double";
};

struct ConfigBundle {
  ModelConfig model;
  TrainConfig train;
  LossConfig loss;
  SceneSpec scene;
  json raw;  // the file contents, for the echo
};

ConfigBundle load_configs(const CommonOpts& o, ModelConfig base_model = {}) {
  ConfigBundle b;
  b.model = base_model;
  if (!o.config_path.empty()) {
    std::ifstream is(o.config_path);
    require(static_cast<bool>(is), "cannot open config file " + o.config_path);
    json j = json::parse(is, nullptr, false);
    require(!j.is_discarded(), "config file is not valid JSON: " + o.config_path);
    require(j.is_object(), "config file must hold a JSON object");
    for (const auto& [key, value] : j.items())
      require(key == "model" || key == "train" || key == "loss" ||
                  key == "scene",
              "config file: unknown section '" + key + "'");
    if (j.contains("model")) b.model = model_config_from_json(j["model"], b.model);
    if (j.contains("train")) b.train = train_config_from_json(j["train"], b.train);
    if (j.contains("loss")) b.loss = loss_config_from_json(j["loss"], b.loss);
    if (j.contains("scene")) b.scene = scene_spec_from_json(j["scene"], b.scene);
    b.raw = j;
  }
  if (o.seed_set) {
    b.train.seed = o.seed;
    b.scene.seed = o.seed;
  }
  return b;
}

std::string digest_of(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  require(static_cast<bool>(is), "cannot open input " + p.string());
  std::vector<char> bytes((std::istreambuf_iterator<char>(is)), {});
  char buf[19];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(fnv1a64(bytes.data(), bytes.size())));
  return buf;
}

/// Creates (or with --force reuses) the run directory. Returns true when
/// this invocation created it.
bool prepare_run_dir(const fs::path& dir, bool force, bool allow_existing = false) {
  if (fs::exists(dir)) {
    const bool empty = fs::is_directory(dir) && fs::is_empty(dir);
    require(empty || force || allow_existing,
            "output directory " + dir.string() +
                " exists and is not empty (use --force to overwrite)");
    return false;
  }
  fs::create_directories(dir);
  return true;
}

void write_run_info(const fs::path& dir, const std::string& command,
                    const ConfigBundle& cfg, std::uint64_t seed,
                    const std::map<std::string, std::string>& input_digests) {
  json info;
  info["tool"] = "hyfusion";
  info["version"] = kVersion;
  info["command"] = command;
  info["seed"] = seed;
  info["config"] = {{"model", to_json(cfg.model)},
                    {"train", to_json(cfg.train)},
                    {"loss", to_json(cfg.loss)},
                    {"scene", to_json(cfg.scene)}};
  json digests = json::object();
  for (const auto& [path, digest] : input_digests) digests[path] = digest;
  info["input_digests"] = digests;
  std::ofstream os(dir / "run_info.json", std::ios::trunc);
  require(static_cast<bool>(os), "cannot write run_info.json");
  os << info.dump(2) << "\n";
}

/// Rolls back a failed run: a directory we created is removed entirely; a
/// reused one keeps only what was там before this run started.
struct RunGuard {
  fs::path dir;
  std::vector<fs::path> preexisting;
  bool created = false;
  bool committed = false;

  explicit RunGuard(const fs::path& d, bool was_created) : dir(d), created(was_created) {
    if (!created && fs::exists(dir))
      for (const auto& e : fs::directory_iterator(dir))
        preexisting.push_back(e.path());
  }
  void commit() { committed = true; }
  ~RunGuard() {
    if (committed) return;
    std::error_code ec;
    if (created) {
      fs::remove_all(dir, ec);
    } else if (fs::exists(dir)) {
      for (const auto& e : fs::directory_iterator(dir)) {
        if (std::find(preexisting.begin(), preexisting.end(), e.path()) ==
            preexisting.end())
          fs::remove_all(e.path(), ec);
      }
    }
  }
};

int cmd_synth(const CommonOpts& o, std::int64_t count, std::int64_t msi_bands,
              const std::string& split) {
  ConfigBundle cfg = load_configs(o);
  cfg.scene.validate();
  double tr = 0.8, va = 0.1, te = 0.1;
  if (!split.empty()) {
    const int got = std::sscanf(split.c_str(), "%lf,%lf,%lf", &tr, &va, &te);
    require(got == 3 && tr > 0 && va >= 0 && te >= 0 &&
                std::abs(tr + va + te - 1.0) < 1e-9,
            "--split must be three fractions summing to 1, e.g. 0.8,0.1,0.1");
  }
  require(count >= 1, "--count must be >= 1");
  require(msi_bands >= 1 && msi_bands < cfg.scene.bands,
          "--bands must be >= 1 and below the scene band count");

  const fs::path dir(o.out_dir);
  RunGuard guard(dir, prepare_run_dir(dir, o.force));
  auto blur = BlurOperator::gaussian(cfg.model.scale);
  auto resp = SpectralResponse::block_average(cfg.scene.bands, msi_bands);

  std::vector<ManifestRecord> records;
  for (std::int64_t i = 0; i < count; ++i) {
    SceneSpec spec = cfg.scene;
    spec.seed = cfg.scene.seed + static_cast<std::uint64_t>(i);
    Sample s = make_pair(synth_scene(spec), blur, resp);
    ManifestRecord r;
    r.id = i;
    r.seed = spec.seed;
    const double frac = (static_cast<double>(i) + 0.5) / static_cast<double>(count);
    r.split = frac < tr ? "train" : (frac < tr + va ? "val" : "test");
    char name[64];
    std::snprintf(name, sizeof(name), "y%04lld.hsc", static_cast<long long>(i));
    r.y_path = name;
    std::snprintf(name, sizeof(name), "xh%04lld.hsc", static_cast<long long>(i));
    r.x_h_path = name;
    std::snprintf(name, sizeof(name), "xm%04lld.hsc", static_cast<long long>(i));
    r.x_m_path = name;
    write_cube(s.y, dir / r.y_path);
    write_cube(s.x_h, dir / r.x_h_path);
    write_cube(s.x_m, dir / r.x_m_path);
    records.push_back(std::move(r));
  }
  write_manifest(records, dir / "manifest.jsonl");
  write_run_info(dir, "synth", cfg, cfg.scene.seed, {});
  guard.commit();
  std::cout << "synth: wrote " << count << " scenes to " << dir.string() << "\n";
  return 0;
}

ModelConfig model_config_for_data(const ConfigBundle& cfg, const Dataset& ds) {
  ModelConfig m = cfg.model;
  require(!ds.train.empty() || !ds.test.empty() || !ds.val.empty(),
          "dataset is empty");
  const Sample& s = !ds.train.empty()
                        ? ds.train[0]
                        : (!ds.val.empty() ? ds.val[0] : ds.test[0]);
  m.bands = s.y.bands;
  m.msi_bands = s.x_m.bands;
  require(s.x_h.height > 0 && s.y.height % s.x_h.height == 0,
          "dataset pair extents are inconsistent");
  m.scale = s.y.height / s.x_h.height;
  m.validate();
  return m;
}

template <typename Real>
int run_train(const CommonOpts& o, const std::string& data, double fraction,
              bool resume) {
  ConfigBundle cfg = load_configs(o);
  Dataset ds = load_dataset(data);
  cfg.model = model_config_for_data(cfg, ds);
  if (fraction > 0) cfg.train.fraction = fraction;
  cfg.train.validate();

  const fs::path dir(o.out_dir);
  RunGuard guard(dir, prepare_run_dir(dir, o.force, /*allow_existing=*/resume));
  write_run_info(dir, "train", cfg, cfg.train.seed,
                 {{data, digest_of(data)}});

  FusionModel<Real> model(cfg.model, cfg.train.seed);
  TrainResult result = train(model, ds, cfg.train, cfg.loss, dir, resume);
  json summary{{"best_val_psnr", result.best_val_psnr},
               {"best_epoch", result.best_epoch},
               {"final_step", result.final_step},
               {"interrupted", result.interrupted}};
  std::ofstream os(dir / "train_summary.json", std::ios::trunc);
  os << summary.dump(2) << "\n";
  guard.commit();
  std::cout << "train: best val PSNR "
            << (result.best_val_psnr < 0 ? std::string("n/a")
                                         : std::to_string(result.best_val_psnr))
            << ", checkpoints under " << dir.string() << "\n";
  return 0;
}

/// Builds the model described by a checkpoint's config echo; errors when the
/// caller supplied a conflicting model section.
template <typename Real>
std::pair<FusionModel<Real>, CheckpointMeta> model_from_checkpoint(
    const fs::path& ckpt, const CommonOpts& o) {
  // peek at the manifest for the config echo
  std::ifstream mf(ckpt / "manifest.json");
  require(static_cast<bool>(mf), "cannot open checkpoint " + ckpt.string());
  json manifest = json::parse(mf, nullptr, false);
  require(!manifest.is_discarded() && manifest.contains("config"),
          "malformed checkpoint manifest in " + ckpt.string());
  ModelConfig mc = model_config_from_json(manifest["config"]["model"]);
  if (!o.config_path.empty()) {
    ConfigBundle given = load_configs(o, mc);
    require(to_json(given.model) == to_json(mc),
            "config mismatch: --config model section disagrees with the "
            "checkpoint's recorded model config");
  }
  FusionModel<Real> model(mc, 0);
  CheckpointMeta meta = load_checkpoint(
      ckpt, model.params(), static_cast<AdamMoments<Real>*>(nullptr));
  return {std::move(model), std::move(meta)};
}

template <typename Real>
int run_eval(const CommonOpts& o, const std::string& data,
             const std::string& ckpt) {
  Dataset ds = load_dataset(data);
  require(!ds.test.empty(), "eval: dataset has no test split");
  auto [model, meta] = model_from_checkpoint<Real>(ckpt, o);

  const fs::path dir(o.out_dir);
  RunGuard guard(dir, prepare_run_dir(dir, o.force));
  ConfigBundle echo;
  echo.model = model.config();
  write_run_info(dir, "eval", echo, meta.seed,
                 {{data, digest_of(data)},
                  {(fs::path(ckpt) / "params.bin").string(),
                   digest_of(fs::path(ckpt) / "params.bin")}});

  json per_sample = json::array();
  MetricReport mean;
  for (const auto& s : ds.test) {
    auto out = model.fuse(to_tensor<Real>(s.x_h), to_tensor<Real>(s.x_m));
    HsiCube y_hat = from_tensor(out.y_star, s.y.lo, s.y.hi);
    MetricReport r = evaluate_metrics(s.y, y_hat,
                                      static_cast<double>(model.config().scale));
    per_sample.push_back(r.to_json());
    mean.psnr_db += std::isinf(r.psnr_db) ? 200.0 : r.psnr_db;
    mean.sam_deg += r.sam_deg;
    mean.rmse += r.rmse;
    mean.ergas += r.ergas;
  }
  const auto n = static_cast<double>(ds.test.size());
  mean.psnr_db /= n;
  mean.sam_deg /= n;
  mean.rmse /= n;
  mean.ergas /= n;
  mean.scale_ratio = static_cast<double>(model.config().scale);
  mean.data_peak = 0;  // per-sample peaks; see the sample list

  json report{{"samples", per_sample},
              {"mean", mean.to_json()},
              {"test_count", ds.test.size()}};
  {
    std::ofstream os(dir / "report.json", std::ios::trunc);
    os << report.dump(2) << "\n";
  }
  {
    std::ofstream os(dir / "report.txt", std::ios::trunc);
    os << "mean over " << ds.test.size() << " test samples\n" << mean.to_table();
  }
  guard.commit();
  std::cout << "eval: mean PSNR " << mean.psnr_db << " dB, SAM " << mean.sam_deg
            << " deg over " << ds.test.size() << " samples\n";
  return 0;
}

template <typename Real>
int run_fuse(const CommonOpts& o, const std::string& ckpt,
             const std::string& xh_path, const std::string& xm_path) {
  auto [model, meta] = model_from_checkpoint<Real>(ckpt, o);
  HsiCube x_h = read_cube(xh_path);
  HsiCube x_m = read_cube(xm_path);

  const fs::path dir(o.out_dir);
  RunGuard guard(dir, prepare_run_dir(dir, o.force));
  ConfigBundle echo;
  echo.model = model.config();
  write_run_info(dir, "fuse", echo, meta.seed,
                 {{xh_path, digest_of(xh_path)}, {xm_path, digest_of(xm_path)}});

  auto out = model.fuse(to_tensor<Real>(x_h), to_tensor<Real>(x_m));
  HsiCube y = widen_range(from_tensor(out.y_star, x_h.lo, x_h.hi, x_h.wavelengths));
  write_cube(y, dir / "y_star.hsc");
  guard.commit();
  std::cout << "fuse: wrote " << (dir / "y_star.hsc").string() << " ("
            << y.height << "x" << y.width << "x" << y.bands << ")\n";
  return 0;
}

int cmd_erf(const CommonOpts& o, std::int64_t extents, std::int64_t samples,
            const std::string& configs, const std::string& ckpt) {
  const fs::path dir(o.out_dir);
  RunGuard guard(dir, prepare_run_dir(dir, o.force));
  ConfigBundle cfg = load_configs(o);
  const std::uint64_t seed = o.seed_set ? o.seed : 1;
  write_run_info(dir, "erf", cfg, seed, {});

  json stats = json::object();
  auto emit = [&](const ErfFragment<double>& frag, const std::string& tag) {
    ErfMap map = erf_map(frag, extents, extents, samples, seed);
    write_pgm(map, dir / ("erf_" + tag + ".pgm"));
    write_erf_csv(map, dir / ("erf_" + tag + ".csv"));
    ErfStats st = erf_stats(map, 1e-6);
    stats[tag] = {{"support_area", st.support_area},
                  {"radius_p90", st.radius_p90},
                  {"metadata", map.metadata}};
    return map;
  };

  if (!ckpt.empty()) {
    // trained-weight ERF of the first SpeNet block (exploratory flag)
    auto [model, meta] = model_from_checkpoint<double>(fs::path(ckpt), o);
    ModelConfig mc = model.config();
    auto& erfb = model.spe_params().erfbs[0];
    ErfFragment<double> frag;
    frag.channels = mc.channels;
    frag.tag = "trained";
    frag.forward = [&](const Tensor<double>& x) {
      auto [z5, trace] = erfb_forward(x, erfb, mc);
      return z5;
    };
    emit(frag, "trained");
  } else {
    ErfConfigSet<double> set(ErfFragmentConfig{}, seed);
    std::vector<ErfMap> maps;
    for (char which : configs) {
      require(which == 'a' || which == 'b' || which == 'c',
              "--configs must be a subset of 'abc'");
      maps.push_back(emit(set.fragment(which), std::string(1, which)));
    }
    if (configs == "abc") {
      stats["ordering"] = {
          {"a_subset_b", erf_support_subset(maps[0], maps[1], 1e-6)},
          {"b_subset_c", erf_support_subset(maps[1], maps[2], 1e-6)},
          {"strict_a_to_c",
           erf_support_subset(maps[0], maps[2], 1e-6) &&
               erf_support_area(maps[0], 1e-6) < erf_support_area(maps[2], 1e-6)}};
    }
  }
  std::ofstream os(dir / "erf_stats.json", std::ios::trunc);
  os << stats.dump(2) << "\n";
  guard.commit();
  std::cout << "erf: maps written to " << dir.string() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"hyfusion: dual-coupled hyperspectral/multispectral fusion"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string("hyfusion ") + kVersion);

  CommonOpts o;
  std::int64_t count = 10, msi_bands = 4, extents = 48, samples = 32;
  std::string data, ckpt, xh, xm, split, configs = "abc";
  double fraction = 0;
  bool resume = false;

  auto add_common = [&](CLI::App* cmd, bool needs_out = true) {
    cmd->add_option("--config", o.config_path, "JSON config file");
    auto* seed_opt = cmd->add_option("--seed", o.seed, "seed override");
    cmd->callback([&o, seed_opt]() { o.seed_set = seed_opt->count() > 0; });
    if (needs_out)
      cmd->add_option("--out", o.out_dir, "run directory")->required();
    cmd->add_flag("--force", o.force, "reuse a non-empty output directory");
  };

  auto* synth = app.add_subcommand("synth", "generate a synthetic dataset");
  add_common(synth);
  synth->add_option("--count", count, "number of scenes");
  synth->add_option("--bands", msi_bands, "MSI band count (4 or 6)");
  synth->add_option("--split", split, "train,val,test fractions (default 0.8,0.1,0.1)");

  auto* train_cmd = app.add_subcommand("train", "train a fusion model");
  add_common(train_cmd);
  train_cmd->add_option("--data", data, "dataset manifest")->required();
  train_cmd->add_option("--fraction", fraction, "training-data fraction");
  train_cmd->add_flag("--resume", resume, "resume from ckpt_last in --out");
  train_cmd->add_option("--precision", o.precision, "double|float");

  auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on the test split");
  add_common(eval_cmd);
  eval_cmd->add_option("--data", data, "dataset manifest")->required();
  eval_cmd->add_option("--ckpt", ckpt, "checkpoint directory")->required();
  eval_cmd->add_option("--precision", o.precision, "double|float");

  auto* fuse_cmd = app.add_subcommand("fuse", "fuse one LR-HSI/HR-MSI pair");
  add_common(fuse_cmd);
  fuse_cmd->add_option("--ckpt", ckpt, "checkpoint directory")->required();
  fuse_cmd->add_option("--xh", xh, "LR-HSI cube")->required();
  fuse_cmd->add_option("--xm", xm, "HR-MSI cube")->required();
  fuse_cmd->add_option("--precision", o.precision, "double|float");

  auto* erf_cmd = app.add_subcommand("erf", "effective receptive field maps");
  add_common(erf_cmd);
  erf_cmd->add_option("--extents", extents, "map extents");
  erf_cmd->add_option("--samples", samples, "random input samples");
  erf_cmd->add_option("--configs", configs, "subset of abc");
  erf_cmd->add_option("--ckpt", ckpt, "measure a trained checkpoint instead");

  CLI11_PARSE(app, argc, argv);
  require(o.precision == "double" || o.precision == "float",
          "--precision must be double or float");

  try {
    if (synth->parsed()) return cmd_synth(o, count, msi_bands, split);
    if (train_cmd->parsed())
      return o.precision == "double"
                 ? run_train<double>(o, data, fraction, resume)
                 : run_train<float>(o, data, fraction, resume);
    if (eval_cmd->parsed())
      return o.precision == "double" ? run_eval<double>(o, data, ckpt)
                                     : run_eval<float>(o, data, ckpt);
    if (fuse_cmd->parsed())
      return o.precision == "double" ? run_fuse<double>(o, ckpt, xh, xm)
                                     : run_fuse<float>(o, ckpt, xh, xm);
    if (erf_cmd->parsed()) return cmd_erf(o, extents, samples, configs, ckpt);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
