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

#include <filesystem>
#include <fstream>
#include <map>

#include <json.hpp>

#include "hyfusion/params.hpp"

namespace hyfusion {

// ---------------------------------------------------------------------------
// Checkpoints: a directory holding manifest.json (names, shapes, byte
// offsets, config echo, seed, rng state, schedule position) and params.bin,
// a little-endian IEEE-754 64-bit float blob. Round trips are bit-exact.
// ---------------------------------------------------------------------------

template <typename Real>
struct AdamState {
  typename Tensor<Real>::Storage m, v;  // first/second moments, one pair per parameter
};

template <typename Real>
using AdamMoments = std::vector<AdamState<Real>>;  // indexed like the store

struct CheckpointMeta {
  std::int64_t step = 0;
  std::int64_t epoch = 0;
  std::int64_t total_steps = 0;
  double best_val_psnr = -1.0;
  std::int64_t best_epoch = -1;
  std::uint64_t seed = 0;
  std::string rng_state;
  std::string init_scheme = kInitScheme;
  nlohmann::json config;  // {"model": ..., "train": ..., "loss": ...}
};

namespace detail {

inline void write_f64(std::ostream& os, double v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

inline double read_f64(std::istream& is, const char* what) {
  double v = 0;
  is.read(reinterpret_cast<char*>(&v), sizeof(v));
  require(static_cast<bool>(is), std::string("checkpoint: truncated blob at ") + what);
  return v;
}

}  // namespace detail

template <typename Real>
void save_checkpoint(const std::filesystem::path& dir,
                     const ParamStore<Real>& store,
                     const AdamMoments<Real>* adam, const CheckpointMeta& meta) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  nlohmann::json manifest;
  manifest["format"] = "HYCK1";
  manifest["version"] = kVersion;
  manifest["step"] = meta.step;
  manifest["epoch"] = meta.epoch;
  manifest["total_steps"] = meta.total_steps;
  manifest["best_val_psnr"] = meta.best_val_psnr;
  manifest["best_epoch"] = meta.best_epoch;
  manifest["seed"] = meta.seed;
  manifest["rng_state"] = meta.rng_state;
  manifest["init_scheme"] = meta.init_scheme;
  manifest["config"] = meta.config;
  manifest["has_optimizer"] = adam != nullptr;

  std::ofstream blob(dir / "params.bin", std::ios::binary | std::ios::trunc);
  require(static_cast<bool>(blob),
          "save_checkpoint: cannot open " + (dir / "params.bin").string());
  std::int64_t offset = 0;
  nlohmann::json tensors = nlohmann::json::array();
  auto emit = [&](const std::string& name, const Shape& shape,
                  const typename Tensor<Real>::Storage& values) {
    nlohmann::json t;
    t["name"] = name;
    t["shape"] = shape;
    t["offset"] = offset;
    t["count"] = static_cast<std::int64_t>(values.size());
    tensors.push_back(std::move(t));
    for (Real v : values) detail::write_f64(blob, static_cast<double>(v));
    offset += static_cast<std::int64_t>(values.size()) * 8;
  };
  for (const auto& [name, t] : store.items()) emit(name, t.shape(), t.data());
  if (adam) {
    require(adam->size() == store.items().size(),
            "save_checkpoint: optimizer state does not match parameters");
    for (std::size_t i = 0; i < adam->size(); ++i) {
      const auto& [name, t] = store.items()[i];
      emit("adam.m:" + name, t.shape(), (*adam)[i].m);
      emit("adam.v:" + name, t.shape(), (*adam)[i].v);
    }
  }
  manifest["tensors"] = std::move(tensors);
  blob.flush();
  require(static_cast<bool>(blob), "save_checkpoint: blob write failed");

  std::ofstream mf(dir / "manifest.json", std::ios::trunc);
  require(static_cast<bool>(mf),
          "save_checkpoint: cannot open " + (dir / "manifest.json").string());
  mf << manifest.dump(2) << "\n";
  require(static_cast<bool>(mf), "save_checkpoint: manifest write failed");
}

/// Loads a checkpoint into an existing store (shapes must match). When
/// `adam` is given the optimizer state is restored too (and must exist).
template <typename Real>
CheckpointMeta load_checkpoint(const std::filesystem::path& dir,
                               ParamStore<Real>& store,
                               AdamMoments<Real>* adam) {
  std::ifstream mf(dir / "manifest.json");
  require(static_cast<bool>(mf),
          "load_checkpoint: cannot open " + (dir / "manifest.json").string());
  nlohmann::json manifest = nlohmann::json::parse(mf, nullptr, false);
  require(!manifest.is_discarded(), "load_checkpoint: malformed manifest");
  require(manifest.value("format", "") == "HYCK1",
          "load_checkpoint: unrecognized checkpoint format");

  CheckpointMeta meta;
  meta.step = manifest.at("step").get<std::int64_t>();
  meta.epoch = manifest.at("epoch").get<std::int64_t>();
  meta.total_steps = manifest.at("total_steps").get<std::int64_t>();
  meta.best_val_psnr = manifest.at("best_val_psnr").get<double>();
  meta.best_epoch = manifest.at("best_epoch").get<std::int64_t>();
  meta.seed = manifest.at("seed").get<std::uint64_t>();
  meta.rng_state = manifest.at("rng_state").get<std::string>();
  meta.init_scheme = manifest.at("init_scheme").get<std::string>();
  meta.config = manifest.at("config");

  std::ifstream blob(dir / "params.bin", std::ios::binary);
  require(static_cast<bool>(blob),
          "load_checkpoint: cannot open " + (dir / "params.bin").string());

  std::map<std::string, nlohmann::json> index;
  for (const auto& t : manifest.at("tensors"))
    index[t.at("name").get<std::string>()] = t;

  auto read_into = [&](const std::string& name, const Shape& want_shape,
                       typename Tensor<Real>::Storage& out) {
    auto it = index.find(name);
    require(it != index.end(), "load_checkpoint: missing tensor " + name);
    const Shape shape = it->second.at("shape").get<Shape>();
    require(shape == want_shape,
            "load_checkpoint: shape mismatch for " + name + ": checkpoint " +
                shape_str(shape) + " vs model " + shape_str(want_shape));
    const auto count = it->second.at("count").get<std::int64_t>();
    require(count == static_cast<std::int64_t>(out.size()),
            "load_checkpoint: count mismatch for " + name);
    blob.seekg(it->second.at("offset").get<std::int64_t>());
    for (auto& v : out)
      v = static_cast<Real>(detail::read_f64(blob, name.c_str()));
  };

  for (auto& [name, t] : store.items()) read_into(name, t.shape(), t.data());
  if (adam) {
    require(manifest.value("has_optimizer", false),
            "load_checkpoint: checkpoint has no optimizer state");
    adam->clear();
    for (auto& [name, t] : store.items()) {
      AdamState<Real> st;
      st.m.resize(t.data().size());
      st.v.resize(t.data().size());
      read_into("adam.m:" + name, t.shape(), st.m);
      read_into("adam.v:" + name, t.shape(), st.v);
      adam->push_back(std::move(st));
    }
  }
  return meta;
}

}  // namespace hyfusion
