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

#include <set>

#include <json.hpp>

#include "hyfusion/data.hpp"
#include "hyfusion/losses.hpp"
#include "hyfusion/model.hpp"
#include "hyfusion/trainer_config.hpp"

namespace hyfusion {

// ---------------------------------------------------------------------------
// JSON (de)serialization of every config struct. Parsing is strict: unknown
// keys are errors, so config-file typos never pass silently.
// ---------------------------------------------------------------------------

namespace detail {

class StrictReader {
 public:
  StrictReader(const nlohmann::json& j, std::string where)
      : j_(j), where_(std::move(where)) {
    require(j.is_object(), where_ + ": expected a JSON object");
  }

  template <typename T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end()) return;  // keep the default
    try {
      out = it->get<T>();
    } catch (const nlohmann::json::exception&) {
      fail(where_ + ": bad value type for key '" + std::string(key) + "'");
    }
  }

  void finish() const {
    for (const auto& [key, value] : j_.items())
      require(seen_.count(key) != 0,
              where_ + ": unknown key '" + key + "'");
  }

 private:
  const nlohmann::json& j_;
  std::string where_;
  std::set<std::string> seen_;
};

}  // namespace detail

inline nlohmann::json to_json(const ModelConfig& c) {
  return nlohmann::json{{"bands", c.bands},
                        {"msi_bands", c.msi_bands},
                        {"scale", c.scale},
                        {"channels", c.channels},
                        {"growth", c.growth},
                        {"blocks", c.blocks},
                        {"window", c.window},
                        {"shift", c.shift},
                        {"heads", c.heads},
                        {"mlp_ratio", c.mlp_ratio},
                        {"leaky_slope", c.leaky_slope},
                        {"dense", c.dense},
                        {"spanet_upsample_after", c.spanet_upsample_after}};
}

inline ModelConfig model_config_from_json(const nlohmann::json& j,
                                          ModelConfig base = {}) {
  detail::StrictReader r(j, "model config");
  r.get("bands", base.bands);
  r.get("msi_bands", base.msi_bands);
  r.get("scale", base.scale);
  r.get("channels", base.channels);
  r.get("growth", base.growth);
  r.get("blocks", base.blocks);
  r.get("window", base.window);
  r.get("shift", base.shift);
  r.get("heads", base.heads);
  r.get("mlp_ratio", base.mlp_ratio);
  r.get("leaky_slope", base.leaky_slope);
  r.get("dense", base.dense);
  r.get("spanet_upsample_after", base.spanet_upsample_after);
  r.finish();
  base.validate();
  return base;
}

inline nlohmann::json to_json(const LossConfig& c) {
  return nlohmann::json{{"lambda_sam", c.lambda_sam},
                        {"lambda_swt", c.lambda_swt},
                        {"lambda_j", c.lambda_j},
                        {"sam_eps", c.sam_eps},
                        {"sam_clamp", c.sam_clamp},
                        {"swt_levels", c.swt_levels},
                        {"swt_wavelet", wavelet_name(c.swt_wavelet)}};
}

inline LossConfig loss_config_from_json(const nlohmann::json& j,
                                        LossConfig base = {}) {
  detail::StrictReader r(j, "loss config");
  r.get("lambda_sam", base.lambda_sam);
  r.get("lambda_swt", base.lambda_swt);
  r.get("lambda_j", base.lambda_j);
  r.get("sam_eps", base.sam_eps);
  r.get("sam_clamp", base.sam_clamp);
  r.get("swt_levels", base.swt_levels);
  std::string wname = wavelet_name(base.swt_wavelet);
  r.get("swt_wavelet", wname);
  base.swt_wavelet = wavelet_from_name(wname);
  r.finish();
  base.validate();
  return base;
}

inline nlohmann::json to_json(const TrainConfig& c) {
  return nlohmann::json{{"lr0", c.lr0},
                        {"lr_min", c.lr_min},
                        {"batch", c.batch},
                        {"epochs", c.epochs},
                        {"adam_beta1", c.adam_beta1},
                        {"adam_beta2", c.adam_beta2},
                        {"adam_eps", c.adam_eps},
                        {"seed", c.seed},
                        {"val_cadence", c.val_cadence},
                        {"fraction", c.fraction},
                        {"grad_clip", c.grad_clip},
                        {"augment", c.augment},
                        {"crop_h", c.crop_h},
                        {"crop_w", c.crop_w},
                        {"stop_after_epoch", c.stop_after_epoch}};
}

inline TrainConfig train_config_from_json(const nlohmann::json& j,
                                          TrainConfig base = {}) {
  detail::StrictReader r(j, "train config");
  r.get("lr0", base.lr0);
  r.get("lr_min", base.lr_min);
  r.get("batch", base.batch);
  r.get("epochs", base.epochs);
  r.get("adam_beta1", base.adam_beta1);
  r.get("adam_beta2", base.adam_beta2);
  r.get("adam_eps", base.adam_eps);
  r.get("seed", base.seed);
  r.get("val_cadence", base.val_cadence);
  r.get("fraction", base.fraction);
  r.get("grad_clip", base.grad_clip);
  r.get("augment", base.augment);
  r.get("crop_h", base.crop_h);
  r.get("crop_w", base.crop_w);
  r.get("stop_after_epoch", base.stop_after_epoch);
  r.finish();
  base.validate();
  return base;
}

inline nlohmann::json to_json(const SceneSpec& c) {
  return nlohmann::json{{"seed", c.seed},
                        {"height", c.height},
                        {"width", c.width},
                        {"bands", c.bands},
                        {"endmembers", c.endmembers},
                        {"spectral_smoothness", c.spectral_smoothness},
                        {"blob_count", c.blob_count},
                        {"blob_softness", c.blob_softness}};
}

inline SceneSpec scene_spec_from_json(const nlohmann::json& j,
                                      SceneSpec base = {}) {
  detail::StrictReader r(j, "scene spec");
  r.get("seed", base.seed);
  r.get("height", base.height);
  r.get("width", base.width);
  r.get("bands", base.bands);
  r.get("endmembers", base.endmembers);
  r.get("spectral_smoothness", base.spectral_smoothness);
  r.get("blob_count", base.blob_count);
  r.get("blob_softness", base.blob_softness);
  r.finish();
  base.validate();
  return base;
}

}  // namespace hyfusion
