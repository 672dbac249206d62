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

#include "hyfusion/common.hpp"

namespace hyfusion {

struct TrainConfig {
  double lr0 = 1e-4;
  double lr_min = 0.0;  // cosine floor
  std::int64_t batch = 4;
  std::int64_t epochs = 50;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  std::uint64_t seed = 0;
  std::int64_t val_cadence = 1;  // validate every n epochs
  double fraction = 1.0;         // training-data fraction in (0, 1]
  double grad_clip = 0.0;        // global-norm clip; 0 disables
  bool augment = false;          // random crop + rotation per sample
  std::int64_t crop_h = 0;       // HR crop extents when augmenting (0 = full)
  std::int64_t crop_w = 0;
  std::int64_t stop_after_epoch = 0;  // 0 = run to `epochs`; else interrupt

  void validate() const {
    require(lr0 >= 0, "TrainConfig: lr0 must be >= 0");
    require(lr_min >= 0 && lr_min <= lr0 + 1e-300,
            "TrainConfig: need 0 <= lr_min <= lr0");
    require(batch >= 1, "TrainConfig: batch must be >= 1");
    require(epochs >= 1, "TrainConfig: epochs must be >= 1");
    require(adam_beta1 >= 0 && adam_beta1 < 1 && adam_beta2 >= 0 &&
                adam_beta2 < 1,
            "TrainConfig: adam betas must lie in [0,1)");
    require(adam_eps > 0, "TrainConfig: adam_eps must be > 0");
    require(val_cadence >= 1, "TrainConfig: val_cadence must be >= 1");
    require(fraction > 0 && fraction <= 1,
            "TrainConfig: fraction must lie in (0, 1]");
    require(grad_clip >= 0, "TrainConfig: grad_clip must be >= 0");
    require(stop_after_epoch >= 0 && stop_after_epoch <= epochs,
            "TrainConfig: stop_after_epoch must lie in [0, epochs]");
  }
};

/// Cosine annealing over total steps:
/// lr(t) = lr_min + (lr0 - lr_min) * (1 + cos(pi t / T)) / 2.
inline double cosine_lr(std::int64_t step, std::int64_t total_steps,
                        double lr0, double lr_min) {
  require(total_steps >= 1, "cosine_lr: total_steps must be >= 1");
  require(step >= 0, "cosine_lr: step must be >= 0");
  if (step > total_steps) return lr_min;  // clamped past the end
  const double t = static_cast<double>(step) / static_cast<double>(total_steps);
  return lr_min +
         0.5 * (lr0 - lr_min) * (1.0 + std::cos(3.14159265358979323846 * t));
}

}  // namespace hyfusion
