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

#include "hyfusion/checkpoint.hpp"
#include "hyfusion/config_json.hpp"
#include "hyfusion/data.hpp"
#include "hyfusion/losses.hpp"
#include "hyfusion/metrics.hpp"
#include "hyfusion/model.hpp"
#include "hyfusion/trainer_config.hpp"

namespace hyfusion {

// ---------------------------------------------------------------------------
// Optimization loop: ADAM with bias correction, per-step cosine annealing,
// deterministic shuffling, JSON-lines logging, best/last checkpoints, and
// bit-exact resume.
// ---------------------------------------------------------------------------

/// One bias-corrected ADAM update over every parameter. Rejects the whole
/// step (throwing, mutating nothing) when any gradient is non-finite.
template <typename Real>
void adam_step(ParamStore<Real>& store, AdamMoments<Real>& state,
               std::int64_t t, double lr, const TrainConfig& cfg) {
  require(t >= 1, "adam_step: step index is 1-based");
  auto& items = store.items();
  if (state.empty()) {
    for (auto& [name, p] : items) {
      AdamState<Real> st;
      st.m.assign(p.data().size(), Real(0));
      st.v.assign(p.data().size(), Real(0));
      state.push_back(std::move(st));
    }
  }
  require(state.size() == items.size(),
          "adam_step: optimizer state does not match parameter count");
  double sqnorm = 0.0;
  for (auto& [name, p] : items) {
    const auto* g = p.grad();
    require(g != nullptr, "adam_step: parameter " + name + " has no gradient");
    for (Real gv : *g) {
      require(std::isfinite(static_cast<double>(gv)),
              "adam_step: non-finite gradient in " + name + "; step rejected");
      sqnorm += static_cast<double>(gv) * static_cast<double>(gv);
    }
  }
  double clip_scale = 1.0;
  if (cfg.grad_clip > 0) {
    const double norm = std::sqrt(sqnorm);
    if (norm > cfg.grad_clip) clip_scale = cfg.grad_clip / norm;
  }
  const double bc1 = 1.0 - std::pow(cfg.adam_beta1, static_cast<double>(t));
  const double bc2 = 1.0 - std::pow(cfg.adam_beta2, static_cast<double>(t));
  for (std::size_t i = 0; i < items.size(); ++i) {
    auto& p = items[i].second;
    auto& st = state[i];
    const auto& g = *p.grad();
    for (std::size_t k = 0; k < g.size(); ++k) {
      const double gv = static_cast<double>(g[k]) * clip_scale;
      const double m = cfg.adam_beta1 * static_cast<double>(st.m[k]) +
                       (1.0 - cfg.adam_beta1) * gv;
      const double v = cfg.adam_beta2 * static_cast<double>(st.v[k]) +
                       (1.0 - cfg.adam_beta2) * gv * gv;
      st.m[k] = static_cast<Real>(m);
      st.v[k] = static_cast<Real>(v);
      const double mhat = m / bc1;
      const double vhat = v / bc2;
      p.data()[k] = static_cast<Real>(
          static_cast<double>(p.data()[k]) -
          lr * mhat / (std::sqrt(vhat) + cfg.adam_eps));
    }
  }
}

template <typename Real>
struct BatchTensors {
  Tensor<Real> y, x_h, x_m;
};

/// Stacks registered samples (all with identical extents) into batch
/// tensors [K, bands, H, W].
template <typename Real>
BatchTensors<Real> stack_samples(const std::vector<const Sample*>& batch) {
  require(!batch.empty(), "stack_samples: empty batch");
  auto stack = [](const std::vector<const Sample*>& b,
                  const HsiCube Sample::*field) {
    const HsiCube& first = (*b[0]).*field;
    Tensor<Real> t(Shape{static_cast<std::int64_t>(b.size()), first.bands,
                         first.height, first.width});
    const std::int64_t per = first.numel();
    for (std::size_t i = 0; i < b.size(); ++i) {
      const HsiCube& c = (*b[i]).*field;
      require(c.height == first.height && c.width == first.width &&
                  c.bands == first.bands,
              "stack_samples: sample extents differ within a batch");
      for (std::int64_t k = 0; k < per; ++k)
        t.data()[static_cast<std::size_t>(i) * static_cast<std::size_t>(per) +
                 static_cast<std::size_t>(k)] =
            static_cast<Real>(c.values[static_cast<std::size_t>(k)]);
    }
    return t;
  };
  BatchTensors<Real> out;
  out.y = stack(batch, &Sample::y);
  out.x_h = stack(batch, &Sample::x_h);
  out.x_m = stack(batch, &Sample::x_m);
  return out;
}

/// Mean validation PSNR/SAM of a model over a sample list.
template <typename Real>
std::pair<double, double> validate_model(const FusionModel<Real>& model,
                                         const std::vector<Sample>& samples) {
  require(!samples.empty(), "validate_model: empty validation set");
  double psnr_acc = 0, sam_acc = 0;
  for (const auto& s : samples) {
    Tensor<Real> x_h = to_tensor<Real>(s.x_h);
    Tensor<Real> x_m = to_tensor<Real>(s.x_m);
    auto out = model.fuse(x_h, x_m);
    HsiCube y_hat = from_tensor(out.y_star, s.y.lo, s.y.hi);
    const double p = psnr(s.y, y_hat, default_peak(s.y));
    // cap the identical-cube sentinel so means stay finite
    psnr_acc += std::isinf(p) ? 200.0 : p;
    sam_acc += sam_metric(s.y, y_hat);
  }
  return {psnr_acc / static_cast<double>(samples.size()),
          sam_acc / static_cast<double>(samples.size())};
}

struct TrainResult {
  double best_val_psnr = -1.0;
  std::int64_t best_epoch = -1;
  std::int64_t epochs_run = 0;
  std::int64_t final_step = 0;
  bool interrupted = false;
  std::filesystem::path log_path, best_dir, last_dir;
};

/// Runs (or resumes) the training loop. The run directory receives
/// log.jsonl plus ckpt_best/ and ckpt_last/; resuming from ckpt_last
/// reproduces the uninterrupted run bit-exactly.
template <typename Real>
TrainResult train(FusionModel<Real>& model, const Dataset& ds,
                  const TrainConfig& tc, const LossConfig& lc,
                  const std::filesystem::path& out_dir, bool resume = false) {
  namespace fs = std::filesystem;
  tc.validate();
  lc.validate();
  require(!ds.train.empty(), "train: dataset has no training samples");
  fs::create_directories(out_dir);

  TrainResult result;
  result.log_path = out_dir / "log.jsonl";
  result.best_dir = out_dir / "ckpt_best";
  result.last_dir = out_dir / "ckpt_last";

  // deterministic fraction subset: the first k indices of one seed-shuffled
  // permutation, fixed across epochs
  std::vector<std::size_t> subset(ds.train.size());
  for (std::size_t i = 0; i < subset.size(); ++i) subset[i] = i;
  {
    Rng frac_rng(tc.seed ^ 0x9e3779b97f4a7c15ull);
    frac_rng.shuffle(subset);
  }
  const auto keep = static_cast<std::size_t>(std::ceil(
      tc.fraction * static_cast<double>(ds.train.size())));
  subset.resize(std::max<std::size_t>(1, keep));

  const std::int64_t steps_per_epoch =
      (static_cast<std::int64_t>(subset.size()) + tc.batch - 1) / tc.batch;
  const std::int64_t total_steps = tc.epochs * steps_per_epoch;

  nlohmann::json config_echo{{"train", to_json(tc)},
                             {"loss", to_json(lc)},
                             {"model", to_json(model.config())}};

  Rng rng(tc.seed);
  AdamMoments<Real> adam;
  std::int64_t step = 0, start_epoch = 0;
  double best = -std::numeric_limits<double>::infinity();
  std::int64_t best_epoch = -1;

  if (resume) {
    CheckpointMeta meta = load_checkpoint(result.last_dir, model.params(), &adam);
    auto strip = [](nlohmann::json j) {
      j["train"].erase("stop_after_epoch");
      return j;
    };
    require(strip(meta.config) == strip(config_echo),
            "train: resume config does not match the checkpointed run");
    require(meta.total_steps == total_steps,
            "train: resume schedule length mismatch");
    rng.load_state(meta.rng_state);
    step = meta.step;
    start_epoch = meta.epoch;
    best = meta.best_val_psnr < 0 ? -std::numeric_limits<double>::infinity()
                                   : meta.best_val_psnr;
    best_epoch = meta.best_epoch;
  }

  std::ofstream log(result.log_path,
                    resume ? std::ios::app : std::ios::trunc);
  require(static_cast<bool>(log), "train: cannot open " + result.log_path.string());

  auto make_meta = [&](std::int64_t epoch_mark) {
    CheckpointMeta meta;
    meta.step = step;
    meta.epoch = epoch_mark;
    meta.total_steps = total_steps;
    meta.best_val_psnr = std::isfinite(best) ? best : -1.0;
    meta.best_epoch = best_epoch;
    meta.seed = tc.seed;
    meta.rng_state = rng.save_state();
    meta.config = config_echo;
    return meta;
  };
  auto save_state = [&](const fs::path& dir, bool with_opt) {
    const bool opt = with_opt && !adam.empty();
    save_checkpoint(dir, model.params(),
                    opt ? &adam : static_cast<AdamMoments<Real>*>(nullptr),
                    make_meta(result.epochs_run + start_epoch));
  };

  for (std::int64_t epoch = start_epoch; epoch < tc.epochs; ++epoch) {
    std::vector<std::size_t> order = subset;
    rng.shuffle(order);
    double loss_acc = 0, l1_acc = 0, sam_acc = 0, swt_acc = 0, lr_last = 0;
    std::int64_t batches = 0;
    for (std::size_t at = 0; at < order.size(); at += static_cast<std::size_t>(tc.batch)) {
      std::vector<const Sample*> batch;
      std::vector<Sample> augmented;
      augmented.reserve(static_cast<std::size_t>(tc.batch));
      for (std::size_t k = at;
           k < std::min(order.size(), at + static_cast<std::size_t>(tc.batch));
           ++k) {
        const Sample& s = ds.train[order[k]];
        if (tc.augment) {
          AugmentConfig ac;
          ac.crop_h = tc.crop_h;
          ac.crop_w = tc.crop_w;
          augmented.push_back(augment(s, model.config().scale, ac, rng));
        } else {
          batch.push_back(&s);
        }
      }
      for (const auto& s : augmented) batch.push_back(&s);

      const double lr = cosine_lr(step, total_steps, tc.lr0, tc.lr_min);
      lr_last = lr;
      auto tensors = stack_samples<Real>(batch);
      double loss_value = 0;
      try {
        Graph<Real> tape;
        auto out = model.fuse(tensors.x_h, tensors.x_m);
        auto parts = total_loss_parts(tensors.y, out.y_star, lc);
        loss_value = static_cast<double>(parts.total.data()[0]);
        require(std::isfinite(loss_value),
                "train: non-finite loss at step " + std::to_string(step));
        model.params().zero_grads();
        tape.backward(parts.total);
        adam_step(model.params(), adam, step + 1, lr, tc);
        l1_acc += parts.l1;
        sam_acc += parts.sam;
        swt_acc += parts.swt;
      } catch (const Error&) {
        // abort with the last good state (the rejected step mutated nothing)
        save_state(out_dir / "ckpt_abort", true);
        throw;
      }
      loss_acc += loss_value;
      ++step;
      ++batches;
    }

    result.epochs_run = epoch - start_epoch + 1;
    nlohmann::json line{{"epoch", epoch},
                        {"step", step},
                        {"lr", lr_last},
                        {"train_loss", loss_acc / static_cast<double>(batches)},
                        {"l1", l1_acc / static_cast<double>(batches)},
                        {"sam", sam_acc / static_cast<double>(batches)},
                        {"swt", swt_acc / static_cast<double>(batches)}};

    const bool do_val =
        !ds.val.empty() &&
        ((epoch + 1) % tc.val_cadence == 0 || epoch + 1 == tc.epochs);
    if (do_val) {
      auto [vp, vs] = validate_model(model, ds.val);
      line["val_psnr"] = vp;
      line["val_sam"] = vs;
      if (vp > best) {
        best = vp;
        best_epoch = epoch;
        save_checkpoint(result.best_dir, model.params(),
                        static_cast<AdamMoments<Real>*>(nullptr),
                        make_meta(epoch + 1));
      }
    }
    log << line.dump() << "\n";
    log.flush();

    // last checkpoint at every epoch boundary enables bit-exact resume
    save_checkpoint(result.last_dir, model.params(), &adam, make_meta(epoch + 1));
    if (tc.stop_after_epoch > 0 && epoch + 1 >= tc.stop_after_epoch &&
        epoch + 1 < tc.epochs) {
      result.interrupted = true;
      break;
    }
  }

  result.best_val_psnr = std::isfinite(best) ? best : -1.0;
  result.best_epoch = best_epoch;
  result.final_step = step;
  if (!fs::exists(result.best_dir)) {
    // no validation set: retain the final state as "best"
    save_state(result.best_dir, false);
  }
  return result;
}

}  // namespace hyfusion
