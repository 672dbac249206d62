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

#include <functional>
#include <string>
#include <vector>

#include "hyfusion/tensor.hpp"

namespace hyfusion {

struct GradCheckEntry {
  std::string name;
  double rel_err = 0.0;      // ||g_ad - g_fd||_inf / (||g_fd||_inf + 1e-12)
  double max_abs_diff = 0.0;
  bool finite = true;        // false if any AD or FD value was non-finite
  bool pass = false;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  bool all_pass = true;
  double worst_rel_err = 0.0;

  const GradCheckEntry* worst() const {
    const GradCheckEntry* w = nullptr;
    for (const auto& e : entries)
      if (!w || e.rel_err > w->rel_err) w = &e;
    return w;
  }
};

/// Compares reverse-mode gradients of a scalar-valued program against
/// central finite differences, per named leaf. `f` must be deterministic and
/// is evaluated under an active tape once (for AD) and tape-free for every
/// probe; the step per element is h * (|x| + 1). The relative error is the
/// max-norm ratio per leaf. Non-finite values are reported, never masked.
inline GradCheckReport grad_check(
    const std::function<Tensor<double>()>& f,
    std::vector<std::pair<std::string, Tensor<double>>> leaves, double h,
    double tol) {
  require(h > 0 && tol > 0, "grad_check: h and tol must be positive");
  GradCheckReport report;

  for (auto& [name, leaf] : leaves) {
    // The program under test holds its own handles to these tensors; the
    // grad buffer is shared only if requires_grad was set before copying.
    require(leaf.requires_grad(),
            "grad_check: leaf '" + name + "' must have requires_grad set");
    leaf.zero_grad();
  }
  {
    Graph<double> tape;
    Tensor<double> loss = f();
    require(loss.numel() == 1, "grad_check: program must return a scalar");
    tape.backward(loss);
  }

  auto eval = [&]() -> double {
    Tensor<double> v = f();  // no active tape: values only
    return v.data()[0];
  };

  for (auto& [name, leaf] : leaves) {
    GradCheckEntry e;
    e.name = name;
    double max_fd = 0.0, max_diff = 0.0;
    auto& vals = leaf.data();
    const auto& ad = *leaf.grad();
    for (std::size_t i = 0; i < vals.size(); ++i) {
      const double x0 = vals[i];
      const double step = h * (std::abs(x0) + 1.0);
      vals[i] = x0 + step;
      const double fp = eval();
      vals[i] = x0 - step;
      const double fm = eval();
      vals[i] = x0;
      const double fd = (fp - fm) / (2.0 * step);
      if (!std::isfinite(fd) || !std::isfinite(ad[i])) e.finite = false;
      max_fd = std::max(max_fd, std::abs(fd));
      max_diff = std::max(max_diff, std::abs(ad[i] - fd));
    }
    e.max_abs_diff = max_diff;
    e.rel_err = max_diff / (max_fd + 1e-12);
    e.pass = e.finite && e.rel_err < tol;
    report.all_pass = report.all_pass && e.pass;
    report.worst_rel_err = std::max(report.worst_rel_err, e.rel_err);
    report.entries.push_back(std::move(e));
  }
  return report;
}

}  // namespace hyfusion
