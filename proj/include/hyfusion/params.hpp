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

#include <deque>

#include "hyfusion/tensor.hpp"

namespace hyfusion {

enum class Init { fanin_uniform, zeros, ones };

inline constexpr const char* kInitScheme =
    "weights: uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)); biases/bias-tables: 0; "
    "norm gamma: 1; norm beta: 0; path weights beta1/beta2: 1; "
    "reconstruction conv: 0";

/// Ordered registry of named learnable tensors. Registration order defines
/// both the deterministic init-draw order and the checkpoint blob order.
/// Entries live in a deque so references returned by add() stay valid.
template <typename Real>
class ParamStore {
 public:
  explicit ParamStore(std::uint64_t seed) : rng_(seed) {}

  Tensor<Real>& add(const std::string& name, Shape shape, Init kind,
                    std::int64_t fan_in = 0) {
    require(find(name) == nullptr, "ParamStore: duplicate parameter " + name);
    Tensor<Real> t(std::move(shape));
    switch (kind) {
      case Init::zeros:
        break;
      case Init::ones:
        std::fill(t.data().begin(), t.data().end(), Real(1));
        break;
      case Init::fanin_uniform: {
        require(fan_in > 0, "ParamStore: fan_in required for " + name);
        const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
        for (auto& v : t.data())
          v = static_cast<Real>(rng_.uniform(-bound, bound));
        break;
      }
    }
    t.set_requires_grad(true);
    items_.emplace_back(name, std::move(t));
    return items_.back().second;
  }

  Tensor<Real>* find(const std::string& name) {
    for (auto& [n, t] : items_)
      if (n == name) return &t;
    return nullptr;
  }

  const std::deque<std::pair<std::string, Tensor<Real>>>& items() const {
    return items_;
  }
  std::deque<std::pair<std::string, Tensor<Real>>>& items() { return items_; }

  std::int64_t total_count() const {
    std::int64_t n = 0;
    for (const auto& [name, t] : items_) n += t.numel();
    return n;
  }

  void zero_grads() {
    for (auto& [name, t] : items_) t.zero_grad();
  }

 private:
  std::deque<std::pair<std::string, Tensor<Real>>> items_;
  Rng rng_;
};

}  // namespace hyfusion
