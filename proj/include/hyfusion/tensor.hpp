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

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstring>
#include <functional>
#include <memory>
#include <unordered_map>
#include <utility>

#include "hyfusion/common.hpp"

namespace hyfusion {

// ---------------------------------------------------------------------------
// Tape (Graph) and Tensor
//
// A Graph is a per-forward-pass tape: an append-only list of operation
// records whose referenced inputs always precede them. Installing a Graph
// makes it the active tape for the current thread; ops executed while it is
// active record themselves, and backward() replays the records in reverse.
// Distinct graphs may run on distinct threads; one graph and its tensors are
// a single-threaded unit.
// ---------------------------------------------------------------------------

template <typename Real>
class Graph;

template <typename Real>
class Tensor {
 public:
  using Storage = std::vector<Real, DefaultInitAllocator<Real>>;

  Tensor() = default;

  explicit Tensor(Shape shape, Real fill = Real(0))
      : shape_(std::move(shape)),
        data_(std::make_shared<Storage>(
            static_cast<std::size_t>(numel_of(shape_)), fill)) {
    for (auto e : shape_) require(e > 0, "Tensor: extents must be positive");
  }

  static Tensor from_data(Shape shape, Storage values) {
    Tensor t;
    t.shape_ = std::move(shape);
    for (auto e : t.shape_) require(e > 0, "Tensor: extents must be positive");
    require(numel_of(t.shape_) == static_cast<std::int64_t>(values.size()),
            "Tensor: data length does not match shape " + shape_str(t.shape_));
    t.data_ = std::make_shared<Storage>(std::move(values));
    return t;
  }

  static Tensor scalar(Real v) { return from_data({1}, {v}); }

  const Shape& shape() const { return shape_; }
  std::int64_t numel() const {
    return data_ ? static_cast<std::int64_t>(data_->size()) : 0;
  }
  bool defined() const { return static_cast<bool>(data_); }

  Storage& data() { return *data_; }
  const Storage& data() const { return *data_; }
  Real* ptr() { return data_->data(); }
  const Real* ptr() const { return data_->data(); }
  const std::shared_ptr<Storage>& storage() const { return data_; }

  bool requires_grad() const { return requires_grad_; }

  /// Marks this tensor as a differentiable leaf. The gradient buffer is
  /// allocated eagerly so every copy of the handle shares it.
  Tensor& set_requires_grad(bool on) {
    requires_grad_ = on;
    if (on && !grad_)
      grad_ = std::make_shared<Storage>(data_->size(), Real(0));
    return *this;
  }

  /// Gradient buffer; null until requires_grad was set.
  Storage* grad() { return grad_.get(); }
  const Storage* grad() const { return grad_.get(); }

  void zero_grad() {
    if (grad_) std::fill(grad_->begin(), grad_->end(), Real(0));
  }

  /// Deep copy of values only (no tape linkage, no grad).
  Tensor clone_values() const { return from_data(shape_, *data_); }

  int node_id() const { return node_; }
  Graph<Real>* graph() const { return graph_; }

 private:
  friend class Graph<Real>;

  Shape shape_;
  std::shared_ptr<Storage> data_;
  std::shared_ptr<Storage> grad_;
  bool requires_grad_ = false;
  int node_ = -1;
  Graph<Real>* graph_ = nullptr;
};

template <typename Real>
class Graph {
 public:
  using Storage = typename Tensor<Real>::Storage;
  using BackwardFn = std::function<void(Graph&, const Storage&)>;

  Graph() {
    active_stack().push_back(this);
  }
  ~Graph() {
    auto& st = active_stack();
    if (!st.empty() && st.back() == this) st.pop_back();
  }
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  static Graph* active() {
    auto& st = active_stack();
    return st.empty() ? nullptr : st.back();
  }

  std::size_t size() const { return nodes_.size(); }

  /// Returns the node id of `t` in this graph, registering it as a leaf if
  /// it is a requires_grad tensor seen for the first time. Returns -1 for
  /// constants that need no gradient.
  int track(const Tensor<Real>& t) {
    if (t.graph_ == this && t.node_ >= 0) return t.node_;
    if (!t.requires_grad_) return -1;
    auto it = leaf_ids_.find(t.data_.get());
    if (it != leaf_ids_.end()) return it->second;
    const int id = static_cast<int>(nodes_.size());
    nodes_.push_back(Node{{}, t.numel(), true, nullptr});
    leaf_ids_.emplace(t.data_.get(), id);
    leaves_.emplace_back(id, t);
    return id;
  }

  /// Appends an operation record and binds `out` to it. Parents with id -1
  /// (untracked constants) are dropped. `fn` may be empty when no parent
  /// needs a gradient.
  void attach(Tensor<Real>& out, std::vector<int> parents, BackwardFn fn) {
    require(!finished_, "Graph: cannot record after backward()");
    std::vector<int> ps;
    bool needs = false;
    for (int p : parents)
      if (p >= 0) {
        require(p < static_cast<int>(nodes_.size()),
                "Graph: parent id out of range");
        ps.push_back(p);
        needs = needs || nodes_[static_cast<std::size_t>(p)].needs;
      }
    const int id = static_cast<int>(nodes_.size());
    nodes_.push_back(Node{std::move(ps), out.numel(), needs,
                          needs ? std::move(fn) : nullptr});
    out.node_ = id;
    out.graph_ = this;
  }

  /// True when at least one of the candidate parents can use a gradient,
  /// i.e. the op must record a backward closure.
  bool wants_grad(std::initializer_list<int> parents) const {
    for (int p : parents)
      if (p >= 0 && nodes_[static_cast<std::size_t>(p)].needs) return true;
    return false;
  }

  /// Gradient buffer of a parent node during backward; null when the node
  /// does not participate (lets closures skip dead branches).
  Storage* grad_buf(int id) {
    if (id < 0) return nullptr;
    auto& n = nodes_[static_cast<std::size_t>(id)];
    if (!n.needs || !reach_[static_cast<std::size_t>(id)]) return nullptr;
    auto& g = grads_[static_cast<std::size_t>(id)];
    if (g.empty()) g.assign(static_cast<std::size_t>(n.numel), Real(0));
    return &g;
  }

  /// Reverse sweep from a scalar loss. Populates `grad` on every
  /// requires_grad leaf reachable from the loss, summing over all paths,
  /// then releases the tape's saved state.
  void backward(const Tensor<Real>& loss) {
    require(loss.numel() == 1,
            "backward: loss must be scalar, got shape " +
                shape_str(loss.shape()));
    require(loss.graph_ == this && loss.node_ >= 0,
            "backward: loss is not a node of this graph");
    require(!finished_, "backward: graph already consumed");
    finished_ = true;

    const std::size_t n = nodes_.size();
    reach_.assign(n, 0);
    grads_.assign(n, Storage{});
    // Reachability by reverse DFS over parent edges.
    std::vector<int> stack{loss.node_};
    reach_[static_cast<std::size_t>(loss.node_)] = 1;
    while (!stack.empty()) {
      const int id = stack.back();
      stack.pop_back();
      for (int p : nodes_[static_cast<std::size_t>(id)].parents)
        if (!reach_[static_cast<std::size_t>(p)]) {
          reach_[static_cast<std::size_t>(p)] = 1;
          stack.push_back(p);
        }
    }
    grads_[static_cast<std::size_t>(loss.node_)] = Storage{Real(1)};
    for (int id = loss.node_; id >= 0; --id) {
      auto& node = nodes_[static_cast<std::size_t>(id)];
      if (!reach_[static_cast<std::size_t>(id)] || !node.needs ||
          !node.backward)
        continue;
      auto& g = grads_[static_cast<std::size_t>(id)];
      if (g.empty()) g.assign(static_cast<std::size_t>(node.numel), Real(0));
      node.backward(*this, g);
      node.backward = nullptr;   // release saved values as we go
      g = Storage{};
    }
    // Flush accumulated gradients into the leaves.
    for (auto& [id, leaf] : leaves_) {
      if (!reach_[static_cast<std::size_t>(id)]) continue;
      auto& g = grads_[static_cast<std::size_t>(id)];
      if (g.empty()) continue;
      auto* dst = leaf.grad();
      for (std::size_t i = 0; i < g.size(); ++i) (*dst)[i] += g[i];
      g = Storage{};
    }
    grads_.clear();
  }

 private:
  struct Node {
    std::vector<int> parents;
    std::int64_t numel = 0;
    bool needs = false;
    BackwardFn backward;
  };

  static std::vector<Graph*>& active_stack() {
    static thread_local std::vector<Graph*> stack;
    return stack;
  }

  std::vector<Node> nodes_;
  std::unordered_map<const void*, int> leaf_ids_;
  std::vector<std::pair<int, Tensor<Real>>> leaves_;
  std::vector<char> reach_;
  std::vector<Storage> grads_;
  bool finished_ = false;
};

// ---------------------------------------------------------------------------
// Op plumbing
// ---------------------------------------------------------------------------

namespace detail {

template <typename Real>
using EMat =
    Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Real>
using MapM = Eigen::Map<EMat<Real>>;
template <typename Real>
using CMapM = Eigen::Map<const EMat<Real>>;

/// C[M,N] = or += op_a(A) * op_b(B) for row-major buffers. Small products
/// use hand loops (Eigen's per-call overhead dominates tiny window-attention
/// GEMMs); large ones go through Eigen.
template <typename Real>
void gemm_rm(std::int64_t M, std::int64_t N, std::int64_t K, const Real* A,
             bool ta, const Real* B, bool tb, Real* C, bool accumulate,
             Real* scratch = nullptr) {
  // ta: A is stored [K,M]; tb: B is stored [N,K]
  if (M * N * K <= (std::int64_t(1) << 18)) {
    if (!accumulate) std::fill(C, C + M * N, Real(0));
    const Real* Bn = B;
    AlignedVec<Real> local;
    if (tb) {
      Real* bt = scratch;
      if (!bt) {
        local.resize(static_cast<std::size_t>(K * N));
        bt = local.data();
      }
      for (std::int64_t n = 0; n < N; ++n)
        for (std::int64_t k = 0; k < K; ++k) bt[k * N + n] = B[n * K + k];
      Bn = bt;
    }
    if (!ta) {
      for (std::int64_t i = 0; i < M; ++i) {
        Real* ci = C + i * N;
        for (std::int64_t k = 0; k < K; ++k) {
          const Real a = A[i * K + k];
          const Real* bk = Bn + k * N;
          for (std::int64_t n = 0; n < N; ++n) ci[n] += a * bk[n];
        }
      }
    } else {
      for (std::int64_t k = 0; k < K; ++k) {
        const Real* ak = A + k * M;
        const Real* bk = Bn + k * N;
        for (std::int64_t i = 0; i < M; ++i) {
          const Real a = ak[i];
          Real* ci = C + i * N;
          for (std::int64_t n = 0; n < N; ++n) ci[n] += a * bk[n];
        }
      }
    }
    return;
  }
  auto run = [&](auto&& a_expr, auto&& b_expr) {
    MapM<Real> Cm(C, M, N);
    if (accumulate)
      Cm.noalias() += a_expr * b_expr;
    else
      Cm.noalias() = a_expr * b_expr;
  };
  CMapM<Real> Am(A, ta ? K : M, ta ? M : K);
  CMapM<Real> Bm(B, tb ? N : K, tb ? K : N);
  if (!ta && !tb)
    run(Am, Bm);
  else if (!ta && tb)
    run(Am, Bm.transpose());
  else if (ta && !tb)
    run(Am.transpose(), Bm);
  else
    run(Am.transpose(), Bm.transpose());
}

inline std::int64_t wrap(std::int64_t i, std::int64_t n) {
  i %= n;
  return i < 0 ? i + n : i;
}

/// Half-sample symmetric reflection: ...2 1 0 | 0 1 2 ... n-1 | n-1 n-2...
inline std::int64_t reflect(std::int64_t i, std::int64_t n) {
  while (i < 0 || i >= n) {
    if (i < 0) i = -1 - i;
    if (i >= n) i = 2 * n - 1 - i;
  }
  return i;
}

}  // namespace detail

/// Runs `forward` into a fresh tensor of `shape` and, when a tape is active
/// and some input needs gradients, records `make_backward()`.
template <typename Real, typename Fwd, typename Bwd>
Tensor<Real> record_op(Shape shape, std::initializer_list<const Tensor<Real>*> inputs,
                       Fwd&& forward, Bwd&& make_backward) {
  Tensor<Real> out(std::move(shape));
  forward(out);
  if (auto* g = Graph<Real>::active()) {
    std::vector<int> ids;
    ids.reserve(inputs.size());
    for (const auto* t : inputs) ids.push_back(g->track(*t));
    bool any = false;
    for (int id : ids) any = any || (id >= 0 && g->wants_grad({id}));
    if (!ids.empty())
      g->attach(out, ids, any ? make_backward(ids) : typename Graph<Real>::BackwardFn{});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Elementwise ops
// ---------------------------------------------------------------------------

template <typename Real>
void check_same_shape(const Tensor<Real>& a, const Tensor<Real>& b,
                      const char* op) {
  require(a.shape() == b.shape(),
          std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
              " vs " + shape_str(b.shape()));
}

template <typename Real>
Tensor<Real> add(const Tensor<Real>& a, const Tensor<Real>& b) {
  check_same_shape(a, b, "add");
  return record_op<Real>(
      a.shape(), {&a, &b},
      [&](Tensor<Real>& out) {
        const Real* pa = a.ptr();
        const Real* pb = b.ptr();
        Real* po = out.ptr();
        const std::int64_t n = a.numel();
        for (std::int64_t i = 0; i < n; ++i) po[i] = pa[i] + pb[i];
      },
      [&](const std::vector<int>& ids) {
        return [ids](Graph<Real>& g, const typename Tensor<Real>::Storage& go) {
          for (int k = 0; k < 2; ++k)
            if (auto* d = g.grad_buf(ids[static_cast<std::size_t>(k)]))
              for (std::size_t i = 0; i < go.size(); ++i) (*d)[i] += go[i];
        };
      });
}

template <typename Real>
Tensor<Real> sub(const Tensor<Real>& a, const Tensor<Real>& b) {
  check_same_shape(a, b, "sub");
  return record_op<Real>(
      a.shape(), {&a, &b},
      [&](Tensor<Real>& out) {
        const Real* pa = a.ptr();
        const Real* pb = b.ptr();
        Real* po = out.ptr();
        const std::int64_t n = a.numel();
        for (std::int64_t i = 0; i < n; ++i) po[i] = pa[i] - pb[i];
      },
      [&](const std::vector<int>& ids) {
        return [ids](Graph<Real>& g, const typename Tensor<Real>::Storage& go) {
          if (auto* d = g.grad_buf(ids[0]))
            for (std::size_t i = 0; i < go.size(); ++i) (*d)[i] += go[i];
          if (auto* d = g.grad_buf(ids[1]))
            for (std::size_t i = 0; i < go.size(); ++i) (*d)[i] -= go[i];
        };
      });
}

template <typename Real>
Tensor<Real> mul(const Tensor<Real>& a, const Tensor<Real>& b) {
  check_same_shape(a, b, "mul");
  return record_op<Real>(
      a.shape(), {&a, &b},
      [&](Tensor<Real>& out) {
        const Real* pa = a.ptr();
        const Real* pb = b.ptr();
        Real* po = out.ptr();
        const std::int64_t n = a.numel();
        for (std::int64_t i = 0; i < n; ++i) po[i] = pa[i] * pb[i];
      },
      [&](const std::vector<int>& ids) {
        auto sa = a.storage();
        auto sb = b.storage();
        return [ids, sa, sb](Graph<Real>& g,
                             const typename Tensor<Real>::Storage& go) {
          if (auto* d = g.grad_buf(ids[0]))
            for (std::size_t i = 0; i < go.size(); ++i)
              (*d)[i] += go[i] * (*sb)[i];
          if (auto* d = g.grad_buf(ids[1]))
            for (std::size_t i = 0; i < go.size(); ++i)
              (*d)[i] += go[i] * (*sa)[i];
        };
      });
}

template <typename Real>
Tensor<Real> div(const Tensor<Real>& a, const Tensor<Real>& b) {
  check_same_shape(a, b, "div");
  return record_op<Real>(
      a.shape(), {&a, &b},
      [&](Tensor<Real>& out) {
        const Real* pa = a.ptr();
        const Real* pb = b.ptr();
        Real* po = out.ptr();
        const std::int64_t n = a.numel();
        for (std::int64_t i = 0; i < n; ++i) po[i] = pa[i] / pb[i];
      },
      [&](const std::vector<int>& ids) {
        auto sa = a.storage();
        auto sb = b.storage();
        return [ids, sa, sb](Graph<Real>& g,
                             const typename Tensor<Real>::Storage& go) {
          if (auto* d = g.grad_buf(ids[0]))
            for (std::size_t i = 0; i < go.size(); ++i)
              (*d)[i] += go[i] / (*sb)[i];
          if (auto* d = g.grad_buf(ids[1]))
            for (std::size_t i = 0; i < go.size(); ++i)
              (*d)[i] -= go[i] * (*sa)[i] / ((*sb)[i] * (*sb)[i]);
        };
      });
}

template <typename Real>
Tensor<Real> scale(const Tensor<Real>& a, Real c) {
  return record_op<Real>(
      a.shape(), {&a},
      [&](Tensor<Real>& out) {
        const Real* pa = a.ptr();
        Real* po = out.ptr();
        const std::int64_t n = a.numel();
        for (std::int64_t i = 0; i < n; ++i) po[i] = c * pa[i];
      },
      [&](const std::vector<int>& ids) {
        return [ids, c](Graph<Real>& g,
                        const typename Tensor<Real>::Storage& go) {
          if (auto* d = g.grad_buf(ids[0]))
            for (std::size_t i = 0; i < go.size(); ++i) (*d)[i] += c * go[i];
        };
      });
}

template <typename Real>
Tensor<Real> add_scalar(const Tensor<Real>& a, Real c) {
  return record_op<Real>(
      a.shape(), {&a},
      [&](Tensor<Real>& out) {
        const Real* pa = a.ptr();
        Real* po = out.ptr();
        const std::int64_t n = a.numel();
        for (std::int64_t i = 0; i < n; ++i) po[i] = pa[i] + c;
      },
      [&](const std::vector<int>& ids) {
        return [ids](Graph<Real>& g, const typename Tensor<Real>::Storage& go) {
          if (auto* d = g.grad_buf(ids[0]))
            for (std::size_t i = 0; i < go.size(); ++i) (*d)[i] += go[i];
        };
      });
}

template <typename Real>
Tensor<Real> neg(const Tensor<Real>& a) {
  return scale(a, Real(-1));
}

template <typename Real>
Tensor<Real> abs_t(const Tensor<Real>& a) {
  return record_op<Real>(
      a.shape(), {&a},
      [&](Tensor<Real>& out) {
        const Real* pa = a.ptr();
        Real* po = out.ptr();
        const std::int64_t n = a.numel();
        for (std::int64_t i = 0; i < n; ++i) po[i] = std::abs(pa[i]);
      },
      [&](const std::vector<int>& ids) {
        auto sa = a.storage();
        return [ids, sa](Graph<Real>& g,
                         const typename Tensor<Real>::Storage& go) {
          if (auto* d = g.grad_buf(ids[0]))
            for (std::size_t i = 0; i < go.size(); ++i) {
              const Real x = (*sa)[i];
              // subgradient 0 at the kink
              (*d)[i] += go[i] * (x > 0 ? Real(1) : (x < 0 ? Real(-1) : Real(0)));
            }
        };
      });
}

template <typename Real>
Tensor<Real> sqrt_t(const Tensor<Real>& a) {
  return record_op<Real>(
      a.shape(), {&a},
      [&](Tensor<Real>& out) {
        const Real* pa = a.ptr();
        Real* po = out.ptr();
        const std::int64_t n = a.numel();
        for (std::int64_t i = 0; i < n; ++i) po[i] = std::sqrt(pa[i]);
      },
      [&](const std::vector<int>& ids) {
        auto sa = a.storage();
        return [ids, sa](Graph<Real>& g,
                         const typename Tensor<Real>::Storage& go) {
          if (auto* d = g.grad_buf(ids[0]))
            for (std::size_t i = 0; i < go.size(); ++i) {
              const Real x = (*sa)[i];
              // guarded at 0 so zero-norm spectra keep finite gradients
              (*d)[i] += x > 0 ? go[i] * (Real(0.5) / std::sqrt(x)) : Real(0);
            }
        };
      });
}

/// arccos of the input clamped to [-1+margin, 1-margin]; gradient is zero in
/// the clamped region.
template <typename Real>
Tensor<Real> acos_clamp(const Tensor<Real>& a, Real margin) {
  require(margin > 0, "acos_clamp: margin must be positive");
  const Real lo = Real(-1) + margin, hi = Real(1) - margin;
  return record_op<Real>(
      a.shape(), {&a},
      [&](Tensor<Real>& out) {
        const Real* pa = a.ptr();
        Real* po = out.ptr();
        const std::int64_t n = a.numel();
        for (std::int64_t i = 0; i < n; ++i)
          po[i] = std::acos(std::min(hi, std::max(lo, pa[i])));
      },
      [&](const std::vector<int>& ids) {
        auto sa = a.storage();
        return [ids, sa, lo, hi](Graph<Real>& g,
                                 const typename Tensor<Real>::Storage& go) {
          if (auto* d = g.grad_buf(ids[0]))
            for (std::size_t i = 0; i < go.size(); ++i) {
              const Real x = (*sa)[i];
              if (x > lo && x < hi)
                (*d)[i] -= go[i] / std::sqrt(Real(1) - x * x);
            }
        };
      });
}

template <typename Real>
Tensor<Real> leaky_relu(const Tensor<Real>& a, Real slope) {
  require(slope > 0 && slope < 1, "leaky_relu: slope must lie in (0,1)");
  return record_op<Real>(
      a.shape(), {&a},
      [&](Tensor<Real>& out) {
        const Real* pa = a.ptr();
        Real* po = out.ptr();
        const std::int64_t n = a.numel();
        for (std::int64_t i = 0; i < n; ++i)
          po[i] = pa[i] >= 0 ? pa[i] : slope * pa[i];
      },
      [&](const std::vector<int>& ids) {
        auto sa = a.storage();
        return [ids, sa, slope](Graph<Real>& g,
                                const typename Tensor<Real>::Storage& go) {
          if (auto* d = g.grad_buf(ids[0]))
            for (std::size_t i = 0; i < go.size(); ++i)
              (*d)[i] += go[i] * ((*sa)[i] >= 0 ? Real(1) : slope);
        };
      });
}

/// out = s * x where s is a single-element tensor (a learnable scalar).
template <typename Real>
Tensor<Real> mul_scalar_t(const Tensor<Real>& x, const Tensor<Real>& s) {
  require(s.numel() == 1, "mul_scalar_t: scale must be a single element");
  const Real c = s.data()[0];
  return record_op<Real>(
      x.shape(), {&x, &s},
      [&](Tensor<Real>& out) {
        const Real* px = x.ptr();
        Real* po = out.ptr();
        const std::int64_t n = x.numel();
        for (std::int64_t i = 0; i < n; ++i) po[i] = c * px[i];
      },
      [&](const std::vector<int>& ids) {
        auto sx = x.storage();
        return [ids, sx, c](Graph<Real>& g,
                            const typename Tensor<Real>::Storage& go) {
          if (auto* d = g.grad_buf(ids[0]))
            for (std::size_t i = 0; i < go.size(); ++i) (*d)[i] += c * go[i];
          if (auto* d = g.grad_buf(ids[1])) {
            Real acc = 0;
            for (std::size_t i = 0; i < go.size(); ++i)
              acc += go[i] * (*sx)[i];
            (*d)[0] += acc;
          }
        };
      });
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

template <typename Real>
Tensor<Real> sum_all(const Tensor<Real>& a) {
  return record_op<Real>(
      Shape{1}, {&a},
      [&](Tensor<Real>& out) {
        Real acc = 0;
        const Real* pa = a.ptr();
        const std::int64_t n = a.numel();
        for (std::int64_t i = 0; i < n; ++i) acc += pa[i];
        out.ptr()[0] = acc;
      },
      [&](const std::vector<int>& ids) {
        const std::int64_t n = a.numel();
        return [ids, n](Graph<Real>& g,
                        const typename Tensor<Real>::Storage& go) {
          if (auto* d = g.grad_buf(ids[0]))
            for (std::int64_t i = 0; i < n; ++i)
              (*d)[static_cast<std::size_t>(i)] += go[0];
        };
      });
}

template <typename Real>
Tensor<Real> mean_all(const Tensor<Real>& a) {
  const Real inv = Real(1) / static_cast<Real>(a.numel());
  return scale(sum_all(a), inv);
}

/// [..., L] -> [...]: sums the last axis.
template <typename Real>
Tensor<Real> sum_lastdim(const Tensor<Real>& a) {
  require(a.shape().size() >= 2, "sum_lastdim: rank must be >= 2");
  Shape os(a.shape().begin(), a.shape().end() - 1);
  const std::int64_t L = a.shape().back();
  const std::int64_t rows = numel_of(os);
  return record_op<Real>(
      std::move(os), {&a},
      [&](Tensor<Real>& out) {
        const Real* pa = a.ptr();
        Real* po = out.ptr();
        for (std::int64_t r = 0; r < rows; ++r) {
          Real acc = 0;
          const Real* row = pa + r * L;
          for (std::int64_t i = 0; i < L; ++i) acc += row[i];
          po[r] = acc;
        }
      },
      [&](const std::vector<int>& ids) {
        return [ids, L, rows](Graph<Real>& g,
                              const typename Tensor<Real>::Storage& go) {
          if (auto* d = g.grad_buf(ids[0]))
            for (std::int64_t r = 0; r < rows; ++r)
              for (std::int64_t i = 0; i < L; ++i)
                (*d)[static_cast<std::size_t>(r * L + i)] += go[static_cast<std::size_t>(r)];
        };
      });
}

// ---------------------------------------------------------------------------
// Shape ops (all exact bijections; gradients are inverse permutations)
// ---------------------------------------------------------------------------

template <typename Real>
Tensor<Real> reshape(const Tensor<Real>& a, Shape shape) {
  require(numel_of(shape) == a.numel(),
          "reshape: element count mismatch " + shape_str(a.shape()) + " -> " +
              shape_str(shape));
  return record_op<Real>(
      std::move(shape), {&a},
      [&](Tensor<Real>& out) {
        std::memcpy(out.ptr(), a.ptr(),
                    static_cast<std::size_t>(a.numel()) * sizeof(Real));
      },
      [&](const std::vector<int>& ids) {
        return [ids](Graph<Real>& g, const typename Tensor<Real>::Storage& go) {
          if (auto* d = g.grad_buf(ids[0]))
            for (std::size_t i = 0; i < go.size(); ++i) (*d)[i] += go[i];
        };
      });
}

/// Channel-wise concatenation of [N,C_i,H,W] tensors (argument order kept).
template <typename Real>
Tensor<Real> concat_channels(const std::vector<Tensor<Real>>& xs) {
  require(!xs.empty(), "concat_channels: need at least one input");
  const Shape& s0 = xs[0].shape();
  require(s0.size() == 4, "concat_channels: inputs must be [N,C,H,W]");
  std::int64_t ctot = 0;
  for (const auto& x : xs) {
    const Shape& s = x.shape();
    require(s.size() == 4 && s[0] == s0[0] && s[2] == s0[2] && s[3] == s0[3],
            "concat_channels: extent mismatch " + shape_str(s) + " vs " +
                shape_str(s0));
    ctot += s[1];
  }
  const std::int64_t N = s0[0], HW = s0[2] * s0[3];
  Tensor<Real> out(Shape{N, ctot, s0[2], s0[3]});
  {
    Real* po = out.ptr();
    std::int64_t coff = 0;
    for (const auto& x : xs) {
      const std::int64_t C = x.shape()[1];
      const Real* px = x.ptr();
      for (std::int64_t n = 0; n < N; ++n)
        std::memcpy(po + (n * ctot + coff) * HW, px + n * C * HW,
                    static_cast<std::size_t>(C * HW) * sizeof(Real));
      coff += C;
    }
  }
  if (auto* g = Graph<Real>::active()) {
    std::vector<int> ids;
    ids.reserve(xs.size());
    bool any = false;
    for (const auto& x : xs) {
      ids.push_back(g->track(x));
      any = any || (ids.back() >= 0 && g->wants_grad({ids.back()}));
    }
    typename Graph<Real>::BackwardFn fn;
    if (any) {
      std::vector<std::int64_t> chans;
      for (const auto& x : xs) chans.push_back(x.shape()[1]);
      fn = [ids, chans, N, HW, ctot](Graph<Real>& g,
                                     const typename Tensor<Real>::Storage& go) {
        std::int64_t coff = 0;
        for (std::size_t k = 0; k < ids.size(); ++k) {
          const std::int64_t C = chans[k];
          if (auto* d = g.grad_buf(ids[k]))
            for (std::int64_t n = 0; n < N; ++n) {
              const Real* src = go.data() + (n * ctot + coff) * HW;
              Real* dst = d->data() + n * C * HW;
              for (std::int64_t i = 0; i < C * HW; ++i) dst[i] += src[i];
            }
          coff += C;
        }
      };
    }
    g->attach(out, ids, std::move(fn));
  }
  return out;
}

/// Toroidal roll of the two spatial axes by (dy, dx).
template <typename Real>
Tensor<Real> cyclic_shift(const Tensor<Real>& x, std::int64_t dy,
                          std::int64_t dx) {
  const Shape& s = x.shape();
  require(s.size() == 4, "cyclic_shift: input must be [N,C,H,W]");
  const std::int64_t NC = s[0] * s[1], H = s[2], W = s[3];
  auto run = [NC, H, W](const Real* src, Real* dst, std::int64_t sy,
                        std::int64_t sx) {
    for (std::int64_t p = 0; p < NC; ++p) {
      const Real* sp = src + p * H * W;
      Real* dp = dst + p * H * W;
      for (std::int64_t y = 0; y < H; ++y) {
        const std::int64_t ys = detail::wrap(y - sy, H);
        for (std::int64_t xx = 0; xx < W; ++xx)
          dp[y * W + xx] = sp[ys * W + detail::wrap(xx - sx, W)];
      }
    }
  };
  return record_op<Real>(
      s, {&x},
      [&](Tensor<Real>& out) { run(x.ptr(), out.ptr(), dy, dx); },
      [&](const std::vector<int>& ids) {
        return [ids, run, dy, dx](Graph<Real>& g,
                                  const typename Tensor<Real>::Storage& go) {
          if (auto* d = g.grad_buf(ids[0])) {
            typename Tensor<Real>::Storage tmp(go.size());
            run(go.data(), tmp.data(), -dy, -dx);
            for (std::size_t i = 0; i < tmp.size(); ++i) (*d)[i] += tmp[i];
          }
        };
      });
}

namespace detail {

// Copies between [N,C,H,W] and [N*(H/w)*(W/w), w*w, C]. dir=+1 partitions,
// dir=-1 merges. Window order is row-major over the window grid; pixel order
// row-major within a window.
template <typename Real>
void window_xfer(const Real* img, Real* win, std::int64_t N, std::int64_t C,
                 std::int64_t H, std::int64_t W, std::int64_t w, int dir,
                 Real* img_accum = nullptr) {
  const std::int64_t ny = H / w, nx = W / w;
  for (std::int64_t n = 0; n < N; ++n)
    for (std::int64_t wy = 0; wy < ny; ++wy)
      for (std::int64_t wx = 0; wx < nx; ++wx) {
        const std::int64_t b = (n * ny + wy) * nx + wx;
        for (std::int64_t iy = 0; iy < w; ++iy)
          for (std::int64_t ix = 0; ix < w; ++ix) {
            const std::int64_t t = iy * w + ix;
            const std::int64_t y = wy * w + iy, x = wx * w + ix;
            for (std::int64_t c = 0; c < C; ++c) {
              const std::int64_t ii = ((n * C + c) * H + y) * W + x;
              const std::int64_t wi = (b * w * w + t) * C + c;
              if (dir > 0)
                win[wi] = img[ii];
              else if (img_accum)
                img_accum[ii] += win[wi];
              else
                const_cast<Real*>(img)[ii] = win[wi];
            }
          }
      }
}

}  // namespace detail

/// [N,C,H,W] -> [N*(H/w)*(W/w), w*w, C]. Requires w | H and w | W; the op
/// never pads.
template <typename Real>
Tensor<Real> window_partition(const Tensor<Real>& x, std::int64_t w) {
  const Shape& s = x.shape();
  require(s.size() == 4, "window_partition: input must be [N,C,H,W]");
  require(w >= 1 && s[2] % w == 0 && s[3] % w == 0,
          "window_partition: window size " + std::to_string(w) +
              " must divide spatial extents " + shape_str(s));
  const std::int64_t N = s[0], C = s[1], H = s[2], W = s[3];
  const std::int64_t nw = N * (H / w) * (W / w);
  return record_op<Real>(
      Shape{nw, w * w, C}, {&x},
      [&](Tensor<Real>& out) {
        detail::window_xfer<Real>(x.ptr(), out.ptr(), N, C, H, W, w, +1);
      },
      [&](const std::vector<int>& ids) {
        return [ids, N, C, H, W, w](Graph<Real>& g,
                                    const typename Tensor<Real>::Storage& go) {
          if (auto* d = g.grad_buf(ids[0]))
            detail::window_xfer<Real>(nullptr, const_cast<Real*>(go.data()), N,
                                      C, H, W, w, -1, d->data());
        };
      });
}

/// Inverse of window_partition for the given image geometry.
template <typename Real>
Tensor<Real> window_merge(const Tensor<Real>& win, std::int64_t w,
                          std::int64_t N, std::int64_t C, std::int64_t H,
                          std::int64_t W) {
  const Shape& s = win.shape();
  require(s.size() == 3 && s[1] == w * w && s[2] == C &&
              s[0] == N * (H / w) * (W / w) && H % w == 0 && W % w == 0,
          "window_merge: window tensor " + shape_str(s) +
              " does not match geometry");
  return record_op<Real>(
      Shape{N, C, H, W}, {&win},
      [&](Tensor<Real>& out) {
        detail::window_xfer<Real>(out.ptr(), const_cast<Real*>(win.ptr()), N,
                                  C, H, W, w, -1);
      },
      [&](const std::vector<int>& ids) {
        return [ids, N, C, H, W, w](Graph<Real>& g,
                                    const typename Tensor<Real>::Storage& go) {
          if (auto* d = g.grad_buf(ids[0])) {
            typename Tensor<Real>::Storage tmp(d->size());
            detail::window_xfer<Real>(go.data(), tmp.data(), N, C, H, W, w,
                                      +1);
            for (std::size_t i = 0; i < tmp.size(); ++i) (*d)[i] += tmp[i];
          }
        };
      });
}

/// [N,C,H,W] -> [N, H*W, C] token layout.
template <typename Real>
Tensor<Real> nchw_to_tokens(const Tensor<Real>& x) {
  const Shape& s = x.shape();
  require(s.size() == 4, "nchw_to_tokens: input must be [N,C,H,W]");
  const std::int64_t N = s[0], C = s[1], HW = s[2] * s[3];
  return record_op<Real>(
      Shape{N, HW, C}, {&x},
      [&](Tensor<Real>& out) {
        const Real* px = x.ptr();
        Real* po = out.ptr();
        for (std::int64_t n = 0; n < N; ++n)
          for (std::int64_t c = 0; c < C; ++c) {
            const Real* src = px + (n * C + c) * HW;
            Real* dst = po + n * HW * C + c;
            for (std::int64_t t = 0; t < HW; ++t) dst[t * C] = src[t];
          }
      },
      [&](const std::vector<int>& ids) {
        return [ids, N, C, HW](Graph<Real>& g,
                               const typename Tensor<Real>::Storage& go) {
          if (auto* d = g.grad_buf(ids[0]))
            for (std::int64_t n = 0; n < N; ++n)
              for (std::int64_t c = 0; c < C; ++c) {
                const Real* src = go.data() + n * HW * C + c;
                Real* dst = d->data() + (n * C + c) * HW;
                for (std::int64_t t = 0; t < HW; ++t) dst[t] += src[t * C];
              }
        };
      });
}

/// [N, H*W, C] -> [N,C,H,W].
template <typename Real>
Tensor<Real> tokens_to_nchw(const Tensor<Real>& x, std::int64_t H,
                            std::int64_t W) {
  const Shape& s = x.shape();
  require(s.size() == 3 && s[1] == H * W,
          "tokens_to_nchw: token tensor " + shape_str(s) +
              " does not match extents");
  const std::int64_t N = s[0], C = s[2], HW = H * W;
  return record_op<Real>(
      Shape{N, C, H, W}, {&x},
      [&](Tensor<Real>& out) {
        const Real* px = x.ptr();
        Real* po = out.ptr();
        for (std::int64_t n = 0; n < N; ++n)
          for (std::int64_t c = 0; c < C; ++c) {
            const Real* src = px + n * HW * C + c;
            Real* dst = po + (n * C + c) * HW;
            for (std::int64_t t = 0; t < HW; ++t) dst[t] = src[t * C];
          }
      },
      [&](const std::vector<int>& ids) {
        return [ids, N, C, HW](Graph<Real>& g,
                               const typename Tensor<Real>::Storage& go) {
          if (auto* d = g.grad_buf(ids[0]))
            for (std::int64_t n = 0; n < N; ++n)
              for (std::int64_t c = 0; c < C; ++c) {
                const Real* src = go.data() + (n * C + c) * HW;
                Real* dst = d->data() + n * HW * C + c;
                for (std::int64_t t = 0; t < HW; ++t) dst[t * C] += src[t];
              }
        };
      });
}

/// [B,T,C] -> [B*h, T, C/h]; head index varies fastest within a batch item.
template <typename Real>
Tensor<Real> split_heads(const Tensor<Real>& x, std::int64_t heads) {
  const Shape& s = x.shape();
  require(s.size() == 3, "split_heads: input must be [B,T,C]");
  require(s[2] % heads == 0, "split_heads: channels " + std::to_string(s[2]) +
                                 " not divisible by heads " +
                                 std::to_string(heads));
  const std::int64_t B = s[0], T = s[1], C = s[2], d = C / heads;
  return record_op<Real>(
      Shape{B * heads, T, d}, {&x},
      [&](Tensor<Real>& out) {
        const Real* px = x.ptr();
        Real* po = out.ptr();
        for (std::int64_t b = 0; b < B; ++b)
          for (std::int64_t t = 0; t < T; ++t)
            for (std::int64_t h = 0; h < heads; ++h)
              std::memcpy(po + (((b * heads + h) * T) + t) * d,
                          px + (b * T + t) * C + h * d,
                          static_cast<std::size_t>(d) * sizeof(Real));
      },
      [&](const std::vector<int>& ids) {
        return [ids, B, T, C, d, heads](
                   Graph<Real>& g, const typename Tensor<Real>::Storage& go) {
          if (auto* dg = g.grad_buf(ids[0]))
            for (std::int64_t b = 0; b < B; ++b)
              for (std::int64_t t = 0; t < T; ++t)
                for (std::int64_t h = 0; h < heads; ++h) {
                  const Real* src = go.data() + (((b * heads + h) * T) + t) * d;
                  Real* dst = dg->data() + (b * T + t) * C + h * d;
                  for (std::int64_t i = 0; i < d; ++i) dst[i] += src[i];
                }
        };
      });
}

/// [B*h, T, d] -> [B, T, h*d]; inverse of split_heads.
template <typename Real>
Tensor<Real> merge_heads(const Tensor<Real>& x, std::int64_t heads) {
  const Shape& s = x.shape();
  require(s.size() == 3 && s[0] % heads == 0,
          "merge_heads: batch not divisible by heads");
  const std::int64_t B = s[0] / heads, T = s[1], d = s[2], C = heads * d;
  return record_op<Real>(
      Shape{B, T, C}, {&x},
      [&](Tensor<Real>& out) {
        const Real* px = x.ptr();
        Real* po = out.ptr();
        for (std::int64_t b = 0; b < B; ++b)
          for (std::int64_t t = 0; t < T; ++t)
            for (std::int64_t h = 0; h < heads; ++h)
              std::memcpy(po + (b * T + t) * C + h * d,
                          px + (((b * heads + h) * T) + t) * d,
                          static_cast<std::size_t>(d) * sizeof(Real));
      },
      [&](const std::vector<int>& ids) {
        return [ids, B, T, C, d, heads](
                   Graph<Real>& g, const typename Tensor<Real>::Storage& go) {
          if (auto* dg = g.grad_buf(ids[0]))
            for (std::int64_t b = 0; b < B; ++b)
              for (std::int64_t t = 0; t < T; ++t)
                for (std::int64_t h = 0; h < heads; ++h) {
                  const Real* src = go.data() + (b * T + t) * C + h * d;
                  Real* dst = dg->data() + (((b * heads + h) * T) + t) * d;
                  for (std::int64_t i = 0; i < d; ++i) dst[i] += src[i];
                }
        };
      });
}

/// Contiguous slice [start, start+len) of the last axis.
template <typename Real>
Tensor<Real> slice_lastdim(const Tensor<Real>& x, std::int64_t start,
                           std::int64_t len) {
  const Shape& s = x.shape();
  require(!s.empty(), "slice_lastdim: rank must be >= 1");
  const std::int64_t L = s.back();
  require(start >= 0 && len >= 1 && start + len <= L,
          "slice_lastdim: range [" + std::to_string(start) + "," +
              std::to_string(start + len) + ") out of " + std::to_string(L));
  const std::int64_t rows = x.numel() / L;
  Shape os(s);
  os.back() = len;
  return record_op<Real>(
      std::move(os), {&x},
      [&](Tensor<Real>& out) {
        const Real* px = x.ptr();
        Real* po = out.ptr();
        for (std::int64_t r = 0; r < rows; ++r)
          std::memcpy(po + r * len, px + r * L + start,
                      static_cast<std::size_t>(len) * sizeof(Real));
      },
      [&](const std::vector<int>& ids) {
        return [ids, rows, L, start, len](
                   Graph<Real>& g, const typename Tensor<Real>::Storage& go) {
          if (auto* d = g.grad_buf(ids[0]))
            for (std::int64_t r = 0; r < rows; ++r)
              for (std::int64_t i = 0; i < len; ++i)
                (*d)[static_cast<std::size_t>(r * L + start + i)] +=
                    go[static_cast<std::size_t>(r * len + i)];
        };
      });
}

// ---------------------------------------------------------------------------
// Linear algebra ops
// ---------------------------------------------------------------------------

/// Affine map over the last axis: [..., F_in] x [F_out, F_in] -> [..., F_out].
/// Leading axes broadcast; no other broadcasting exists in this engine.
template <typename Real>
Tensor<Real> linear(const Tensor<Real>& x, const Tensor<Real>& weight,
                    const Tensor<Real>& bias) {
  const Shape& xs = x.shape();
  const Shape& ws = weight.shape();
  require(xs.size() >= 1 && ws.size() == 2,
          "linear: weight must be [F_out,F_in]");
  const std::int64_t fin = xs.back(), fout = ws[0];
  require(ws[1] == fin, "linear: input features " + std::to_string(fin) +
                            " do not match weight " + shape_str(ws));
  require(bias.shape() == Shape{fout},
          "linear: bias shape " + shape_str(bias.shape()) + " != [F_out]");
  const std::int64_t rows = x.numel() / fin;
  Shape os(xs);
  os.back() = fout;
  return record_op<Real>(
      std::move(os), {&x, &weight, &bias},
      [&](Tensor<Real>& out) {
        detail::CMapM<Real> X(x.ptr(), rows, fin);
        detail::CMapM<Real> W(weight.ptr(), fout, fin);
        detail::MapM<Real> O(out.ptr(), rows, fout);
        O.noalias() = X * W.transpose();
        const Real* pb = bias.ptr();
        for (std::int64_t r = 0; r < rows; ++r)
          for (std::int64_t o = 0; o < fout; ++o) O(r, o) += pb[o];
      },
      [&](const std::vector<int>& ids) {
        auto sx = x.storage();
        auto sw = weight.storage();
        return [ids, sx, sw, rows, fin, fout](
                   Graph<Real>& g, const typename Tensor<Real>::Storage& go) {
          detail::CMapM<Real> G(go.data(), rows, fout);
          if (auto* d = g.grad_buf(ids[0])) {
            detail::CMapM<Real> W(sw->data(), fout, fin);
            detail::MapM<Real> D(d->data(), rows, fin);
            D.noalias() += G * W;
          }
          if (auto* d = g.grad_buf(ids[1])) {
            detail::CMapM<Real> X(sx->data(), rows, fin);
            detail::MapM<Real> D(d->data(), fout, fin);
            D.noalias() += G.transpose() * X;
          }
          if (auto* d = g.grad_buf(ids[2]))
            for (std::int64_t r = 0; r < rows; ++r)
              for (std::int64_t o = 0; o < fout; ++o)
                (*d)[static_cast<std::size_t>(o)] += G(r, o);
        };
      });
}

/// Batched matrix product: [B,M,K] x [B,K,N] -> [B,M,N]. With trans_b the
/// second factor is [B,N,K] and is transposed.
template <typename Real>
Tensor<Real> bmm(const Tensor<Real>& a, const Tensor<Real>& b, bool trans_b) {
  const Shape& as = a.shape();
  const Shape& bs = b.shape();
  require(as.size() == 3 && bs.size() == 3 && as[0] == bs[0],
          "bmm: inputs must be 3-D with equal batch");
  const std::int64_t B = as[0], M = as[1], K = as[2];
  const std::int64_t N = trans_b ? bs[1] : bs[2];
  require((trans_b ? bs[2] : bs[1]) == K,
          "bmm: inner extents mismatch " + shape_str(as) + " vs " +
              shape_str(bs));
  return record_op<Real>(
      Shape{B, M, N}, {&a, &b},
      [&](Tensor<Real>& out) {
        AlignedVec<Real> scratch(static_cast<std::size_t>(K * N));
        for (std::int64_t i = 0; i < B; ++i)
          detail::gemm_rm(M, N, K, a.ptr() + i * M * K, false,
                          b.ptr() + i * K * N, trans_b,
                          out.ptr() + i * M * N, false, scratch.data());
      },
      [&](const std::vector<int>& ids) {
        auto sa = a.storage();
        auto sb = b.storage();
        return [ids, sa, sb, B, M, K, N, trans_b](
                   Graph<Real>& g, const typename Tensor<Real>::Storage& go) {
          auto* da = g.grad_buf(ids[0]);
          auto* db = g.grad_buf(ids[1]);
          AlignedVec<Real> scratch(
              static_cast<std::size_t>(std::max(M * K, K * N)));
          for (std::int64_t i = 0; i < B; ++i) {
            const Real* G = go.data() + i * M * N;
            const Real* A = sa->data() + i * M * K;
            if (trans_b) {
              const Real* Bm = sb->data() + i * N * K;
              // dA += G * B; dB += G^T * A
              if (da)
                detail::gemm_rm(M, K, N, G, false, Bm, false,
                                da->data() + i * M * K, true, scratch.data());
              if (db)
                detail::gemm_rm(N, K, M, G, true, A, false,
                                db->data() + i * N * K, true, scratch.data());
            } else {
              const Real* Bm = sb->data() + i * K * N;
              // dA += G * B^T; dB += A^T * G
              if (da)
                detail::gemm_rm(M, K, N, G, false, Bm, true,
                                da->data() + i * M * K, true, scratch.data());
              if (db)
                detail::gemm_rm(K, N, M, A, true, G, false,
                                db->data() + i * K * N, true, scratch.data());
            }
          }
        };
      });
}

namespace detail {

/// Gathers conv patches: col[(ci*k+ky)*k+kx][y*W+x] = x[n,ci,y+ky-p,x+kx-p],
/// zero outside. One image at a time.
template <typename Real>
void im2col(const Real* x, Real* col, std::int64_t C, std::int64_t H,
            std::int64_t W, std::int64_t k, std::int64_t p) {
  const std::int64_t HW = H * W;
  for (std::int64_t c = 0; c < C; ++c)
    for (std::int64_t ky = 0; ky < k; ++ky)
      for (std::int64_t kx = 0; kx < k; ++kx) {
        Real* dst = col + ((c * k + ky) * k + kx) * HW;
        const Real* src = x + c * HW;
        const std::int64_t dx = kx - p;  // source column offset
        const std::int64_t x0 = std::max<std::int64_t>(0, -dx);
        const std::int64_t x1 = std::min<std::int64_t>(W, W - dx);
        for (std::int64_t y = 0; y < H; ++y) {
          const std::int64_t sy = y + ky - p;
          Real* row = dst + y * W;
          if (sy < 0 || sy >= H || x1 <= x0) {
            std::fill(row, row + W, Real(0));
            continue;
          }
          if (x0 > 0) std::fill(row, row + x0, Real(0));
          std::memcpy(row + x0, src + sy * W + x0 + dx,
                      static_cast<std::size_t>(x1 - x0) * sizeof(Real));
          if (x1 < W) std::fill(row + x1, row + W, Real(0));
        }
      }
}

/// Adjoint of im2col: scatter-adds col back into the image.
template <typename Real>
void col2im_accum(const Real* col, Real* x, std::int64_t C, std::int64_t H,
                  std::int64_t W, std::int64_t k, std::int64_t p) {
  const std::int64_t HW = H * W;
  for (std::int64_t c = 0; c < C; ++c)
    for (std::int64_t ky = 0; ky < k; ++ky)
      for (std::int64_t kx = 0; kx < k; ++kx) {
        const Real* src = col + ((c * k + ky) * k + kx) * HW;
        Real* dst = x + c * HW;
        const std::int64_t dx = kx - p;
        const std::int64_t x0 = std::max<std::int64_t>(0, -dx);
        const std::int64_t x1 = std::min<std::int64_t>(W, W - dx);
        if (x1 <= x0) continue;
        for (std::int64_t y = 0; y < H; ++y) {
          const std::int64_t sy = y + ky - p;
          if (sy < 0 || sy >= H) continue;
          const Real* s = src + y * W + x0;
          Real* d = dst + sy * W + x0 + dx;
          for (std::int64_t i = 0; i < x1 - x0; ++i) d[i] += s[i];
        }
      }
}

}  // namespace detail

/// Same-size 2-D cross-correlation with zero padding: [N,C_in,H,W] x
/// [C_out,C_in,k,k] -> [N,C_out,H,W]. k odd; padding must equal (k-1)/2.
template <typename Real>
Tensor<Real> conv2d(const Tensor<Real>& x, const Tensor<Real>& weight,
                    const Tensor<Real>& bias, std::int64_t padding) {
  const Shape& xs = x.shape();
  const Shape& ws = weight.shape();
  require(xs.size() == 4, "conv2d: input must be [N,C_in,H,W]");
  require(ws.size() == 4 && ws[2] == ws[3], "conv2d: weight must be square");
  const std::int64_t k = ws[2];
  require(k % 2 == 1, "conv2d: kernel size must be odd");
  require(padding == (k - 1) / 2,
          "conv2d: padding must be (k-1)/2 for same-size output");
  require(ws[1] == xs[1],
          "conv2d: input channels " + std::to_string(xs[1]) +
              " do not match weight C_in " + std::to_string(ws[1]));
  const std::int64_t N = xs[0], Cin = xs[1], H = xs[2], W = xs[3];
  const std::int64_t Cout = ws[0], HW = H * W, patch = Cin * k * k;
  require(bias.shape() == Shape{Cout},
          "conv2d: bias shape " + shape_str(bias.shape()) + " != [C_out]");
  return record_op<Real>(
      Shape{N, Cout, H, W}, {&x, &weight, &bias},
      [&](Tensor<Real>& out) {
        detail::CMapM<Real> Wm(weight.ptr(), Cout, patch);
        const Real* pb = bias.ptr();
        AlignedVec<Real> col;
        if (k > 1) col.resize(static_cast<std::size_t>(patch * HW));
        for (std::int64_t n = 0; n < N; ++n) {
          const Real* cptr = x.ptr() + n * Cin * HW;
          if (k > 1) {
            detail::im2col(cptr, col.data(), Cin, H, W, k, padding);
            cptr = col.data();
          }
          detail::CMapM<Real> Cm(cptr, patch, HW);
          detail::MapM<Real> O(out.ptr() + n * Cout * HW, Cout, HW);
          O.noalias() = Wm * Cm;
          for (std::int64_t c = 0; c < Cout; ++c) O.row(c).array() += pb[c];
        }
      },
      [&](const std::vector<int>& ids) {
        auto sx = x.storage();
        auto sw = weight.storage();
        return [ids, sx, sw, N, Cin, Cout, H, W, HW, k, patch, padding](
                   Graph<Real>& g, const typename Tensor<Real>::Storage& go) {
          auto* dx = g.grad_buf(ids[0]);
          auto* dw = g.grad_buf(ids[1]);
          auto* db = g.grad_buf(ids[2]);
          detail::CMapM<Real> Wm(sw->data(), Cout, patch);
          AlignedVec<Real> col, dcol;
          if ((dw || dx) && k > 1)
            col.resize(static_cast<std::size_t>(patch * HW));
          if (dx) dcol.resize(static_cast<std::size_t>(patch * HW));
          for (std::int64_t n = 0; n < N; ++n) {
            detail::CMapM<Real> G(go.data() + n * Cout * HW, Cout, HW);
            if (db)
              for (std::int64_t c = 0; c < Cout; ++c)
                (*db)[static_cast<std::size_t>(c)] += G.row(c).sum();
            if (dw) {
              const Real* cptr = sx->data() + n * Cin * HW;
              if (k > 1) {
                detail::im2col(cptr, col.data(), Cin, H, W, k, padding);
                cptr = col.data();
              }
              detail::CMapM<Real> Cm(cptr, patch, HW);
              detail::MapM<Real> Dw(dw->data(), Cout, patch);
              Dw.noalias() += G * Cm.transpose();
            }
            if (dx) {
              if (k > 1) {
                detail::MapM<Real> Dc(dcol.data(), patch, HW);
                Dc.noalias() = Wm.transpose() * G;
                detail::col2im_accum(dcol.data(), dx->data() + n * Cin * HW,
                                     Cin, H, W, k, padding);
              } else {
                detail::MapM<Real> Dx(dx->data() + n * Cin * HW, patch, HW);
                Dx.noalias() += Wm.transpose() * G;
              }
            }
          }
        };
      });
}

// ---------------------------------------------------------------------------
// Normalization / attention helpers
// ---------------------------------------------------------------------------

/// Numerically-stable softmax over the last axis (max-subtraction); rows sum
/// to 1. Saves its own output for the backward Jacobian.
template <typename Real>
Tensor<Real> softmax_lastdim(const Tensor<Real>& x) {
  const Shape& s = x.shape();
  require(!s.empty(), "softmax_lastdim: rank must be >= 1");
  const std::int64_t L = s.back(), rows = x.numel() / L;
  Tensor<Real> out(s);
  {
    using EArr = Eigen::Array<Real, Eigen::Dynamic, 1>;
    const Real* px = x.ptr();
    Real* po = out.ptr();
    for (std::int64_t r = 0; r < rows; ++r) {
      Eigen::Map<const EArr> xi(px + r * L, L);
      Eigen::Map<EArr> yo(po + r * L, L);
      yo = (xi - xi.maxCoeff()).exp();
      yo *= Real(1) / yo.sum();
    }
  }
  if (auto* g = Graph<Real>::active()) {
    const int id = g->track(x);
    typename Graph<Real>::BackwardFn fn;
    if (g->wants_grad({id})) {
      auto sp = out.storage();
      fn = [id, sp, L, rows](Graph<Real>& g2,
                             const typename Tensor<Real>::Storage& go) {
        if (auto* d = g2.grad_buf(id)) {
          const Real* p = sp->data();
          for (std::int64_t r = 0; r < rows; ++r) {
            const Real* pr = p + r * L;
            const Real* gr = go.data() + r * L;
            Real* dr = d->data() + r * L;
            Real dot = 0;
            for (std::int64_t i = 0; i < L; ++i) dot += gr[i] * pr[i];
            for (std::int64_t i = 0; i < L; ++i) dr[i] += pr[i] * (gr[i] - dot);
          }
        }
      };
    }
    g->attach(out, {id}, std::move(fn));
  }
  return out;
}

/// LayerNorm over the last axis with biased variance, then affine:
/// y = gamma * (x - mu) / sqrt(var + eps) + beta.
template <typename Real>
Tensor<Real> layer_norm(const Tensor<Real>& x, const Tensor<Real>& gamma,
                        const Tensor<Real>& beta, Real eps) {
  const Shape& s = x.shape();
  require(s.size() >= 1, "layer_norm: rank must be >= 1");
  const std::int64_t C = s.back();
  require(gamma.shape() == Shape{C} && beta.shape() == Shape{C},
          "layer_norm: gamma/beta must be [C] with C = " + std::to_string(C) +
              ", got " + shape_str(gamma.shape()) + " / " +
              shape_str(beta.shape()));
  require(eps >= 0, "layer_norm: eps must be >= 0");
  const std::int64_t rows = x.numel() / C;
  Tensor<Real> out(s);
  // y_hat (normalized, pre-affine) and inv-sigma are saved for backward.
  auto yhat = std::make_shared<typename Tensor<Real>::Storage>(
      static_cast<std::size_t>(rows * C));
  auto isig = std::make_shared<typename Tensor<Real>::Storage>(
      static_cast<std::size_t>(rows));
  {
    const Real* px = x.ptr();
    const Real* pg = gamma.ptr();
    const Real* pb = beta.ptr();
    Real* po = out.ptr();
    for (std::int64_t r = 0; r < rows; ++r) {
      const Real* xi = px + r * C;
      Real mu = 0;
      for (std::int64_t i = 0; i < C; ++i) mu += xi[i];
      mu /= static_cast<Real>(C);
      Real var = 0;
      for (std::int64_t i = 0; i < C; ++i) {
        const Real dx = xi[i] - mu;
        var += dx * dx;
      }
      var /= static_cast<Real>(C);
      const Real inv = Real(1) / std::sqrt(var + eps);
      (*isig)[static_cast<std::size_t>(r)] = inv;
      Real* yh = yhat->data() + r * C;
      Real* yo = po + r * C;
      for (std::int64_t i = 0; i < C; ++i) {
        yh[i] = (xi[i] - mu) * inv;
        yo[i] = pg[i] * yh[i] + pb[i];
      }
    }
  }
  if (auto* g = Graph<Real>::active()) {
    const int ix = g->track(x), ig = g->track(gamma), ib = g->track(beta);
    typename Graph<Real>::BackwardFn fn;
    if (g->wants_grad({ix, ig, ib})) {
      auto sg = gamma.storage();
      fn = [ix, ig, ib, sg, yhat, isig, rows, C](
               Graph<Real>& g2, const typename Tensor<Real>::Storage& go) {
        auto* dx = g2.grad_buf(ix);
        auto* dg = g2.grad_buf(ig);
        auto* db = g2.grad_buf(ib);
        const Real* pg = sg->data();
        for (std::int64_t r = 0; r < rows; ++r) {
          const Real* gr = go.data() + r * C;
          const Real* yh = yhat->data() + r * C;
          if (dg)
            for (std::int64_t i = 0; i < C; ++i)
              (*dg)[static_cast<std::size_t>(i)] += gr[i] * yh[i];
          if (db)
            for (std::int64_t i = 0; i < C; ++i)
              (*db)[static_cast<std::size_t>(i)] += gr[i];
          if (dx) {
            const Real inv = (*isig)[static_cast<std::size_t>(r)];
            Real m1 = 0, m2 = 0;
            for (std::int64_t i = 0; i < C; ++i) {
              const Real gy = gr[i] * pg[i];
              m1 += gy;
              m2 += gy * yh[i];
            }
            m1 /= static_cast<Real>(C);
            m2 /= static_cast<Real>(C);
            Real* dr = dx->data() + r * C;
            for (std::int64_t i = 0; i < C; ++i)
              dr[i] += inv * (gr[i] * pg[i] - m1 - yh[i] * m2);
          }
        }
      };
    }
    g->attach(out, {ix, ig, ib}, std::move(fn));
  }
  return out;
}

/// Adds a per-window additive mask to attention scores laid out as
/// [B*nW*heads, T, T] where the window index of row k is (k/heads) % nW. The
/// mask is a constant; gradients pass through to the scores only.
template <typename Real>
Tensor<Real> add_window_mask(const Tensor<Real>& scores,
                             const Tensor<Real>& mask, std::int64_t heads) {
  const Shape& ss = scores.shape();
  const Shape& ms = mask.shape();
  require(ss.size() == 3 && ms.size() == 3 && ss[1] == ms[1] && ss[2] == ms[2],
          "add_window_mask: score/mask token extents mismatch");
  const std::int64_t nW = ms[0], T = ss[1], rows = ss[0];
  require(rows % (heads * nW) == 0,
          "add_window_mask: batch not divisible by heads*windows");
  return record_op<Real>(
      ss, {&scores},
      [&](Tensor<Real>& out) {
        const Real* ps = scores.ptr();
        const Real* pm = mask.ptr();
        Real* po = out.ptr();
        for (std::int64_t k = 0; k < rows; ++k) {
          const Real* m = pm + ((k / heads) % nW) * T * T;
          const Real* si = ps + k * T * T;
          Real* oo = po + k * T * T;
          for (std::int64_t i = 0; i < T * T; ++i) oo[i] = si[i] + m[i];
        }
      },
      [&](const std::vector<int>& ids) {
        return [ids](Graph<Real>& g, const typename Tensor<Real>::Storage& go) {
          if (auto* d = g.grad_buf(ids[0]))
            for (std::size_t i = 0; i < go.size(); ++i) (*d)[i] += go[i];
        };
      });
}

/// Adds the learnable relative-position bias to scores [B*heads, T, T]:
/// out[k,i,j] = s[k,i,j] + table[index[i*T+j], k % heads].
template <typename Real>
Tensor<Real> add_rel_pos_bias(const Tensor<Real>& scores,
                              const Tensor<Real>& table,
                              const std::vector<std::int32_t>& index,
                              std::int64_t heads) {
  const Shape& ss = scores.shape();
  const Shape& ts = table.shape();
  require(ss.size() == 3 && ss[1] == ss[2], "add_rel_pos_bias: scores must be [B,T,T]");
  require(ts.size() == 2 && ts[1] == heads,
          "add_rel_pos_bias: table must be [(2w-1)^2, heads]");
  const std::int64_t T = ss[1], rows = ss[0], entries = ts[0];
  require(static_cast<std::int64_t>(index.size()) == T * T,
          "add_rel_pos_bias: index map size mismatch");
  for (auto v : index)
    require(v >= 0 && v < entries, "add_rel_pos_bias: index out of table range");
  require(rows % heads == 0, "add_rel_pos_bias: batch not divisible by heads");
  return record_op<Real>(
      ss, {&scores, &table},
      [&](Tensor<Real>& out) {
        const Real* ps = scores.ptr();
        const Real* pt = table.ptr();
        Real* po = out.ptr();
        for (std::int64_t k = 0; k < rows; ++k) {
          const std::int64_t h = k % heads;
          const Real* si = ps + k * T * T;
          Real* oo = po + k * T * T;
          for (std::int64_t i = 0; i < T * T; ++i)
            oo[i] = si[i] + pt[index[static_cast<std::size_t>(i)] * heads + h];
        }
      },
      [&](const std::vector<int>& ids) {
        auto idx = index;
        return [ids, idx, T, rows, heads](
                   Graph<Real>& g, const typename Tensor<Real>::Storage& go) {
          if (auto* d = g.grad_buf(ids[0]))
            for (std::size_t i = 0; i < go.size(); ++i) (*d)[i] += go[i];
          if (auto* d = g.grad_buf(ids[1]))
            for (std::int64_t k = 0; k < rows; ++k) {
              const std::int64_t h = k % heads;
              const Real* gi = go.data() + k * T * T;
              for (std::int64_t i = 0; i < T * T; ++i)
                (*d)[static_cast<std::size_t>(
                    idx[static_cast<std::size_t>(i)] * heads + h)] += gi[i];
            }
        };
      });
}

// ---------------------------------------------------------------------------
// Spatial padding / cropping
// ---------------------------------------------------------------------------

/// Half-sample symmetric (reflect) padding of the spatial axes.
template <typename Real>
Tensor<Real> pad_reflect2d(const Tensor<Real>& x, std::int64_t top,
                           std::int64_t bottom, std::int64_t left,
                           std::int64_t right) {
  const Shape& s = x.shape();
  require(s.size() == 4, "pad_reflect2d: input must be [N,C,H,W]");
  require(top >= 0 && bottom >= 0 && left >= 0 && right >= 0,
          "pad_reflect2d: negative padding");
  const std::int64_t NC = s[0] * s[1], H = s[2], W = s[3];
  const std::int64_t Ho = H + top + bottom, Wo = W + left + right;
  require(top <= H && bottom <= H && left <= W && right <= W,
          "pad_reflect2d: padding exceeds extents");
  return record_op<Real>(
      Shape{s[0], s[1], Ho, Wo}, {&x},
      [&](Tensor<Real>& out) {
        const Real* px = x.ptr();
        Real* po = out.ptr();
        for (std::int64_t p = 0; p < NC; ++p)
          for (std::int64_t y = 0; y < Ho; ++y) {
            const std::int64_t sy = detail::reflect(y - top, H);
            for (std::int64_t xx = 0; xx < Wo; ++xx)
              po[(p * Ho + y) * Wo + xx] =
                  px[(p * H + sy) * W + detail::reflect(xx - left, W)];
          }
      },
      [&](const std::vector<int>& ids) {
        return [ids, NC, H, W, Ho, Wo, top, left](
                   Graph<Real>& g, const typename Tensor<Real>::Storage& go) {
          if (auto* d = g.grad_buf(ids[0]))
            for (std::int64_t p = 0; p < NC; ++p)
              for (std::int64_t y = 0; y < Ho; ++y) {
                const std::int64_t sy = detail::reflect(y - top, H);
                for (std::int64_t xx = 0; xx < Wo; ++xx)
                  (*d)[static_cast<std::size_t>(
                      (p * H + sy) * W + detail::reflect(xx - left, W))] +=
                      go[static_cast<std::size_t>((p * Ho + y) * Wo + xx)];
              }
        };
      });
}

/// Crops the spatial axes to [y0, y0+H') x [x0, x0+W').
template <typename Real>
Tensor<Real> crop2d(const Tensor<Real>& x, std::int64_t y0, std::int64_t x0,
                    std::int64_t Ho, std::int64_t Wo) {
  const Shape& s = x.shape();
  require(s.size() == 4, "crop2d: input must be [N,C,H,W]");
  require(y0 >= 0 && x0 >= 0 && Ho >= 1 && Wo >= 1 && y0 + Ho <= s[2] &&
              x0 + Wo <= s[3],
          "crop2d: window out of range");
  const std::int64_t NC = s[0] * s[1], H = s[2], W = s[3];
  return record_op<Real>(
      Shape{s[0], s[1], Ho, Wo}, {&x},
      [&](Tensor<Real>& out) {
        const Real* px = x.ptr();
        Real* po = out.ptr();
        for (std::int64_t p = 0; p < NC; ++p)
          for (std::int64_t y = 0; y < Ho; ++y)
            std::memcpy(po + (p * Ho + y) * Wo,
                        px + (p * H + y + y0) * W + x0,
                        static_cast<std::size_t>(Wo) * sizeof(Real));
      },
      [&](const std::vector<int>& ids) {
        return [ids, NC, H, W, Ho, Wo, y0, x0](
                   Graph<Real>& g, const typename Tensor<Real>::Storage& go) {
          if (auto* d = g.grad_buf(ids[0]))
            for (std::int64_t p = 0; p < NC; ++p)
              for (std::int64_t y = 0; y < Ho; ++y)
                for (std::int64_t xx = 0; xx < Wo; ++xx)
                  (*d)[static_cast<std::size_t>((p * H + y + y0) * W + x0 +
                                                xx)] +=
                      go[static_cast<std::size_t>((p * Ho + y) * Wo + xx)];
        };
      });
}

// ---------------------------------------------------------------------------
// Resampling / filtering primitives (separable 1-D passes along a spatial
// axis; axis 0 = rows/H, axis 1 = cols/W). Backward is the exact adjoint of
// the forward gather.
// ---------------------------------------------------------------------------

namespace detail {

struct Tap {
  std::int64_t offset;
  double weight;
};

// Generic gathered 1-D resampler along a spatial axis: for each output index
// o the value is sum_k w[o][k] * x[src[o][k]]. Taps are precomputed per
// output index (boundary handling baked in).
template <typename Real>
Tensor<Real> gather1d_axis(const Tensor<Real>& x, int axis, std::int64_t Lo,
                           const std::vector<std::vector<Tap>>& taps,
                           const char* opname) {
  const Shape& s = x.shape();
  require(s.size() == 4, std::string(opname) + ": input must be [N,C,H,W]");
  require(axis == 0 || axis == 1, std::string(opname) + ": bad axis");
  const std::int64_t NC = s[0] * s[1], H = s[2], W = s[3];
  const std::int64_t L = axis == 0 ? H : W;
  const std::int64_t Lkeep = axis == 0 ? W : H;
  for (const auto& tv : taps)
    for (const auto& t : tv)
      require(t.offset >= 0 && t.offset < L,
              std::string(opname) + ": tap index out of range");
  Shape os(s);
  os[axis == 0 ? 2 : 3] = Lo;
  return record_op<Real>(
      std::move(os), {&x},
      [&](Tensor<Real>& out) {
        const Real* px = x.ptr();
        Real* po = out.ptr();
        for (std::int64_t p = 0; p < NC; ++p) {
          const Real* sp = px + p * H * W;
          Real* dp = po + p * (axis == 0 ? Lo * W : H * Lo);
          for (std::int64_t o = 0; o < Lo; ++o) {
            const auto& tv = taps[static_cast<std::size_t>(o)];
            for (std::int64_t q = 0; q < Lkeep; ++q) {
              Real acc = 0;
              for (const auto& t : tv)
                acc += static_cast<Real>(t.weight) *
                       (axis == 0 ? sp[t.offset * W + q] : sp[q * W + t.offset]);
              if (axis == 0)
                dp[o * W + q] = acc;
              else
                dp[q * Lo + o] = acc;
            }
          }
        }
      },
      [&, axis, Lo](const std::vector<int>& ids) {
        return [ids, taps, axis, Lo, NC, H, W, Lkeep](
                   Graph<Real>& g, const typename Tensor<Real>::Storage& go) {
          if (auto* d = g.grad_buf(ids[0]))
            for (std::int64_t p = 0; p < NC; ++p) {
              const Real* gp = go.data() + p * (axis == 0 ? Lo * W : H * Lo);
              Real* dp = d->data() + p * H * W;
              for (std::int64_t o = 0; o < Lo; ++o) {
                const auto& tv = taps[static_cast<std::size_t>(o)];
                for (std::int64_t q = 0; q < Lkeep; ++q) {
                  const Real gv =
                      axis == 0 ? gp[o * W + q] : gp[q * Lo + o];
                  for (const auto& t : tv) {
                    if (axis == 0)
                      dp[t.offset * W + q] += static_cast<Real>(t.weight) * gv;
                    else
                      dp[q * W + t.offset] += static_cast<Real>(t.weight) * gv;
                  }
                }
              }
            }
        };
      });
}

inline double catmull_rom(double t) {
  t = std::abs(t);
  if (t <= 1.0) return ((1.5 * t - 2.5) * t) * t + 1.0;
  if (t < 2.0) return (((-0.5 * t) + 2.5) * t - 4.0) * t + 2.0;
  return 0.0;
}

}  // namespace detail

/// Bilinear upsampling by an integer factor with half-pixel centers
/// (align-corners-false); edge samples clamp.
template <typename Real>
Tensor<Real> upsample_bilinear(const Tensor<Real>& x, std::int64_t factor) {
  require(factor >= 1, "upsample_bilinear: factor must be >= 1");
  const Shape& s = x.shape();
  require(s.size() == 4, "upsample_bilinear: input must be [N,C,H,W]");
  auto make_taps = [factor](std::int64_t L) {
    std::vector<std::vector<detail::Tap>> taps;
    taps.reserve(static_cast<std::size_t>(L * factor));
    for (std::int64_t o = 0; o < L * factor; ++o) {
      const double src = (static_cast<double>(o) + 0.5) / static_cast<double>(factor) - 0.5;
      std::int64_t i0 = static_cast<std::int64_t>(std::floor(src));
      const double t = src - static_cast<double>(i0);
      std::int64_t i1 = i0 + 1;
      i0 = std::min(std::max<std::int64_t>(i0, 0), L - 1);
      i1 = std::min(std::max<std::int64_t>(i1, 0), L - 1);
      if (i0 == i1)
        taps.push_back({{i0, 1.0}});
      else
        taps.push_back({{i0, 1.0 - t}, {i1, t}});
    }
    return taps;
  };
  Tensor<Real> tmp = detail::gather1d_axis(x, 0, s[2] * factor,
                                           make_taps(s[2]), "upsample_bilinear");
  return detail::gather1d_axis(tmp, 1, s[3] * factor, make_taps(s[3]),
                               "upsample_bilinear");
}

/// Bicubic (Catmull-Rom, a=-0.5) downsampling by an integer factor with
/// half-pixel centers and reflect boundary. The factor must divide extents.
template <typename Real>
Tensor<Real> downsample_bicubic(const Tensor<Real>& x, std::int64_t factor) {
  require(factor >= 1, "downsample_bicubic: factor must be >= 1");
  const Shape& s = x.shape();
  require(s.size() == 4, "downsample_bicubic: input must be [N,C,H,W]");
  require(s[2] % factor == 0 && s[3] % factor == 0,
          "downsample_bicubic: factor " + std::to_string(factor) +
              " must divide spatial extents " + shape_str(s));
  if (factor == 1) return reshape(x, s);
  auto make_taps = [factor](std::int64_t L) {
    std::vector<std::vector<detail::Tap>> taps;
    const std::int64_t Lo = L / factor;
    taps.reserve(static_cast<std::size_t>(Lo));
    for (std::int64_t o = 0; o < Lo; ++o) {
      const double c = (static_cast<double>(o) + 0.5) * static_cast<double>(factor) - 0.5;
      const std::int64_t q0 = static_cast<std::int64_t>(std::floor(c)) - 1;
      std::vector<detail::Tap> tv;
      double wsum = 0;
      for (std::int64_t q = q0; q < q0 + 4; ++q) {
        const double w = detail::catmull_rom(static_cast<double>(q) - c);
        if (w == 0.0) continue;
        tv.push_back({detail::reflect(q, L), w});
        wsum += w;
      }
      // partition of unity (exact in the interior; reflect keeps it exact
      // at the boundary too, but normalize defensively against fp drift)
      for (auto& t : tv) t.weight /= wsum;
      taps.push_back(std::move(tv));
    }
    return taps;
  };
  Tensor<Real> tmp = detail::gather1d_axis(x, 0, s[2] / factor,
                                           make_taps(s[2]), "downsample_bicubic");
  return detail::gather1d_axis(tmp, 1, s[3] / factor, make_taps(s[3]),
                               "downsample_bicubic");
}

/// Correlation with constant taps along one spatial axis, reflect boundary:
/// out[i] = sum_k taps[k] * x[reflect(i + k - (len-1)/2)].
template <typename Real>
Tensor<Real> reflect_filter1d(const Tensor<Real>& x,
                              const std::vector<double>& kernel, int axis) {
  require(!kernel.empty() && kernel.size() % 2 == 1,
          "reflect_filter1d: kernel length must be odd");
  const Shape& s = x.shape();
  require(s.size() == 4, "reflect_filter1d: input must be [N,C,H,W]");
  const std::int64_t L = axis == 0 ? s[2] : s[3];
  const std::int64_t r = static_cast<std::int64_t>(kernel.size() / 2);
  std::vector<std::vector<detail::Tap>> taps(static_cast<std::size_t>(L));
  for (std::int64_t o = 0; o < L; ++o) {
    auto& tv = taps[static_cast<std::size_t>(o)];
    for (std::size_t k = 0; k < kernel.size(); ++k)
      tv.push_back({detail::reflect(o + static_cast<std::int64_t>(k) - r, L),
                    kernel[k]});
  }
  return detail::gather1d_axis(x, axis, L, taps, "reflect_filter1d");
}

/// Mean over non-overlapping s x s blocks: [N,C,H,W] -> [N,C,H/s,W/s].
template <typename Real>
Tensor<Real> block_mean2d(const Tensor<Real>& x, std::int64_t s) {
  require(s >= 1, "block_mean2d: block size must be >= 1");
  const Shape& xs = x.shape();
  require(xs.size() == 4, "block_mean2d: input must be [N,C,H,W]");
  require(xs[2] % s == 0 && xs[3] % s == 0,
          "block_mean2d: block size " + std::to_string(s) +
              " must divide spatial extents " + shape_str(xs));
  const std::int64_t NC = xs[0] * xs[1], H = xs[2], W = xs[3];
  const std::int64_t Ho = H / s, Wo = W / s;
  const Real inv = Real(1) / static_cast<Real>(s * s);
  return record_op<Real>(
      Shape{xs[0], xs[1], Ho, Wo}, {&x},
      [&](Tensor<Real>& out) {
        const Real* px = x.ptr();
        Real* po = out.ptr();
        for (std::int64_t p = 0; p < NC; ++p)
          for (std::int64_t y = 0; y < Ho; ++y)
            for (std::int64_t xx = 0; xx < Wo; ++xx) {
              Real acc = 0;
              for (std::int64_t by = 0; by < s; ++by)
                for (std::int64_t bx = 0; bx < s; ++bx)
                  acc += px[(p * H + y * s + by) * W + xx * s + bx];
              po[(p * Ho + y) * Wo + xx] = acc * inv;
            }
      },
      [&](const std::vector<int>& ids) {
        return [ids, NC, H, W, Ho, Wo, s, inv](
                   Graph<Real>& g, const typename Tensor<Real>::Storage& go) {
          if (auto* d = g.grad_buf(ids[0]))
            for (std::int64_t p = 0; p < NC; ++p)
              for (std::int64_t y = 0; y < Ho; ++y)
                for (std::int64_t xx = 0; xx < Wo; ++xx) {
                  const Real gv =
                      go[static_cast<std::size_t>((p * Ho + y) * Wo + xx)] * inv;
                  for (std::int64_t by = 0; by < s; ++by)
                    for (std::int64_t bx = 0; bx < s; ++bx)
                      (*d)[static_cast<std::size_t>(
                          (p * H + y * s + by) * W + xx * s + bx)] += gv;
                }
        };
      });
}

/// Periodic-boundary correlation (sign=+1) or convolution (sign=-1) with
/// dilated taps along one spatial axis: out[i] = sum_k t[k]*x[(i + sign*d*k) mod L].
template <typename Real>
Tensor<Real> circular_filter1d(const Tensor<Real>& x,
                               const std::vector<double>& kernel,
                               std::int64_t dilation, int axis, int sign) {
  require(!kernel.empty(), "circular_filter1d: empty kernel");
  require(dilation >= 1, "circular_filter1d: dilation must be >= 1");
  require(sign == 1 || sign == -1, "circular_filter1d: sign must be +-1");
  const Shape& s = x.shape();
  require(s.size() == 4, "circular_filter1d: input must be [N,C,H,W]");
  const std::int64_t L = axis == 0 ? s[2] : s[3];
  require((static_cast<std::int64_t>(kernel.size()) - 1) * dilation + 1 <= L,
          "circular_filter1d: dilated kernel longer than extent " +
              std::to_string(L));
  std::vector<std::vector<detail::Tap>> taps(static_cast<std::size_t>(L));
  for (std::int64_t o = 0; o < L; ++o) {
    auto& tv = taps[static_cast<std::size_t>(o)];
    for (std::size_t k = 0; k < kernel.size(); ++k)
      tv.push_back(
          {detail::wrap(o + sign * dilation * static_cast<std::int64_t>(k), L),
           kernel[k]});
  }
  return detail::gather1d_axis(x, axis, L, taps, "circular_filter1d");
}

}  // namespace hyfusion

