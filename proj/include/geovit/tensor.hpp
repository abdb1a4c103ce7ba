// Copyright 2026 The geovit Authors. All Rights Reserved.
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

// Dense row-major tensors with define-by-run reverse-mode differentiation.
//
// A Tensor<T> is a cheap handle onto shared storage. Storage is immutable once
// an op has produced it; only leaves may be updated in place (optimizer steps).
// Every op run while grad mode is on and at least one input requires a
// gradient records a Node that remembers its inputs and a backward closure.
// backward() orders the reachable nodes topologically, runs each closure
// exactly once and then releases the recorded graph.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <type_traits>
#include <unordered_set>
#include <utility>
#include <vector>

#include "geovit/error.hpp"

namespace geovit {

enum class DType : std::uint32_t { Float32 = 0, Float64 = 1 };

template <typename T>
constexpr DType dtype_of() {
  static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>,
                "tensors hold float or double");
  return std::is_same_v<T, float> ? DType::Float32 : DType::Float64;
}

inline const char* dtype_name(DType d) { return d == DType::Float32 ? "float32" : "float64"; }

inline std::int64_t numel_of(const Shape& shape) {
  std::int64_t n = 1;
  for (auto e : shape) n *= e;
  return n;
}

inline void check_shape(const Shape& shape, const char* where) {
  for (auto e : shape) {
    if (e <= 0) throw ShapeError(std::string(where) + ": non-positive extent in " + to_string(shape));
  }
}

template <typename T>
class Tensor;

namespace detail {

template <typename T>
struct Storage;

template <typename T>
struct Node {
  using BackwardFn = std::function<void(const Storage<T>& out, std::span<const T> grad_out)>;

  const char* op = "";
  std::vector<std::shared_ptr<Storage<T>>> inputs;
  BackwardFn backward;
  bool consumed = false;
};

template <typename T>
struct Storage {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;  // empty until a gradient has been accumulated
  bool requires_grad = false;
  std::shared_ptr<Node<T>> grad_fn;

  // Returns the gradient buffer, allocating zeros on first use.
  T* grad_buffer() {
    if (grad.empty()) grad.assign(data.size(), T(0));
    return grad.data();
  }
};

inline bool& grad_mode_flag() {
  thread_local bool enabled = true;
  return enabled;
}

}  // namespace detail

inline bool grad_enabled() { return detail::grad_mode_flag(); }

/// Disables graph recording on the current thread for the guard's lifetime.
class NoGradGuard {
 public:
  NoGradGuard() : previous_(detail::grad_mode_flag()) { detail::grad_mode_flag() = false; }
  ~NoGradGuard() { detail::grad_mode_flag() = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

template <typename T>
class Tensor {
 public:
  using value_type = T;
  using StoragePtr = std::shared_ptr<detail::Storage<T>>;

  Tensor() = default;

  Tensor(Shape shape, std::vector<T> data) : storage_(std::make_shared<detail::Storage<T>>()) {
    check_shape(shape, "Tensor");
    if (numel_of(shape) != static_cast<std::int64_t>(data.size())) {
      throw ShapeError("Tensor: shape " + to_string(shape) + " holds " +
                       std::to_string(numel_of(shape)) + " elements, buffer has " +
                       std::to_string(data.size()));
    }
    storage_->shape = std::move(shape);
    storage_->data = std::move(data);
  }

  static Tensor full(const Shape& shape, T value) {
    check_shape(shape, "Tensor::full");
    return Tensor(shape, std::vector<T>(static_cast<std::size_t>(numel_of(shape)), value));
  }
  static Tensor zeros(const Shape& shape) { return full(shape, T(0)); }
  static Tensor ones(const Shape& shape) { return full(shape, T(1)); }
  static Tensor scalar(T value) { return Tensor({1}, {value}); }

  static Tensor randn(const Shape& shape, std::mt19937_64& rng, T stddev = T(1)) {
    std::normal_distribution<double> dist(0.0, static_cast<double>(stddev));
    std::vector<T> v(static_cast<std::size_t>(numel_of(shape)));
    for (auto& x : v) x = static_cast<T>(dist(rng));
    return Tensor(shape, std::move(v));
  }

  static Tensor uniform(const Shape& shape, std::mt19937_64& rng, T lo, T hi) {
    std::uniform_real_distribution<double> dist(static_cast<double>(lo), static_cast<double>(hi));
    std::vector<T> v(static_cast<std::size_t>(numel_of(shape)));
    for (auto& x : v) x = static_cast<T>(dist(rng));
    return Tensor(shape, std::move(v));
  }

  /// Normal samples redrawn until they fall inside two standard deviations.
  static Tensor trunc_normal(const Shape& shape, std::mt19937_64& rng, T stddev) {
    std::normal_distribution<double> dist(0.0, 1.0);
    std::vector<T> v(static_cast<std::size_t>(numel_of(shape)));
    for (auto& x : v) {
      double s;
      do {
        s = dist(rng);
      } while (std::abs(s) > 2.0);
      x = static_cast<T>(s * static_cast<double>(stddev));
    }
    return Tensor(shape, std::move(v));
  }

  bool defined() const { return static_cast<bool>(storage_); }
  const Shape& shape() const { return storage_->shape; }
  std::int64_t rank() const { return static_cast<std::int64_t>(storage_->shape.size()); }
  std::int64_t dim(std::int64_t axis) const {
    const auto r = rank();
    if (axis < 0) axis += r;
    if (axis < 0 || axis >= r) throw RankError("Tensor::dim: axis out of range for " + to_string(shape()));
    return storage_->shape[static_cast<std::size_t>(axis)];
  }
  std::int64_t numel() const { return static_cast<std::int64_t>(storage_->data.size()); }
  static constexpr DType dtype() { return dtype_of<T>(); }

  std::span<const T> data() const { return storage_->data; }
  const std::vector<T>& vec() const { return storage_->data; }

  /// In-place access for leaves only (optimizer updates, fixtures).
  std::span<T> mutable_data() {
    if (storage_->grad_fn) throw Error("Tensor::mutable_data: tensor is not a leaf");
    return storage_->data;
  }

  T item() const {
    if (numel() != 1) throw RankError("Tensor::item: tensor has shape " + to_string(shape()));
    return storage_->data[0];
  }

  T operator[](std::int64_t i) const { return storage_->data[static_cast<std::size_t>(i)]; }

  bool requires_grad() const { return storage_->requires_grad; }
  bool is_leaf() const { return !storage_->grad_fn; }

  Tensor& set_requires_grad(bool on = true) {
    if (storage_->grad_fn) throw Error("Tensor::set_requires_grad: tensor is not a leaf");
    storage_->requires_grad = on;
    return *this;
  }

  bool has_grad() const { return !storage_->grad.empty(); }
  std::span<const T> grad_data() const { return storage_->grad; }
  std::span<T> mutable_grad_data() { return storage_->grad; }

  /// The accumulated gradient as a fresh tensor (zeros when none has flowed).
  Tensor grad() const {
    if (storage_->grad.empty()) return zeros(shape());
    return Tensor(shape(), storage_->grad);
  }

  void zero_grad() {
    storage_->grad.clear();
    storage_->grad.shrink_to_fit();
  }

  /// Copy without graph history.
  Tensor detach() const { return Tensor(shape(), storage_->data); }

  template <typename U>
  Tensor<U> cast() const {
    std::vector<U> v(storage_->data.begin(), storage_->data.end());
    return Tensor<U>(shape(), std::move(v));
  }

  const StoragePtr& storage() const { return storage_; }
  explicit Tensor(StoragePtr s) : storage_(std::move(s)) {}

 private:
  StoragePtr storage_;
};

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

/// Wraps a freshly computed buffer as an op result and records the graph node
/// when grad mode is on and any input requires a gradient.
template <typename T>
Tensor<T> make_op_result(const char* op, Shape shape, std::vector<T> data,
                         const std::vector<Tensor<T>>& inputs,
                         typename detail::Node<T>::BackwardFn backward) {
  Tensor<T> out(std::move(shape), std::move(data));
  if (!grad_enabled()) return out;
  bool any = false;
  for (const auto& in : inputs) any = any || in.requires_grad();
  if (!any) return out;
  auto node = std::make_shared<detail::Node<T>>();
  node->op = op;
  node->backward = std::move(backward);
  for (const auto& in : inputs) node->inputs.push_back(in.storage());
  out.storage()->requires_grad = true;
  out.storage()->grad_fn = std::move(node);
  return out;
}

template <typename T>
Tensor<T> make_op_result(const char* op, Shape shape, std::vector<T> data,
                         std::initializer_list<Tensor<T>> inputs,
                         typename detail::Node<T>::BackwardFn backward) {
  return make_op_result<T>(op, std::move(shape), std::move(data), std::vector<Tensor<T>>(inputs),
                           std::move(backward));
}

/// Gradient sink for an op input, or nullptr when that input needs none.
template <typename T>
T* grad_sink(const std::shared_ptr<detail::Storage<T>>& s) {
  return s->requires_grad ? s->grad_buffer() : nullptr;
}

/// Runs reverse-mode differentiation from a scalar loss. Leaf gradients
/// accumulate; the recorded graph is released afterwards.
template <typename T>
void backward(const Tensor<T>& loss) {
  if (!loss.defined() || loss.numel() != 1) {
    throw RankError("backward: loss must be a scalar, got " +
                    (loss.defined() ? to_string(loss.shape()) : std::string("undefined")));
  }
  using StoragePtr = std::shared_ptr<detail::Storage<T>>;
  const StoragePtr& root = loss.storage();
  if (!root->requires_grad) throw StaleGraphError("backward: loss carries no recorded graph");
  if (!root->grad_fn) {
    root->grad_buffer()[0] += T(1);
    return;
  }

  // Iterative post-order DFS gives a topological order (inputs first). The
  // order holds owning pointers: releasing a node's inputs below must not free
  // storages that are still waiting for their turn.
  std::vector<StoragePtr> order;
  std::unordered_set<detail::Storage<T>*> seen;
  std::vector<std::pair<StoragePtr, std::size_t>> stack;
  stack.emplace_back(root, 0);
  seen.insert(root.get());
  while (!stack.empty()) {
    auto& top = stack.back();
    const auto& fn = top.first->grad_fn;
    if (fn && fn->consumed) {
      throw StaleGraphError(std::string("backward: graph through '") + fn->op +
                            "' was already consumed; re-run the forward pass");
    }
    if (fn && top.second < fn->inputs.size()) {
      StoragePtr child = fn->inputs[top.second++];
      if (child->grad_fn && seen.insert(child.get()).second) stack.emplace_back(std::move(child), 0);
      continue;
    }
    order.push_back(std::move(top.first));
    stack.pop_back();
  }

  root->grad.assign(1, T(1));
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::Storage<T>* s = it->get();
    auto node = s->grad_fn;
    if (!s->grad.empty() && node->backward) node->backward(*s, s->grad);
    node->consumed = true;
    node->backward = nullptr;
    node->inputs.clear();
    s->grad.clear();
    s->grad.shrink_to_fit();
  }
}

}  // namespace geovit
