// Copyright 2026 The DSAN Authors. All Rights Reserved.
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
// ==============================================================================

#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace dsan {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {

struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until the first gradient contribution
  bool requires_grad = false;

  // Returns the gradient buffer, allocating zeros on first use.
  std::vector<double>& grad_buffer() {
    if (grad.empty()) grad.assign(data.size(), 0.0);
    return grad;
  }
};

}  // namespace detail

/// Dense row-major float64 tensor with optional gradient tracking.
///
/// Tensor is a shared handle: copies alias the same storage. Use clone() for a
/// deep copy. Operations in dsan::ops record onto the thread's active Tape
/// whenever one of their inputs requires a gradient.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> values);

  static Tensor scalar(double value);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const;

  std::span<double> data();
  std::span<const double> data() const;
  double item() const;

  bool requires_grad() const;
  Tensor& set_requires_grad(bool value);

  bool has_grad() const;
  // Gradient values; zeros if no contribution has arrived yet.
  std::span<double> grad();
  std::span<const double> grad() const;
  void zero_grad();

  Tensor clone() const;   // deep copy of values, no grad tracking
  Tensor detach() const;  // alias of clone(), reads better at call sites

  detail::TensorImpl* impl() const { return impl_.get(); }
  const std::shared_ptr<detail::TensorImpl>& shared_impl() const { return impl_; }

 private:
  std::shared_ptr<detail::TensorImpl> impl_;
};

/// Ordered record of executed differentiable operations.
///
/// backward() replays entries strictly in reverse recording order, so every
/// tensor has received all contributions from its consumers before its own
/// backward closure runs.
class Tape {
 public:
  using BackwardFn = std::function<void()>;

  static Tape& active();  // one tape per thread

  void record(std::string_view op, BackwardFn fn);
  std::size_t size() const { return entries_.size(); }
  std::vector<std::string> op_names() const;
  void clear() { entries_.clear(); }

  bool enabled() const { return enabled_; }
  void set_enabled(bool on) { enabled_ = on; }

  // Seeds root.grad with 1, runs every entry in reverse order and clears the
  // tape. `trace`, when given, receives the visited op names in visit order.
  void backward(const Tensor& root, std::vector<std::string>* trace = nullptr);

 private:
  struct Entry {
    std::string op;
    BackwardFn fn;
  };
  std::vector<Entry> entries_;
  bool enabled_ = true;
};

void backward(const Tensor& root);

/// Disables recording on the active tape for the guard's lifetime.
class NoGradGuard {
 public:
  NoGradGuard() : previous_(Tape::active().enabled()) { Tape::active().set_enabled(false); }
  ~NoGradGuard() { Tape::active().set_enabled(previous_); }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

namespace detail {

// True when the active tape is recording and any input requires a gradient.
bool should_record(std::initializer_list<const Tensor*> inputs);

}  // namespace detail

}  // namespace dsan
