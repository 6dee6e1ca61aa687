// Copyright (c) 2026 The nash Authors. All Rights Reserved.
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

#include <algorithm>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace nash {

/// Tensor extents. Feature maps use N,C,H,W order.
using Shape = std::vector<int>;

inline std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (int d : shape) {
    if (d < 0) throw std::invalid_argument("negative extent in shape");
    n *= static_cast<std::size_t>(d);
  }
  return n;
}

inline std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

struct TensorImpl {
  Shape shape;
  std::vector<float> data;
  std::vector<float> grad;  // empty until first touched
  bool requires_grad = false;

  void ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), 0.0f);
  }
};

/// Shared handle to a dense float32 buffer plus its gradient accumulator.
///
/// Copies alias the same storage (handle semantics); use clone() for a deep
/// copy. A default-constructed Tensor is undefined and only valid as a
/// placeholder.
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(Shape shape, float fill = 0.0f, bool requires_grad = false)
      : impl_(std::make_shared<TensorImpl>()) {
    impl_->data.assign(nash::numel(shape), fill);
    impl_->shape = std::move(shape);
    impl_->requires_grad = requires_grad;
  }

  Tensor(Shape shape, std::vector<float> data, bool requires_grad = false)
      : impl_(std::make_shared<TensorImpl>()) {
    if (nash::numel(shape) != data.size()) {
      throw std::invalid_argument("tensor data length " + std::to_string(data.size()) +
                                  " does not match shape " + to_string(shape));
    }
    impl_->shape = std::move(shape);
    impl_->data = std::move(data);
    impl_->requires_grad = requires_grad;
  }

  bool defined() const noexcept { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  int dim(std::size_t i) const { return impl_->shape.at(i); }
  std::size_t rank() const { return impl_->shape.size(); }
  std::size_t numel() const { return impl_->data.size(); }

  std::span<float> data() { return impl_->data; }
  std::span<const float> data() const { return impl_->data; }

  /// Gradient buffer; allocated (zero) on first access. Writable through a
  /// const handle: backward closures hold const copies of their operands.
  std::span<float> grad() const {
    impl_->ensure_grad();
    return impl_->grad;
  }
  bool has_grad() const { return impl_->grad.size() == impl_->data.size(); }

  bool requires_grad() const { return impl_ && impl_->requires_grad; }
  void set_requires_grad(bool v) { impl_->requires_grad = v; }
  void zero_grad() {
    if (has_grad()) std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0f);
  }

  float item() const {
    if (numel() != 1) throw std::invalid_argument("item() on tensor with shape " + to_string(shape()));
    return impl_->data[0];
  }

  float& operator[](std::size_t i) { return impl_->data[i]; }
  float operator[](std::size_t i) const { return impl_->data[i]; }

  /// Deep copy of the values; the copy is a fresh leaf without gradient.
  Tensor clone() const { return Tensor(shape(), impl_->data, false); }

  TensorImpl* impl() const noexcept { return impl_.get(); }
  const std::shared_ptr<TensorImpl>& shared() const noexcept { return impl_; }

 private:
  std::shared_ptr<TensorImpl> impl_;
};

/// Ordered record of primitive applications for reverse-mode differentiation.
///
/// Each entry keeps its operands and output alive and carries a closure that
/// reads the output gradient and accumulates into operand gradients. A tape
/// and the tensors it references form a single-threaded unit.
class Tape {
 public:
  using Backward = std::function<void()>;

  void record(std::vector<Tensor> inputs, const Tensor& output, Backward backward) {
    entries_.push_back(Entry{std::move(inputs), output, std::move(backward)});
  }

  /// Seeds d(loss)/d(loss) = 1 and replays entries in reverse order. Gradients
  /// of intermediate outputs are cleared first, so leaf gradients accumulate
  /// additively across repeated calls while intermediates never do.
  void backward(const Tensor& loss) {
    if (loss.numel() != 1) {
      throw std::invalid_argument("backward() needs a scalar loss, got " + to_string(loss.shape()));
    }
    for (auto& e : entries_) {
      e.output.impl()->ensure_grad();
      std::fill(e.output.impl()->grad.begin(), e.output.impl()->grad.end(), 0.0f);
    }
    loss.impl()->ensure_grad();
    loss.impl()->grad[0] += 1.0f;
    for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) it->backward();
  }

  void reset() { entries_.clear(); }
  std::size_t size() const noexcept { return entries_.size(); }
  bool empty() const noexcept { return entries_.empty(); }

 private:
  struct Entry {
    std::vector<Tensor> inputs;
    Tensor output;
    Backward backward;
  };
  std::vector<Entry> entries_;
};

/// True when an op producing from these inputs should be recorded.
inline bool should_record(const Tape* tape, std::initializer_list<const Tensor*> inputs) {
  if (tape == nullptr) return false;
  return std::any_of(inputs.begin(), inputs.end(), [](const Tensor* t) { return t->requires_grad(); });
}

}  // namespace nash
