#pragma once

#include <cmath>
#include <functional>
#include <memory>
#include <random>
#include <utility>

#include "dynstg/common.hpp"

namespace dynstg {

// Dense 64-bit real tensor with optional reverse-mode gradient participation.
//
// A Tensor is a shared handle to its storage: copies alias the same payload,
// which is what lets tape nodes accumulate gradients into the tensors the
// caller still holds. Forward operations never mutate their inputs.
struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  bool requires_grad = false;
  std::vector<double> grad;  // same length as data when participating

  void ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
  }
};

class Tensor {
 public:
  Tensor() : impl_(std::make_shared<TensorImpl>()) {}

  Tensor(Shape shape, std::vector<double> data)
      : impl_(std::make_shared<TensorImpl>()) {
    if (shape_numel(shape) != data.size())
      throw ShapeError("tensor data length " + std::to_string(data.size()) +
                       " does not match shape " + shape_str(shape));
    impl_->shape = std::move(shape);
    impl_->data = std::move(data);
  }

  static Tensor zeros(const Shape& shape) {
    return Tensor(shape, std::vector<double>(shape_numel(shape), 0.0));
  }
  static Tensor full(const Shape& shape, double v) {
    return Tensor(shape, std::vector<double>(shape_numel(shape), v));
  }
  static Tensor ones(const Shape& shape) { return full(shape, 1.0); }
  static Tensor scalar(double v) { return Tensor(Shape{}, {v}); }

  template <class Rng>
  static Tensor uniform(const Shape& shape, double lo, double hi, Rng& rng) {
    std::uniform_real_distribution<double> dist(lo, hi);
    std::vector<double> d(shape_numel(shape));
    for (double& x : d) x = dist(rng);
    return Tensor(shape, std::move(d));
  }

  const Shape& shape() const { return impl_->shape; }
  std::size_t rank() const { return impl_->shape.size(); }
  std::size_t numel() const { return impl_->data.size(); }
  std::size_t dim(std::size_t i) const { return impl_->shape.at(i); }

  const std::vector<double>& data() const { return impl_->data; }
  std::vector<double>& mutable_data() { return impl_->data; }
  double value() const {
    if (numel() != 1)
      throw ContractError("value() requires a scalar tensor, got shape " +
                          shape_str(shape()));
    return impl_->data[0];
  }
  double at(std::initializer_list<std::size_t> idx) const {
    const auto st = row_strides(impl_->shape);
    std::size_t off = 0, i = 0;
    for (std::size_t v : idx) off += v * st[i++];
    return impl_->data[off];
  }

  bool requires_grad() const { return impl_->requires_grad; }
  Tensor& set_requires_grad(bool on = true) {
    impl_->requires_grad = on;
    if (on) impl_->ensure_grad();
    return *this;
  }
  const std::vector<double>& grad() const { return impl_->grad; }
  void zero_grad() {
    if (!impl_->grad.empty()) std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0);
  }

  // Leaf copy of the values, detached from any tape.
  Tensor detach() const { return Tensor(impl_->shape, impl_->data); }

  bool all_finite() const {
    for (double v : impl_->data)
      if (!std::isfinite(v)) return false;
    return true;
  }

  const std::shared_ptr<TensorImpl>& impl() const { return impl_; }

 private:
  std::shared_ptr<TensorImpl> impl_;
};

class Tape;

namespace detail {
inline std::vector<Tape*>& tape_stack() {
  thread_local std::vector<Tape*> s;
  return s;
}
}  // namespace detail

// Reverse-mode tape. Constructing a Tape makes it the active recorder for the
// current thread; destruction restores the previous one. A tape and the
// tensors recorded on it form a single-threaded unit of work; independent
// tapes may live on different threads.
class Tape {
 public:
  struct Node {
    std::shared_ptr<TensorImpl> out;
    std::function<void()> backprop;  // reads out->grad, accumulates into inputs
  };

  Tape() { detail::tape_stack().push_back(this); }
  ~Tape() { detail::tape_stack().pop_back(); }
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  static Tape* current() {
    auto& s = detail::tape_stack();
    return s.empty() ? nullptr : s.back();
  }

  void record(std::shared_ptr<TensorImpl> out, std::function<void()> fn) {
    nodes_.push_back(Node{std::move(out), std::move(fn)});
  }

  std::size_t size() const { return nodes_.size(); }

  // Seeds d(output)/d(output) = 1 and sweeps the tape once in reverse append
  // order. Leaf gradients accumulate across calls until zeroed; gradients of
  // recorded intermediates are reset per sweep so each call contributes one
  // clean pass.
  void backward(const Tensor& output) {
    if (output.numel() != 1)
      throw ContractError("backward requires a scalar output, got shape " +
                          shape_str(output.shape()));
    auto& impl = *output.impl();
    if (!impl.requires_grad)
      throw ContractError("backward on a tensor that was not recorded for gradients");
    for (auto& node : nodes_) std::fill(node.out->grad.begin(), node.out->grad.end(), 0.0);
    impl.ensure_grad();
    impl.grad[0] += 1.0;
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it)
      if (it->backprop) it->backprop();
  }

 private:
  std::vector<Node> nodes_;
};

// Suspends recording within a scope (teacher forward passes, finite-difference
// probes). Tensors produced inside come out with requires_grad == false.
class NoTape {
 public:
  NoTape() { detail::tape_stack().push_back(nullptr); }
  ~NoTape() { detail::tape_stack().pop_back(); }
  NoTape(const NoTape&) = delete;
  NoTape& operator=(const NoTape&) = delete;
};

inline void backward(const Tensor& output) {
  Tape* t = Tape::current();
  if (!t) throw ContractError("backward called with no active tape");
  t->backward(output);
}

using NamedParam = std::pair<std::string, Tensor>;

}  // namespace dynstg
