#pragma once

// Dense row-major tensors and the reverse-mode tape that differentiates them.
//
// A Tensor is a cheap shared handle. Leaves are created by user code
// (parameters, inputs); every primitive op produces a non-leaf output and, when
// any input requires a gradient and the tape is recording, appends one backward
// closure to the tape. Tape::backward replays those closures in reverse.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <numeric>
#include <span>
#include <string>
#include <string_view>
#include <unordered_set>
#include <utility>
#include <vector>

#include "sinformer/errors.hpp"

namespace sinformer {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

template <typename T>
struct TensorNode {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;  // empty unless requires_grad
  bool requires_grad = false;
  bool leaf = true;
};

template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;

  Tensor(Shape shape, std::vector<T> values, bool requires_grad = false)
      : node_(std::make_shared<TensorNode<T>>()) {
    for (std::size_t d : shape)
      if (d == 0) throw DimensionError("tensor dimensions must be positive, got " + shape_str(shape));
    if (shape_size(shape) != values.size())
      throw DimensionError("tensor data length " + std::to_string(values.size()) +
                           " does not match shape " + shape_str(shape));
    node_->shape = std::move(shape);
    node_->data = std::move(values);
    set_requires_grad(requires_grad);
  }

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    const std::size_t n = shape_size(shape);
    return Tensor(std::move(shape), std::vector<T>(n, T{0}), requires_grad);
  }

  static Tensor full(Shape shape, T value, bool requires_grad = false) {
    const std::size_t n = shape_size(shape);
    return Tensor(std::move(shape), std::vector<T>(n, value), requires_grad);
  }

  static Tensor scalar(T value, bool requires_grad = false) {
    return Tensor(Shape{}, std::vector<T>{value}, requires_grad);
  }

  static Tensor matrix(std::initializer_list<std::initializer_list<T>> rows, bool requires_grad = false) {
    const std::size_t r = rows.size();
    const std::size_t c = r ? rows.begin()->size() : 0;
    std::vector<T> v;
    v.reserve(r * c);
    for (const auto& row : rows) {
      if (row.size() != c) throw DimensionError("ragged matrix literal");
      v.insert(v.end(), row.begin(), row.end());
    }
    return Tensor(Shape{r, c}, std::move(v), requires_grad);
  }

  bool defined() const noexcept { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t size() const { return node_->data.size(); }
  std::size_t rows() const { return rank() == 0 ? 1 : node_->shape[0]; }
  std::size_t cols() const { return rank() < 2 ? (rank() == 1 ? node_->shape[0] : 1) : size() / node_->shape[0]; }

  std::span<T> data() { return node_->data; }
  std::span<const T> data() const { return node_->data; }
  // Gradient buffers are accumulation targets shared by every handle to the
  // node, so they stay writable through const handles.
  std::span<T> grad() const { return node_->grad; }

  T item() const {
    if (size() != 1) throw ContractError("item() on tensor of shape " + shape_str(shape()));
    return node_->data[0];
  }
  T& operator[](std::size_t i) { return node_->data[i]; }
  const T& operator[](std::size_t i) const { return node_->data[i]; }
  T& at(std::size_t r, std::size_t c) { return node_->data[r * cols() + c]; }
  const T& at(std::size_t r, std::size_t c) const { return node_->data[r * cols() + c]; }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool on) {
    node_->requires_grad = on;
    if (on)
      node_->grad.assign(node_->data.size(), T{0});
    else
      node_->grad.clear();
  }
  bool is_leaf() const { return node_->leaf; }

  void zero_grad() { std::fill(node_->grad.begin(), node_->grad.end(), T{0}); }

  /// Deep copy that keeps the requires_grad flag but starts a new leaf.
  Tensor clone() const { return Tensor(shape(), node_->data, requires_grad()); }

  /// Deep copy detached from any graph.
  Tensor detach() const { return Tensor(shape(), node_->data, false); }

  Tensor reshaped(Shape shape) const {
    if (shape_size(shape) != size())
      throw DimensionError("cannot reshape " + shape_str(this->shape()) + " to " + shape_str(shape));
    return Tensor(std::move(shape), node_->data, false);
  }

  const std::shared_ptr<TensorNode<T>>& node() const { return node_; }
  bool same(const Tensor& other) const { return node_ == other.node_; }

  /// Used by primitive ops to build their output node.
  static Tensor make_result(Shape shape, std::vector<T> values, bool tracked) {
    Tensor t(std::move(shape), std::move(values), tracked);
    t.node_->leaf = false;
    return t;
  }

 private:
  std::shared_ptr<TensorNode<T>> node_;
};

template <typename T>
class Tape {
 public:
  enum class Mode { record, inference };

  explicit Tape(Mode mode = Mode::record) : mode_(mode) {}

  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  Tape(Tape&&) = default;
  Tape& operator=(Tape&&) = default;

  bool recording() const noexcept { return mode_ == Mode::record; }

  /// True when an op over these inputs must be recorded.
  bool tracks(std::initializer_list<const Tensor<T>*> inputs) const {
    if (!recording()) return false;
    for (const Tensor<T>* t : inputs)
      if (t && t->defined() && t->requires_grad()) return true;
    return false;
  }

  bool tracks(std::span<const Tensor<T>> inputs) const {
    if (!recording()) return false;
    for (const Tensor<T>& t : inputs)
      if (t.requires_grad()) return true;
    return false;
  }

  void record(std::string_view op, const Tensor<T>& output, std::vector<Tensor<T>> inputs,
              std::function<void()> backward_fn) {
    Entry e;
    e.op = std::string(op);
    e.output = output.node();
    e.inputs.reserve(inputs.size());
    for (auto& t : inputs)
      if (t.defined()) e.inputs.push_back(t.node());
    e.backward = std::move(backward_fn);
    entries_.push_back(std::move(e));
  }

  /// Populates gradients of every requires_grad tensor reachable from loss.
  /// Leaf gradients accumulate across calls; call zero_grad() to reset them.
  /// Intermediate gradients are cleared at the start of each call.
  void backward(const Tensor<T>& loss) {
    if (!loss.defined() || loss.size() != 1)
      throw ContractError("backward: loss must be a scalar, got shape " +
                          (loss.defined() ? shape_str(loss.shape()) : std::string("<undefined>")));
    const bool produced = std::any_of(entries_.rbegin(), entries_.rend(),
                                      [&](const Entry& e) { return e.output == loss.node(); });
    if (!produced) throw ContractError("backward: loss was not produced through this tape");
    for (auto& e : entries_) std::fill(e.output->grad.begin(), e.output->grad.end(), T{0});
    loss.node()->grad[0] += T{1};
    visit_order_.clear();
    visit_order_.reserve(entries_.size());
    for (std::size_t i = entries_.size(); i-- > 0;) {
      visit_order_.push_back(i);
      entries_[i].backward();
    }
  }

  /// Zeroes the gradient buffers of every tensor this tape has touched.
  void zero_grad() {
    for (auto& e : entries_) {
      std::fill(e.output->grad.begin(), e.output->grad.end(), T{0});
      for (auto& in : e.inputs) std::fill(in->grad.begin(), in->grad.end(), T{0});
    }
  }

  void clear() {
    entries_.clear();
    visit_order_.clear();
  }

  std::size_t size() const noexcept { return entries_.size(); }
  std::string_view op_name(std::size_t i) const { return entries_.at(i).op; }
  /// Entry indices in the order the last backward() visited them.
  const std::vector<std::size_t>& last_visit_order() const noexcept { return visit_order_; }

 private:
  struct Entry {
    std::string op;
    std::shared_ptr<TensorNode<T>> output;
    std::vector<std::shared_ptr<TensorNode<T>>> inputs;
    std::function<void()> backward;
  };

  Mode mode_;
  std::vector<Entry> entries_;
  std::vector<std::size_t> visit_order_;
};

}  // namespace sinformer
