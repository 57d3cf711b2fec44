#pragma once

#include <algorithm>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "tsgan/error.hpp"

namespace tsgan {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
}

inline std::string shape_str(const Shape& shape) {
  std::string out = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += ", ";
    out += std::to_string(shape[i]);
  }
  return out + "]";
}

/// Thread-local switch controlling whether new operations are recorded for
/// backpropagation.
class GradMode {
 public:
  static bool enabled() { return flag(); }
  static void set_enabled(bool on) { flag() = on; }

 private:
  static bool& flag() {
    thread_local bool on = true;
    return on;
  }
};

/// Disables graph recording for the lifetime of the guard.
class NoGradGuard {
 public:
  NoGradGuard() : previous_(GradMode::enabled()) { GradMode::set_enabled(false); }
  ~NoGradGuard() { GradMode::set_enabled(previous_); }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

namespace detail {

struct Node {
  Shape shape;
  std::vector<float> data;
  std::vector<float> grad;  // empty until a gradient is first accumulated
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(const Node&)> backward;  // pushes this->grad into parents

  std::span<float> grad_buffer() {
    if (grad.size() != data.size()) grad.assign(data.size(), 0.0f);
    return grad;
  }
};

}  // namespace detail

/// Dense row-major float32 array with optional gradient tracking.
///
/// A Tensor is a handle: copies share storage and graph position. Use
/// clone() for an independent copy and detach() to cut the graph.
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(Shape shape, float fill = 0.0f) : node_(std::make_shared<detail::Node>()) {
    const std::size_t n = shape_numel(shape);
    node_->shape = std::move(shape);
    node_->data.assign(n, fill);
  }

  Tensor(Shape shape, std::vector<float> values) : node_(std::make_shared<detail::Node>()) {
    if (shape_numel(shape) != values.size())
      throw DimensionError("tensor shape " + shape_str(shape) + " does not match " +
                           std::to_string(values.size()) + " values");
    node_->shape = std::move(shape);
    node_->data = std::move(values);
  }

  static Tensor scalar(float value) { return Tensor(Shape{1}, std::vector<float>{value}); }

  bool defined() const noexcept { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t axis) const { return node_->shape.at(axis); }
  std::size_t numel() const { return node_->data.size(); }

  std::span<float> data() { return node_->data; }
  std::span<const float> data() const { return node_->data; }
  float operator[](std::size_t i) const { return node_->data[i]; }

  bool has_grad() const { return node_->grad.size() == node_->data.size(); }
  std::span<float> grad() { return node_->grad_buffer(); }
  std::span<const float> grad() const { return node_->grad_buffer(); }
  void zero_grad() { node_->grad.clear(); }

  bool requires_grad() const { return node_->requires_grad; }
  Tensor& set_requires_grad(bool on) {
    node_->requires_grad = on;
    return *this;
  }
  bool is_leaf() const { return !node_->backward; }

  float item() const {
    if (numel() != 1) throw UsageError("item() on tensor of shape " + shape_str(shape()));
    return node_->data[0];
  }

  Tensor clone() const {
    Tensor out(node_->shape, node_->data);
    out.node_->requires_grad = node_->requires_grad;
    return out;
  }

  /// A new leaf holding a copy of the values; never requires grad.
  Tensor detach() const { return Tensor(node_->shape, node_->data); }

  const std::shared_ptr<detail::Node>& node() const { return node_; }

 private:
  std::shared_ptr<detail::Node> node_;
};

namespace detail {

/// Wraps freshly computed values as an op output. The backward closure is
/// attached only when recording is enabled and some input requires grad.
inline Tensor make_result(Shape shape, std::vector<float> values,
                          std::initializer_list<const Tensor*> inputs,
                          std::function<void(const Node&)> backward_fn) {
  Tensor out(std::move(shape), std::move(values));
  if (!GradMode::enabled()) return out;
  auto& node = *out.node();
  for (const Tensor* in : inputs) {
    if (in->defined() && in->requires_grad()) node.parents.push_back(in->node());
  }
  if (!node.parents.empty()) {
    node.requires_grad = true;
    node.backward = std::move(backward_fn);
  }
  return out;
}

/// Gradient buffer of `node` if it participates in backprop, empty otherwise.
inline std::span<float> grad_sink(const std::shared_ptr<Node>& node) {
  if (!node->requires_grad) return {};
  return node->grad_buffer();
}

}  // namespace detail

/// Reverse-mode sweep from a scalar loss. Gradients accumulate into every
/// reachable tensor that requires grad; the recorded graph is released
/// afterwards, so each forward pass supports exactly one backward call.
inline void backward(const Tensor& loss) {
  if (!loss.defined() || loss.numel() != 1)
    throw UsageError("backward() needs a scalar loss, got shape " +
                     (loss.defined() ? shape_str(loss.shape()) : std::string("<undefined>")));

  detail::Node* root = loss.node().get();
  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> seen;
  std::vector<std::pair<detail::Node*, std::size_t>> stack{{root, 0}};
  seen.insert(root);
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      detail::Node* parent = node->parents[next++].get();
      if (seen.insert(parent).second) stack.emplace_back(parent, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  root->grad_buffer()[0] += 1.0f;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::Node* node = *it;
    if (node->backward && !node->grad.empty()) node->backward(*node);
  }
  for (detail::Node* node : order) {
    if (!node->backward) continue;
    node->backward = nullptr;
    node->parents.clear();
    if (node != root) {
      node->grad.clear();
      node->grad.shrink_to_fit();
    }
  }
}

}  // namespace tsgan
