#pragma once

// Shaped double-precision arrays with reverse-mode differentiation.
//
// A Tensor is a cheap handle onto a shared node. Operations in ops.hpp
// produce new nodes that remember their inputs whenever gradient recording is
// enabled and at least one input requires a gradient. backward() replays the
// recorded nodes in reverse topological order.

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "acn/errors.hpp"

namespace acn {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty == absent
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward;

  bool is_leaf() const { return inputs.empty(); }
  // Gradient buffer of this node, zero-filled on first access.
  std::span<double> grad_buffer();
};

}  // namespace detail

class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t dim() const { return node_->shape.size(); }
  std::size_t size(std::size_t axis) const { return node_->shape.at(axis); }
  std::size_t numel() const { return node_->data.size(); }

  std::span<const double> data() const { return node_->data; }
  // Mutable access is meant for leaves (parameters, inputs); writing into a
  // recorded intermediate invalidates its saved state.
  std::span<double> mutable_data() { return node_->data; }
  double item() const;
  double at(std::size_t row, std::size_t col) const;

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool on);
  bool has_grad() const { return !node_->grad.empty(); }
  std::span<const double> grad() const { return node_->grad; }
  void zero_grad();
  void clear_grad() { node_->grad.clear(); }

  const char* op() const { return node_->op; }
  bool is_leaf() const { return node_->is_leaf(); }

  // Identity of the underlying node; two handles are equal iff they share it.
  const void* id() const { return node_.get(); }
  bool same(const Tensor& other) const { return node_ == other.node_; }

  // Fresh leaf with copied data and no recorded history.
  Tensor detach() const;

  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
  const std::shared_ptr<detail::Node>& node() const { return node_; }

 private:
  std::shared_ptr<detail::Node> node_;
};

// Thread-local switch for gradient recording.
bool grad_enabled();

class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

// Topologically ordered view of the nodes a tensor depends on.
struct RecordEntry {
  std::string op;
  std::vector<std::size_t> inputs;  // indices of earlier entries
  bool requires_grad = false;
  bool leaf = false;
};

struct ComputationRecord {
  std::vector<RecordEntry> entries;  // last entry is the root
  std::vector<std::shared_ptr<detail::Node>> nodes;
};

ComputationRecord record_of(const Tensor& root);

// Accumulates d(loss)/d(leaf) into every reachable leaf that requires a
// gradient. Intermediate gradients are recomputed from scratch on each call.
void backward(const Tensor& loss);

}  // namespace acn
