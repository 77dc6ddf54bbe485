#include "acn/tensor.hpp"

#include <algorithm>
#include <sstream>
#include <unordered_map>
#include <utility>

namespace acn {

namespace {
thread_local bool g_grad_enabled = true;
}

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

std::span<double> detail::Node::grad_buffer() {
  if (grad.empty()) grad.assign(data.size(), 0.0);
  return grad;
}

static void check_shape(const Shape& shape) {
  if (shape.empty()) throw DimensionError("tensor shape must have at least one dimension");
  for (auto d : shape) {
    if (d == 0) throw DimensionError("tensor dims must be positive, got " + shape_str(shape));
  }
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  check_shape(shape);
  auto node = std::make_shared<detail::Node>();
  node->data.assign(shape_numel(shape), value);
  node->shape = std::move(shape);
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
  check_shape(shape);
  if (values.size() != shape_numel(shape)) {
    throw DimensionError("tensor data length " + std::to_string(values.size()) + " does not match shape " +
                         shape_str(shape));
  }
  auto node = std::make_shared<detail::Node>();
  node->shape = std::move(shape);
  node->data = std::move(values);
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

Tensor Tensor::scalar(double value, bool requires_grad) { return from({1}, {value}, requires_grad); }

double Tensor::item() const {
  if (numel() != 1) throw DimensionError("item() on tensor of shape " + shape_str(shape()));
  return node_->data[0];
}

double Tensor::at(std::size_t row, std::size_t col) const {
  if (dim() != 2) throw DimensionError("at(row, col) needs a matrix, got " + shape_str(shape()));
  return node_->data.at(row * node_->shape[1] + col);
}

void Tensor::set_requires_grad(bool on) {
  node_->requires_grad = on;
  if (!on) node_->grad.clear();
}

void Tensor::zero_grad() {
  if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

Tensor Tensor::detach() const {
  auto node = std::make_shared<detail::Node>();
  node->shape = node_->shape;
  node->data = node_->data;
  return Tensor(std::move(node));
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

ComputationRecord record_of(const Tensor& root) {
  ComputationRecord record;
  std::unordered_map<const detail::Node*, std::size_t> index;
  // Iterative post-order DFS; inputs are visited in declaration order.
  std::vector<std::pair<detail::Node*, std::size_t>> stack;
  stack.emplace_back(root.node().get(), 0);
  std::unordered_map<const detail::Node*, bool> on_stack;
  on_stack[root.node().get()] = true;
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      detail::Node* child = node->inputs[next++].get();
      if (!index.count(child) && !on_stack[child]) {
        on_stack[child] = true;
        stack.emplace_back(child, 0);
      }
      continue;
    }
    RecordEntry entry;
    entry.op = node->op;
    entry.requires_grad = node->requires_grad;
    entry.leaf = node->is_leaf();
    for (const auto& in : node->inputs) entry.inputs.push_back(index.at(in.get()));
    index[node] = record.entries.size();
    record.entries.push_back(std::move(entry));
    std::shared_ptr<detail::Node> owner;
    if (node == root.node().get()) {
      owner = root.node();
    } else {
      // The parent still on the stack owns a shared_ptr to this node.
      auto& parent = stack[stack.size() - 2];
      owner = parent.first->inputs[parent.second - 1];
    }
    record.nodes.push_back(std::move(owner));
    on_stack[node] = false;
    stack.pop_back();
  }
  return record;
}

void backward(const Tensor& loss) {
  if (!loss.defined() || loss.numel() != 1) {
    throw DimensionError("backward() needs a scalar loss, got " +
                         (loss.defined() ? shape_str(loss.shape()) : std::string("undefined")));
  }
  if (!loss.requires_grad()) return;
  ComputationRecord record = record_of(loss);
  for (auto& node : record.nodes) {
    if (!node->is_leaf()) node->grad.clear();
  }
  loss.node()->grad_buffer()[0] += 1.0;
  for (auto it = record.nodes.rbegin(); it != record.nodes.rend(); ++it) {
    detail::Node& node = **it;
    if (node.is_leaf() || !node.requires_grad || node.grad.empty()) continue;
    node.backward(node);
  }
  // Intermediate buffers are not part of the result.
  for (auto& node : record.nodes) {
    if (!node->is_leaf()) node->grad.clear();
  }
}

}  // namespace acn
