#include "avatarforge/tensor.hpp"

#include <algorithm>
#include <functional>
#include <unordered_set>

#include <fmt/format.h>

namespace avatarforge::ad {

namespace {
thread_local bool g_grad_enabled = true;
thread_local std::uint64_t g_next_seq = 0;

std::shared_ptr<Node> new_node(Shape shape, std::vector<double> value) {
  if (numel(shape) != value.size())
    throw Error(ErrorCode::kShapeMismatch,
                fmt::format("shape {} needs {} values, got {}", shape_str(shape), numel(shape), value.size()));
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  node->seq = g_next_seq++;
  return node;
}
}  // namespace

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (int d : shape) n *= static_cast<std::size_t>(d);
  return n;
}

std::string shape_str(const Shape& shape) { return fmt::format("[{}]", fmt::join(shape, ", ")); }

Tensor Tensor::constant(Shape shape, std::vector<double> values) {
  return Tensor(new_node(std::move(shape), std::move(values)));
}

Tensor Tensor::constant(Shape shape, double fill) {
  const std::size_t n = numel(shape);
  return Tensor(new_node(std::move(shape), std::vector<double>(n, fill)));
}

Tensor Tensor::parameter(Shape shape, std::vector<double> values) {
  auto node = new_node(std::move(shape), std::move(values));
  node->requires_grad = true;
  return Tensor(std::move(node));
}

int Tensor::dim(int axis) const {
  const int r = rank();
  if (axis < 0) axis += r;
  if (axis < 0 || axis >= r)
    throw Error(ErrorCode::kShapeMismatch, fmt::format("axis {} out of range for {}", axis, shape_str(shape())));
  return node_->shape[static_cast<std::size_t>(axis)];
}

double Tensor::item() const {
  if (size() != 1) throw Error(ErrorCode::kNotScalar, fmt::format("item() on shape {}", shape_str(shape())));
  return node_->value[0];
}

Tensor make_result(Shape shape, std::vector<double> value, std::vector<Tensor> parents, const char* op,
                   BackwardFn backward_fn) {
  auto node = new_node(std::move(shape), std::move(value));
  node->op = op;
  if (!g_grad_enabled) return Tensor(std::move(node));
  const bool needs = std::any_of(parents.begin(), parents.end(), [](const Tensor& p) { return p.requires_grad(); });
  if (!needs) return Tensor(std::move(node));
  node->requires_grad = true;
  node->parents.reserve(parents.size());
  for (const Tensor& p : parents) node->parents.push_back(p.node_ptr());
  node->backward = std::move(backward_fn);
  return Tensor(std::move(node));
}

void backward(const Tensor& loss) {
  if (loss.size() != 1)
    throw Error(ErrorCode::kNotScalar, fmt::format("backward needs a scalar loss, got {}", shape_str(loss.shape())));
  if (!loss.requires_grad()) return;

  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<Node*> stack{loss.node()};
  seen.insert(loss.node());
  while (!stack.empty()) {
    Node* n = stack.back();
    stack.pop_back();
    order.push_back(n);
    for (const auto& p : n->parents) {
      if (p->requires_grad && seen.insert(p.get()).second) stack.push_back(p.get());
    }
  }
  std::sort(order.begin(), order.end(), [](const Node* a, const Node* b) { return a->seq > b->seq; });

  loss.node()->grad_buffer()[0] += 1.0;
  for (Node* n : order) {
    if (n->backward && !n->grad.empty()) n->backward(*n);
  }
}

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }
bool grad_enabled() { return g_grad_enabled; }

}  // namespace avatarforge::ad
