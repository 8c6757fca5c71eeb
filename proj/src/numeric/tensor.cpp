#include "mf/numeric/tensor.hpp"

#include <sstream>
#include <unordered_set>

#include "mf/common/error.hpp"

MF_NUMERIC_BEGIN

namespace {
thread_local bool g_grad_enabled = true;
}

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto e : shape) n *= e;
  return n;
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

std::vector<Scalar>& detail::Node::ensure_grad() {
  if (grad.empty()) grad.assign(value.size(), Scalar(0));
  return grad;
}

Tensor::Tensor(Shape shape) : node_(std::make_shared<detail::Node>()) {
  node_->value.assign(shape_numel(shape), Scalar(0));
  node_->shape = std::move(shape);
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  Tensor t(std::move(shape));
  t.set_requires_grad(requires_grad);
  return t;
}

Tensor::Tensor(Shape shape, std::vector<Scalar> values, bool requires_grad)
    : node_(std::make_shared<detail::Node>()) {
  if (shape_numel(shape) != values.size()) {
    throw DimensionError("tensor: shape " + shape_string(shape) + " holds " +
                         std::to_string(shape_numel(shape)) + " values, got " +
                         std::to_string(values.size()));
  }
  node_->shape = std::move(shape);
  node_->value = std::move(values);
  node_->requires_grad = requires_grad;
}

Tensor Tensor::scalar(Scalar v, bool requires_grad) { return Tensor({1}, {v}, requires_grad); }

Tensor Tensor::full(Shape shape, Scalar v, bool requires_grad) {
  const auto n = shape_numel(shape);
  return Tensor(std::move(shape), std::vector<Scalar>(n, v), requires_grad);
}

Tensor Tensor::randn(Shape shape, std::mt19937_64& rng, Scalar stddev, bool requires_grad) {
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<Scalar> v(shape_numel(shape));
  for (auto& x : v) x = static_cast<Scalar>(normal(rng) * stddev);
  return Tensor(std::move(shape), std::move(v), requires_grad);
}

std::size_t Tensor::dim(std::size_t i) const {
  if (i >= rank()) throw DimensionError("dim: axis " + std::to_string(i) + " out of range for " + shape_string(shape()));
  return node_->shape[i];
}

Scalar Tensor::item() const {
  if (numel() != 1) throw ContractError("item: tensor of shape " + shape_string(shape()) + " is not a scalar");
  return node_->value[0];
}

Tensor Tensor::detach() const { return Tensor(node_->shape, node_->value, false); }

void backward(const Tensor& loss) {
  if (!loss.defined() || loss.numel() != 1) {
    throw ContractError("backward: loss must be a scalar, got shape " +
                        (loss.defined() ? shape_string(loss.shape()) : std::string("<undefined>")));
  }
  if (!loss.requires_grad()) return;

  // Iterative post-order DFS gives a topological order (inputs before users).
  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> seen;
  std::vector<std::pair<detail::Node*, std::size_t>> stack{{loss.node(), 0}};
  seen.insert(loss.node());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      detail::Node* child = node->inputs[next++].get();
      if (child->requires_grad && seen.insert(child).second) stack.emplace_back(child, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  loss.node()->ensure_grad()[0] += Scalar(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::Node* node = *it;
    if (node->backward && !node->grad.empty()) node->backward(*node);
  }
}

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }
bool grad_enabled() { return g_grad_enabled; }

MF_NUMERIC_END
