#include "rlab/numcore/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <unordered_set>

#include "rlab/errors.hpp"

namespace rlab::num {

namespace {
thread_local bool g_grad_enabled = true;
}

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

void check_finite(std::string_view where, std::span<const double> values) {
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!std::isfinite(values[i])) {
      std::ostringstream os;
      os << where << ": non-finite value " << values[i] << " at flat index " << i;
      throw NumericError(os.str());
    }
  }
}

std::vector<double>& detail::Node::grad_buffer() {
  if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
  return grad;
}

Tensor::Tensor() : Tensor(Shape{0}) {}

Tensor::Tensor(Shape shape, bool requires_grad)
    : node_(std::make_shared<detail::Node>()) {
  node_->data.assign(numel(shape), 0.0);
  node_->shape = std::move(shape);
  node_->requires_grad = requires_grad;
}

Tensor::Tensor(Shape shape, std::vector<double> values, bool requires_grad)
    : node_(std::make_shared<detail::Node>()) {
  if (numel(shape) != values.size()) {
    throw DimensionError("Tensor: shape " + to_string(shape) + " needs " +
                         std::to_string(numel(shape)) + " values, got " +
                         std::to_string(values.size()));
  }
  check_finite("Tensor", values);
  node_->shape = std::move(shape);
  node_->data = std::move(values);
  node_->requires_grad = requires_grad;
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return Tensor(Shape{}, std::vector<double>{value}, requires_grad);
}

const Shape& Tensor::shape() const { return node_->shape; }

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= node_->shape.size()) {
    throw DimensionError("Tensor::dim: axis " + std::to_string(axis) +
                         " out of range for shape " + to_string(node_->shape));
  }
  return node_->shape[axis];
}

std::size_t Tensor::size() const { return node_->data.size(); }

std::size_t Tensor::rows() const {
  if (rank() != 2) throw DimensionError("rows() on non-matrix " + to_string(shape()));
  return node_->shape[0];
}

std::size_t Tensor::cols() const {
  if (rank() != 2) throw DimensionError("cols() on non-matrix " + to_string(shape()));
  return node_->shape[1];
}

std::span<const double> Tensor::data() const { return node_->data; }
std::span<double> Tensor::mutable_data() { return node_->data; }

double Tensor::item() const {
  if (size() != 1) throw DimensionError("item() on tensor of shape " + to_string(shape()));
  return node_->data[0];
}

double Tensor::at(std::size_t r, std::size_t c) const {
  return node_->data[r * cols() + c];
}

bool Tensor::requires_grad() const { return node_->requires_grad; }
void Tensor::set_requires_grad(bool flag) { node_->requires_grad = flag; }
bool Tensor::has_grad() const { return node_->grad.size() == node_->data.size() && !node_->data.empty(); }
std::span<const double> Tensor::grad() const { return node_->grad; }
std::span<double> Tensor::mutable_grad() { return node_->grad_buffer(); }

void Tensor::zero_grad() {
  std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

void Tensor::backward() const {
  if (size() != 1) {
    throw DimensionError("backward() needs a scalar, got shape " + to_string(shape()));
  }
  // Iterative post-order DFS; graphs are a few thousand nodes deep at most
  // but recursion would still be fragile.
  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> visited;
  std::vector<std::pair<detail::Node*, std::size_t>> stack;
  stack.emplace_back(node_.get(), 0);
  visited.insert(node_.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      detail::Node* parent = node->parents[next++].get();
      if (parent->requires_grad && visited.insert(parent).second) {
        stack.emplace_back(parent, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  node_->grad_buffer()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::Node* node = *it;
    if (node->backward && !node->grad.empty()) node->backward(*node);
  }
}

Tensor Tensor::detach() const {
  auto node = std::make_shared<detail::Node>();
  node->shape = node_->shape;
  node->data = node_->data;
  return Tensor(std::move(node));
}

Tensor Tensor::clone() const {
  auto node = std::make_shared<detail::Node>();
  node->shape = node_->shape;
  node->data = node_->data;
  node->requires_grad = node_->requires_grad;
  return Tensor(std::move(node));
}

Tensor Tensor::reshape(Shape shape) const {
  if (numel(shape) != size()) {
    throw DimensionError("reshape: " + to_string(this->shape()) + " -> " + to_string(shape));
  }
  std::vector<double> values = node_->data;
  Shape out_shape = shape;
  return make_op("reshape", std::move(out_shape), std::move(values), {*this},
                 [](detail::Node& self) {
                   auto& g = self.parents[0]->grad_buffer();
                   for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
                 });
}

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

bool grad_enabled() { return g_grad_enabled; }

Tensor make_op(std::string_view op, Shape shape, std::vector<double> values,
               std::vector<Tensor> parents,
               std::function<void(detail::Node&)> backward) {
  check_finite(op, values);
  auto node = std::make_shared<detail::Node>();
  node->shape = std::move(shape);
  node->data = std::move(values);
  const bool needs_grad =
      g_grad_enabled &&
      std::any_of(parents.begin(), parents.end(),
                  [](const Tensor& p) { return p.requires_grad(); });
  if (needs_grad) {
    node->requires_grad = true;
    node->parents.reserve(parents.size());
    for (auto& p : parents) node->parents.push_back(p.node());
    node->backward = std::move(backward);
  }
  return Tensor(std::move(node));
}

}  // namespace rlab::num
