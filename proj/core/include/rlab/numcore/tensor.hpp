#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace rlab::num {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

namespace detail {

// One vertex of the computation graph. Leaves (parameters, inputs) have no
// backward function; op outputs keep their parents alive through `parents`.
struct Node {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until first accumulation
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node& self)> backward;

  std::vector<double>& grad_buffer();
};

}  // namespace detail

/// Dense row-major float64 array with an optional gradient slot.
///
/// Copies are shallow: two Tensor values may refer to the same storage, the
/// way a graph edge does. Use clone() for an independent copy. Every value
/// stored through the public constructors or produced by an op is checked
/// to be finite; a NaN or Inf raises NumericError at the point it appears.
class Tensor {
 public:
  Tensor();
  explicit Tensor(Shape shape, bool requires_grad = false);
  Tensor(Shape shape, std::vector<double> values, bool requires_grad = false);

  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t size() const;
  // 2-D convenience accessors; throw DimensionError on other ranks.
  std::size_t rows() const;
  std::size_t cols() const;

  std::span<const double> data() const;
  // Direct write access, meant for leaves (optimizer updates, test setup).
  // Writing into an op output that is still part of a live graph makes its
  // recorded backward inconsistent.
  std::span<double> mutable_data();
  double item() const;
  double at(std::size_t i) const { return data()[i]; }
  double at(std::size_t r, std::size_t c) const;

  bool requires_grad() const;
  void set_requires_grad(bool flag);
  bool has_grad() const;
  std::span<const double> grad() const;
  std::span<double> mutable_grad();
  void zero_grad();

  /// Reverse-mode sweep from this scalar; gradients accumulate into every
  /// reachable node with requires_grad.
  void backward() const;

  /// Same storage, cut from the graph (no parents, no grad requirement).
  Tensor detach() const;
  /// Deep copy of values; the copy is a leaf with the same requires_grad.
  Tensor clone() const;
  Tensor reshape(Shape shape) const;

  bool same_storage(const Tensor& other) const { return node_ == other.node_; }
  const std::shared_ptr<detail::Node>& node() const { return node_; }

 private:
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
  friend Tensor make_op(std::string_view, Shape, std::vector<double>,
                        std::vector<Tensor>,
                        std::function<void(detail::Node&)>);

  std::shared_ptr<detail::Node> node_;
};

/// Graph-recording switch. While a guard is alive, ops produce plain values
/// with no parents, which keeps evaluation passes cheap.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled();

/// Builds an op output. `backward` receives the output node (its grad is
/// populated) and must accumulate into parents via grad_buffer(). The
/// closure and parent links are dropped when no parent needs a gradient.
Tensor make_op(std::string_view op, Shape shape, std::vector<double> values,
               std::vector<Tensor> parents,
               std::function<void(detail::Node&)> backward);

void check_finite(std::string_view where, std::span<const double> values);

}  // namespace rlab::num
