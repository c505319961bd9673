// SPDX-License-Identifier: Apache-2.0
//
// Dense float64 tensor with a dynamically recorded reverse-mode graph.

#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace rsr {

using Shape = std::vector<std::size_t>;

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

std::size_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // empty until first accumulation
  bool requires_grad = false;
  bool is_leaf = true;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> parents;
  // Reads this->grad and accumulates into parents' grads.
  std::function<void(Node&)> backward;

  std::vector<double>& grad_buffer();
};

}  // namespace detail

/// Handle to a graph node. Copies share storage; use clone() for a deep copy.
class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<double> data, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double v, bool requires_grad = false);
  static Tensor scalar(double v, bool requires_grad = false);
  static Tensor from_rows(const std::vector<std::vector<double>>& rows,
                          bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t dim(std::size_t axis) const;
  std::size_t rank() const { return shape().size(); }
  std::size_t size() const { return values().size(); }
  std::size_t rows() const;  // shape[0] of a 2-D tensor
  std::size_t cols() const;  // shape[1] of a 2-D tensor

  std::span<const double> values() const;
  std::span<double> mutable_values();  // leaf tensors only
  double item() const;
  double at(std::size_t i) const { return values()[i]; }
  double at(std::size_t r, std::size_t c) const;

  bool requires_grad() const;
  void set_requires_grad(bool on) const;
  bool has_grad() const;
  std::span<const double> grad() const;  // zeros when never accumulated
  std::span<double> mutable_grad() const;
  Tensor grad_tensor() const;
  void zero_grad() const;

  const char* op_name() const;

  /// Deep copy detached from the graph.
  Tensor clone() const;
  /// Same values, no history.
  Tensor detach() const;

  std::vector<double> to_vector() const { return {values().begin(), values().end()}; }

  std::shared_ptr<detail::Node> node() const { return node_; }
  explicit Tensor(std::shared_ptr<detail::Node> n) : node_(std::move(n)) {}

 private:
  std::shared_ptr<detail::Node> node_;
};

/// Disables graph recording for the lifetime of the guard.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

bool grad_enabled();

/// Builds a graph node. `backward` receives the finished node and must push
/// node.grad into the parents that require grad.
Tensor make_result(const char* op, Shape shape, std::vector<double> value,
                   std::vector<Tensor> parents,
                   std::function<void(detail::Node&)> backward);

/// Accumulates d(loss)/d(t) into every reachable tensor that requires grad.
/// Leaf gradients accumulate across calls; interior gradients are reset.
void backward(const Tensor& loss);

namespace debug {
/// Test hook: the named op's backward scales its input gradient by (1 + 1e-2).
void inject_backward_fault(const std::string& op);
void clear_backward_fault();
double backward_fault_scale(const char* op);
}  // namespace debug

}  // namespace rsr
