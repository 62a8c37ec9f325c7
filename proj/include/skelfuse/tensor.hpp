#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace skelfuse::ad {

using Shape = std::vector<std::size_t>;

std::size_t numel_of(const Shape& shape);
std::string shape_string(const Shape& shape);

/// Graph node. Non-leaf nodes own a backward closure that reads their own
/// gradient and accumulates into their parents.
struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // empty until a backward pass reaches the node
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;
  const char* op = "leaf";

  bool is_leaf() const { return !backward_fn; }
  std::vector<double>& ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
    return grad;
  }
};

/// Reference-semantics handle on a graph node. Copies share storage, so a
/// parameter held in a ParamStore and the same parameter used in a forward
/// pass are one object.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);
  /// rows x cols matrix.
  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> values,
                       bool requires_grad = false);

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t numel() const { return node_->value.size(); }
  /// Leading extent for rank 2, 1 otherwise.
  std::size_t rows() const;
  /// Trailing extent for rank >= 1, 1 for scalars.
  std::size_t cols() const;

  std::span<const double> data() const { return node_->value; }
  std::span<double> mutable_data() { return node_->value; }
  double item() const;
  double at(std::size_t r, std::size_t c) const { return node_->value[r * cols() + c]; }

  bool requires_grad() const { return node_->requires_grad; }
  bool has_grad() const { return node_->grad.size() == node_->value.size() && !node_->value.empty(); }
  /// Gradient, or an empty span if no backward pass has reached the node.
  std::span<const double> grad() const { return node_->grad; }
  /// Gradient with absent entries reported as zeros.
  std::vector<double> grad_or_zeros() const;
  void zero_grad();

  /// Reverse-mode sweep from this scalar. Leaf gradients accumulate across
  /// calls; intermediate gradients are dropped once propagated.
  /// Throws NotScalar.
  void backward() const;

  /// Same values, no history, no gradient.
  Tensor detach() const;

  const std::shared_ptr<Node>& node() const { return node_; }
  const char* op() const { return node_->op; }

 private:
  std::shared_ptr<Node> node_;
};

/// Builds a result node. If any parent requires a gradient the closure is
/// recorded; otherwise the result is a constant.
Tensor make_result(Shape shape, std::vector<double> value, std::vector<Tensor> parents,
                   std::function<void(Node&)> backward, const char* op);

struct GradCheckResult {
  double max_error = 0.0;
  std::size_t worst_input = 0;
  std::size_t worst_index = 0;
  std::size_t entries = 0;
};

/// Central differences against reverse mode over every entry of every
/// input. Error per entry is |g_ad - g_fd| / max(1e-8, |g_ad| + |g_fd|).
/// Input values are restored afterwards; input gradients are overwritten.
GradCheckResult grad_check(const std::function<Tensor()>& f, std::span<Tensor> inputs,
                           double eps = 1e-6);

}  // namespace skelfuse::ad
