#include "skelfuse/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <unordered_set>

#include "skelfuse/errors.hpp"

namespace skelfuse::ad {

std::size_t numel_of(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

std::string shape_string(const Shape& shape) {
  std::string s = "(";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ", ";
    s += std::to_string(shape[i]);
  }
  return s + ")";
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  const std::size_t n = numel_of(shape);
  return from(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
  if (numel_of(shape) != values.size())
    throw ShapeError("shape " + shape_string(shape) + " does not hold " + std::to_string(values.size()) +
                     " values");
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->value = std::move(values);
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

Tensor Tensor::scalar(double value, bool requires_grad) { return from({}, {value}, requires_grad); }

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::vector<double> values, bool requires_grad) {
  return from({rows, cols}, std::move(values), requires_grad);
}

std::size_t Tensor::rows() const { return rank() == 2 ? shape()[0] : 1; }
std::size_t Tensor::cols() const { return rank() == 0 ? 1 : shape().back(); }

double Tensor::item() const {
  if (numel() != 1) throw NotScalar("item() on tensor of shape " + shape_string(shape()));
  return node_->value[0];
}

std::vector<double> Tensor::grad_or_zeros() const {
  if (has_grad()) return node_->grad;
  return std::vector<double>(numel(), 0.0);
}

void Tensor::zero_grad() { node_->grad.assign(node_->value.size(), 0.0); }

Tensor Tensor::detach() const { return from(shape(), node_->value, false); }

void Tensor::backward() const {
  if (numel() != 1) throw NotScalar("backward() needs a scalar, got shape " + shape_string(shape()));
  if (!node_->requires_grad) return;

  // Iterative post-order DFS gives a topological order (parents first).
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack{{node_.get(), 0}};
  visited.insert(node_.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* parent = node->parents[next++].get();
      if (parent->requires_grad && visited.insert(parent).second) stack.emplace_back(parent, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  for (Node* n : order)
    if (!n->is_leaf()) n->grad.assign(n->value.size(), 0.0);
  node_->ensure_grad()[0] += 1.0;
  // Intermediate gradients are released once propagated, as only leaves keep theirs.
  for (auto it = order.rbegin(); it != order.rend(); ++it)
    if (!(*it)->is_leaf()) {
      (*it)->backward_fn(**it);
      std::vector<double>().swap((*it)->grad);
    }
}

Tensor make_result(Shape shape, std::vector<double> value, std::vector<Tensor> parents,
                   std::function<void(Node&)> backward, const char* op) {
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  node->op = op;
  const bool needs = std::any_of(parents.begin(), parents.end(),
                                 [](const Tensor& t) { return t.requires_grad(); });
  if (needs) {
    node->requires_grad = true;
    node->parents.reserve(parents.size());
    for (auto& p : parents) node->parents.push_back(p.node());
    node->backward_fn = std::move(backward);
  }
  return Tensor(std::move(node));
}

GradCheckResult grad_check(const std::function<Tensor()>& f, std::span<Tensor> inputs, double eps) {
  for (Tensor& t : inputs) t.zero_grad();
  const Tensor loss = f();
  if (loss.numel() != 1) throw NotScalar("grad_check needs a scalar function");
  loss.backward();

  GradCheckResult result;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const std::vector<double> analytic = inputs[i].grad_or_zeros();
    auto values = inputs[i].mutable_data();
    for (std::size_t k = 0; k < values.size(); ++k) {
      const double saved = values[k];
      values[k] = saved + eps;
      const double up = f().item();
      values[k] = saved - eps;
      const double down = f().item();
      values[k] = saved;
      const double numeric = (up - down) / (2.0 * eps);
      const double err =
          std::abs(analytic[k] - numeric) / std::max(1e-8, std::abs(analytic[k]) + std::abs(numeric));
      ++result.entries;
      if (err > result.max_error || !std::isfinite(err)) {
        result.max_error = std::isfinite(err) ? err : std::numeric_limits<double>::infinity();
        result.worst_input = i;
        result.worst_index = k;
      }
    }
  }
  return result;
}

}  // namespace skelfuse::ad
