#pragma once

// Reverse-mode automatic differentiation over dense row-major double tensors.
//
// A Var is a cheap handle onto a graph node. Every op records its parents and
// a backward closure when gradient recording is enabled and at least one
// input requires a gradient; calling backward() on a scalar walks the graph in
// reverse topological order.

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace objgan::ag {

using Shape = std::vector<int>;

inline std::size_t numel_of(const Shape& s) {
  std::size_t n = 1;
  for (int d : s) n *= static_cast<std::size_t>(d);
  return n;
}

std::string shape_str(const Shape& s);

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // lazily sized on first accumulation
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void()> backward_fn;

  double* grad_buffer() {
    if (grad.empty()) grad.assign(value.size(), 0.0);
    return grad.data();
  }
};

class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node> n) : node_(std::move(n)) {}

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  int dim(int i) const {
    const int r = rank();
    if (i < 0) i += r;
    return node_->shape.at(static_cast<std::size_t>(i));
  }
  int rank() const { return static_cast<int>(node_->shape.size()); }
  std::size_t numel() const { return node_->value.size(); }

  const std::vector<double>& value() const { return node_->value; }
  std::vector<double>& mutable_value() { return node_->value; }
  const double* data() const { return node_->value.data(); }
  double* mutable_data() { return node_->value.data(); }
  double item() const;
  double at(std::size_t i) const { return node_->value.at(i); }

  bool requires_grad() const { return node_->requires_grad; }
  // Gradient after backward(); zeros if nothing flowed here.
  std::vector<double> grad() const;
  bool has_grad() const { return !node_->grad.empty(); }
  void zero_grad() { node_->grad.clear(); }

  Node* node() const { return node_.get(); }
  const std::shared_ptr<Node>& node_ptr() const { return node_; }

  void backward() const;

 private:
  std::shared_ptr<Node> node_;
};

// Leaf constructors.
Var constant(Shape shape, std::vector<double> values);
Var parameter(Shape shape, std::vector<double> values);
Var zeros(Shape shape);
Var full(Shape shape, double v);
Var scalar(double v);
Var detach(const Var& v);

// Gradient recording switch; disabled while a NoGradGuard is alive.
bool grad_enabled();
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

namespace detail {
// True when a result built from these inputs must record a backward closure.
bool needs_grad(std::initializer_list<const Var*> inputs);
bool needs_grad(const std::vector<Var>& inputs);
Var make_result(Shape shape, std::vector<double> value, std::vector<Var> parents,
                std::function<void(Node& out)> backward);
}  // namespace detail

}  // namespace objgan::ag
