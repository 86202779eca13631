#include "objgan/core/tensor.hpp"

#include <sstream>
#include <unordered_set>

namespace objgan::ag {

namespace {
thread_local bool g_grad_enabled = true;
}

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ']';
  return os.str();
}

double Var::item() const {
  if (numel() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape()));
  return node_->value[0];
}

std::vector<double> Var::grad() const {
  if (node_->grad.empty()) return std::vector<double>(node_->value.size(), 0.0);
  return node_->grad;
}

void Var::backward() const {
  if (numel() != 1) throw ShapeError("backward() requires a scalar, got " + shape_str(shape()));
  if (!node_->requires_grad) return;

  // Iterative post-order DFS for a topological order.
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(node_.get(), 0);
  seen.insert(node_.get());
  while (!stack.empty()) {
    auto& [n, idx] = stack.back();
    if (idx < n->parents.size()) {
      Node* p = n->parents[idx++].get();
      if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }
  node_->grad_buffer()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward_fn && !n->grad.empty()) n->backward_fn();
  }
}

Var constant(Shape shape, std::vector<double> values) {
  if (numel_of(shape) != values.size())
    throw ShapeError("constant: shape " + shape_str(shape) + " does not match " +
                     std::to_string(values.size()) + " values");
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->value = std::move(values);
  return Var(std::move(n));
}

Var parameter(Shape shape, std::vector<double> values) {
  Var v = constant(std::move(shape), std::move(values));
  v.node()->requires_grad = true;
  return v;
}

Var zeros(Shape shape) {
  const auto n = numel_of(shape);
  return constant(std::move(shape), std::vector<double>(n, 0.0));
}

Var full(Shape shape, double v) {
  const auto n = numel_of(shape);
  return constant(std::move(shape), std::vector<double>(n, v));
}

Var scalar(double v) { return constant({1}, {v}); }

Var detach(const Var& v) { return constant(v.shape(), v.value()); }

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : prev_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev_; }

namespace detail {

bool needs_grad(std::initializer_list<const Var*> inputs) {
  if (!g_grad_enabled) return false;
  for (const Var* v : inputs)
    if (v->defined() && v->requires_grad()) return true;
  return false;
}

bool needs_grad(const std::vector<Var>& inputs) {
  if (!g_grad_enabled) return false;
  for (const Var& v : inputs)
    if (v.defined() && v.requires_grad()) return true;
  return false;
}

Var make_result(Shape shape, std::vector<double> value, std::vector<Var> parents,
                std::function<void(Node& out)> backward) {
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->value = std::move(value);
  if (needs_grad(parents)) {
    n->requires_grad = true;
    for (auto& p : parents)
      if (p.defined()) n->parents.push_back(p.node_ptr());
    Node* self = n.get();
    n->backward_fn = [self, bw = std::move(backward)]() { bw(*self); };
  }
  return Var(std::move(n));
}

}  // namespace detail

}  // namespace objgan::ag
