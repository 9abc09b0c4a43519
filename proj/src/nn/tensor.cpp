#include "lcad/tensor.hpp"

#include <algorithm>
#include <sstream>
#include <unordered_set>

#include "lcad/error.hpp"

namespace lcad::nn {
namespace {
thread_local bool g_grad_enabled = true;
}

std::size_t numel(const Shape& s) {
  std::size_t n = 1;
  for (int d : s) n *= static_cast<std::size_t>(d);
  return n;
}

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ']';
  return os.str();
}

double* Node::grad_data() {
  if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
  return grad.data();
}

Var Var::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }

Var Var::full(Shape shape, double v, bool requires_grad) {
  auto n = std::make_shared<Node>();
  n->value.assign(numel(shape), v);
  n->shape = std::move(shape);
  n->requires_grad = requires_grad;
  return Var(std::move(n));
}

Var Var::from(Shape shape, std::vector<double> values, bool requires_grad) {
  if (numel(shape) != values.size()) {
    throw ShapeError("Var::from: " + std::to_string(values.size()) + " values for shape " +
                     shape_str(shape));
  }
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->value = std::move(values);
  n->requires_grad = requires_grad;
  return Var(std::move(n));
}

int Var::dim(int i) const {
  const int r = static_cast<int>(shape().size());
  if (i < 0) i += r;
  if (i < 0 || i >= r) throw ShapeError("dim index out of range for " + shape_str(shape()));
  return shape()[static_cast<std::size_t>(i)];
}

double Var::item() const {
  if (size() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape()));
  return node_->value[0];
}

Var Var::clone() const { return from(shape(), node_->value, false); }

void Var::zero_grad() { node_->grad.assign(node_->value.size(), 0.0); }

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : prev_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev_; }

Var make_result(Shape shape, std::vector<double> value, std::initializer_list<Var> inputs,
                std::function<void(Node&)> backward_fn) {
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->value = std::move(value);
  if (g_grad_enabled) {
    const bool any = std::any_of(inputs.begin(), inputs.end(),
                                 [](const Var& v) { return v.defined() && v.requires_grad(); });
    if (any) {
      n->requires_grad = true;
      for (const Var& v : inputs) {
        if (v.defined()) n->parents.push_back(v.ptr());
      }
      n->backward = std::move(backward_fn);
    }
  }
  return Var(std::move(n));
}

void backward(const Var& root) {
  if (root.size() != 1) throw ShapeError("backward() needs a scalar root");
  if (!root.requires_grad()) return;

  // Iterative post-order DFS for the topological order.
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack{{root.node(), 0}};
  seen.insert(root.node());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* p = node->parents[next++].get();
      if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  root.node()->grad_data()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward && !n->grad.empty()) n->backward(*n);
  }
  // Interior nodes no longer need their gradients once propagated.
  for (Node* n : order) {
    if (n->backward) {
      std::vector<double>().swap(n->grad);
    }
  }
}

}  // namespace lcad::nn
