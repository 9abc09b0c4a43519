#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace lcad::nn {

using Shape = std::vector<int>;

std::size_t numel(const Shape& s);
std::string shape_str(const Shape& s);

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  double* grad_data();
};

/// Handle to a node of the autograd graph. Copies alias the same storage.
class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  static Var zeros(Shape shape, bool requires_grad = false);
  static Var full(Shape shape, double v, bool requires_grad = false);
  static Var from(Shape shape, std::vector<double> values, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  int dim(int i) const;
  std::size_t size() const { return node_->value.size(); }
  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool r) { node_->requires_grad = r; }

  std::span<double> values() { return node_->value; }
  std::span<const double> values() const { return node_->value; }
  double* data() { return node_->value.data(); }
  const double* data() const { return node_->value.data(); }
  /// Accumulated gradient; empty until backward() reaches this node.
  std::span<double> grad() { return node_->grad; }
  double item() const;

  Node* node() const { return node_.get(); }
  const std::shared_ptr<Node>& ptr() const { return node_; }

  /// Detached deep copy.
  Var clone() const;
  void zero_grad();

 private:
  std::shared_ptr<Node> node_;
};

/// Reverse-mode accumulation from a scalar root.
void backward(const Var& root);

bool grad_enabled();

/// Disables graph recording for its lifetime (inference).
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

/// Creates the result node of an op. When any input requires grad (and
/// recording is on), the node keeps its parents and the backward closure.
Var make_result(Shape shape, std::vector<double> value, std::initializer_list<Var> inputs,
                std::function<void(Node&)> backward_fn);

/// Named parameter list shared by optimizers and checkpoints.
struct NamedParam {
  std::string name;
  Var var;
  bool frozen = false;
};
using ParamList = std::vector<NamedParam>;

}  // namespace lcad::nn
