#pragma once

#include <functional>
#include <unordered_map>
#include <vector>

#include "ipart/tensor.hpp"

namespace ipart {

class Graph;

/// Handle to a node of a Graph. Cheap to copy; valid while the graph lives.
class Var {
 public:
  Var() = default;
  Var(Graph* graph, int id) : graph_(graph), id_(id) {}

  Graph& graph() const { return *graph_; }
  int id() const { return id_; }
  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  bool valid() const { return graph_ != nullptr; }

 private:
  Graph* graph_ = nullptr;
  int id_ = -1;
};

/// Tape for one forward/backward pass. Nodes are appended in creation order,
/// which is a topological order, so backward walks the tape in reverse.
/// A graph is confined to one thread; ops may fan out internally.
class Graph {
 public:
  using Backward = std::function<void(Graph&, const Tensor& out_grad)>;

  explicit Graph(int threads = 1) : threads_(threads < 1 ? 1 : threads) {}
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  int threads() const { return threads_; }

  /// With gradients disabled, parameter() binds constants and ops record no
  /// backward closures (inference).
  void set_grad_enabled(bool enabled) { grad_enabled_ = enabled; }
  bool grad_enabled() const { return grad_enabled_; }

  Var leaf(Tensor value);
  Var constant(Tensor value);

  /// Leaf bound to an external parameter tensor. Binding the same tensor twice
  /// returns the same node.
  Var parameter(const Tensor& param);
  /// Gradient for a bound parameter; nullptr when the parameter was never bound.
  const Tensor* parameter_grad(const Tensor& param) const;

  /// Appends an op node. `backward` receives the node's output gradient and
  /// must accumulate into the parents that require gradients.
  Var record(Tensor value, const std::vector<Var>& parents, Backward backward);

  const Tensor& value(Var v) const { return nodes_.at(static_cast<std::size_t>(v.id())).value; }
  /// Accumulated gradient; a zero tensor for nodes that received none.
  const Tensor& grad(Var v);
  bool requires_grad(Var v) const { return nodes_.at(static_cast<std::size_t>(v.id())).requires_grad; }

  /// Adds `g` into the gradient of `v` if it requires one.
  void accumulate(Var v, const Tensor& g);
  /// Mutable gradient buffer (zero-initialised on first use).
  Tensor& grad_buffer(Var v);

  /// Seeds d(root)/d(root) = 1 and back-propagates. Root must hold one value.
  void backward(Var root);

  std::size_t size() const { return nodes_.size(); }
  /// Number of nodes whose backward ran in the last backward() call.
  std::size_t visited() const { return visited_; }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool has_grad = false;
    bool requires_grad = false;
    Backward backward;
  };

  Var push(Tensor value, bool requires_grad, Backward backward);

  std::vector<Node> nodes_;
  std::unordered_map<const Tensor*, int> params_;
  int threads_;
  bool grad_enabled_ = true;
  std::size_t visited_ = 0;
};

struct GradCheckReport {
  double max_relative_error = 0.0;
  Index worst_index = -1;
  bool pass = false;
};

/// Maps an input node to a scalar output node inside the given graph.
using ScalarFunction = std::function<Var(Graph&, Var)>;

/// Compares reverse-mode gradients with central differences coordinate-wise.
/// Relative error uses max(|analytic|, |numeric|, 1e-8) as denominator.
GradCheckReport grad_check(const ScalarFunction& f, const Tensor& point, double step = 1e-6,
                           double tolerance = 1e-4);

}  // namespace ipart
