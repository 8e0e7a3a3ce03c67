#include "ipart/autodiff.hpp"

#include <algorithm>
#include <cmath>

#include "ipart/errors.hpp"

namespace ipart {

const Tensor& Var::value() const { return graph_->value(*this); }

Var Graph::push(Tensor value, bool requires_grad, Backward backward) {
  nodes_.push_back(Node{std::move(value), Tensor(), false, requires_grad, std::move(backward)});
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Var Graph::leaf(Tensor value) { return push(std::move(value), true, nullptr); }

Var Graph::constant(Tensor value) { return push(std::move(value), false, nullptr); }

Var Graph::parameter(const Tensor& param) {
  if (auto it = params_.find(&param); it != params_.end()) return Var(this, it->second);
  Var v = grad_enabled_ ? leaf(param) : constant(param);
  params_.emplace(&param, v.id());
  return v;
}

const Tensor* Graph::parameter_grad(const Tensor& param) const {
  auto it = params_.find(&param);
  if (it == params_.end()) return nullptr;
  const Node& n = nodes_[static_cast<std::size_t>(it->second)];
  return n.has_grad ? &n.grad : nullptr;
}

Var Graph::record(Tensor value, const std::vector<Var>& parents, Backward backward) {
  bool needs = false;
  for (const Var& p : parents) {
    if (&p.graph() != this) throw std::invalid_argument("graph: parent belongs to another graph");
    needs = needs || requires_grad(p);
  }
  return push(std::move(value), needs, needs ? std::move(backward) : nullptr);
}

Tensor& Graph::grad_buffer(Var v) {
  Node& n = nodes_.at(static_cast<std::size_t>(v.id()));
  if (!n.has_grad) {
    n.grad = Tensor(n.value.shape());
    n.has_grad = true;
  }
  return n.grad;
}

const Tensor& Graph::grad(Var v) { return grad_buffer(v); }

void Graph::accumulate(Var v, const Tensor& g) {
  if (!requires_grad(v)) return;
  Tensor& buf = grad_buffer(v);
  require_same_shape(buf.shape(), g.shape(), "accumulate");
  buf.vec() += g.vec();
}

void Graph::backward(Var root) {
  if (value(root).size() != 1) {
    throw std::invalid_argument("backward: root must be a scalar, got " + shape_string(root.shape()));
  }
  for (Node& n : nodes_) {
    n.has_grad = false;
    n.grad = Tensor();
  }
  visited_ = 0;
  if (!requires_grad(root)) return;
  grad_buffer(root).vec().setConstant(1.0);
  for (int i = root.id(); i >= 0; --i) {
    Node& n = nodes_[static_cast<std::size_t>(i)];
    ++visited_;
    if (!n.has_grad || !n.requires_grad || !n.backward) continue;
    n.backward(*this, n.grad);
  }
}

GradCheckReport grad_check(const ScalarFunction& f, const Tensor& point, double step, double tolerance) {
  if (!(step > 0.0) || !(tolerance > 0.0)) throw std::invalid_argument("grad_check: step and tolerance must be positive");

  Tensor analytic;
  {
    Graph g;
    Var x = g.leaf(point);
    Var y = f(g, x);
    if (y.value().size() != 1) throw std::invalid_argument("grad_check: function is not scalar-valued");
    if (!std::isfinite(y.value()[0])) throw NumericalError("grad_check: non-finite function value at point");
    g.backward(y);
    analytic = g.grad(x);
  }

  auto eval = [&](const Tensor& p) {
    Graph g;
    Var y = f(g, g.constant(p));
    const double v = y.value()[0];
    if (!std::isfinite(v)) throw NumericalError("grad_check: non-finite function value in step neighborhood");
    return v;
  };

  GradCheckReport report;
  Tensor probe = point;
  for (Index i = 0; i < point.size(); ++i) {
    const double x0 = point[i];
    probe[i] = x0 + step;
    const double up = eval(probe);
    probe[i] = x0 - step;
    const double down = eval(probe);
    probe[i] = x0;
    const double numeric = (up - down) / (2.0 * step);
    const double denom = std::max({std::abs(analytic[i]), std::abs(numeric), 1e-8});
    const double rel = std::abs(analytic[i] - numeric) / denom;
    if (report.worst_index < 0 || rel > report.max_relative_error) {
      report.max_relative_error = rel;
      report.worst_index = i;
    }
  }
  report.pass = report.max_relative_error <= tolerance;
  return report;
}

}  // namespace ipart
