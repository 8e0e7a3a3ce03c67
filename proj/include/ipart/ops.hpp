#pragma once

#include <vector>

#include "ipart/autodiff.hpp"

namespace ipart {

enum class Mode { train, eval };
enum class Padding { same, valid };

/// Running statistics of one batch-normalization layer.
struct BatchNormState {
  Tensor running_mean;
  Tensor running_var;
  bool initialized = false;

  BatchNormState() = default;
  explicit BatchNormState(Index channels)
      : running_mean(Shape{channels}, 0.0), running_var(Shape{channels}, 1.0) {}
};

namespace ops {

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double s);
Var sum(Var a);
Var mean(Var a);
Var relu(Var a);
Var reshape(Var a, Shape shape);
/// Swaps the two axes of a rank-2 tensor.
Var transpose(Var a);

/// Cross-correlation. Input is C×H×W or N×C×H×W; kernel is O×C×kh×kw;
/// `bias` may be a default-constructed Var. Same padding needs odd kernels.
Var conv2d(Var input, Var kernel, Var bias, Index stride = 1, Padding padding = Padding::valid);
Var conv2d(Var input, Var kernel, Index stride = 1, Padding padding = Padding::valid);

/// Normalizes axis 1 of an N×C×… tensor. Train mode uses batch statistics and
/// updates `state` (momentum 0.1); eval mode requires initialized state.
Var batch_norm(Var x, Var gamma, Var beta, BatchNormState& state, Mode mode, double eps = 1e-5,
               double momentum = 0.1);

/// Softmax along `axis`, shifted by the axis maximum.
Var softmax_axis(Var x, Index axis);

/// Mean cross entropy of N×C logits against class indices.
Var cross_entropy(Var logits, const std::vector<int>& labels);
/// Mean binary cross entropy of N×M logits against 0/1 targets.
Var binary_cross_entropy_with_logits(Var logits, const Tensor& targets);

/// x·Wᵀ + b for x N×D, W C×D, b C.
Var linear(Var x, Var weight, Var bias);

/// Per-sample matrix-vector product: N×D×K times N×K gives N×D.
Var region_weighted_sum(Var regions, Var weights);

}  // namespace ops
}  // namespace ipart
