#pragma once

#include <random>

#include "ipart/autodiff.hpp"

namespace ipart {

/// K part vectors of dimension D plus one unconstrained smoothing parameter
/// per part; sigma_k = sigmoid(raw_k) keeps every sigma in (0,1).
struct PartDictionary {
  Tensor parts;          // K×D
  Tensor raw_smoothing;  // K

  PartDictionary() = default;
  PartDictionary(Tensor parts, Tensor raw_smoothing);

  /// Zero-mean Gaussian entries with variance 2/D, sigma_k = 0.5.
  static PartDictionary random(Index k, Index d, std::mt19937_64& rng);

  Index size() const { return parts.dim(0); }
  Index dim() const { return parts.dim(1); }
  double sigma(Index k) const;
};

/// Normalized odd-sized 2D Gaussian.
struct SmoothingKernel {
  Index size = 3;
  double bandwidth = 1.0;
  Tensor weights;  // size×size, sums to 1

  static SmoothingKernel gaussian(Index size = 3, double bandwidth = 1.0);
};

/// Soft assignment of pixel features to parts: a softmax over parts of
/// -||(x - d_k)/sigma_k||^2 / 2. Features are D×H×W or N×D×H×W; the result
/// has the same layout with K channels. For K > 1 the softmax is mixed as
/// (1 - K·floor)·s + floor, keeping every entry strictly inside (0,1).
inline constexpr double kAssignmentFloor = 1e-12;
Var assign(Var features, Var parts, Var raw_smoothing);
Tensor assign(const Tensor& features, const PartDictionary& dict);

/// Per-channel convolution with the kernel, renormalized to the in-image
/// kernel mass at the borders. Input is K×H×W or N×K×H×W.
Var smooth(Var map, const SmoothingKernel& kernel);
Tensor smooth(const Tensor& map, const SmoothingKernel& kernel);

/// Spatial maximum per channel (first in row-major order on ties):
/// K×H×W -> K, N×K×H×W -> N×K.
Var occurrence(Var smoothed);
Tensor occurrence(const Tensor& smoothed);

}  // namespace ipart
