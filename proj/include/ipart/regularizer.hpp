#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <memory>
#include <mutex>
#include <numeric>
#include <span>
#include <stdexcept>
#include <tuple>
#include <vector>

#include "ipart/autodiff.hpp"
#include "ipart/beta.hpp"

namespace ipart {

struct RegularizerConfig {
  /// Stabilizer inside log(x + eps). Zero is accepted for oracle comparisons
  /// against priors whose quantiles are representable.
  double eps = 1e-6;
  /// Off: plain sorted-L1 distance (the un-logged 1D Wasserstein-1).
  bool log_rescale = true;
};

/// Prior quantiles at the mid-ranks (2n-1)/2N, n = 1..N. Constants of the
/// prior: they carry no gradient.
class PriorQuantiles {
 public:
  PriorQuantiles(const BetaPrior<double>& prior, Index count);

  Index size() const { return static_cast<Index>(points_.size()); }
  const UnitInterval<double>& operator[](Index n) const { return points_[static_cast<std::size_t>(n)]; }
  /// Target value in the loss coordinate: log(x + eps), or x when not rescaled.
  double target(Index n, const RegularizerConfig& cfg) const;
  std::vector<double> values() const;

 private:
  std::vector<UnitInterval<double>> points_;
};

/// Thread-safe memo of PriorQuantiles keyed by (alpha, beta, N).
class QuantileCache {
 public:
  std::shared_ptr<const PriorQuantiles> get(const BetaPrior<double>& prior, Index count);

 private:
  std::mutex mutex_;
  std::map<std::tuple<double, double, Index>, std::shared_ptr<const PriorQuantiles>> table_;
};

/// Per-part aligned distances for a K×N occurrence batch; entries must lie in (0,1).
std::vector<double> occurrence_loss_per_part(const Tensor& batch, const PriorQuantiles& quantiles,
                                             const RegularizerConfig& cfg = {});

/// Mean over parts of the per-part distances.
double occurrence_loss(const Tensor& batch, const BetaPrior<double>& prior, const RegularizerConfig& cfg = {});

/// Differentiable form; the sorting permutation is held fixed in backward.
Var occurrence_loss(Var batch, const PriorQuantiles& quantiles, const RegularizerConfig& cfg = {});

/// Exact 1D Wasserstein-1 distance between two equal-size empirical measures.
template <typename Scalar>
Scalar wasserstein_oracle(std::span<const Scalar> a, std::span<const Scalar> b) {
  if (a.empty() || a.size() != b.size()) {
    throw std::invalid_argument("wasserstein_oracle: lists must be nonempty and of equal length");
  }
  std::vector<Scalar> sa(a.begin(), a.end()), sb(b.begin(), b.end());
  std::sort(sa.begin(), sa.end());
  std::sort(sb.begin(), sb.end());
  Scalar total = 0;
  for (std::size_t i = 0; i < sa.size(); ++i) total += std::abs(sa[i] - sb[i]);
  return total / static_cast<Scalar>(sa.size());
}

template <typename Scalar>
Scalar wasserstein_oracle(const std::vector<Scalar>& a, const std::vector<Scalar>& b) {
  return wasserstein_oracle(std::span<const Scalar>(a), std::span<const Scalar>(b));
}

}  // namespace ipart
