#include "ipart/regularizer.hpp"

#include <cmath>
#include <string>

#include "ipart/errors.hpp"

namespace ipart {

namespace {

void check_batch(const Tensor& batch, const PriorQuantiles& q) {
  if (batch.rank() != 2) throw std::invalid_argument("occurrence_loss: expected K×N batch, got " + shape_string(batch.shape()));
  if (batch.dim(1) != q.size()) {
    throw std::invalid_argument("occurrence_loss: batch " + shape_string(batch.shape()) + " has " +
                                std::to_string(batch.dim(1)) + " samples but quantiles were built for " +
                                std::to_string(q.size()));
  }
  for (Index i = 0; i < batch.size(); ++i) {
    if (!std::isfinite(batch[i])) {
      throw NumericalError("occurrence_loss: non-finite entry " + std::to_string(batch[i]));
    }
    if (!(batch[i] > 0.0 && batch[i] < 1.0)) {
      throw std::invalid_argument("occurrence_loss: entry " + std::to_string(batch[i]) + " outside (0,1)");
    }
  }
}

std::vector<Index> ascending_order(const Tensor& batch, Index row) {
  const Index n = batch.dim(1);
  std::vector<Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Index{0});
  const double* r = batch.data() + row * n;
  std::stable_sort(order.begin(), order.end(), [r](Index a, Index b) { return r[a] < r[b]; });
  return order;
}

double coordinate(double x, const RegularizerConfig& cfg) { return cfg.log_rescale ? std::log(x + cfg.eps) : x; }

}  // namespace

PriorQuantiles::PriorQuantiles(const BetaPrior<double>& prior, Index count) {
  if (count < 1) throw std::invalid_argument("PriorQuantiles: need at least one sample");
  points_.reserve(static_cast<std::size_t>(count));
  const double denom = 2.0 * static_cast<double>(count);
  for (Index n = 1; n <= count; ++n) {
    points_.push_back(beta_quantile(prior, static_cast<double>(2 * n - 1) / denom));
  }
}

double PriorQuantiles::target(Index n, const RegularizerConfig& cfg) const {
  const auto& p = (*this)[n];
  if (!cfg.log_rescale) return p.value();
  return cfg.eps == 0.0 ? p.log_value() : std::log(p.value() + cfg.eps);
}

std::vector<double> PriorQuantiles::values() const {
  std::vector<double> v;
  v.reserve(points_.size());
  for (const auto& p : points_) v.push_back(p.value());
  return v;
}

std::shared_ptr<const PriorQuantiles> QuantileCache::get(const BetaPrior<double>& prior, Index count) {
  std::lock_guard lock(mutex_);
  auto key = std::make_tuple(prior.alpha, prior.beta, count);
  auto it = table_.find(key);
  if (it == table_.end()) it = table_.emplace(key, std::make_shared<PriorQuantiles>(prior, count)).first;
  return it->second;
}

std::vector<double> occurrence_loss_per_part(const Tensor& batch, const PriorQuantiles& quantiles,
                                             const RegularizerConfig& cfg) {
  if (cfg.eps < 0.0) throw std::invalid_argument("occurrence_loss: eps must be nonnegative");
  check_batch(batch, quantiles);
  const Index k = batch.dim(0), n = batch.dim(1);
  std::vector<double> losses(static_cast<std::size_t>(k));
  for (Index row = 0; row < k; ++row) {
    const auto order = ascending_order(batch, row);
    double total = 0.0;
    for (Index i = 0; i < n; ++i) {
      total += std::abs(coordinate(batch[row * n + order[static_cast<std::size_t>(i)]], cfg) - quantiles.target(i, cfg));
    }
    losses[static_cast<std::size_t>(row)] = total / static_cast<double>(n);
  }
  return losses;
}

double occurrence_loss(const Tensor& batch, const BetaPrior<double>& prior, const RegularizerConfig& cfg) {
  if (batch.rank() != 2) throw std::invalid_argument("occurrence_loss: expected K×N batch, got " + shape_string(batch.shape()));
  const PriorQuantiles q(prior, batch.dim(1));
  const auto parts = occurrence_loss_per_part(batch, q, cfg);
  double total = 0.0;
  for (double v : parts) total += v;
  return total / static_cast<double>(parts.size());
}

Var occurrence_loss(Var batch, const PriorQuantiles& quantiles, const RegularizerConfig& cfg) {
  const Tensor& t = batch.value();
  const auto parts = occurrence_loss_per_part(t, quantiles, cfg);
  double total = 0.0;
  for (double v : parts) total += v;
  const Index k = t.dim(0), n = t.dim(1);

  // d loss / d tau = sign(residual) * d coordinate / d tau, scaled by 1/(N K).
  Tensor local(t.shape());
  for (Index row = 0; row < k; ++row) {
    const auto order = ascending_order(t, row);
    for (Index i = 0; i < n; ++i) {
      const Index col = order[static_cast<std::size_t>(i)];
      const double tau = t[row * n + col];
      const double r = coordinate(tau, cfg) - quantiles.target(i, cfg);
      const double sign = r > 0.0 ? 1.0 : (r < 0.0 ? -1.0 : 0.0);
      const double slope = cfg.log_rescale ? 1.0 / (tau + cfg.eps) : 1.0;
      local[row * n + col] = sign * slope / static_cast<double>(n * k);
    }
  }
  return batch.graph().record(Tensor::scalar(total / static_cast<double>(k)), {batch},
                              [batch, local = std::move(local)](Graph& g, const Tensor& go) {
    g.grad_buffer(batch).vec() += go[0] * local.vec();
  });
}

}  // namespace ipart
