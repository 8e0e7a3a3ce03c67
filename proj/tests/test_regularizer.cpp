#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <functional>

#include "ipart/regularizer.hpp"
#include "support.hpp"

using namespace ipart;
using Prior = BetaPrior<double>;

namespace {

// Sorted L1 of logs against closed-form quantiles; shares no code with the
// library (no beta_quantile, no PriorQuantiles).
double log_sorted_l1_oracle(const Tensor& batch, const std::function<double(double)>& quantile) {
  const Index k = batch.dim(0), n = batch.dim(1);
  double sum_parts = 0.0;
  for (Index row = 0; row < k; ++row) {
    std::vector<double> v(batch.data() + row * n, batch.data() + (row + 1) * n);
    std::sort(v.begin(), v.end());
    double s = 0.0;
    for (Index i = 0; i < n; ++i) {
      const double q = quantile((2.0 * static_cast<double>(i + 1) - 1.0) / (2.0 * static_cast<double>(n)));
      s += std::abs(std::log(v[static_cast<std::size_t>(i)]) - std::log(q));
    }
    sum_parts += s / static_cast<double>(n);
  }
  return sum_parts / static_cast<double>(k);
}

Tensor random_batch(Index k, Index n, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Tensor t(Shape{k, n});
  for (Index i = 0; i < t.size(); ++i) {
    double v = u(rng);
    if (i % 7 == 0) v *= 1e-6;  // exercise the small-value end
    t[i] = std::clamp(v, 1e-300, 1.0 - 1e-16);
  }
  return t;
}

}  // namespace

TEST_CASE("occurrence_loss examples") {
  SUBCASE("rows equal to the prior quantiles give zero") {
    const Prior p(2, 3);
    const PriorQuantiles q(p, 6);
    Tensor batch(Shape{2, 6});
    for (Index i = 0; i < 6; ++i) batch(0, i) = batch(1, 5 - i) = q[i].value();
    CHECK(occurrence_loss(batch, p) == 0.0);
  }
  SUBCASE("single sample at the median") {
    CHECK(occurrence_loss(Tensor(Shape{1, 1}, {0.5}), Prior(1, 1), {1e-6, true}) < 1e-15);
  }
  SUBCASE("two samples, eps 0") {
    const double expected = (std::abs(std::log(0.2) - std::log(0.25)) + std::abs(std::log(0.9) - std::log(0.75))) / 2.0;
    const double got = occurrence_loss(Tensor(Shape{1, 2}, {0.9, 0.2}), Prior(1, 1), {0.0, true});
    CHECK(std::abs(got - expected) < 1e-15);
  }
  SUBCASE("entries outside (0,1) are rejected") {
    CHECK_THROWS_AS(occurrence_loss(Tensor(Shape{1, 2}, {0.0, 0.5}), Prior(1, 1)), std::invalid_argument);
    CHECK_THROWS_AS(occurrence_loss(Tensor(Shape{1, 2}, {1.0, 0.5}), Prior(1, 1)), std::invalid_argument);
  }
}

TEST_CASE("wasserstein_oracle examples") {
  CHECK(wasserstein_oracle<double>({0.1, 0.4}, {0.1, 0.4}) == 0.0);
  CHECK(wasserstein_oracle<double>({0.0, 1.0}, {1.0, 0.0}) == 0.0);
  CHECK(wasserstein_oracle<double>({0.0, 0.5}, {0.25, 0.75}) == 0.25);
  CHECK_THROWS_AS(wasserstein_oracle<double>({0.0}, {0.25, 0.75}), std::invalid_argument);
  CHECK(wasserstein_oracle<float>({0.0f, 0.5f}, {0.25f, 0.75f}) == 0.25f);
}

TEST_CASE("occurrence_loss agrees with independent oracles") {
  std::mt19937_64 rng(11);
  const std::vector<std::pair<Prior, std::function<double(double)>>> priors = {
      {Prior(1, 1), [](double z) { return z; }},
      {Prior(1, 2), [](double z) { return 1.0 - std::sqrt(1.0 - z); }},
      {Prior(2, 1), [](double z) { return std::sqrt(z); }},
  };
  for (int trial = 0; trial < 60; ++trial) {
    const auto& [prior, quantile] = priors[static_cast<std::size_t>(trial) % priors.size()];
    const Index k = 1 + trial % 4, n = std::array<Index, 3>{8, 32, 128}[static_cast<std::size_t>(trial % 3)];
    const Tensor batch = random_batch(k, n, rng);
    const double got = occurrence_loss(batch, prior, {0.0, true});
    CHECK(std::abs(got - log_sorted_l1_oracle(batch, quantile)) <= 1e-12);

    const PriorQuantiles q(prior, n);
    const auto per_part = occurrence_loss_per_part(batch, q, {0.0, false});
    double mean = 0.0;
    for (Index row = 0; row < k; ++row) {
      const std::vector<double> r(batch.data() + row * n, batch.data() + (row + 1) * n);
      CHECK(per_part[static_cast<std::size_t>(row)] == wasserstein_oracle(r, q.values()));
      mean += per_part[static_cast<std::size_t>(row)];
    }
    CHECK(occurrence_loss(batch, prior, {0.0, false}) == mean / static_cast<double>(k));
  }
}

TEST_CASE("occurrence_loss properties") {
  std::mt19937_64 rng(12);
  const Prior p(1, 1e-3);
  for (int trial = 0; trial < 20; ++trial) {
    const Tensor batch = random_batch(3, 16, rng);
    const double base = occurrence_loss(batch, p);
    CHECK(base >= 0.0);
    // permuting samples leaves the loss unchanged
    std::vector<Index> perm(16);
    std::iota(perm.begin(), perm.end(), Index{0});
    std::shuffle(perm.begin(), perm.end(), rng);
    Tensor shuffled(batch.shape());
    for (Index r = 0; r < 3; ++r) {
      for (Index c = 0; c < 16; ++c) shuffled(r, c) = batch(r, perm[static_cast<std::size_t>(c)]);
    }
    CHECK(occurrence_loss(shuffled, p) == base);
  }
}

TEST_CASE("occurrence_loss gradient survives near zero") {
  const Prior p(1, 1e-3);
  const auto q = std::make_shared<PriorQuantiles>(p, 4);
  Graph g;
  Var t = g.leaf(Tensor(Shape{1, 4}, {1e-6, 0.3, 0.6, 0.9}));
  g.backward(occurrence_loss(t, *q));
  CHECK(std::abs(g.grad(t)[0]) > 0.0);
  CHECK(std::abs(g.grad(t)[0]) > 1e4);  // log rescaling: 1/(tau+eps)/N
}

TEST_CASE("occurrence_loss passes grad_check away from ties") {
  std::mt19937_64 rng(13);
  for (const Prior p : {Prior(1, 1e-3), Prior(2e-3, 1e-3), Prior(2, 2)}) {
    for (int trial = 0; trial < 5; ++trial) {
      const Tensor point = support::random_tensor({3, 8}, rng, 0.05, 0.95);
      const PriorQuantiles q(p, 8);
      const GradCheckReport r = grad_check([&](Graph&, Var x) { return occurrence_loss(x, q); }, point);
      INFO("max relative error " << r.max_relative_error);
      CHECK(r.pass);
    }
  }
}

TEST_CASE("quantile cache returns shared tables") {
  QuantileCache cache;
  const auto a = cache.get(Prior(1, 1e-3), 32);
  const auto b = cache.get(Prior(1, 1e-3), 32);
  const auto c = cache.get(Prior(1, 1e-3), 16);
  CHECK(a.get() == b.get());
  CHECK(a.get() != c.get());
  CHECK(a->size() == 32);
}
