#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>

#include "ipart/ops.hpp"

namespace support {

inline ipart::Tensor random_tensor(ipart::Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  ipart::Tensor t(std::move(shape));
  for (ipart::Index i = 0; i < t.size(); ++i) t[i] = u(rng);
  return t;
}

// Fixed random weighting of every output entry, so the probe's gradient is
// generic (a plain sum would vanish through softmax and normalization).
inline ipart::Var probe(ipart::Var y, std::uint64_t seed = 7) {
  std::mt19937_64 rng(seed);
  ipart::Graph& g = y.graph();
  return ipart::ops::sum(ipart::ops::mul(y, g.constant(random_tensor(y.shape(), rng, 0.5, 1.5))));
}

// grad_check for a model-owned tensor reached through Graph::parameter;
// returns the worst relative error.
inline double parameter_check(const std::function<ipart::Var(ipart::Graph&)>& f, ipart::Tensor& param,
                              double step = 1e-6) {
  ipart::Tensor analytic;
  {
    ipart::Graph g;
    g.backward(f(g));
    analytic = *g.parameter_grad(param);
  }
  auto eval = [&] {
    ipart::Graph g;
    return f(g).value()[0];
  };
  double worst = 0.0;
  for (ipart::Index i = 0; i < param.size(); ++i) {
    const double x0 = param[i];
    param[i] = x0 + step;
    const double up = eval();
    param[i] = x0 - step;
    const double down = eval();
    param[i] = x0;
    const double numeric = (up - down) / (2.0 * step);
    const double denom = std::max({std::abs(analytic[i]), std::abs(numeric), 1e-8});
    worst = std::max(worst, std::abs(analytic[i] - numeric) / denom);
  }
  return worst;
}

}  // namespace support
