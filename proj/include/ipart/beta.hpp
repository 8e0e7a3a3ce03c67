#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>
#include <type_traits>

#include "ipart/errors.hpp"

namespace ipart {

template <typename Scalar>
struct BetaPrior {
  static_assert(std::is_floating_point_v<Scalar>, "BetaPrior needs a floating point scalar");

  Scalar alpha;
  Scalar beta;

  BetaPrior(Scalar a, Scalar b) : alpha(a), beta(b) {
    if (!(a > 0) || !(b > 0) || !std::isfinite(a) || !std::isfinite(b)) {
      throw std::invalid_argument("BetaPrior: alpha and beta must be positive and finite");
    }
  }

  Scalar log_beta_function() const {
    return std::lgamma(alpha) + std::lgamma(beta) - std::lgamma(alpha + beta);
  }
};

/// A point of (0,1) stored as its logit u = log(x/(1-x)), so that points
/// within 1e-300 of either end stay distinct. U-shaped priors with small
/// parameters put most quantiles there.
template <typename Scalar>
class UnitInterval {
 public:
  static UnitInterval from_logit(Scalar u) { return UnitInterval(u); }
  static UnitInterval from_value(Scalar x) {
    if (!(x > 0) || !(x < 1)) throw std::invalid_argument("UnitInterval: value outside (0,1)");
    return UnitInterval(std::log(x) - std::log1p(-x));
  }

  Scalar logit() const { return logit_; }
  /// May round to exactly 0 or 1 in the far tails.
  Scalar value() const { return logit_ >= 0 ? 1 / (1 + std::exp(-logit_)) : std::exp(logit_) / (1 + std::exp(logit_)); }
  Scalar complement() const { return UnitInterval(-logit_).value(); }
  Scalar log_value() const { return -softplus(-logit_); }
  Scalar log_complement() const { return -softplus(logit_); }

 private:
  explicit UnitInterval(Scalar u) : logit_(u) {}
  static Scalar softplus(Scalar v) { return std::max(v, Scalar(0)) + std::log1p(std::exp(-std::abs(v))); }
  Scalar logit_;
};

namespace detail {

// Modified Lentz evaluation of the incomplete-beta continued fraction.
template <typename Scalar>
Scalar beta_continued_fraction(Scalar a, Scalar b, Scalar x) {
  constexpr int max_iterations = 10000;
  const Scalar eps = std::numeric_limits<Scalar>::epsilon();
  const Scalar tiny = std::numeric_limits<Scalar>::min() / eps;
  const Scalar qab = a + b, qap = a + 1, qam = a - 1;
  Scalar c = 1;
  Scalar d = 1 - qab * x / qap;
  if (std::abs(d) < tiny) d = tiny;
  d = 1 / d;
  Scalar h = d;
  for (int m = 1; m <= max_iterations; ++m) {
    const Scalar m2 = Scalar(2 * m);
    Scalar aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1 + aa * d;
    if (std::abs(d) < tiny) d = tiny;
    c = 1 + aa / c;
    if (std::abs(c) < tiny) c = tiny;
    d = 1 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1 + aa * d;
    if (std::abs(d) < tiny) d = tiny;
    c = 1 + aa / c;
    if (std::abs(c) < tiny) c = tiny;
    d = 1 / d;
    const Scalar del = d * c;
    h *= del;
    if (std::abs(del - 1) <= eps) return h;
  }
  throw NumericalError("beta_cdf: continued fraction did not converge");
}

// I_x(a,b) from x, 1-x and their logarithms, all supplied by the caller so
// that neither tail loses precision.
template <typename Scalar>
Scalar regularized_incomplete_beta(const BetaPrior<Scalar>& p, Scalar x, Scalar one_minus_x, Scalar log_x,
                                   Scalar log_one_minus_x) {
  const Scalar a = p.alpha, b = p.beta;
  const Scalar log_front = a * log_x + b * log_one_minus_x - p.log_beta_function();
  if (x < (a + 1) / (a + b + 2)) {
    return std::clamp(std::exp(log_front) * beta_continued_fraction(a, b, x) / a, Scalar(0), Scalar(1));
  }
  return std::clamp(1 - std::exp(log_front) * beta_continued_fraction(b, a, one_minus_x) / b, Scalar(0), Scalar(1));
}

}  // namespace detail

/// Regularized incomplete beta function I_x(alpha, beta).
template <typename Scalar>
Scalar beta_cdf(const BetaPrior<Scalar>& prior, Scalar x) {
  if (!(x >= 0) || !(x <= 1)) throw std::invalid_argument("beta_cdf: x outside [0,1]");
  if (x == 0) return 0;
  if (x == 1) return 1;
  return detail::regularized_incomplete_beta(prior, x, 1 - x, std::log(x), std::log1p(-x));
}

template <typename Scalar>
Scalar beta_cdf(const BetaPrior<Scalar>& prior, const UnitInterval<Scalar>& x) {
  return detail::regularized_incomplete_beta(prior, x.value(), x.complement(), x.log_value(), x.log_complement());
}

/// Density with respect to the logit coordinate: dF/du = x^a (1-x)^b / B(a,b).
template <typename Scalar>
Scalar beta_logit_density(const BetaPrior<Scalar>& prior, const UnitInterval<Scalar>& x) {
  return std::exp(prior.alpha * x.log_value() + prior.beta * x.log_complement() - prior.log_beta_function());
}

/// Inverse CDF. Bisection on the logit bracket, then safeguarded Newton
/// steps; the result satisfies |beta_cdf(x) - z| <= 1e-8 (or 64 ulp for
/// scalars coarser than double).
template <typename Scalar>
UnitInterval<Scalar> beta_quantile(const BetaPrior<Scalar>& prior, Scalar z) {
  if (!(z > 0) || !(z < 1)) throw std::invalid_argument("beta_quantile: z outside (0,1)");
  using U = UnitInterval<Scalar>;
  auto cdf = [&](Scalar u) { return beta_cdf(prior, U::from_logit(u)); };

  constexpr Scalar limit = Scalar(1e9);
  Scalar lo = -1, hi = 1;
  while (cdf(lo) > z) {
    lo *= 2;
    if (lo < -limit) break;
  }
  while (cdf(hi) < z) {
    hi *= 2;
    if (hi > limit) break;
  }

  // Relative bracket width 1e-10 leaves a handful of Newton steps.
  for (int it = 0; it < 400 && hi - lo > Scalar(1e-10) * std::max(Scalar(1), std::abs(lo + hi)); ++it) {
    const Scalar mid = lo + (hi - lo) / 2;
    (cdf(mid) < z ? lo : hi) = mid;
  }
  Scalar u = lo + (hi - lo) / 2;
  Scalar f = cdf(u) - z;
  for (int it = 0; it < 50 && std::abs(f) > std::numeric_limits<Scalar>::epsilon(); ++it) {
    (f < 0 ? lo : hi) = u;
    const Scalar slope = beta_logit_density(prior, U::from_logit(u));
    Scalar next = slope > 0 ? u - f / slope : u;
    if (!(next > lo && next < hi)) next = lo + (hi - lo) / 2;
    if (next == u) break;
    u = next;
    f = cdf(u) - z;
  }
  const Scalar tolerance = std::max(Scalar(1e-8), 64 * std::numeric_limits<Scalar>::epsilon());
  if (!(std::abs(f) <= tolerance)) {
    std::ostringstream msg;
    msg << "beta_quantile: no convergence for alpha=" << prior.alpha << " beta=" << prior.beta << " z=" << z
        << " (logit=" << u << ", residual=" << f << ", bracket=[" << lo << ", " << hi << "])";
    throw NumericalError(msg.str());
  }
  return U::from_logit(u);
}

}  // namespace ipart
