#pragma once

// Exact statistical primitives used by the smoothing engine: the standard
// Gaussian CDF and quantile, and exact binomial tails, bounds and tests.

#include <cstdint>
#include <stdexcept>

namespace certsmooth {

/// Significance level alpha of a one-sided bound or a test, 0 < alpha < 1.
class ConfidenceLevel {
 public:
  explicit ConfidenceLevel(double alpha) : alpha_(alpha) {
    if (!(alpha > 0.0 && alpha < 1.0)) {
      throw std::domain_error("confidence level alpha must lie in (0, 1)");
    }
  }
  double alpha() const noexcept { return alpha_; }

 private:
  double alpha_;
};

/// Phi(x). Throws std::domain_error for non-finite x.
double std_normal_cdf(double x);

/// Phi^-1(p) for 0 < p < 1, by bisection on std_normal_cdf.
/// p == 0 or p == 1 (infinite quantile) throws std::domain_error.
double std_normal_quantile(double p);

/// P[X <= k] and P[X >= k] for X ~ Binomial(trials, p), summed exactly term
/// by term from the log-pmf at k.
double binomial_lower_tail(std::int64_t k, std::int64_t trials, double p);
double binomial_upper_tail(std::int64_t k, std::int64_t trials, double p);

/// One-sided exact (Clopper-Pearson) lower confidence bound L on a binomial
/// proportion: P[Binomial(trials, L) >= successes] = alpha. Equivalently the
/// alpha-quantile of Beta(successes, trials - successes + 1). Solved by
/// bisection to 1e-12 absolute; the returned value never exceeds the root.
double clopper_pearson_lower(std::int64_t successes, std::int64_t trials,
                             ConfidenceLevel alpha);

/// Exact two-sided binomial test p-value,
/// min(1, 2 min(P[X <= k], P[X >= k])) with X ~ Binomial(trials, p0).
double binom_two_sided_pvalue(std::int64_t successes, std::int64_t trials,
                              double p0);

}  // namespace certsmooth
