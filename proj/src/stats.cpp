#include "certsmooth/stats.hpp"

#include <cmath>
#include <limits>
#include <numbers>

namespace certsmooth {

namespace {

void check_counts(std::int64_t k, std::int64_t n) {
  if (n < 1) throw std::domain_error("binomial: trials must be >= 1");
  if (k < 0 || k > n) {
    throw std::domain_error("binomial: successes must lie in [0, trials]");
  }
}

void check_probability(double p) {
  if (!(p >= 0.0 && p <= 1.0)) {
    throw std::domain_error("probability must lie in [0, 1]");
  }
}

// log of the Binomial(n, p) pmf at k, for 0 < p < 1.
double log_pmf(std::int64_t k, std::int64_t n, double p) {
  const double log_choose =
      std::lgamma(static_cast<double>(n) + 1.0) -
      (std::lgamma(static_cast<double>(k) + 1.0) +
       std::lgamma(static_cast<double>(n - k) + 1.0));
  return log_choose + (static_cast<double>(k) * std::log(p) +
                       static_cast<double>(n - k) * std::log1p(-p));
}

// Terms below this fraction of the running sum are dropped; past the mode the
// remainder decays geometrically and is far below double precision.
constexpr double kNegligible = 1e-20;

// Quantile of the lower tail, p in (0, 0.5].
double lower_quantile(double p) {
  double lo = -40.0;
  double hi = 0.0;
  for (int it = 0; it < 2000; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (mid <= lo || mid >= hi) break;
    if (std_normal_cdf(mid) < p) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  return hi;
}

}  // namespace

double std_normal_cdf(double x) {
  if (!std::isfinite(x)) throw std::domain_error("std_normal_cdf: non-finite input");
  return 0.5 * std::erfc(-x / std::numbers::sqrt2);
}

double std_normal_quantile(double p) {
  if (!(p > 0.0 && p < 1.0)) {
    throw std::domain_error("std_normal_quantile: p must lie in (0, 1)");
  }
  if (p == 0.5) return 0.0;
  // 1 - p is exact for p >= 0.5.
  if (p > 0.5) return -lower_quantile(1.0 - p);
  return lower_quantile(p);
}

// Each tail is summed directly only when k sits on its own side of the mean,
// so the walk starts at the largest term and moves away from the mode; the
// other side is taken as a complement. The pivot n*p keeps the split
// mirror-symmetric, which makes the p0 = 1/2 test exactly symmetric in k.
double binomial_lower_tail(std::int64_t k, std::int64_t n, double p) {
  check_counts(k, n);
  check_probability(p);
  if (k == n || p == 0.0) return 1.0;
  if (p == 1.0) return 0.0;
  if (static_cast<double>(k) > static_cast<double>(n) * p) {
    return 1.0 - binomial_upper_tail(k + 1, n, p);
  }
  double term = std::exp(log_pmf(k, n, p));
  double sum = term;
  const double odds = (1.0 - p) / p;
  for (std::int64_t j = k; j > 0; --j) {
    term *= static_cast<double>(j) / static_cast<double>(n - j + 1) * odds;
    sum += term;
    if (term < kNegligible * sum) break;
  }
  return std::min(sum, 1.0);
}

double binomial_upper_tail(std::int64_t k, std::int64_t n, double p) {
  check_counts(k, n);
  check_probability(p);
  if (k == 0 || p == 1.0) return 1.0;
  if (p == 0.0) return 0.0;
  if (static_cast<double>(k) < static_cast<double>(n) * p) {
    return 1.0 - binomial_lower_tail(k - 1, n, p);
  }
  double term = std::exp(log_pmf(k, n, p));
  double sum = term;
  const double odds = p / (1.0 - p);
  for (std::int64_t j = k; j < n; ++j) {
    term *= static_cast<double>(n - j) / static_cast<double>(j + 1) * odds;
    sum += term;
    if (term < kNegligible * sum) break;
  }
  return std::min(sum, 1.0);
}

double clopper_pearson_lower(std::int64_t successes, std::int64_t trials,
                             ConfidenceLevel alpha) {
  check_counts(successes, trials);
  if (successes == 0) return 0.0;
  const double a = alpha.alpha();
  // P[X >= k; L] is increasing in L, equals 1 at L = k/n only when k = 0, and
  // is at least 1/2 at L = k/n (median property), so the root lies below k/n.
  double lo = 0.0;
  double hi = static_cast<double>(successes) / static_cast<double>(trials);
  while (hi - lo > 1e-13) {
    const double mid = 0.5 * (lo + hi);
    if (binomial_upper_tail(successes, trials, mid) < a) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  return lo;
}

double binom_two_sided_pvalue(std::int64_t successes, std::int64_t trials,
                              double p0) {
  check_counts(successes, trials);
  check_probability(p0);
  const double lower = binomial_lower_tail(successes, trials, p0);
  const double upper = binomial_upper_tail(successes, trials, p0);
  return std::min(1.0, 2.0 * std::min(lower, upper));
}

}  // namespace certsmooth
