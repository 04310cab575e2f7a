#include "certsmooth/reference.hpp"

#include <cmath>

#include "certsmooth/smoothing.hpp"
#include "certsmooth/stats.hpp"
#include "certsmooth/vlmhead.hpp"

namespace certsmooth::reference {

bool Check::passed() const { return std::isfinite(computed) && std::abs(computed - expected) <= tolerance; }

std::vector<Check> scalar_checks() {
  const ConfidenceLevel alpha(0.001);
  Eigen::VectorXd sims(2);
  sims << 0.3, 0.1;
  const Eigen::VectorXd probs = temperature_softmax(sims, Temperature(100.0));
  return {
      {"std_normal_cdf(2)", std_normal_cdf(2.0), kPhiOf2, 1e-12},
      {"std_normal_quantile(0.9)", std_normal_quantile(0.9), kQuantileOf0p9, 1e-10},
      {"clopper_pearson_lower(72, 100, 0.001)", clopper_pearson_lower(72, 100, alpha), kClopperPearson72of100, 1e-12},
      {"clopper_pearson_lower(100, 100, 0.001)", clopper_pearson_lower(100, 100, alpha), kClopperPearson100of100,
       1e-12},
      {"clopper_pearson_lower(9000, 10000, 0.001)", clopper_pearson_lower(9000, 10000, alpha),
       kClopperPearson9000of10000, 1e-12},
      {"std_normal_quantile(0.001^(1/1000))", std_normal_quantile(std::pow(0.001, 1.0 / 1000.0)),
       kQuantileOfAllOf1000, 1e-9},
      {"certified_radius(0.5, 0.9, 0.1)", certified_radius(0.5, 0.9, 0.1), kRadius_0p5_0p9_0p1, 1e-10},
      {"certified_radius(0.25, 0.8, 0.2)", certified_radius(0.25, 0.8, 0.2), kRadius_0p25_0p8_0p2, 1e-10},
      {"softmax tail (0.3, 0.1), tau 100", probs(1), kSoftmaxTail, 1e-15},
      {"binom_two_sided_pvalue(10, 10, 0.5)", binom_two_sided_pvalue(10, 10, 0.5), 0.001953125, 1e-15},
      {"binom_two_sided_pvalue(5, 10, 0.5)", binom_two_sided_pvalue(5, 10, 0.5), 1.0, 0.0},
  };
}

}  // namespace certsmooth::reference
