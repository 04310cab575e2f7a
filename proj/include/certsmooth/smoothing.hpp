#pragma once

// Randomized smoothing: Monte Carlo evaluation of a base classifier under
// isotropic Gaussian noise, the CERTIFY / PREDICT procedures and the l2
// certified radius.

#include <Eigen/Core>

#include <cstdint>
#include <vector>

#include "certsmooth/stats.hpp"

namespace certsmooth {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Counts = std::vector<std::int64_t>;

inline constexpr int kAbstain = -1;

/// A label-producing classifier f : R^D -> {0, ..., K-1}.
///
/// evaluate() receives one input per row and must be deterministic per row:
/// the label of a row may not depend on the other rows of the batch.
class BaseClassifier {
 public:
  virtual ~BaseClassifier() = default;

  virtual int num_classes() const = 0;
  virtual int input_dim() const = 0;
  virtual std::vector<int> evaluate(const Eigen::Ref<const RowMatrix>& batch) = 0;

  /// Whether evaluate() may be called from several threads at once.
  virtual bool concurrent_safe() const { return true; }
};

struct NoiseSpec {
  double sigma = 0.25;
  std::int64_t n0 = 100;     // selection samples
  std::int64_t n = 10'000;   // estimation samples
  double alpha = 0.001;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Execution knobs; they never change results.
struct SamplingOptions {
  std::int64_t batch_size = 1024;
  int workers = 1;
};

/// Noise is generated in blocks of this many samples; block b of a stream
/// with seed s uses Rng(mix64(s, b)).
inline constexpr std::int64_t kNoiseBlock = 128;

/// Stream tags folded into NoiseSpec::seed for each sampling phase.
enum class Phase : std::uint64_t { kSelect = 0, kEstimate = 1, kPredict = 2 };

struct CertifyOutcome {
  int label = kAbstain;
  double radius = 0.0;
  double pa_lower = 0.0;
  Counts counts;  // estimation-phase counts, also filled on abstention

  bool abstained() const noexcept { return label == kAbstain; }
};

/// Per-class counts of f(x + delta) over `count` draws of
/// delta ~ N(0, sigma^2 I). Result depends only on (x, sigma, count, seed).
Counts sample_under_noise(BaseClassifier& f, const Eigen::Ref<const Eigen::VectorXd>& x,
                          double sigma, std::int64_t count, std::uint64_t seed,
                          const SamplingOptions& options = {});

/// Lowest index among the maximal entries.
int argmax_count(const Counts& counts);

CertifyOutcome certify(BaseClassifier& f, const Eigen::Ref<const Eigen::VectorXd>& x,
                       const NoiseSpec& spec, const SamplingOptions& options = {});

/// Returns the smoothed prediction or kAbstain when the top-two binomial test
/// is not significant at `alpha`.
int predict(BaseClassifier& f, const Eigen::Ref<const Eigen::VectorXd>& x, double sigma,
            std::int64_t n, ConfidenceLevel alpha, std::uint64_t seed,
            const SamplingOptions& options = {});

/// sigma/2 * (Phi^-1(pa_lower) - Phi^-1(pb_upper)), clamped at 0.
double certified_radius(double sigma, double pa_lower, double pb_upper);

}  // namespace certsmooth
