#include "certsmooth/smoothing.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <mutex>
#include <stdexcept>
#include <string>
#include <thread>

#include "certsmooth/rng.hpp"

namespace certsmooth {

void NoiseSpec::validate() const {
  if (!(sigma > 0.0) || !std::isfinite(sigma)) {
    throw std::domain_error("noise spec: sigma must be > 0");
  }
  if (n0 < 1) throw std::domain_error("noise spec: n0 must be >= 1");
  if (n < 1) throw std::domain_error("noise spec: n must be >= 1");
  (void)ConfidenceLevel{alpha};
}

namespace {

// Runs `count` noisy evaluations split into batches made of whole noise
// blocks, accumulating labels into `counts`.
void run_batches(BaseClassifier& f, const Eigen::Ref<const Eigen::VectorXd>& x,
                 double sigma, std::int64_t count, std::uint64_t seed,
                 std::int64_t first_block, std::int64_t end_block, Counts& counts) {
  const auto dim = x.size();
  const int k = f.num_classes();
  const std::int64_t first_row = first_block * kNoiseBlock;
  const std::int64_t end_row = std::min(count, end_block * kNoiseBlock);
  RowMatrix batch(end_row - first_row, dim);
  for (std::int64_t b = first_block; b < end_block; ++b) {
    const std::int64_t row0 = b * kNoiseBlock;
    const std::int64_t rows = std::min(kNoiseBlock, count - row0);
    Rng rng(mix64(seed, static_cast<std::uint64_t>(b)));
    auto block = batch.middleRows(row0 - first_row, rows);
    fill_gaussian(block, sigma, rng);
    block.rowwise() += x.transpose();
  }
  std::vector<int> labels;
  try {
    labels = f.evaluate(batch);
  } catch (const std::exception& e) {
    throw std::runtime_error("base classifier failed on noise samples [" +
                             std::to_string(first_row) + ", " + std::to_string(end_row) +
                             "): " + e.what());
  }
  if (static_cast<std::int64_t>(labels.size()) != batch.rows()) {
    throw std::runtime_error("base classifier returned " + std::to_string(labels.size()) +
                             " labels for " + std::to_string(batch.rows()) +
                             " noise samples starting at " + std::to_string(first_row));
  }
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || labels[i] >= k) {
      throw std::runtime_error("base classifier returned label " + std::to_string(labels[i]) +
                               " outside [0, " + std::to_string(k) + ") at noise sample " +
                               std::to_string(first_row + static_cast<std::int64_t>(i)));
    }
    ++counts[static_cast<std::size_t>(labels[i])];
  }
}

}  // namespace

Counts sample_under_noise(BaseClassifier& f, const Eigen::Ref<const Eigen::VectorXd>& x,
                          double sigma, std::int64_t count, std::uint64_t seed,
                          const SamplingOptions& options) {
  if (count < 1) throw std::domain_error("sample_under_noise: count must be >= 1");
  if (!(sigma > 0.0)) throw std::domain_error("sample_under_noise: sigma must be > 0");
  if (x.size() != f.input_dim()) {
    throw std::invalid_argument("sample_under_noise: input has dimension " +
                                std::to_string(x.size()) + ", classifier expects " +
                                std::to_string(f.input_dim()));
  }
  const std::int64_t blocks = (count + kNoiseBlock - 1) / kNoiseBlock;
  const std::int64_t blocks_per_batch =
      std::max<std::int64_t>(1, (options.batch_size + kNoiseBlock - 1) / kNoiseBlock);
  const std::int64_t batches = (blocks + blocks_per_batch - 1) / blocks_per_batch;
  const auto num_classes = static_cast<std::size_t>(f.num_classes());

  auto run_one = [&](std::int64_t batch, Counts& counts) {
    const std::int64_t first = batch * blocks_per_batch;
    run_batches(f, x, sigma, count, seed, first, std::min(blocks, first + blocks_per_batch),
                counts);
  };

  const int workers = f.concurrent_safe()
                          ? static_cast<int>(std::min<std::int64_t>(options.workers, batches))
                          : 1;
  if (workers <= 1) {
    Counts counts(num_classes, 0);
    for (std::int64_t b = 0; b < batches; ++b) run_one(b, counts);
    return counts;
  }

  std::atomic<std::int64_t> next{0};
  std::vector<Counts> partial(static_cast<std::size_t>(workers), Counts(num_classes, 0));
  std::exception_ptr failure;
  std::mutex failure_mutex;
  {
    std::vector<std::jthread> pool;
    for (int w = 0; w < workers; ++w) {
      pool.emplace_back([&, w] {
        for (std::int64_t b = next++; b < batches; b = next++) {
          try {
            run_one(b, partial[static_cast<std::size_t>(w)]);
          } catch (...) {
            std::lock_guard lock(failure_mutex);
            if (!failure) failure = std::current_exception();
            next = batches;
          }
        }
      });
    }
  }
  if (failure) std::rethrow_exception(failure);
  Counts counts(num_classes, 0);
  for (const auto& p : partial) {
    for (std::size_t c = 0; c < num_classes; ++c) counts[c] += p[c];
  }
  return counts;
}

int argmax_count(const Counts& counts) {
  if (counts.empty()) throw std::invalid_argument("argmax_count: empty counts");
  return static_cast<int>(std::max_element(counts.begin(), counts.end()) - counts.begin());
}

CertifyOutcome certify(BaseClassifier& f, const Eigen::Ref<const Eigen::VectorXd>& x,
                       const NoiseSpec& spec, const SamplingOptions& options) {
  spec.validate();
  const Counts selection =
      sample_under_noise(f, x, spec.sigma, spec.n0,
                         mix64(spec.seed, static_cast<std::uint64_t>(Phase::kSelect)), options);
  const int candidate = argmax_count(selection);

  CertifyOutcome outcome;
  outcome.counts =
      sample_under_noise(f, x, spec.sigma, spec.n,
                         mix64(spec.seed, static_cast<std::uint64_t>(Phase::kEstimate)), options);
  outcome.pa_lower = clopper_pearson_lower(outcome.counts[static_cast<std::size_t>(candidate)],
                                           spec.n, ConfidenceLevel{spec.alpha});
  if (outcome.pa_lower > 0.5) {
    outcome.label = candidate;
    // One-sided certificate: pb_upper = 1 - pa_lower.
    outcome.radius = spec.sigma * std_normal_quantile(outcome.pa_lower);
  }
  return outcome;
}

int predict(BaseClassifier& f, const Eigen::Ref<const Eigen::VectorXd>& x, double sigma,
            std::int64_t n, ConfidenceLevel alpha, std::uint64_t seed,
            const SamplingOptions& options) {
  if (n < 2) throw std::domain_error("predict: n must be >= 2");
  const Counts counts = sample_under_noise(
      f, x, sigma, n, mix64(seed, static_cast<std::uint64_t>(Phase::kPredict)), options);
  const int top = argmax_count(counts);
  std::int64_t runner_up = 0;
  for (std::size_t c = 0; c < counts.size(); ++c) {
    if (static_cast<int>(c) != top) runner_up = std::max(runner_up, counts[c]);
  }
  const std::int64_t top_count = counts[static_cast<std::size_t>(top)];
  const double pvalue = binom_two_sided_pvalue(top_count, top_count + runner_up, 0.5);
  return pvalue <= alpha.alpha() ? top : kAbstain;
}

double certified_radius(double sigma, double pa_lower, double pb_upper) {
  if (!(sigma > 0.0)) throw std::domain_error("certified_radius: sigma must be > 0");
  if (!(pa_lower > 0.0 && pa_lower < 1.0) || !(pb_upper > 0.0 && pb_upper < 1.0)) {
    throw std::domain_error("certified_radius: probability bounds must lie in (0, 1)");
  }
  if (pa_lower <= pb_upper) return 0.0;
  return 0.5 * sigma * (std_normal_quantile(pa_lower) - std_normal_quantile(pb_upper));
}

}  // namespace certsmooth
