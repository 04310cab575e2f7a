#include "certsmooth/promptlearn.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <stdexcept>
#include <string>

#include "certsmooth/rng.hpp"

namespace certsmooth {

namespace {

void check_sigma_range(std::span<const double> range) {
  if (range.empty()) throw std::invalid_argument("sigma range is empty");
  for (double s : range) {
    if (!(s > 0.0) || !std::isfinite(s)) throw std::invalid_argument("sigma range entries must be > 0");
  }
}

// Tags for seeds derived inside the prompt learners.
enum Stream : std::uint64_t { kShuffle = 1, kSigmas = 2, kNoise = 3 };

}  // namespace

void FewShotConfig::validate() const {
  if (shots_per_class < 1 || epochs < 0 || batch_size < 1 || noise_draws < 1) {
    throw std::invalid_argument("few-shot config: counts must be positive");
  }
  if (!(learning_rate >= 0.0) || !(momentum >= 0.0 && momentum < 1.0)) {
    throw std::invalid_argument("few-shot config: invalid learning rate or momentum");
  }
  check_sigma_range(sigma_range);
}

void ZeroShotConfig::validate() const {
  if (copies < 1 || steps < 0) throw std::invalid_argument("zero-shot config: copies >= 1, steps >= 0");
  if (!(learning_rate >= 0.0)) throw std::invalid_argument("zero-shot config: invalid learning rate");
  check_sigma_range(sigma_range);
}

std::vector<double> sample_sigmas(std::span<const double> sigma_range, int count, std::uint64_t seed) {
  check_sigma_range(sigma_range);
  if (count < 1) throw std::invalid_argument("sample_sigmas: count must be >= 1");
  Rng rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, sigma_range.size() - 1);
  std::vector<double> out(static_cast<std::size_t>(count));
  for (auto& s : out) s = sigma_range[pick(rng)];
  return out;
}

FewShotResult few_shot_train(const ToyVlm& vlm, const PromptState& init,
                             const Eigen::Ref<const RowMatrix>& images, std::span<const int> labels,
                             const FewShotConfig& cfg, Temperature tau) {
  cfg.validate();
  check_prompts(vlm, init);
  if (static_cast<Eigen::Index>(labels.size()) != images.rows() || images.rows() == 0) {
    throw std::invalid_argument("few-shot training: need one label per image");
  }
  const std::set<int> seen(labels.begin(), labels.end());
  if (static_cast<int>(seen.size()) != vlm.num_classes() || *seen.begin() != 0 ||
      *seen.rbegin() != vlm.num_classes() - 1) {
    throw std::invalid_argument("few-shot training: labels must cover all classes");
  }

  FewShotResult result{init, {}};
  Eigen::MatrixXd velocity = Eigen::MatrixXd::Zero(init.context.rows(), init.context.cols());
  std::vector<Eigen::Index> order(static_cast<std::size_t>(images.rows()));
  RowMatrix batch;
  std::vector<int> batch_labels;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), Eigen::Index{0});
    Rng shuffle_rng(mix64(cfg.seed, kShuffle, static_cast<std::uint64_t>(epoch)));
    std::shuffle(order.begin(), order.end(), shuffle_rng);

    double loss_sum = 0.0;
    int steps = 0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      batch.resize(static_cast<Eigen::Index>(end - start), images.cols());
      batch_labels.clear();
      for (std::size_t i = start; i < end; ++i) {
        batch.row(static_cast<Eigen::Index>(i - start)) = images.row(order[i]);
        batch_labels.push_back(labels[static_cast<std::size_t>(order[i])]);
      }
      const auto step_tag = static_cast<std::uint64_t>(steps);
      const auto sigmas = sample_sigmas(
          cfg.sigma_range, cfg.noise_draws,
          mix64(cfg.seed, kSigmas, static_cast<std::uint64_t>(epoch), step_tag));
      PromptGradient<double> g;
      try {
        g = prompt_gradient(vlm, result.prompts, batch, std::span<const int>(batch_labels), sigmas, tau,
                            LossKind::kCrossEntropy,
                            mix64(cfg.seed, kNoise, static_cast<std::uint64_t>(epoch), step_tag));
      } catch (const std::exception& e) {
        throw std::runtime_error("few-shot training failed at epoch " + std::to_string(epoch) +
                                 ", step " + std::to_string(steps) + ": " + e.what());
      }
      if (!std::isfinite(g.loss)) {
        throw std::runtime_error("few-shot training: non-finite loss at epoch " + std::to_string(epoch) +
                                 ", step " + std::to_string(steps));
      }
      velocity = cfg.momentum * velocity + g.gradient;
      result.prompts.context -= cfg.learning_rate * velocity;
      loss_sum += g.loss;
      ++steps;
    }
    result.epoch_loss.push_back(loss_sum / steps);
  }
  return result;
}

double mean_prob_entropy(const ToyVlm& vlm, const PromptState& prompts,
                         const Eigen::Ref<const Eigen::VectorXd>& image,
                         std::span<const double> sigma_draws, std::uint64_t noise_seed, Temperature tau) {
  return prompt_gradient(vlm, prompts, image.transpose(), std::nullopt, sigma_draws, tau,
                         LossKind::kMeanProbEntropy, noise_seed)
      .loss;
}

ZeroShotResult zero_shot_adapt(const ToyVlm& vlm, const PromptState& init,
                               const Eigen::Ref<const Eigen::VectorXd>& image,
                               const ZeroShotConfig& cfg, Temperature tau) {
  cfg.validate();
  check_prompts(vlm, init);
  const auto sigmas = sample_sigmas(cfg.sigma_range, cfg.copies, mix64(cfg.seed, kSigmas));
  const std::uint64_t noise_seed = mix64(cfg.seed, kNoise);
  const Eigen::RowVectorXd row = image.transpose();

  ZeroShotResult result{init, 0.0, 0.0};
  for (int step = 0; step < cfg.steps; ++step) {
    PromptGradient<double> g;
    try {
      g = prompt_gradient(vlm, result.prompts, row, std::nullopt, sigmas, tau,
                          LossKind::kMeanProbEntropy, noise_seed);
    } catch (const std::exception& e) {
      throw std::runtime_error("zero-shot adaptation failed at step " + std::to_string(step) + ": " +
                               e.what());
    }
    if (step == 0) result.entropy_before = g.loss;
    result.prompts.context -= cfg.learning_rate * g.gradient;
  }
  result.entropy_after = mean_prob_entropy(vlm, result.prompts, image, sigmas, noise_seed, tau);
  if (cfg.steps == 0) result.entropy_before = result.entropy_after;
  return result;
}

ZeroShotResult combined_adapt(const ToyVlm& vlm, const PromptState& few_shot_prompts,
                                     const Eigen::Ref<const Eigen::VectorXd>& image,
                                     const ZeroShotConfig& cfg, Temperature tau) {
  return zero_shot_adapt(vlm, few_shot_prompts, image, cfg, tau);
}

}  // namespace certsmooth
