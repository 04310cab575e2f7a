#pragma once

// Prompt learning for smoothing: few-shot noise-augmented tuning with
// cross-entropy, and per-image test-time adaptation minimizing the entropy of
// the mean prediction over noisy copies. Both update only the context tokens.

#include <cstdint>
#include <span>
#include <vector>

#include "certsmooth/toymodel.hpp"

namespace certsmooth {

inline const std::vector<double> kDefaultSigmaRange{0.1, 0.25, 0.5, 1.0};

struct FewShotConfig {
  int shots_per_class = 16;
  int epochs = 50;
  double learning_rate = 0.002;
  int batch_size = 16;
  int noise_draws = 4;  // sigma values (and perturbations per image) per step
  double momentum = 0.0;
  std::vector<double> sigma_range = kDefaultSigmaRange;
  std::uint64_t seed = 0;

  void validate() const;
};

struct ZeroShotConfig {
  int copies = 100;
  int steps = 1;
  double learning_rate = 0.001;
  std::vector<double> sigma_range = kDefaultSigmaRange;
  std::uint64_t seed = 0;

  void validate() const;
};

/// `count` i.i.d. uniform picks from `sigma_range`, deterministic in `seed`.
std::vector<double> sample_sigmas(std::span<const double> sigma_range, int count, std::uint64_t seed);

struct FewShotResult {
  PromptState prompts;
  std::vector<double> epoch_loss;  // mean cross-entropy per epoch
};

/// Plain SGD on the context tokens. Each step draws a shuffled batch,
/// `noise_draws` sigma values and one perturbation per (image, draw).
/// `images`/`labels` are the few-shot training set.
FewShotResult few_shot_train(const ToyVlm& vlm, const PromptState& init,
                             const Eigen::Ref<const RowMatrix>& images, std::span<const int> labels,
                             const FewShotConfig& cfg, Temperature tau = Temperature{});

struct ZeroShotResult {
  PromptState prompts;
  double entropy_before = 0.0;  // H(qbar) at init
  double entropy_after = 0.0;   // H(qbar) after the last step, same copies
};

/// Test-time adaptation of `init` on one unlabeled image. The noisy copies
/// (sigma per copy from sample_sigmas) are drawn once and reused by every
/// step, so all steps descend the same sample-average objective.
ZeroShotResult zero_shot_adapt(const ToyVlm& vlm, const PromptState& init,
                               const Eigen::Ref<const Eigen::VectorXd>& image,
                               const ZeroShotConfig& cfg, Temperature tau = Temperature{});

/// Zero-shot adaptation started from few-shot prompts.
ZeroShotResult combined_adapt(const ToyVlm& vlm, const PromptState& few_shot_prompts,
                                     const Eigen::Ref<const Eigen::VectorXd>& image,
                                     const ZeroShotConfig& cfg, Temperature tau = Temperature{});

/// H(qbar) over `copies` noisy copies of `image` with the given prompts.
double mean_prob_entropy(const ToyVlm& vlm, const PromptState& prompts,
                         const Eigen::Ref<const Eigen::VectorXd>& image,
                         std::span<const double> sigma_draws, std::uint64_t noise_seed,
                         Temperature tau = Temperature{});

}  // namespace certsmooth
