#include "support.hpp"

#include <chrono>
#include <cmath>
#include <unistd.h>

#include "certsmooth/harness.hpp"
#include "certsmooth/promptlearn.hpp"
#include "certsmooth/rng.hpp"
#include "certsmooth/toymodel.hpp"

namespace certsmooth::testing {

namespace fs = std::filesystem;
using LD = long double;

fs::path scratch_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("certsmooth_" + name + "_" + std::to_string(::getpid()));
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

namespace {

double relative_error(const Matrix<LD>& analytic, const Matrix<LD>& numeric) {
  const LD scale = std::max(analytic.norm(), numeric.norm());
  if (scale < 1e-30L) return 0.0;
  return static_cast<double>((analytic - numeric).norm() / scale);
}

double check_one(const BasicToyVlm<LD>& vlm, const BasicPromptState<LD>& prompts, const Matrix<LD>& images,
                 std::optional<std::span<const int>> labels, std::span<const double> sigmas, Temperature tau,
                 LossKind kind, std::uint64_t seed) {
  const LD h = 1e-4L;
  const auto analytic = prompt_gradient(vlm, prompts, images, labels, sigmas, tau, kind, seed);
  Matrix<LD> numeric(prompts.context.rows(), prompts.context.cols());
  for (Eigen::Index i = 0; i < prompts.context.size(); ++i) {
    auto plus = prompts;
    auto minus = prompts;
    plus.context.data()[i] += h;
    minus.context.data()[i] -= h;
    const LD up = prompt_gradient(vlm, plus, images, labels, sigmas, tau, kind, seed).loss;
    const LD down = prompt_gradient(vlm, minus, images, labels, sigmas, tau, kind, seed).loss;
    numeric.data()[i] = (up - down) / (2 * h);
  }
  return relative_error(analytic.gradient, numeric);
}

}  // namespace

GradientFidelity gradient_fidelity(int configs, std::uint64_t seed) {
  const auto start = std::chrono::steady_clock::now();
  GradientFidelity out;
  out.configs = configs;
  const double taus[] = {1.0, 10.0, 100.0};
  for (int c = 0; c < configs; ++c) {
    Rng rng(mix64(seed, static_cast<std::uint64_t>(c)));
    auto pick = [&](int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); };
    ToyVlmConfig vc;
    vc.num_classes = pick(2, 5);
    vc.image_dim = pick(3, 10);
    vc.embed_dim = pick(2, 6);
    vc.token_dim = pick(2, 6);
    vc.template_tokens = 2;
    vc.text_gain = 1.0;
    vc.seed = rng();
    const auto vlm = make_random_vlm(vc).cast<LD>();
    const int tokens = pick(1, 4);
    BasicPromptState<LD> prompts;
    prompts.per_class = c % 4 == 3;
    const int groups = prompts.per_class ? vc.num_classes : 1;
    Matrix<double> ctx(groups * tokens, vc.token_dim);
    fill_gaussian(ctx, 0.5, rng);
    prompts.context = ctx.cast<LD>();
    const Temperature tau(taus[c % 3]);

    const int n = pick(1, 4);
    Matrix<double> images(n, vc.image_dim);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    for (Eigen::Index i = 0; i < images.size(); ++i) images.data()[i] = unit(rng);
    std::vector<int> labels;
    for (int i = 0; i < n; ++i) labels.push_back(pick(0, vc.num_classes - 1));
    const auto sigmas = sample_sigmas(kDefaultSigmaRange, pick(1, 3), rng());
    const std::uint64_t noise_seed = rng();
    out.worst_cross_entropy =
        std::max(out.worst_cross_entropy, check_one(vlm, prompts, images.cast<LD>(), std::span<const int>(labels),
                                                    sigmas, tau, LossKind::kCrossEntropy, noise_seed));

    const auto copies = sample_sigmas(kDefaultSigmaRange, pick(2, 8), rng());
    const Matrix<LD> one = images.topRows(1).cast<LD>();
    out.worst_entropy = std::max(out.worst_entropy, check_one(vlm, prompts, one, std::nullopt, copies, tau,
                                                              LossKind::kMeanProbEntropy, noise_seed));
  }
  out.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return out;
}

EntropyDescent entropy_descent(int samples, std::uint64_t seed) {
  const SynthConfig sc;
  const SynthDataset test = synth_dataset(sc.num_classes, sc.image_dim, sc.test_per_class, sc.separation, sc.seed);
  const ToyVlm vlm = make_aligned_vlm(sc.model, test.class_means);
  const PromptState init = template_prompts(vlm);
  EntropyDescent out;
  out.samples = samples;
  for (int i = 0; i < samples; ++i) {
    const Eigen::VectorXd x = test.images.row(i).transpose();
    ZeroShotConfig zc;
    zc.seed = mix64(seed, static_cast<std::uint64_t>(i));
    const auto one = zero_shot_adapt(vlm, init, x, zc);
    zc.steps = 8;
    const auto eight = zero_shot_adapt(vlm, init, x, zc);
    out.decreased += one.entropy_after < one.entropy_before;
    out.eight_not_above_one += eight.entropy_after <= one.entropy_after;
    out.mean_before += one.entropy_before / samples;
    out.mean_after_one += one.entropy_after / samples;
    out.mean_after_eight += eight.entropy_after / samples;
  }
  return out;
}

RunConfig benchmark_config(const fs::path& dir) {
  RunConfig base;
  base.base_dir = dir;
  const auto files = synthesize(base, dir);
  return load_run_config(files.config);
}

}  // namespace certsmooth::testing
