#include <doctest.h>

#include <cmath>
#include <map>

#include "certsmooth/promptlearn.hpp"
#include "certsmooth/rng.hpp"
#include "support.hpp"

using namespace certsmooth;

namespace {

struct Bench {
  SynthDataset test;
  SynthDataset train;
  ToyVlm vlm;
};

const Bench& bench() {
  static const Bench b = [] {
    const SynthConfig sc;
    Bench out;
    out.test = synth_dataset(sc.num_classes, sc.image_dim, 25, sc.separation, sc.seed);
    out.train = sample_around_means(out.test.class_means, 16, 99);
    out.vlm = make_aligned_vlm(sc.model, out.test.class_means);
    return out;
  }();
  return b;
}

double entropy(const Eigen::VectorXd& q) {
  double h = 0.0;
  for (double x : q) h -= x > 0 ? x * std::log(x) : 0.0;
  return h;
}

}  // namespace

TEST_CASE("sample_sigmas") {
  const std::vector<double> single{0.25};
  CHECK(sample_sigmas(single, 5, 1) == std::vector<double>(5, 0.25));
  const auto a = sample_sigmas(kDefaultSigmaRange, 100, 7);
  CHECK(a == sample_sigmas(kDefaultSigmaRange, 100, 7));
  for (double s : a) CHECK(std::find(kDefaultSigmaRange.begin(), kDefaultSigmaRange.end(), s) != kDefaultSigmaRange.end());
  const auto many = sample_sigmas(kDefaultSigmaRange, 10000, 11);
  std::map<double, int> freq;
  for (double s : many) ++freq[s];
  const double sd = std::sqrt(10000 * 0.25 * 0.75);
  for (double s : kDefaultSigmaRange) CHECK(std::abs(freq[s] - 2500.0) <= 3 * sd);
  CHECK_THROWS_AS(sample_sigmas({}, 3, 0), std::invalid_argument);
  CHECK_THROWS_AS(sample_sigmas(single, 0, 0), std::invalid_argument);
}

TEST_CASE("few-shot training: zero epochs is a no-op") {
  const auto& b = bench();
  const PromptState init = init_prompts(b.vlm, 5, ContextInit::kRandom, 3);
  FewShotConfig cfg;
  cfg.epochs = 0;
  const auto r = few_shot_train(b.vlm, init, b.train.images, b.train.labels, cfg);
  CHECK(r.prompts == init);
  CHECK(r.epoch_loss.empty());
}

TEST_CASE("few-shot training lowers the loss, is deterministic and leaves the backbone frozen") {
  const auto& b = bench();
  const ToyVlm before = b.vlm;
  const PromptState init = init_prompts(b.vlm, 5, ContextInit::kRandom, 3);
  FewShotConfig cfg;
  cfg.seed = 5;
  const auto r1 = few_shot_train(b.vlm, init, b.train.images, b.train.labels, cfg);
  const auto r2 = few_shot_train(b.vlm, init, b.train.images, b.train.labels, cfg);
  REQUIRE(r1.epoch_loss.size() == 50);
  MESSAGE("few-shot loss " << r1.epoch_loss.front() << " -> " << r1.epoch_loss.back());
  CHECK(r1.epoch_loss.back() < r1.epoch_loss.front());
  for (double l : r1.epoch_loss) CHECK(std::isfinite(l));
  CHECK(r1.prompts == r2.prompts);
  CHECK(r1.epoch_loss == r2.epoch_loss);
  CHECK(b.vlm == before);
}

TEST_CASE("few-shot training with momentum and per-class context runs") {
  const auto& b = bench();
  const PromptState init = init_prompts(b.vlm, 2, ContextInit::kRandom, 3, true);
  FewShotConfig cfg;
  cfg.epochs = 3;
  cfg.momentum = 0.9;
  const auto r = few_shot_train(b.vlm, init, b.train.images, b.train.labels, cfg);
  CHECK(r.prompts.per_class);
  CHECK(r.prompts.context.rows() == init.context.rows());
  CHECK(r.prompts != init);
}

TEST_CASE("few-shot training errors") {
  const auto& b = bench();
  const PromptState init = init_prompts(b.vlm, 5, ContextInit::kRandom, 3);
  FewShotConfig cfg;
  const SynthDataset shots = b.train.take_shots(2);
  std::vector<int> missing = shots.labels;
  for (auto& y : missing) y = y == 3 ? 2 : y;
  CHECK_THROWS_AS(few_shot_train(b.vlm, init, shots.images, missing, cfg), std::invalid_argument);

  PromptState broken = init;
  broken.context(1, 1) = std::nan("");
  try {
    few_shot_train(b.vlm, broken, shots.images, shots.labels, cfg);
    FAIL("expected an exception");
  } catch (const std::runtime_error& e) {
    const std::string what = e.what();
    CHECK(what.find("epoch 0") != std::string::npos);
    CHECK(what.find("token 1") != std::string::npos);
  }
  cfg.learning_rate = -1;
  CHECK_THROWS_AS(few_shot_train(b.vlm, init, shots.images, shots.labels, cfg), std::invalid_argument);
}

TEST_CASE("zero-shot adaptation no-op cases") {
  const auto& b = bench();
  const PromptState init = template_prompts(b.vlm);
  const Eigen::VectorXd x = b.test.images.row(0).transpose();
  ZeroShotConfig cfg;
  cfg.learning_rate = 0.0;
  CHECK(zero_shot_adapt(b.vlm, init, x, cfg).prompts == init);
  cfg = {};
  cfg.steps = 0;
  const auto r = zero_shot_adapt(b.vlm, init, x, cfg);
  CHECK(r.prompts == init);
  CHECK(r.entropy_after == r.entropy_before);
  const PromptState fs = init_prompts(b.vlm, 5, ContextInit::kRandom, 1);
  CHECK(combined_adapt(b.vlm, fs, x, cfg).prompts == fs);
}

TEST_CASE("combined equals zero-shot adaptation from the same prompts") {
  const auto& b = bench();
  const PromptState start = init_prompts(b.vlm, 5, ContextInit::kRandom, 1);
  const Eigen::VectorXd x = b.test.images.row(3).transpose();
  ZeroShotConfig cfg;
  cfg.seed = 17;
  const auto a = combined_adapt(b.vlm, start, x, cfg);
  const auto z = zero_shot_adapt(b.vlm, start, x, cfg);
  CHECK(a.prompts == z.prompts);
  CHECK(a.entropy_after == z.entropy_after);
}

TEST_CASE("zero-shot adaptation is isolated per sample and keeps the backbone frozen") {
  const auto& b = bench();
  const ToyVlm before = b.vlm;
  const PromptState init = template_prompts(b.vlm);
  ZeroShotConfig cj;
  cj.seed = 2;
  const auto alone = zero_shot_adapt(b.vlm, init, b.test.images.row(5).transpose(), cj);
  ZeroShotConfig ci;
  ci.seed = 1;
  zero_shot_adapt(b.vlm, init, b.test.images.row(4).transpose(), ci);
  const auto after = zero_shot_adapt(b.vlm, init, b.test.images.row(5).transpose(), cj);
  CHECK(alone.prompts == after.prompts);
  CHECK(b.vlm == before);
}

TEST_CASE("entropy descent on seeded samples") {
  const auto r = testing::entropy_descent(100, 31);
  MESSAGE("decreased " << r.decreased << "/100, steps 8 <= steps 1 on " << r.eight_not_above_one
                       << "/100, mean H " << r.mean_before << " -> " << r.mean_after_one << " -> "
                       << r.mean_after_eight);
  CHECK(r.decreased >= 95);
  CHECK(r.eight_not_above_one == 100);
}

TEST_CASE("combined lowers the mean entropy of few-shot prompts") {
  const auto& b = bench();
  FewShotConfig fc;
  fc.seed = 5;
  const auto fs = few_shot_train(b.vlm, init_prompts(b.vlm, 5, ContextInit::kRandom, 3), b.train.images,
                                 b.train.labels, fc);
  double before = 0.0, after = 0.0;
  for (int i = 0; i < 100; ++i) {
    ZeroShotConfig zc;
    zc.seed = mix64(77, static_cast<std::uint64_t>(i));
    const auto r = combined_adapt(b.vlm, fs.prompts, b.test.images.row(i).transpose(), zc);
    before += r.entropy_before;
    after += r.entropy_after;
  }
  MESSAGE("mean entropy few-shot " << before / 100 << ", combined " << after / 100);
  CHECK(after <= before);
}

TEST_CASE("the adaptation objective is H(E[Q]), not E[H(Q)]") {
  const auto& b = bench();
  const PromptState p = template_prompts(b.vlm);
  const Eigen::VectorXd x = b.test.images.row(0).transpose();
  const std::vector<double> sigmas{0.1, 0.5, 1.0, 1.0, 0.25, 0.5};
  const std::uint64_t seed = 4242;
  const Eigen::MatrixXd features = text_features(b.vlm, p);
  Rng rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::VectorXd mean_q = Eigen::VectorXd::Zero(b.vlm.num_classes());
  double mean_h = 0.0;
  for (double s : sigmas) {
    Eigen::VectorXd noisy(x.size());
    for (Eigen::Index j = 0; j < x.size(); ++j) noisy[j] = x[j] + s * normal(rng);
    const Eigen::VectorXd q = zero_shot_probs(encode_image(b.vlm, noisy), features, Temperature{});
    mean_q += q / static_cast<double>(sigmas.size());
    mean_h += entropy(q) / static_cast<double>(sigmas.size());
  }
  const double h = mean_prob_entropy(b.vlm, p, x, sigmas, seed);
  CHECK(h == doctest::Approx(entropy(mean_q)).epsilon(1e-12));
  CHECK(std::abs(h - mean_h) > 1e-3);
}
