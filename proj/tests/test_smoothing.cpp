#include <doctest.h>

#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

#include "certsmooth/classifiers.hpp"
#include "certsmooth/harness.hpp"
#include "certsmooth/reference.hpp"
#include "certsmooth/rng.hpp"
#include "certsmooth/smoothing.hpp"

using namespace certsmooth;

namespace {

HalfSpaceClassifier unit_x_classifier() { return HalfSpaceClassifier(Eigen::Vector2d(1.0, 0.0), 0.0); }

class ThrowingClassifier final : public BaseClassifier {
 public:
  int num_classes() const override { return 2; }
  int input_dim() const override { return 2; }
  std::vector<int> evaluate(const Eigen::Ref<const RowMatrix>&) override { throw std::runtime_error("boom"); }
};

class BadLabelClassifier final : public BaseClassifier {
 public:
  int num_classes() const override { return 2; }
  int input_dim() const override { return 2; }
  std::vector<int> evaluate(const Eigen::Ref<const RowMatrix>& batch) override {
    return std::vector<int>(static_cast<std::size_t>(batch.rows()), 7);
  }
};

}  // namespace

TEST_CASE("constant classifier counts") {
  ConstantClassifier f(3, 4, 0);
  const Counts c = sample_under_noise(f, Eigen::VectorXd::Zero(4), 0.25, 500, 1);
  CHECK(c == Counts{500, 0, 0});
}

TEST_CASE("counts always sum to count") {
  auto f = unit_x_classifier();
  for (std::int64_t count : {1, 127, 128, 129, 1000, 4097}) {
    const Counts c = sample_under_noise(f, Eigen::Vector2d(0.1, 0.0), 0.5, count, 9, {100, 2});
    CHECK(std::accumulate(c.begin(), c.end(), std::int64_t{0}) == count);
  }
}

TEST_CASE("linear classifier noise frequency matches Phi(2)") {
  auto f = unit_x_classifier();
  const std::int64_t n = 10000;
  const Counts c = sample_under_noise(f, Eigen::Vector2d(0.5, 0.0), 0.25, n, 3);
  const double p = reference::kPhiOf2;
  const double se = std::sqrt(p * (1 - p) / n);
  CHECK(std::abs(static_cast<double>(c[1]) / n - p) <= 3 * se);
}

TEST_CASE("certify on the linear classifier") {
  auto f = unit_x_classifier();
  NoiseSpec spec;
  spec.seed = 11;
  const auto out = certify(f, Eigen::Vector2d(0.5, 0.0), spec);
  REQUIRE_FALSE(out.abstained());
  CHECK(out.label == 1);
  CHECK(out.radius <= 0.5);
  CHECK(out.radius >= 0.8 * 0.5);
  CHECK(out.pa_lower > 0.5);
  CHECK(out.radius == doctest::Approx(spec.sigma * std_normal_quantile(out.pa_lower)).epsilon(1e-15));
}

TEST_CASE("certify abstains on the decision boundary") {
  auto f = unit_x_classifier();
  int abstained = 0;
  for (std::uint64_t s = 0; s < 100; ++s) {
    NoiseSpec spec;
    spec.seed = s;
    abstained += certify(f, Eigen::Vector2d(0.0, 0.0), spec).abstained();
  }
  CHECK(abstained >= 95);
}

TEST_CASE("constant classifier certificate has the closed-form radius") {
  ConstantClassifier f(2, 3, 0);
  NoiseSpec spec;
  spec.n = 1000;
  spec.sigma = 0.5;
  const auto out = certify(f, Eigen::VectorXd::Zero(3), spec);
  CHECK(out.label == 0);
  CHECK(std::abs(out.radius - 0.5 * reference::kQuantileOfAllOf1000) <= 1e-9);
}

TEST_CASE("predict examples") {
  ConstantClassifier constant(3, 2, 2);
  for (std::int64_t n : {11, 12, 50}) {
    CHECK(predict(constant, Eigen::Vector2d(1.0, 1.0), 0.25, n, ConfidenceLevel(0.001), 5) == 2);
  }
  CHECK(predict(constant, Eigen::Vector2d(1.0, 1.0), 0.25, 10, ConfidenceLevel(0.001), 5) == kAbstain);

  auto f = unit_x_classifier();
  int abstained = 0;
  for (std::uint64_t s = 0; s < 100; ++s) {
    abstained += predict(f, Eigen::Vector2d(0.0, 0.0), 0.25, 1000, ConfidenceLevel(0.001), s) == kAbstain;
  }
  CHECK(abstained >= 90);
  CHECK_THROWS_AS(predict(f, Eigen::Vector2d(0.0, 0.0), 0.25, 1, ConfidenceLevel(0.001), 0), std::domain_error);
}

TEST_CASE("predict never contradicts certify") {
  auto f = unit_x_classifier();
  Rng rng(77);
  std::uniform_real_distribution<double> coord(-0.3, 0.3);
  for (std::uint64_t s = 0; s < 200; ++s) {
    const Eigen::Vector2d x(coord(rng), coord(rng));
    NoiseSpec spec;
    spec.n = 1000;
    spec.seed = s;
    const auto c = certify(f, x, spec);
    const int p = predict(f, x, spec.sigma, spec.n, ConfidenceLevel(spec.alpha), s);
    if (!c.abstained()) CHECK((p == c.label || p == kAbstain));
  }
}

TEST_CASE("certified radius formula") {
  CHECK(std::abs(certified_radius(0.25, 0.8, 0.2) - reference::kRadius_0p25_0p8_0p2) <= 1e-10);
  CHECK(std::abs(certified_radius(0.5, 0.9, 0.1) - reference::kRadius_0p5_0p9_0p1) <= 1e-10);
  CHECK(certified_radius(0.5, 0.9, 0.1) == doctest::Approx(0.5 * std_normal_quantile(0.9)).epsilon(1e-14));
  for (double p : {0.01, 0.3, 0.5, 0.77, 0.99}) CHECK(certified_radius(0.7, p, p) == 0.0);
  CHECK(certified_radius(1.0, 0.3, 0.6) == 0.0);
  double prev = -1.0;
  for (double pa = 0.55; pa < 0.999; pa += 0.01) {
    const double r = certified_radius(1.0, pa, 0.05);
    CHECK(r > prev);
    prev = r;
  }
  prev = 1e9;
  for (double pb = 0.01; pb < 0.5; pb += 0.01) {
    const double r = certified_radius(1.0, 0.95, pb);
    CHECK(r < prev);
    prev = r;
  }
  CHECK_THROWS_AS(certified_radius(1.0, 1.0, 0.1), std::domain_error);
  CHECK_THROWS_AS(certified_radius(1.0, 0.9, 0.0), std::domain_error);
  CHECK_THROWS_AS(certified_radius(0.0, 0.9, 0.1), std::domain_error);
}

TEST_CASE("certify is bit-identical across batch sizes and worker counts") {
  LinearArgmaxClassifier f(RowMatrix::Random(4, 6), Eigen::VectorXd::Zero(4));
  const Eigen::VectorXd x = Eigen::VectorXd::Constant(6, 0.2);
  NoiseSpec spec;
  spec.n = 3000;
  spec.seed = 1234;
  const auto ref = certify(f, x, spec, {1024, 1});
  for (std::int64_t batch : {1, 7, 128, 200, 5000}) {
    for (int workers : {1, 3}) {
      const auto out = certify(f, x, spec, {batch, workers});
      CHECK(out.counts == ref.counts);
      CHECK(out.label == ref.label);
      CHECK(out.radius == ref.radius);
    }
  }
}

TEST_CASE("stricter alpha never raises the radius") {
  auto f = unit_x_classifier();
  NoiseSpec spec;
  spec.seed = 5;
  double last = 1e9;
  for (double a : {0.1, 0.01, 0.001, 1e-5}) {
    spec.alpha = a;
    const auto out = certify(f, Eigen::Vector2d(0.3, 0.0), spec);
    const double r = out.abstained() ? 0.0 : out.radius;
    CHECK(r <= last);
    last = r;
  }
}

TEST_CASE("classifier failures carry sample context") {
  ThrowingClassifier throwing;
  try {
    sample_under_noise(throwing, Eigen::Vector2d(0, 0), 0.25, 10, 0);
    FAIL("expected an exception");
  } catch (const std::runtime_error& e) {
    CHECK(std::string(e.what()).find("noise samples [0") != std::string::npos);
    CHECK(std::string(e.what()).find("boom") != std::string::npos);
  }
  BadLabelClassifier bad;
  CHECK_THROWS_AS(certify(bad, Eigen::Vector2d(0, 0), NoiseSpec{}), std::runtime_error);
}

TEST_CASE("noise spec validation") {
  auto f = unit_x_classifier();
  NoiseSpec spec;
  spec.sigma = 0.0;
  CHECK_THROWS_AS(certify(f, Eigen::Vector2d(0, 0), spec), std::domain_error);
  spec = {};
  spec.n = 0;
  CHECK_THROWS_AS(certify(f, Eigen::Vector2d(0, 0), spec), std::domain_error);
  spec = {};
  spec.alpha = 1.0;
  CHECK_THROWS_AS(certify(f, Eigen::Vector2d(0, 0), spec), std::domain_error);
  CHECK_THROWS_AS(sample_under_noise(f, Eigen::Vector3d(0, 0, 0), 0.25, 10, 0), std::invalid_argument);
}

TEST_CASE("argmax ties go to the lowest index") {
  CHECK(argmax_count({3, 5, 5, 1}) == 1);
  CHECK(argmax_count({0, 0}) == 0);
}

TEST_CASE("half-space oracle soundness, reduced") {
  NoiseSpec noise;
  noise.n = 2000;
  const auto r = oracle_soundness(40, noise, 5, 3);
  CHECK(r.non_abstain > 20);
  CHECK(r.wrong_class == 0);
  CHECK(r.radius_exceeds_truth == 0);
}
