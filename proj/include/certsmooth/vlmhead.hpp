#pragma once

// Zero-shot classification head of a contrastive vision-language model:
// cosine similarity between an image feature and per-class text features,
// followed by a temperature softmax.

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "certsmooth/smoothing.hpp"

namespace certsmooth {

template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

/// Softmax inverse temperature tau > 0 applied to cosine similarities.
class Temperature {
 public:
  explicit Temperature(double tau = 100.0) : tau_(tau) {
    if (!(tau > 0.0) || !std::isfinite(tau)) {
      throw std::domain_error("temperature must be finite and > 0");
    }
  }
  double value() const noexcept { return tau_; }

 private:
  double tau_;
};

/// v / ||v||_2; throws std::domain_error on a zero (or non-finite) norm.
template <typename Derived>
Vector<typename Derived::Scalar> normalized(const Eigen::MatrixBase<Derived>& v) {
  using std::isfinite;
  const auto norm = v.norm();
  if (!(norm > 0) || !isfinite(norm)) {
    throw std::domain_error("cannot normalize a zero or non-finite embedding");
  }
  return v / norm;
}

template <typename DerivedU, typename DerivedV>
typename DerivedU::Scalar cosine_similarity(const Eigen::MatrixBase<DerivedU>& u,
                                            const Eigen::MatrixBase<DerivedV>& v) {
  using Scalar = typename DerivedU::Scalar;
  using std::sqrt;
  Scalar uu = 0, vv = 0, uv = 0;
  for (Eigen::Index i = 0; i < u.size(); ++i) {
    uu += u(i) * u(i);
    vv += v(i) * v(i);
    uv += u(i) * v(i);
  }
  if (!(uu > 0) || !(vv > 0)) throw std::domain_error("cosine similarity of a zero vector");
  // sqrt(fl(s * s)) == s, so cosine(u, u) is exactly 1.
  const Scalar product = uu * vv;
  const Scalar denom = (product > 0 && product < std::numeric_limits<Scalar>::infinity()) ? sqrt(product)
                                                                                         : sqrt(uu) * sqrt(vv);
  return std::clamp(uv / denom, Scalar(-1), Scalar(1));
}

/// Per-class text features (one unit row per class) together with the class
/// names and the single-placeholder template that produced them.
template <typename Scalar>
struct ClassPromptSet {
  Matrix<Scalar> features;  // K x d
  std::vector<std::string> class_names;
  std::string prompt_template = "An H&E image patch of {}";

  int num_classes() const { return static_cast<int>(features.rows()); }

  /// Substitutes the class name for the "{}" placeholder.
  std::string render(int k) const {
    const auto pos = prompt_template.find("{}");
    if (pos == std::string::npos) {
      throw std::invalid_argument("prompt template has no {} placeholder");
    }
    std::string text = prompt_template;
    text.replace(pos, 2, class_names.at(static_cast<std::size_t>(k)));
    return text;
  }
};

/// s_i = cos(u_i, v) for every row u_i of `text_features`.
template <typename DerivedU, typename DerivedV>
Vector<typename DerivedU::Scalar> class_similarities(const Eigen::MatrixBase<DerivedU>& text_features,
                                                     const Eigen::MatrixBase<DerivedV>& v) {
  using Scalar = typename DerivedU::Scalar;
  if (text_features.cols() != v.size()) {
    throw std::invalid_argument("text features and image embedding differ in dimension");
  }
  const Vector<Scalar> unit_v = normalized(v);
  Vector<Scalar> s(text_features.rows());
  for (Eigen::Index k = 0; k < text_features.rows(); ++k) {
    s[k] = text_features.row(k).dot(unit_v) / text_features.row(k).norm();
  }
  return s;
}

/// exp(tau z_i) / sum_j exp(tau z_j), evaluated after subtracting max z.
template <typename Derived>
Vector<typename Derived::Scalar> temperature_softmax(const Eigen::MatrixBase<Derived>& z,
                                                     Temperature tau) {
  using Scalar = typename Derived::Scalar;
  const Scalar t = static_cast<Scalar>(tau.value());
  Vector<Scalar> p = (t * (z.array() - z.maxCoeff())).exp().matrix();
  return p / p.sum();
}

template <typename DerivedU, typename DerivedV>
Vector<typename DerivedU::Scalar> zero_shot_probs(const Eigen::MatrixBase<DerivedV>& v,
                                                  const Eigen::MatrixBase<DerivedU>& text_features,
                                                  Temperature tau) {
  return temperature_softmax(class_similarities(text_features, v), tau);
}

template <typename Scalar, typename DerivedV>
Vector<Scalar> zero_shot_probs(const Eigen::MatrixBase<DerivedV>& v,
                               const ClassPromptSet<Scalar>& prompts, Temperature tau) {
  return zero_shot_probs(v, prompts.features, tau);
}

/// Lowest index among the maximal entries.
template <typename Derived>
int first_argmax(const Eigen::MatrixBase<Derived>& values) {
  Eigen::Index best = 0;
  for (Eigen::Index i = 1; i < values.size(); ++i) {
    if (values[i] > values[best]) best = i;
  }
  return static_cast<int>(best);
}

/// Argmax of the zero-shot probabilities. The softmax is monotone, so this is
/// taken on the similarities directly (and is therefore independent of tau).
template <typename DerivedU, typename DerivedV>
int zero_shot_classify(const Eigen::MatrixBase<DerivedV>& v,
                       const Eigen::MatrixBase<DerivedU>& text_features) {
  return first_argmax(class_similarities(text_features, v));
}

template <typename Scalar, typename DerivedV>
int zero_shot_classify(const Eigen::MatrixBase<DerivedV>& v, const ClassPromptSet<Scalar>& prompts) {
  return zero_shot_classify(v, prompts.features);
}

/// Image embedding function used by ZeroShotClassifier.
using ImageEncoder = std::function<Eigen::VectorXd(const Eigen::Ref<const Eigen::VectorXd>&)>;

/// BaseClassifier adapter: f(x) = zero_shot_classify(encode(x), features).
/// The features are frozen at construction.
class ZeroShotClassifier final : public BaseClassifier {
 public:
  ZeroShotClassifier(int input_dim, ImageEncoder encode, Eigen::MatrixXd text_features)
      : input_dim_(input_dim), encode_(std::move(encode)), features_(std::move(text_features)) {
    if (features_.rows() < 2) throw std::invalid_argument("zero-shot head needs K >= 2");
    for (Eigen::Index k = 0; k < features_.rows(); ++k) {
      features_.row(k) = normalized(features_.row(k).transpose()).transpose();
    }
  }

  int num_classes() const override { return static_cast<int>(features_.rows()); }
  int input_dim() const override { return input_dim_; }

  std::vector<int> evaluate(const Eigen::Ref<const RowMatrix>& batch) override {
    std::vector<int> labels(static_cast<std::size_t>(batch.rows()));
    Eigen::VectorXd x(batch.cols());
    for (Eigen::Index r = 0; r < batch.rows(); ++r) {
      x = batch.row(r).transpose();
      labels[static_cast<std::size_t>(r)] = zero_shot_classify(encode_(x), features_);
    }
    return labels;
  }

  const Eigen::MatrixXd& text_features() const { return features_; }

 private:
  int input_dim_;
  ImageEncoder encode_;
  Eigen::MatrixXd features_;
};

}  // namespace certsmooth
