#pragma once

// A desk-scale differentiable stand-in for a medical vision-language model.
//
// Image encoder: v = normalize(W_img x).
// Text encoder:  u_k = normalize(W_txt m_k), m_k the mean of the context
//                tokens and the class token of class k.
//
// The backbone (W_img, W_txt, class tokens, template tokens) is frozen; only
// the context tokens of a PromptState are learned.

#include <Eigen/Core>

#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "certsmooth/rng.hpp"
#include "certsmooth/smoothing.hpp"
#include "certsmooth/vlmhead.hpp"

namespace certsmooth {

template <typename Scalar>
struct BasicToyVlm {
  Matrix<Scalar> image_proj;        // d x D
  Matrix<Scalar> text_proj;         // d x e
  Matrix<Scalar> class_tokens;      // K x e
  Matrix<Scalar> template_context;  // hand-crafted prompt tokens, M_t x e
  std::uint64_t init_seed = 0;

  int num_classes() const { return static_cast<int>(class_tokens.rows()); }
  int image_dim() const { return static_cast<int>(image_proj.cols()); }
  int embed_dim() const { return static_cast<int>(image_proj.rows()); }
  int token_dim() const { return static_cast<int>(text_proj.cols()); }

  template <typename Other>
  BasicToyVlm<Other> cast() const {
    return {image_proj.template cast<Other>(), text_proj.template cast<Other>(),
            class_tokens.template cast<Other>(), template_context.template cast<Other>(),
            init_seed};
  }

  bool operator==(const BasicToyVlm&) const = default;
};

using ToyVlm = BasicToyVlm<double>;

/// Learnable context tokens. Shared across classes (M x e) by default; with
/// `per_class` the rows are grouped per class (K*M x e, class k owns rows
/// [k*M, (k+1)*M)).
template <typename Scalar>
struct BasicPromptState {
  Matrix<Scalar> context;
  bool per_class = false;

  int tokens_per_class(int num_classes) const {
    return per_class ? static_cast<int>(context.rows()) / num_classes
                     : static_cast<int>(context.rows());
  }

  template <typename Other>
  BasicPromptState<Other> cast() const {
    return {context.template cast<Other>(), per_class};
  }

  bool operator==(const BasicPromptState&) const = default;
};

using PromptState = BasicPromptState<double>;

enum class ContextInit { kRandom, kTemplate };
enum class LossKind { kCrossEntropy, kMeanProbEntropy };

template <typename Scalar>
void check_prompts(const BasicToyVlm<Scalar>& vlm, const BasicPromptState<Scalar>& prompts) {
  if (prompts.context.cols() != vlm.token_dim()) {
    throw std::invalid_argument("prompt tokens have dimension " +
                                std::to_string(prompts.context.cols()) + ", model expects " +
                                std::to_string(vlm.token_dim()));
  }
  const auto rows = prompts.context.rows();
  if (rows < 1 || (prompts.per_class && rows % vlm.num_classes() != 0)) {
    throw std::invalid_argument("prompt state has an invalid number of context tokens");
  }
}

template <typename Scalar, typename Derived>
Vector<Scalar> encode_image(const BasicToyVlm<Scalar>& vlm, const Eigen::MatrixBase<Derived>& image) {
  if (image.size() != vlm.image_dim()) {
    throw std::invalid_argument("image has dimension " + std::to_string(image.size()) +
                                ", model expects " + std::to_string(vlm.image_dim()));
  }
  const Vector<Scalar> projected = vlm.image_proj * image;
  if (!(projected.norm() > 0)) {
    throw std::domain_error("image projects to the zero vector; embedding undefined");
  }
  return normalized(projected);
}

/// Mean-pooled token m_k for class k (before the text projection).
template <typename Scalar>
Vector<Scalar> pooled_tokens(const BasicToyVlm<Scalar>& vlm, const BasicPromptState<Scalar>& prompts,
                             int class_index) {
  check_prompts(vlm, prompts);
  if (class_index < 0 || class_index >= vlm.num_classes()) {
    throw std::out_of_range("class index " + std::to_string(class_index) + " out of range");
  }
  const int m = prompts.tokens_per_class(vlm.num_classes());
  const Eigen::Index first = prompts.per_class ? static_cast<Eigen::Index>(class_index) * m : 0;
  const Vector<Scalar> context_sum = prompts.context.middleRows(first, m).colwise().sum().transpose();
  return (context_sum + vlm.class_tokens.row(class_index).transpose()) / static_cast<Scalar>(m + 1);
}

template <typename Scalar>
Vector<Scalar> encode_text(const BasicToyVlm<Scalar>& vlm, const BasicPromptState<Scalar>& prompts,
                           int class_index) {
  const Vector<Scalar> projected = vlm.text_proj * pooled_tokens(vlm, prompts, class_index);
  if (!(projected.norm() > 0)) {
    throw std::domain_error("prompt for class " + std::to_string(class_index) +
                            " projects to the zero vector");
  }
  return normalized(projected);
}

/// All K text features as unit rows.
template <typename Scalar>
Matrix<Scalar> text_features(const BasicToyVlm<Scalar>& vlm, const BasicPromptState<Scalar>& prompts) {
  Matrix<Scalar> features(vlm.num_classes(), vlm.embed_dim());
  for (int k = 0; k < vlm.num_classes(); ++k) features.row(k) = encode_text(vlm, prompts, k).transpose();
  return features;
}

template <typename Scalar>
struct PromptGradient {
  Matrix<Scalar> gradient;  // same shape as the prompt context
  Scalar loss = 0;
};

namespace detail {

template <typename Scalar>
[[noreturn]] void report_non_finite(const BasicPromptState<Scalar>& prompts, const std::string& where) {
  using std::isfinite;
  for (Eigen::Index r = 0; r < prompts.context.rows(); ++r) {
    for (Eigen::Index c = 0; c < prompts.context.cols(); ++c) {
      if (!isfinite(prompts.context(r, c))) {
        throw std::runtime_error("non-finite value in context token " + std::to_string(r) +
                                 " (coordinate " + std::to_string(c) + ")");
      }
    }
  }
  throw std::runtime_error("forward pass produced a non-finite value at " + where);
}

}  // namespace detail

/// Exact gradient of a prompt-learning loss with respect to the context
/// tokens, back-propagated through the softmax, the cosine similarity, the
/// l2 normalization, the text projection and the mean pool.
///
/// Noise: image n under draw t is images.row(n) + sigma_draws[t] * z with
/// z ~ N(0, I) drawn from Rng(seed) in (n, t, coordinate) order, so two
/// calls with the same seed see the same perturbations.
///
/// kCrossEntropy: mean over images x draws of -log p_label.
/// kMeanProbEntropy: one image, no labels; H(qbar) with qbar the mean of the
///   T probability vectors and H(q) = -sum q_i ln q_i.
template <typename Scalar, typename DerivedX>
PromptGradient<Scalar> prompt_gradient(const BasicToyVlm<Scalar>& vlm,
                                       const BasicPromptState<Scalar>& prompts,
                                       const Eigen::MatrixBase<DerivedX>& images,
                                       std::optional<std::span<const int>> labels,
                                       std::span<const double> sigma_draws, Temperature tau,
                                       LossKind loss_kind, std::uint64_t seed) {
  using std::log;
  using std::log1p;
  using std::isfinite;
  check_prompts(vlm, prompts);
  const int num_classes = vlm.num_classes();
  const auto num_images = images.rows();
  const auto draws = static_cast<Eigen::Index>(sigma_draws.size());
  if (images.cols() != vlm.image_dim()) {
    throw std::invalid_argument("prompt_gradient: images have " + std::to_string(images.cols()) +
                                " columns, model expects " + std::to_string(vlm.image_dim()));
  }
  if (draws < 1) throw std::invalid_argument("prompt_gradient: need at least one noise draw");
  if (loss_kind == LossKind::kCrossEntropy) {
    if (!labels) throw std::invalid_argument("prompt_gradient: cross-entropy requires labels");
    if (static_cast<Eigen::Index>(labels->size()) != num_images || num_images < 1) {
      throw std::invalid_argument("prompt_gradient: one label per image required");
    }
  } else {
    if (labels) throw std::invalid_argument("prompt_gradient: entropy loss takes no labels");
    if (num_images != 1) throw std::invalid_argument("prompt_gradient: entropy loss takes one image");
  }

  // Text side: z_k = W_txt m_k, u_k = z_k / |z_k|.
  Matrix<Scalar> pooled(num_classes, vlm.token_dim());
  for (int k = 0; k < num_classes; ++k) pooled.row(k) = pooled_tokens(vlm, prompts, k).transpose();
  const Matrix<Scalar> z = pooled * vlm.text_proj.transpose();  // K x d
  const Vector<Scalar> z_norm = z.rowwise().norm();
  if (!z_norm.allFinite()) detail::report_non_finite(prompts, "text features");
  if (!(z_norm.minCoeff() > 0)) throw std::domain_error("a class prompt projects to the zero vector");
  const Matrix<Scalar> u = z.array().colwise() / z_norm.array();

  const Scalar t = static_cast<Scalar>(tau.value());
  Rng rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  Vector<Scalar> noisy(vlm.image_dim());

  // dL/du_k accumulated as sum over samples of dL/ds_k * v.
  Matrix<Scalar> grad_u = Matrix<Scalar>::Zero(num_classes, vlm.embed_dim());
  Scalar loss = 0;

  Matrix<Scalar> copy_probs;  // T x K (entropy loss only)
  Matrix<Scalar> copy_embeds;  // T x d
  if (loss_kind == LossKind::kMeanProbEntropy) {
    copy_probs.resize(draws, num_classes);
    copy_embeds.resize(draws, vlm.embed_dim());
  }
  const Scalar weight = Scalar(1) / static_cast<Scalar>(num_images * draws);

  for (Eigen::Index n = 0; n < num_images; ++n) {
    for (Eigen::Index d = 0; d < draws; ++d) {
      const auto sigma = static_cast<Scalar>(sigma_draws[static_cast<std::size_t>(d)]);
      for (Eigen::Index j = 0; j < noisy.size(); ++j) {
        noisy[j] = static_cast<Scalar>(images(n, j)) + sigma * static_cast<Scalar>(normal(rng));
      }
      const Vector<Scalar> v = encode_image(vlm, noisy);
      const Vector<Scalar> logits = t * (u * v);
      const Scalar max_logit = logits.maxCoeff();
      const Vector<Scalar> e = (logits.array() - max_logit).exp().matrix();
      const Scalar total = e.sum();
      const Vector<Scalar> p = e / total;
      if (loss_kind == LossKind::kCrossEntropy) {
        const int y = (*labels)[static_cast<std::size_t>(n)];
        if (y < 0 || y >= num_classes) throw std::out_of_range("prompt_gradient: label out of range");
        // total = 1 + rest; log1p and the direct sum for 1 - p_y keep
        // precision when the softmax saturates.
        Eigen::Index top = 0;
        logits.maxCoeff(&top);
        const Scalar rest = total - e[top];
        Scalar others = 0;
        for (int k = 0; k < num_classes; ++k) {
          if (k != y) others += p[k];
        }
        const Scalar nll = (max_logit - logits[y]) + log1p(rest / e[top]);
        if (!isfinite(nll)) {
          detail::report_non_finite(prompts, "image " + std::to_string(n) + ", draw " + std::to_string(d));
        }
        loss += weight * nll;
        Vector<Scalar> ds = p;
        ds[y] = -others;
        grad_u.noalias() += (weight * t) * ds * v.transpose();
      } else {
        copy_probs.row(d) = p.transpose();
        copy_embeds.row(d) = v.transpose();
      }
    }
  }

  if (loss_kind == LossKind::kMeanProbEntropy) {
    const Vector<Scalar> mean_prob = copy_probs.colwise().mean().transpose();
    // ln qbar of the dominant class from the others' mass, so a saturated
    // qbar keeps its small entropy and gradient.
    Eigen::Index top = 0;
    mean_prob.maxCoeff(&top);
    Scalar rest = 0;
    for (int i = 0; i < num_classes; ++i) {
      if (i != top) rest += mean_prob[i];
    }
    Vector<Scalar> log_q(num_classes);
    for (int i = 0; i < num_classes; ++i) {
      const Scalar q = mean_prob[i];
      log_q[i] = i == top ? log1p(-rest) : (q > 0 ? log(q) : Scalar(0));
      if (q > 0) loss -= q * log_q[i];
    }
    if (!isfinite(loss)) detail::report_non_finite(prompts, "mean probability entropy");
    // dH/dp_{t,i} = -(ln qbar_i + 1) / T; centred against p_t as
    // -(1/T) sum_j p_{t,j} (ln qbar_i - ln qbar_j). Classes with qbar = 0
    // have p_{t,i} = 0 for every t and drop out.
    const Scalar inv_draws = Scalar(1) / static_cast<Scalar>(draws);
    for (Eigen::Index d = 0; d < draws; ++d) {
      const Vector<Scalar> p = copy_probs.row(d).transpose();
      Vector<Scalar> dl = Vector<Scalar>::Zero(num_classes);
      for (int i = 0; i < num_classes; ++i) {
        if (!(p[i] > 0)) continue;
        Scalar centred = 0;
        for (int j = 0; j < num_classes; ++j) {
          if (j != i && p[j] > 0) centred += p[j] * (log_q[i] - log_q[j]);
        }
        dl[i] = -p[i] * centred * inv_draws;
      }
      grad_u.noalias() += t * dl * copy_embeds.row(d);
    }
  }

  // Through the normalization and the projection: dL/dm_k = W_txt^T (I - u u^T) dL/du_k / |z_k|.
  const int m = prompts.tokens_per_class(num_classes);
  PromptGradient<Scalar> out;
  out.loss = loss;
  out.gradient = Matrix<Scalar>::Zero(prompts.context.rows(), prompts.context.cols());
  Vector<Scalar> shared = Vector<Scalar>::Zero(vlm.token_dim());
  for (int k = 0; k < num_classes; ++k) {
    const Vector<Scalar> gu = grad_u.row(k).transpose();
    const Vector<Scalar> uk = u.row(k).transpose();
    const Vector<Scalar> gz = (gu - uk.dot(gu) * uk) / z_norm[k];
    const Vector<Scalar> gm = vlm.text_proj.transpose() * gz / static_cast<Scalar>(m + 1);
    if (prompts.per_class) {
      out.gradient.middleRows(static_cast<Eigen::Index>(k) * m, m).rowwise() += gm.transpose();
    } else {
      shared += gm;
    }
  }
  if (!prompts.per_class) out.gradient.rowwise() = shared.transpose();
  return out;
}

// ---------------------------------------------------------------------------
// Construction, data and analytic oracles (double precision).

struct ToyVlmConfig {
  int num_classes = 4;
  int image_dim = 64;
  int embed_dim = 16;
  int token_dim = 16;
  int template_tokens = 5;
  /// Scale of the text projection entries (times 1/sqrt(token_dim)).
  double text_gain = 50.0;
  /// Strength of the class-shared text component that the hand-crafted
  /// prompt carries along a direction clean images do not excite.
  double shared_bias = 1.0;
  /// Relative spread of the per-class text feature norms.
  double norm_spread = 0.4;
  std::uint64_t seed = 42;
};

/// All parameters i.i.d. Gaussian; no alignment with any data.
ToyVlm make_random_vlm(const ToyVlmConfig& config);

/// A model "pre-trained" on the given class means: with its template prompt
/// it separates the clean class means, but its text features share a
/// component along an image direction orthogonal to every class mean, which
/// Gaussian noise excites and clean data does not.
ToyVlm make_aligned_vlm(const ToyVlmConfig& config, const Eigen::Ref<const RowMatrix>& class_means);

/// kRandom: N(0, 0.02^2) tokens from Rng(seed). kTemplate: the model's
/// template tokens, cycled to `tokens` rows.
PromptState init_prompts(const ToyVlm& vlm, int tokens, ContextInit init, std::uint64_t seed,
                         bool per_class = false);

/// The prompt state that reproduces the model's hand-crafted template.
PromptState template_prompts(const ToyVlm& vlm);

/// f(x) = zero_shot_classify(encode_image(x), text_features(prompts)).
ZeroShotClassifier make_classifier(const ToyVlm& vlm, const PromptState& prompts);

struct SynthDataset {
  RowMatrix images;         // N x D, entries in [0, 1]
  std::vector<int> labels;  // sample i has label i mod K
  RowMatrix class_means;    // K x D
  std::uint64_t seed = 0;

  int size() const { return static_cast<int>(images.rows()); }
  /// The first `per_class` samples of every class, in dataset order.
  SynthDataset take_shots(int per_class) const;
  SynthDataset head(int count) const;
};

/// Class means from U[0,1]^D pushed apart to pairwise distance >= separation,
/// samples clamp(mean + N(0, 0.05^2 I), 0, 1). Deterministic in all inputs.
SynthDataset synth_dataset(int num_classes, int image_dim, int per_class, double separation,
                           std::uint64_t seed);

/// Same dataset layout around externally fixed class means.
SynthDataset sample_around_means(const RowMatrix& class_means, int per_class, std::uint64_t seed);

struct LinearOracle {
  double p_a;          // P[f(x + delta) = majority_class]
  double true_radius;  // |w.x + b| / |w|
  int majority_class;  // 1 if w.x + b > 0 else 0
};

/// Exact noisy behaviour of f(x) = 1[w.x + b > 0] under N(0, sigma^2 I):
/// P[f(x + delta) = 1] = Phi((w.x + b) / (sigma |w|)).
LinearOracle linear_oracle(const Eigen::Ref<const Eigen::VectorXd>& w, double b,
                           const Eigen::Ref<const Eigen::VectorXd>& x, double sigma);

}  // namespace certsmooth
