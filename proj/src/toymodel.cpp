#include "certsmooth/toymodel.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>

#include "certsmooth/stats.hpp"

namespace certsmooth {

namespace {

constexpr double kContextInitStd = 0.02;
constexpr double kSampleStd = 0.05;

Eigen::MatrixXd gaussian_matrix(Eigen::Index rows, Eigen::Index cols, double stddev, Rng& rng) {
  Eigen::MatrixXd m(rows, cols);
  fill_gaussian(m, stddev, rng);
  return m;
}

void check_config(const ToyVlmConfig& c) {
  if (c.num_classes < 2 || c.image_dim < 1 || c.embed_dim < 2 || c.token_dim < 1 ||
      c.template_tokens < 1) {
    throw std::invalid_argument("toy model: invalid dimensions");
  }
}

}  // namespace

ToyVlm make_random_vlm(const ToyVlmConfig& config) {
  check_config(config);
  Rng rng(config.seed);
  ToyVlm vlm;
  vlm.image_proj = gaussian_matrix(config.embed_dim, config.image_dim,
                                   1.0 / std::sqrt(static_cast<double>(config.image_dim)), rng);
  vlm.text_proj = gaussian_matrix(config.embed_dim, config.token_dim,
                                  config.text_gain / std::sqrt(static_cast<double>(config.token_dim)), rng);
  vlm.class_tokens = gaussian_matrix(config.num_classes, config.token_dim, 1.0, rng);
  vlm.template_context = gaussian_matrix(config.template_tokens, config.token_dim, kContextInitStd, rng);
  vlm.init_seed = config.seed;
  return vlm;
}

ToyVlm make_aligned_vlm(const ToyVlmConfig& config, const Eigen::Ref<const RowMatrix>& class_means) {
  check_config(config);
  const int k_classes = config.num_classes;
  const int d = config.embed_dim;
  if (class_means.rows() != k_classes || class_means.cols() != config.image_dim) {
    throw std::invalid_argument("aligned toy model: class means must be K x D");
  }
  if (d < k_classes + 2) {
    throw std::invalid_argument("aligned toy model: embed_dim must exceed num_classes + 1");
  }
  Rng rng(config.seed);
  ToyVlm vlm;
  vlm.init_seed = config.seed;
  vlm.image_proj = gaussian_matrix(d, config.image_dim,
                                   1.0 / std::sqrt(static_cast<double>(config.image_dim)), rng);
  vlm.text_proj = gaussian_matrix(d, config.token_dim,
                                  config.text_gain / std::sqrt(static_cast<double>(config.token_dim)), rng);
  vlm.template_context = gaussian_matrix(config.template_tokens, config.token_dim, kContextInitStd, rng);

  // Class directions: projected centred class means with unequal norms.
  const Eigen::RowVectorXd centre = class_means.colwise().mean();
  Eigen::MatrixXd features(k_classes, d);
  for (int k = 0; k < k_classes; ++k) {
    const Eigen::VectorXd dir = vlm.image_proj * (class_means.row(k) - centre).transpose();
    const double scale =
        1.0 + config.norm_spread * (2.0 * k / static_cast<double>(k_classes - 1) - 1.0);
    features.row(k) = scale * normalized(dir).transpose();
  }

  // Shared direction h with W_img^T h orthogonal to every class mean and to
  // the all-ones image: clean images barely excite it, noise does.
  Eigen::MatrixXd excited(d, k_classes + 1);
  excited.leftCols(k_classes) = vlm.image_proj * class_means.transpose();
  excited.col(k_classes) = vlm.image_proj * Eigen::VectorXd::Ones(config.image_dim);
  const Eigen::HouseholderQR<Eigen::MatrixXd> qr(excited);
  const Eigen::MatrixXd basis =
      qr.householderQ() * Eigen::MatrixXd::Identity(d, k_classes + 1);
  Eigen::VectorXd h = gaussian_matrix(d, 1, 1.0, rng);
  h -= basis * (basis.transpose() * h);
  h = normalized(h);
  features.rowwise() += config.shared_bias * h.transpose();

  // Class tokens chosen so the template prompt reproduces `features`.
  const double pool = static_cast<double>(config.template_tokens + 1);
  const Eigen::RowVectorXd template_sum = vlm.template_context.colwise().sum();
  const Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> solver(vlm.text_proj);
  vlm.class_tokens.resize(k_classes, config.token_dim);
  for (int k = 0; k < k_classes; ++k) {
    const Eigen::VectorXd pooled = solver.solve(features.row(k).transpose());
    vlm.class_tokens.row(k) = pool * pooled.transpose() - template_sum;
  }
  return vlm;
}

PromptState init_prompts(const ToyVlm& vlm, int tokens, ContextInit init, std::uint64_t seed,
                         bool per_class) {
  if (tokens < 1) throw std::invalid_argument("prompt state needs at least one context token");
  const int groups = per_class ? vlm.num_classes() : 1;
  PromptState state;
  state.per_class = per_class;
  state.context.resize(static_cast<Eigen::Index>(groups) * tokens, vlm.token_dim());
  if (init == ContextInit::kRandom) {
    Rng rng(seed);
    fill_gaussian(state.context, kContextInitStd, rng);
  } else {
    const auto template_rows = vlm.template_context.rows();
    if (template_rows == 0) throw std::invalid_argument("model has no template tokens");
    for (Eigen::Index r = 0; r < state.context.rows(); ++r) {
      state.context.row(r) = vlm.template_context.row((r % tokens) % template_rows);
    }
  }
  return state;
}

PromptState template_prompts(const ToyVlm& vlm) { return {vlm.template_context, false}; }

ZeroShotClassifier make_classifier(const ToyVlm& vlm, const PromptState& prompts) {
  ImageEncoder encode = [proj = vlm.image_proj](const Eigen::Ref<const Eigen::VectorXd>& x) {
    const Eigen::VectorXd projected = proj * x;
    if (!(projected.norm() > 0)) {
      throw std::domain_error("image projects to the zero vector; embedding undefined");
    }
    return Eigen::VectorXd(projected / projected.norm());
  };
  return ZeroShotClassifier(vlm.image_dim(), std::move(encode), text_features(vlm, prompts));
}

SynthDataset SynthDataset::take_shots(int per_class) const {
  const int k_classes = static_cast<int>(class_means.rows());
  std::vector<int> taken(static_cast<std::size_t>(k_classes), 0);
  std::vector<Eigen::Index> rows;
  for (Eigen::Index i = 0; i < images.rows(); ++i) {
    auto& t = taken[static_cast<std::size_t>(labels[static_cast<std::size_t>(i)])];
    if (t < per_class) {
      ++t;
      rows.push_back(i);
    }
  }
  SynthDataset out;
  out.class_means = class_means;
  out.seed = seed;
  out.images.resize(static_cast<Eigen::Index>(rows.size()), images.cols());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    out.images.row(static_cast<Eigen::Index>(r)) = images.row(rows[r]);
    out.labels.push_back(labels[static_cast<std::size_t>(rows[r])]);
  }
  return out;
}

SynthDataset SynthDataset::head(int count) const {
  if (count < 0 || count > size()) throw std::out_of_range("dataset head: count out of range");
  SynthDataset out;
  out.class_means = class_means;
  out.seed = seed;
  out.images = images.topRows(count);
  out.labels.assign(labels.begin(), labels.begin() + count);
  return out;
}

SynthDataset sample_around_means(const RowMatrix& class_means, int per_class, std::uint64_t seed) {
  if (per_class < 1) throw std::invalid_argument("synthetic data: per_class must be >= 1");
  const auto k_classes = class_means.rows();
  SynthDataset data;
  data.class_means = class_means;
  data.seed = seed;
  data.images.resize(k_classes * per_class, class_means.cols());
  data.labels.resize(static_cast<std::size_t>(data.images.rows()));
  Rng rng(seed);
  for (Eigen::Index i = 0; i < data.images.rows(); ++i) {
    const auto label = i % k_classes;
    data.labels[static_cast<std::size_t>(i)] = static_cast<int>(label);
    auto row = data.images.row(i);
    fill_gaussian(row, kSampleStd, rng);
    row = (row + class_means.row(label)).cwiseMax(0.0).cwiseMin(1.0);
  }
  return data;
}

SynthDataset synth_dataset(int num_classes, int image_dim, int per_class, double separation,
                           std::uint64_t seed) {
  if (num_classes < 2) throw std::invalid_argument("synthetic data: need K >= 2");
  if (image_dim < 1) throw std::invalid_argument("synthetic data: need D >= 1");
  if (!(separation > 0.0)) throw std::invalid_argument("synthetic data: separation must be > 0");
  if (separation > std::sqrt(static_cast<double>(image_dim))) {
    throw std::invalid_argument("synthetic data: separation exceeds the diameter of [0,1]^D");
  }
  Rng rng(mix64(seed, 0));
  std::uniform_real_distribution<double> uniform(0.0, 1.0);
  RowMatrix means(num_classes, image_dim);
  for (Eigen::Index i = 0; i < means.size(); ++i) means.data()[i] = uniform(rng);

  auto min_distance = [&] {
    double best = std::numeric_limits<double>::infinity();
    for (int i = 0; i < num_classes; ++i) {
      for (int j = i + 1; j < num_classes; ++j) best = std::min(best, (means.row(i) - means.row(j)).norm());
    }
    return best;
  };

  for (int iteration = 0; iteration < 10'000 && min_distance() < separation; ++iteration) {
    for (int i = 0; i < num_classes; ++i) {
      for (int j = i + 1; j < num_classes; ++j) {
        Eigen::RowVectorXd diff = means.row(i) - means.row(j);
        const double dist = diff.norm();
        if (dist >= separation) continue;
        if (dist == 0.0) {
          for (auto& c : diff) c = uniform(rng) - 0.5;
        }
        const Eigen::RowVectorXd push = (0.5 * (separation - dist) + 1e-9) * diff.normalized();
        means.row(i) = (means.row(i) + push).cwiseMax(0.0).cwiseMin(1.0);
        means.row(j) = (means.row(j) - push).cwiseMax(0.0).cwiseMin(1.0);
      }
    }
  }
  if (min_distance() < separation) {
    throw std::runtime_error("synthetic data: separation " + std::to_string(separation) +
                             " is infeasible for " + std::to_string(num_classes) +
                             " classes in dimension " + std::to_string(image_dim));
  }
  SynthDataset data = sample_around_means(means, per_class, mix64(seed, 1));
  data.seed = seed;
  return data;
}

LinearOracle linear_oracle(const Eigen::Ref<const Eigen::VectorXd>& w, double b,
                           const Eigen::Ref<const Eigen::VectorXd>& x, double sigma) {
  const double norm = w.norm();
  if (!(norm > 0.0)) throw std::domain_error("linear oracle: w must be nonzero");
  if (!(sigma > 0.0)) throw std::domain_error("linear oracle: sigma must be > 0");
  if (w.size() != x.size()) throw std::invalid_argument("linear oracle: dimension mismatch");
  const double margin = (w.dot(x) + b) / norm;
  const int majority = margin > 0.0 ? 1 : 0;
  const double z = margin / sigma;
  return {std_normal_cdf(majority == 1 ? z : -z), std::abs(margin), majority};
}

}  // namespace certsmooth
