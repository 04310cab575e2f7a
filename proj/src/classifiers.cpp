#include "certsmooth/classifiers.hpp"

#include <stdexcept>
#include <string>

namespace certsmooth {

namespace {

void check_batch(const Eigen::Ref<const RowMatrix>& batch, int dim) {
  if (batch.cols() != dim) {
    throw std::invalid_argument("batch has " + std::to_string(batch.cols()) +
                                " columns, classifier expects " + std::to_string(dim));
  }
}

}  // namespace

ConstantClassifier::ConstantClassifier(int num_classes, int input_dim, int label)
    : num_classes_(num_classes), input_dim_(input_dim), label_(label) {
  if (num_classes < 2) throw std::invalid_argument("constant classifier: need K >= 2");
  if (label < 0 || label >= num_classes) {
    throw std::invalid_argument("constant classifier: label out of range");
  }
}

std::vector<int> ConstantClassifier::evaluate(const Eigen::Ref<const RowMatrix>& batch) {
  check_batch(batch, input_dim_);
  return std::vector<int>(static_cast<std::size_t>(batch.rows()), label_);
}

HalfSpaceClassifier::HalfSpaceClassifier(Eigen::VectorXd w, double b) : w_(std::move(w)), b_(b) {
  if (w_.size() == 0) throw std::invalid_argument("half-space classifier: empty weights");
}

std::vector<int> HalfSpaceClassifier::evaluate(const Eigen::Ref<const RowMatrix>& batch) {
  check_batch(batch, static_cast<int>(w_.size()));
  std::vector<int> labels(static_cast<std::size_t>(batch.rows()));
  for (Eigen::Index r = 0; r < batch.rows(); ++r) {
    double score = b_;
    for (Eigen::Index j = 0; j < w_.size(); ++j) score += w_[j] * batch(r, j);
    labels[static_cast<std::size_t>(r)] = score > 0.0 ? 1 : 0;
  }
  return labels;
}

LinearArgmaxClassifier::LinearArgmaxClassifier(RowMatrix weights, Eigen::VectorXd bias,
                                               bool float32_inputs)
    : weights_(std::move(weights)), bias_(std::move(bias)), float32_inputs_(float32_inputs) {
  if (weights_.rows() < 2) throw std::invalid_argument("linear classifier: need K >= 2 rows");
  if (bias_.size() != weights_.rows()) {
    throw std::invalid_argument("linear classifier: bias length must equal weight rows");
  }
}

int LinearArgmaxClassifier::classify(const double* x) const {
  int best = 0;
  double best_score = 0.0;
  for (Eigen::Index c = 0; c < weights_.rows(); ++c) {
    double score = 0.0;
    for (Eigen::Index j = 0; j < weights_.cols(); ++j) {
      const double xj = float32_inputs_ ? static_cast<double>(static_cast<float>(x[j])) : x[j];
      score += weights_(c, j) * xj;
    }
    score += bias_[c];
    if (c == 0 || score > best_score) {
      best = static_cast<int>(c);
      best_score = score;
    }
  }
  return best;
}

std::vector<int> LinearArgmaxClassifier::evaluate(const Eigen::Ref<const RowMatrix>& batch) {
  check_batch(batch, input_dim());
  std::vector<int> labels(static_cast<std::size_t>(batch.rows()));
  for (Eigen::Index r = 0; r < batch.rows(); ++r) {
    labels[static_cast<std::size_t>(r)] = classify(batch.row(r).data());
  }
  return labels;
}

}  // namespace certsmooth
