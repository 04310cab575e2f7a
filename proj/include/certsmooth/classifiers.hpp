#pragma once

// Reference base classifiers: constant, binary half-space and multi-class
// linear argmax. Scores are accumulated with a plain sequential loop so that
// any other implementation using the same order reproduces labels exactly.

#include <Eigen/Core>

#include "certsmooth/smoothing.hpp"

namespace certsmooth {

class ConstantClassifier final : public BaseClassifier {
 public:
  ConstantClassifier(int num_classes, int input_dim, int label);

  int num_classes() const override { return num_classes_; }
  int input_dim() const override { return input_dim_; }
  std::vector<int> evaluate(const Eigen::Ref<const RowMatrix>& batch) override;

 private:
  int num_classes_;
  int input_dim_;
  int label_;
};

/// f(x) = 1[w.x + b > 0].
class HalfSpaceClassifier final : public BaseClassifier {
 public:
  HalfSpaceClassifier(Eigen::VectorXd w, double b);

  int num_classes() const override { return 2; }
  int input_dim() const override { return static_cast<int>(w_.size()); }
  std::vector<int> evaluate(const Eigen::Ref<const RowMatrix>& batch) override;

  const Eigen::VectorXd& weights() const { return w_; }
  double bias() const { return b_; }

 private:
  Eigen::VectorXd w_;
  double b_;
};

/// f(x) = argmax_c (W x + bias)_c, lowest index on ties. With
/// `float32_inputs` each coordinate is rounded to binary32 first, matching a
/// classifier that receives its inputs over the f32 wire format.
class LinearArgmaxClassifier final : public BaseClassifier {
 public:
  LinearArgmaxClassifier(RowMatrix weights, Eigen::VectorXd bias, bool float32_inputs = false);

  int num_classes() const override { return static_cast<int>(weights_.rows()); }
  int input_dim() const override { return static_cast<int>(weights_.cols()); }
  std::vector<int> evaluate(const Eigen::Ref<const RowMatrix>& batch) override;

  int classify(const double* x) const;

 private:
  RowMatrix weights_;
  Eigen::VectorXd bias_;
  bool float32_inputs_;
};

}  // namespace certsmooth
